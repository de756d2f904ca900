//! A deterministic grid-with-continuous-pose navigation simulator that
//! renders first-person RGB observations of the same geometry under two
//! visual styles, with PointGoal and Exploration tasks and exact metric
//! oracles.

pub mod env;
pub mod episodes;
pub mod map;
pub mod metrics;
pub mod render;
pub mod theme;

pub use env::{
    EpisodeSpec, NavAction, NavEnv, StepResult, TaskKind, DEFAULT_MAX_STEPS, EXPLORE_RADIUS_M,
    FORWARD_STEP_M, SUCCESS_RADIUS_M, TURN_DEG,
};
pub use map::SceneMap;
pub use metrics::{compute_metrics, EpisodeRecord, Metrics};
pub use render::{render, ImageSample, RenderConfig};
pub use theme::{Domain, DomainStyleTheme};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NavError {
    #[error("unknown scene id: {0}")]
    UnknownScene(String),
    #[error("goal unreachable from start")]
    UnreachableGoal,
    #[error("episode finished; call reset")]
    EpisodeOver,
    #[error("pose outside traversable space")]
    PoseOutsideMap,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid episode spec: {0}")]
    InvalidSpec(String),
}

/// Agent pose in meters and degrees; theta normalized to [0, 360).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: Self::norm_theta(theta),
        }
    }

    pub fn normalized(&self) -> Pose {
        Pose::new(self.x, self.y, self.theta)
    }

    pub fn norm_theta(t: f64) -> f64 {
        let mut t = t % 360.0;
        if t < 0.0 {
            t += 360.0;
        }
        t
    }
}
