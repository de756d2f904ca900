//! Episode records and task metrics.

use serde::{Deserialize, Serialize};

use super::env::{EpisodeSpec, NavAction, SUCCESS_RADIUS_M};
use super::render::ImageSample;
use super::Pose;

/// Everything produced by one episode. Observation/translation strips are
/// optional because they are large.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub spec: EpisodeSpec,
    /// Start pose followed by the pose after each step.
    pub poses: Vec<Pose>,
    pub actions: Vec<NavAction>,
    pub rewards: Vec<f64>,
    pub collisions: usize,
    pub success: bool,
    pub final_goal_distance: f64,
    pub path_len: f64,
    pub shortest_path: f64,
    pub explored_area: f64,
    pub explored_ratio: f64,
    pub observations: Option<Vec<ImageSample>>,
    pub translations: Option<Vec<ImageSample>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success: f64,
    pub spl: f64,
    pub explored_area: f64,
    pub explored_ratio: f64,
    pub collision_rate: f64,
    pub path_len: f64,
    pub shortest_path: f64,
    pub steps: usize,
}

/// SPL uses the standard success-weighted shortest/actual path ratio.
pub fn compute_metrics(record: &EpisodeRecord) -> Metrics {
    let steps = record.actions.len();
    let success = record.final_goal_distance < SUCCESS_RADIUS_M;
    let spl = if success {
        let l = record.shortest_path;
        let p = record.path_len;
        if l <= 0.0 {
            1.0
        } else {
            l / l.max(p)
        }
    } else {
        0.0
    };
    Metrics {
        success: if success { 1.0 } else { 0.0 },
        spl,
        explored_area: record.explored_area,
        explored_ratio: record.explored_ratio,
        collision_rate: if steps == 0 {
            0.0
        } else {
            record.collisions as f64 / steps as f64
        },
        path_len: record.path_len,
        shortest_path: record.shortest_path,
        steps,
    }
}
