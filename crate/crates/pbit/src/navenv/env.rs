//! Episode dynamics: kinematics, collisions, rewards, exploration tracking.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::map::SceneMap;
use super::render::{render, ImageSample, RenderConfig};
use super::theme::DomainStyleTheme;
use super::{NavError, Pose};

pub const FORWARD_STEP_M: f64 = 0.25;
pub const TURN_DEG: f64 = 10.0;
pub const SUCCESS_RADIUS_M: f64 = 0.2;
pub const EXPLORE_RADIUS_M: f64 = 3.0;
pub const CLEARANCE_M: f64 = 0.03;
pub const DEFAULT_MAX_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavAction {
    MoveForward,
    TurnLeft,
    TurnRight,
}

impl NavAction {
    pub const ALL: [NavAction; 3] = [NavAction::MoveForward, NavAction::TurnLeft, NavAction::TurnRight];

    pub fn index(self) -> usize {
        match self {
            NavAction::MoveForward => 0,
            NavAction::TurnLeft => 1,
            NavAction::TurnRight => 2,
        }
    }

    pub fn from_index(i: usize) -> NavAction {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PointGoal,
    Exploration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub scene_id: String,
    pub start: Pose,
    pub task: TaskKind,
    pub goal: Option<(f64, f64)>,
    pub max_steps: usize,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: ImageSample,
    /// World-frame pose delta since the previous step (dx, dy, dtheta).
    pub odometry_delta: (f64, f64, f64),
    /// (distance m, relative angle deg in [-180, 180]); PointGoal only.
    pub pointgoal: Option<(f64, f64)>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub collision: bool,
}

struct EpState {
    spec: EpisodeSpec,
    pose: Pose,
    steps: usize,
    done: bool,
    success: bool,
    /// BFS hop field from the goal cell, PointGoal only.
    dist_field: Option<Array2<u32>>,
    explored: Array2<bool>,
    explored_area: f64,
    path_len: f64,
    collisions: usize,
    shortest_path: f64,
}

pub struct NavEnv {
    map: Arc<SceneMap>,
    theme: DomainStyleTheme,
    render_cfg: RenderConfig,
    state: Option<EpState>,
}

impl NavEnv {
    pub fn new(map: Arc<SceneMap>, theme: DomainStyleTheme, render_cfg: RenderConfig) -> Self {
        NavEnv {
            map,
            theme,
            render_cfg,
            state: None,
        }
    }

    pub fn map(&self) -> &SceneMap {
        &self.map
    }

    pub fn theme(&self) -> &DomainStyleTheme {
        &self.theme
    }

    pub fn render_cfg(&self) -> &RenderConfig {
        &self.render_cfg
    }

    pub fn render_at(&self, pose: &Pose) -> Result<ImageSample, NavError> {
        Ok(render(&self.map, pose, &self.theme, &self.render_cfg)?.0)
    }

    pub fn current_pose(&self) -> Option<Pose> {
        self.state.as_ref().map(|s| s.pose)
    }

    pub fn explored_area(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.explored_area)
    }

    pub fn explored_ratio(&self) -> f64 {
        self.explored_area() / self.map.traversable_area()
    }

    pub fn collisions(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.collisions)
    }

    pub fn path_len(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.path_len)
    }

    pub fn shortest_path(&self) -> f64 {
        self.state.as_ref().map_or(f64::INFINITY, |s| s.shortest_path)
    }

    pub fn steps(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.steps)
    }

    pub fn final_goal_distance(&self) -> Option<f64> {
        let s = self.state.as_ref()?;
        let goal = s.spec.goal?;
        Some(euclid(s.pose.x, s.pose.y, goal.0, goal.1))
    }

    pub fn reset(
        &mut self,
        spec: &EpisodeSpec,
        theme: DomainStyleTheme,
    ) -> Result<StepResult, NavError> {
        if spec.scene_id != self.map.id {
            return Err(NavError::UnknownScene(spec.scene_id.clone()));
        }
        if !self.map.is_free_disc(spec.start.x, spec.start.y, CLEARANCE_M) {
            return Err(NavError::InvalidSpec("start pose not traversable".into()));
        }
        self.theme = theme;

        let mut dist_field = None;
        let mut shortest = 0.0;
        if spec.task == TaskKind::PointGoal {
            let goal = spec
                .goal
                .ok_or_else(|| NavError::InvalidSpec("pointgoal without goal".into()))?;
            let gc = self
                .map
                .cell_of(goal.0, goal.1)
                .filter(|&(r, c)| !self.map.is_occupied_cell(r, c))
                .ok_or_else(|| NavError::InvalidSpec("goal not traversable".into()))?;
            let field = self.map.bfs_field(gc);
            let sc = self.map.cell_of(spec.start.x, spec.start.y).unwrap();
            if field[[sc.0, sc.1]] == u32::MAX {
                return Err(NavError::UnreachableGoal);
            }
            shortest = field[[sc.0, sc.1]] as f64 * self.map.cell_size;
            dist_field = Some(field);
        }

        let mut st = EpState {
            pose: spec.start.normalized(),
            spec: spec.clone(),
            steps: 0,
            done: false,
            success: false,
            dist_field,
            explored: Array2::from_elem(self.map.occ.raw_dim(), false),
            explored_area: 0.0,
            path_len: 0.0,
            collisions: 0,
            shortest_path: shortest,
        };
        let pose = st.pose;
        Self::mark_explored(&self.map, &self.render_cfg, &mut st, &pose);

        let pointgoal = Self::pointgoal_reading(&st);
        if let Some((d, _)) = pointgoal {
            if d < SUCCESS_RADIUS_M {
                st.done = true;
                st.success = true;
            }
        }
        let observation = self.render_at(&pose)?;
        let done = st.done;
        let success = st.success;
        self.state = Some(st);
        Ok(StepResult {
            observation,
            odometry_delta: (0.0, 0.0, 0.0),
            pointgoal,
            reward: 0.0,
            done,
            success,
            collision: false,
        })
    }

    pub fn step(&mut self, action: NavAction) -> Result<StepResult, NavError> {
        let map = self.map.clone();
        let st = self.state.as_mut().ok_or(NavError::EpisodeOver)?;
        if st.done {
            return Err(NavError::EpisodeOver);
        }
        let prev = st.pose;
        let mut collision = false;
        match action {
            NavAction::TurnLeft => {
                st.pose.theta = Pose::norm_theta(st.pose.theta + TURN_DEG);
            }
            NavAction::TurnRight => {
                st.pose.theta = Pose::norm_theta(st.pose.theta - TURN_DEG);
            }
            NavAction::MoveForward => {
                let th = st.pose.theta.to_radians();
                let nx = st.pose.x + FORWARD_STEP_M * th.cos();
                let ny = st.pose.y + FORWARD_STEP_M * th.sin();
                if Self::segment_free(&map, prev.x, prev.y, nx, ny) {
                    st.pose.x = nx;
                    st.pose.y = ny;
                    st.path_len += FORWARD_STEP_M;
                } else {
                    collision = true;
                    st.collisions += 1;
                }
            }
        }
        st.steps += 1;

        let geo_prev = Self::geo_at(st, &map, prev.x, prev.y);
        let geo_new = Self::geo_at(st, &map, st.pose.x, st.pose.y);
        let pose = st.pose;
        let newly = Self::mark_explored(&map, &self.render_cfg, st, &pose);

        let reward = match st.spec.task {
            TaskKind::PointGoal => geo_prev - geo_new,
            TaskKind::Exploration => newly,
        };

        let pointgoal = Self::pointgoal_reading(st);
        if let Some((d, _)) = pointgoal {
            if d < SUCCESS_RADIUS_M {
                st.done = true;
                st.success = true;
            }
        }
        if st.steps >= st.spec.max_steps {
            st.done = true;
        }

        let odometry_delta = (
            st.pose.x - prev.x,
            st.pose.y - prev.y,
            angle_diff_deg(st.pose.theta, prev.theta),
        );
        let observation = render(&map, &st.pose, &self.theme, &self.render_cfg)?.0;
        Ok(StepResult {
            observation,
            odometry_delta,
            pointgoal,
            reward,
            done: st.done,
            success: st.success,
            collision,
        })
    }

    fn geo_at(st: &EpState, map: &SceneMap, x: f64, y: f64) -> f64 {
        match &st.dist_field {
            Some(field) => {
                let (r, c) = map.cell_of(x, y).expect("pose inside map");
                let d = field[[r, c]];
                if d == u32::MAX {
                    f64::INFINITY
                } else {
                    d as f64 * map.cell_size
                }
            }
            None => 0.0,
        }
    }

    fn pointgoal_reading(st: &EpState) -> Option<(f64, f64)> {
        let goal = st.spec.goal?;
        if st.spec.task != TaskKind::PointGoal {
            return None;
        }
        let dx = goal.0 - st.pose.x;
        let dy = goal.1 - st.pose.y;
        let dist = (dx * dx + dy * dy).sqrt();
        let ang = dy.atan2(dx).to_degrees() - st.pose.theta;
        Some((dist, wrap_deg(ang)))
    }

    fn segment_free(map: &SceneMap, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        let steps = 16;
        for i in 1..=steps {
            let t = i as f64 / steps as f64;
            let x = x0 + (x1 - x0) * t;
            let y = y0 + (y1 - y0) * t;
            if !map.is_free_disc(x, y, CLEARANCE_M) {
                return false;
            }
        }
        true
    }

    /// Mark traversable cells inside the FOV cone, closer than 3 m and with
    /// clear line of sight. Returns newly explored area in m^2.
    fn mark_explored(
        map: &SceneMap,
        cfg: &RenderConfig,
        st: &mut EpState,
        pose: &Pose,
    ) -> f64 {
        let cs = map.cell_size;
        let rad = EXPLORE_RADIUS_M;
        let r0 = (((pose.y - rad) / cs).floor().max(0.0)) as usize;
        let r1 = ((((pose.y + rad) / cs).ceil()) as usize).min(map.rows());
        let c0 = (((pose.x - rad) / cs).floor().max(0.0)) as usize;
        let c1 = ((((pose.x + rad) / cs).ceil()) as usize).min(map.cols());
        let half_fov = cfg.fov_deg / 2.0;
        let mut newly = 0usize;
        for r in r0..r1 {
            for c in c0..c1 {
                if map.is_occupied_cell(r, c) || st.explored[[r, c]] {
                    continue;
                }
                let (cx, cy) = map.cell_center(r, c);
                let dx = cx - pose.x;
                let dy = cy - pose.y;
                let dist = (dx * dx + dy * dy).sqrt();
                if dist >= rad {
                    continue;
                }
                if dist > 1e-9 {
                    let ang = wrap_deg(dy.atan2(dx).to_degrees() - pose.theta);
                    if ang.abs() > half_fov {
                        continue;
                    }
                    if !Self::line_of_sight(map, pose.x, pose.y, cx, cy) {
                        continue;
                    }
                }
                st.explored[[r, c]] = true;
                newly += 1;
            }
        }
        let area = newly as f64 * cs * cs;
        st.explored_area += area;
        area
    }

    fn line_of_sight(map: &SceneMap, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        let dist = euclid(x0, y0, x1, y1);
        let steps = (dist / (map.cell_size * 0.25)).ceil() as usize;
        let target = map.cell_of(x1, y1);
        for i in 1..steps {
            let t = i as f64 / steps as f64;
            let cell = map.cell_of(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
            match cell {
                Some((r, c)) => {
                    if Some((r, c)) != target && map.is_occupied_cell(r, c) {
                        return false;
                    }
                }
                None => return false,
            }
        }
        true
    }
}

pub fn euclid(x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
}

pub fn wrap_deg(a: f64) -> f64 {
    let mut a = a % 360.0;
    if a > 180.0 {
        a -= 360.0;
    }
    if a < -180.0 {
        a += 360.0;
    }
    a
}

fn angle_diff_deg(a: f64, b: f64) -> f64 {
    wrap_deg(a - b)
}
