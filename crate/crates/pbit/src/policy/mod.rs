//! Navigation policy: frozen-at-adaptation feature extractor F_pi plus
//! recurrent action head A_pi, PPO training, and checkpointing.

pub mod networks;
pub mod ppo;

pub use networks::{ActionPolicy, FeatureExtractor, PolicyConfig};
pub use ppo::{train_policy, PpoConfig};

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::navenv::{env::wrap_deg, ImageSample, TaskKind, FORWARD_STEP_M, TURN_DEG};
use crate::nn::{Graph, ParamBlob, ParamId, ParamStore};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("training diverged (non-finite loss) at frame {0}")]
    Diverged(usize),
    #[error("environment: {0}")]
    Env(#[from] crate::navenv::NavError),
}

/// The trained policy as one unit: parameters, networks, and task kind.
pub struct PolicyBundle {
    pub store: ParamStore,
    pub fpi: FeatureExtractor,
    pub api: ActionPolicy,
    pub config: PolicyConfig,
    pub task: TaskKind,
}

impl PolicyBundle {
    pub fn new(config: PolicyConfig, task: TaskKind, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let fpi = FeatureExtractor::new(&mut store, &config, seed);
        let api = ActionPolicy::new(&mut store, &config, seed.wrapping_add(1));
        PolicyBundle {
            store,
            fpi,
            api,
            config,
            task,
        }
    }

    pub fn extract_features(&self, images: &Array4<f64>) -> Array2<f64> {
        self.fpi.extract(&self.store, images)
    }

    pub fn extract_features_single(&self, image: &ImageSample) -> Vec<f64> {
        let (c, h, w) = image.data.dim();
        let mut batch = Array4::zeros((1, c, h, w));
        batch.slice_mut(ndarray::s![0, .., .., ..]).assign(&image.data);
        self.extract_features(&batch).row(0).to_vec()
    }

    /// Eval-mode action distribution. Returns (probs (B,3), new hidden).
    pub fn act(
        &self,
        features: &Array2<f64>,
        task_input: &Array2<f64>,
        hidden: &[Array2<f64>],
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut g = Graph::new(&self.store);
        let f = g.input(features.clone().into_dyn());
        let t = g.input(task_input.clone().into_dyn());
        let h: Vec<_> = hidden.iter().map(|x| g.input(x.clone().into_dyn())).collect();
        let (logits, _v, new_h) = self.api.step(&mut g, f, t, &h);
        let ls = g.log_softmax(logits);
        let probs = g.exp(ls);
        let p = g
            .value(probs)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned();
        let hs = new_h
            .into_iter()
            .map(|v| {
                g.value(v)
                    .view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
                    .to_owned()
            })
            .collect();
        (p, hs)
    }

    pub fn fpi_params(&self) -> Vec<ParamId> {
        self.fpi.params()
    }

    pub fn api_params(&self) -> Vec<ParamId> {
        self.api.params()
    }

    /// Make F_pi immutable for the adaptation phase.
    pub fn freeze_feature_extractor(&mut self) {
        for id in self.fpi.params() {
            self.store.set_trainable(id, false);
        }
    }

    /// Bit-level hash of the F_pi parameters (freeze contract witness).
    pub fn fpi_fingerprint(&self) -> String {
        self.store.fingerprint(&self.fpi.params())
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let ckpt = PolicyCheckpoint {
            version: 1,
            config: self.config.clone(),
            task: self.task,
            fpi_fingerprint: self.fpi_fingerprint(),
            params: self.store.to_blob(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &ckpt).map_err(|e| PolicyError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: PolicyCheckpoint =
            serde_json::from_reader(f).map_err(|e| PolicyError::Format(e.to_string()))?;
        if ckpt.version != 1 {
            return Err(PolicyError::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let mut bundle = PolicyBundle::new(ckpt.config, ckpt.task, 0);
        bundle
            .store
            .load_blob(&ckpt.params)
            .map_err(PolicyError::Format)?;
        if bundle.fpi_fingerprint() != ckpt.fpi_fingerprint {
            return Err(PolicyError::Format(
                "feature-extractor fingerprint mismatch after load".into(),
            ));
        }
        Ok(bundle)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyCheckpoint {
    version: u32,
    config: PolicyConfig,
    task: TaskKind,
    fpi_fingerprint: String,
    params: ParamBlob,
}

/// Goal reading -> network input: (distance, sin, cos of the relative angle).
pub fn pointgoal_input(dist_m: f64, angle_deg: f64) -> [f64; 3] {
    let a = angle_deg.to_radians();
    [dist_m / 5.0, a.sin(), a.cos()]
}

/// Odometry delta -> network input, scaled to O(1).
pub fn exploration_input(dx: f64, dy: f64, dtheta_deg: f64) -> [f64; 3] {
    [
        dx / FORWARD_STEP_M,
        dy / FORWARD_STEP_M,
        wrap_deg(dtheta_deg) / TURN_DEG,
    ]
}

/// Build the task input for a step result.
pub fn task_input_of(task: TaskKind, step: &crate::navenv::StepResult) -> [f64; 3] {
    match task {
        TaskKind::PointGoal => {
            let (d, a) = step.pointgoal.expect("pointgoal reading present");
            pointgoal_input(d, a)
        }
        TaskKind::Exploration => {
            let (dx, dy, dt) = step.odometry_delta;
            exploration_input(dx, dy, dt)
        }
    }
}
