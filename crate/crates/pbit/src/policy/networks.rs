//! The decomposed navigation policy: a residual convolutional feature
//! extractor producing task-specific features from RGB only, and a recurrent
//! action head consuming features plus the goal/odometry reading.

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::layers::{Conv2d, Dense, Gru};
use crate::nn::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub image_size: usize,
    pub feature_dim: usize,
    pub base_channels: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    /// Dimension of the goal/odometry reading fed to the action head.
    pub task_input_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            image_size: 64,
            feature_dim: 32,
            base_channels: 8,
            gru_hidden: 64,
            gru_layers: 2,
            task_input_dim: 3,
        }
    }
}

impl PolicyConfig {
    /// Full-scale settings (256^2 input, 128-d features, deeper encoder).
    pub fn paper_scale() -> Self {
        PolicyConfig {
            image_size: 256,
            feature_dim: 128,
            base_channels: 32,
            gru_hidden: 512,
            gru_layers: 2,
            task_input_dim: 3,
        }
    }
}

struct ResDownBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    proj: Conv2d,
}

impl ResDownBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        ResDownBlock {
            conv1: Conv2d::new(store, rng, &format!("{name}.c1"), c_in, c_out, 3, 2, 1),
            conv2: Conv2d::new(store, rng, &format!("{name}.c2"), c_out, c_out, 3, 1, 1),
            proj: Conv2d::new(store, rng, &format!("{name}.proj"), c_in, c_out, 1, 2, 0),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.conv1.forward(g, x);
        let y = g.relu(y);
        let y = self.conv2.forward(g, y);
        let skip = self.proj.forward(g, x);
        let y = g.add(y, skip);
        g.relu(y)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        p.extend(self.proj.params());
        p
    }
}

/// F_pi: RGB observation -> feature vector. Sees pixels only; the goal and
/// odometry readings never enter this network.
pub struct FeatureExtractor {
    stem: Conv2d,
    blocks: Vec<ResDownBlock>,
    head: Dense,
    pub image_size: usize,
    pub feature_dim: usize,
}

impl FeatureExtractor {
    pub fn new(store: &mut ParamStore, cfg: &PolicyConfig, seed: u64) -> Self {
        assert!(
            cfg.image_size >= 8 && cfg.image_size.is_power_of_two(),
            "image_size must be a power of two >= 8"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.base_channels;
        let stem = Conv2d::new(store, &mut rng, "fpi.stem", 3, c, 3, 2, 1);
        // Downsample until the map is 2x2; 64 -> 4 blocks, 32 -> 3, ...
        let n_blocks = (cfg.image_size.ilog2() as usize - 2).min(4);
        let chans = [c, 2 * c, 4 * c, 4 * c, 4 * c];
        let blocks: Vec<ResDownBlock> = (0..n_blocks)
            .map(|i| {
                ResDownBlock::new(
                    store,
                    &mut rng,
                    &format!("fpi.b{i}"),
                    chans[i],
                    chans[i + 1],
                )
            })
            .collect();
        let head = Dense::new(store, &mut rng, "fpi.head", chans[n_blocks], cfg.feature_dim);
        FeatureExtractor {
            stem,
            blocks,
            head,
            image_size: cfg.image_size,
            feature_dim: cfg.feature_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, images: Var) -> Var {
        let shape = g.value(images).shape().to_vec();
        assert_eq!(shape.len(), 4);
        assert_eq!(
            (shape[2], shape[3]),
            (self.image_size, self.image_size),
            "observation resolution mismatch"
        );
        let mut x = self.stem.forward(g, images);
        x = g.relu(x);
        for b in &self.blocks {
            x = b.forward(g, x);
        }
        let pooled = g.global_avg_pool(x);
        self.head.forward(g, pooled)
    }

    /// Eval-mode features for a batch of images.
    pub fn extract(&self, store: &ParamStore, images: &Array4<f64>) -> Array2<f64> {
        let mut g = Graph::new(store);
        let x = g.input(images.clone().into_dyn());
        let f = self.forward(&mut g, x);
        g.value(f)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.stem.params();
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.head.params());
        p
    }
}

/// A_pi: (features, task input, hidden) -> action logits and value.
pub struct ActionPolicy {
    gru: Gru,
    logits: Dense,
    value: Dense,
    pub hidden: usize,
    pub layers: usize,
}

impl ActionPolicy {
    pub fn new(store: &mut ParamStore, cfg: &PolicyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = cfg.feature_dim + cfg.task_input_dim;
        let gru = Gru::new(store, &mut rng, "api.gru", d_in, cfg.gru_hidden, cfg.gru_layers);
        let logits = Dense::new(store, &mut rng, "api.logits", cfg.gru_hidden, 3);
        let value = Dense::new(store, &mut rng, "api.value", cfg.gru_hidden, 1);
        ActionPolicy {
            gru,
            logits,
            value,
            hidden: cfg.gru_hidden,
            layers: cfg.gru_layers,
        }
    }

    /// One recurrent step on the tape. Returns (logits, value, new hidden).
    pub fn step(
        &self,
        g: &mut Graph,
        features: Var,
        task_input: Var,
        hidden: &[Var],
    ) -> (Var, Var, Vec<Var>) {
        let x = g.concat2(features, task_input);
        let (out, new_h) = self.gru.step(g, x, hidden);
        let logits = self.logits.forward(g, out);
        let value = self.value.forward(g, out);
        (logits, value, new_h)
    }

    pub fn zero_state(&self, batch: usize) -> Vec<Array2<f64>> {
        self.gru.zero_state(batch)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.gru.params();
        p.extend(self.logits.params());
        p.extend(self.value.params());
        p
    }
}
