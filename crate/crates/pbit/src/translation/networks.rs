//! Building blocks for the unpaired translator: content/style encoders,
//! AdaIN decoders, and multi-scale patch discriminators.

use rand_chacha::ChaCha8Rng;

use super::TranslationConfig;
use crate::nn::layers::{Conv2d, Dense, InstanceNorm};
use crate::nn::{Graph, ParamId, ParamStore, Var};

const LRELU_SLOPE: f64 = 0.2;

/// Content encoder: strided convs with instance norm, then residual blocks.
/// Output spatial size is input / 4.
pub struct ContentEncoder {
    stem: (Conv2d, InstanceNorm),
    down: Vec<(Conv2d, InstanceNorm)>,
    res: Vec<ResBlock>,
}

struct ResBlock {
    c1: Conv2d,
    n1: InstanceNorm,
    c2: Conv2d,
    n2: InstanceNorm,
}

impl ResBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, ch: usize) -> Self {
        ResBlock {
            c1: Conv2d::new(store, rng, &format!("{name}.c1"), ch, ch, 3, 1, 1),
            n1: InstanceNorm::new(store, &format!("{name}.n1"), ch),
            c2: Conv2d::new(store, rng, &format!("{name}.c2"), ch, ch, 3, 1, 1),
            n2: InstanceNorm::new(store, &format!("{name}.n2"), ch),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.c1.forward(g, x);
        let y = self.n1.forward(g, y);
        let y = g.relu(y);
        let y = self.c2.forward(g, y);
        let y = self.n2.forward(g, y);
        g.add(x, y)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.c1.params();
        p.extend(self.n1.params());
        p.extend(self.c2.params());
        p.extend(self.n2.params());
        p
    }
}

impl ContentEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &TranslationConfig,
    ) -> Self {
        let c = cfg.base_channels;
        let stem = (
            Conv2d::new(store, rng, &format!("{name}.stem"), 3, c, 3, 1, 1),
            InstanceNorm::new(store, &format!("{name}.stem_n"), c),
        );
        let down = vec![
            (
                Conv2d::new(store, rng, &format!("{name}.d0"), c, 2 * c, 3, 2, 1),
                InstanceNorm::new(store, &format!("{name}.d0_n"), 2 * c),
            ),
            (
                Conv2d::new(store, rng, &format!("{name}.d1"), 2 * c, 4 * c, 3, 2, 1),
                InstanceNorm::new(store, &format!("{name}.d1_n"), 4 * c),
            ),
        ];
        let res = (0..cfg.n_res_blocks)
            .map(|i| ResBlock::new(store, rng, &format!("{name}.r{i}"), 4 * c))
            .collect();
        ContentEncoder { stem, down, res }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut y = self.stem.0.forward(g, x);
        y = self.stem.1.forward(g, y);
        y = g.relu(y);
        for (conv, norm) in &self.down {
            y = conv.forward(g, y);
            y = norm.forward(g, y);
            y = g.relu(y);
        }
        for r in &self.res {
            y = r.forward(g, y);
        }
        y
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.stem.0.params();
        p.extend(self.stem.1.params());
        for (c, n) in &self.down {
            p.extend(c.params());
            p.extend(n.params());
        }
        for r in &self.res {
            p.extend(r.params());
        }
        p
    }
}

/// Style encoder: strided convs without normalization (normalization would
/// erase the style statistics), global pooling, and a linear head.
pub struct StyleEncoder {
    convs: Vec<Conv2d>,
    head: Dense,
}

impl StyleEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &TranslationConfig,
    ) -> Self {
        let c = cfg.base_channels;
        let convs = vec![
            Conv2d::new(store, rng, &format!("{name}.c0"), 3, c, 3, 2, 1),
            Conv2d::new(store, rng, &format!("{name}.c1"), c, 2 * c, 3, 2, 1),
            Conv2d::new(store, rng, &format!("{name}.c2"), 2 * c, 4 * c, 3, 2, 1),
        ];
        let head = Dense::new(store, rng, &format!("{name}.head"), 4 * c, cfg.style_dim);
        StyleEncoder { convs, head }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut y = x;
        for c in &self.convs {
            y = c.forward(g, y);
            y = g.relu(y);
        }
        let pooled = g.global_avg_pool(y);
        self.head.forward(g, pooled)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.head.params());
        p
    }
}

/// Adaptive instance norm: normalize per (sample, channel), then apply a
/// per-sample affine predicted from the style code.
struct AdaIn {
    gain: Dense,
    bias: Dense,
}

impl AdaIn {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        style_hidden: usize,
        channels: usize,
    ) -> Self {
        AdaIn {
            gain: Dense::new(store, rng, &format!("{name}.g"), style_hidden, channels),
            bias: Dense::new(store, rng, &format!("{name}.b"), style_hidden, channels),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, style_h: Var) -> Var {
        let xn = g.instance_norm(x, 1e-5);
        let gm = self.gain.forward(g, style_h);
        let gm = g.add_scalar(gm, 1.0); // centered at identity
        let bm = self.bias.forward(g, style_h);
        g.scale_shift_per_sample(xn, gm, bm)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.gain.params();
        p.extend(self.bias.params());
        p
    }
}

struct AdaResBlock {
    c1: Conv2d,
    a1: AdaIn,
    c2: Conv2d,
    a2: AdaIn,
}

impl AdaResBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        ch: usize,
        style_hidden: usize,
    ) -> Self {
        AdaResBlock {
            c1: Conv2d::new(store, rng, &format!("{name}.c1"), ch, ch, 3, 1, 1),
            a1: AdaIn::new(store, rng, &format!("{name}.a1"), style_hidden, ch),
            c2: Conv2d::new(store, rng, &format!("{name}.c2"), ch, ch, 3, 1, 1),
            a2: AdaIn::new(store, rng, &format!("{name}.a2"), style_hidden, ch),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, style_h: Var) -> Var {
        let y = self.c1.forward(g, x);
        let y = self.a1.forward(g, y, style_h);
        let y = g.relu(y);
        let y = self.c2.forward(g, y);
        let y = self.a2.forward(g, y, style_h);
        g.add(x, y)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.c1.params();
        p.extend(self.a1.params());
        p.extend(self.c2.params());
        p.extend(self.a2.params());
        p
    }
}

/// Decoder: AdaIN residual blocks, two upsample stages, tanh output.
pub struct Decoder {
    mlp1: Dense,
    mlp2: Dense,
    res: Vec<AdaResBlock>,
    up: Vec<(Conv2d, AdaIn)>,
    out: Conv2d,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &TranslationConfig,
    ) -> Self {
        let c = cfg.base_channels;
        let sh = cfg.style_mlp_hidden;
        let mlp1 = Dense::new(store, rng, &format!("{name}.mlp1"), cfg.style_dim, sh);
        let mlp2 = Dense::new(store, rng, &format!("{name}.mlp2"), sh, sh);
        let res = (0..cfg.n_res_blocks)
            .map(|i| AdaResBlock::new(store, rng, &format!("{name}.r{i}"), 4 * c, sh))
            .collect();
        let up = vec![
            (
                Conv2d::new(store, rng, &format!("{name}.u0"), 4 * c, 2 * c, 3, 1, 1),
                AdaIn::new(store, rng, &format!("{name}.u0_a"), sh, 2 * c),
            ),
            (
                Conv2d::new(store, rng, &format!("{name}.u1"), 2 * c, c, 3, 1, 1),
                AdaIn::new(store, rng, &format!("{name}.u1_a"), sh, c),
            ),
        ];
        let out = Conv2d::new(store, rng, &format!("{name}.out"), c, 3, 3, 1, 1);
        Decoder {
            mlp1,
            mlp2,
            res,
            up,
            out,
        }
    }

    pub fn forward(&self, g: &mut Graph, content: Var, style: Var) -> Var {
        // Leaky activations keep the style path alive for any code.
        let h = self.mlp1.forward(g, style);
        let h = g.leaky_relu(h, LRELU_SLOPE);
        let h = self.mlp2.forward(g, h);
        let style_h = g.leaky_relu(h, LRELU_SLOPE);
        let mut y = content;
        for r in &self.res {
            y = r.forward(g, y, style_h);
        }
        for (conv, ada) in &self.up {
            y = g.upsample2(y);
            y = conv.forward(g, y);
            y = ada.forward(g, y, style_h);
            y = g.relu(y);
        }
        let y = self.out.forward(g, y);
        g.tanh(y)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.mlp1.params();
        p.extend(self.mlp2.params());
        for r in &self.res {
            p.extend(r.params());
        }
        for (c, a) in &self.up {
            p.extend(c.params());
            p.extend(a.params());
        }
        p.extend(self.out.params());
        p
    }
}

/// One PatchGAN head: strided convs with leaky ReLU, 1-channel logit map.
struct PatchDis {
    convs: Vec<Conv2d>,
    out: Conv2d,
}

impl PatchDis {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &TranslationConfig,
        input_size: usize,
    ) -> Self {
        // Enough stride-2 convs to shrink the patch field, but never below
        // a 2x2 map (the final conv reflect-pads by 1).
        assert!(input_size >= 4, "discriminator input {input_size} too small");
        let depth = (input_size.ilog2() as usize - 1).min(3);
        let c = cfg.base_channels;
        let mut convs = Vec::with_capacity(depth);
        let mut ch_in = 3;
        let mut ch_out = c;
        for i in 0..depth {
            convs.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.c{i}"),
                ch_in,
                ch_out,
                3,
                2,
                1,
            ));
            ch_in = ch_out;
            ch_out *= 2;
        }
        let out = Conv2d::new(store, rng, &format!("{name}.out"), ch_in, 1, 3, 1, 1);
        PatchDis { convs, out }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut y = x;
        for c in &self.convs {
            y = c.forward(g, y);
            y = g.leaky_relu(y, LRELU_SLOPE);
        }
        self.out.forward(g, y)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.out.params());
        p
    }
}

/// Discriminator applied at full resolution and at progressively
/// average-pooled scales. Returns one logit map per scale.
pub struct MultiScaleDiscriminator {
    scales: Vec<PatchDis>,
}

impl MultiScaleDiscriminator {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &TranslationConfig,
    ) -> Self {
        let scales = (0..cfg.dis_scales)
            .map(|i| PatchDis::new(store, rng, &format!("{name}.s{i}"), cfg, cfg.image_size >> i))
            .collect();
        MultiScaleDiscriminator { scales }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let mut input = x;
        let mut out = Vec::with_capacity(self.scales.len());
        for (i, d) in self.scales.iter().enumerate() {
            if i > 0 {
                input = g.avg_pool2(input);
            }
            out.push(d.forward(g, input));
        }
        out
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.scales.iter().flat_map(|d| d.params()).collect()
    }
}
