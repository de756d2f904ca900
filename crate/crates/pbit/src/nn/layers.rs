//! Layer building blocks: initialized parameters plus a traced forward.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::store::{ParamId, ParamStore};

fn he_normal<R: Rng>(rng: &mut R, fan_in: usize, shape: &[usize]) -> ndarray::ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    ndarray::ArrayD::from_shape_simple_fn(shape.to_vec(), || dist.sample(rng))
}

/// Convolution with reflection padding and bias.
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            he_normal(rng, c_in * k * k, &[c_out, c_in, k, k]),
        );
        let b = store.add(format!("{name}.b"), Array1::<f64>::zeros(c_out).into_dyn());
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let x = if self.pad > 0 {
            g.reflect_pad(x, self.pad)
        } else {
            x
        };
        let w = g.param(self.w);
        let y = g.conv2d(x, w, self.stride);
        let b = g.param(self.b);
        g.bias_add4(y, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), he_normal(rng, d_in, &[d_out, d_in]));
        let b = store.add(format!("{name}.b"), Array1::<f64>::zeros(d_out).into_dyn());
        Dense { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.dense(x, w);
        let b = g.param(self.b);
        g.bias_add2(y, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Instance normalization with learned per-channel affine terms.
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl InstanceNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            Array1::<f64>::ones(channels).into_dyn(),
        );
        let beta = store.add(
            format!("{name}.beta"),
            Array1::<f64>::zeros(channels).into_dyn(),
        );
        InstanceNorm {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = g.instance_norm(x, self.eps);
        let gamma = g.param(self.gamma);
        let y = g.scale_channel(y, gamma);
        let beta = g.param(self.beta);
        g.bias_add4(y, beta)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// One GRU layer; the candidate gate sees `[x, r * h]`.
pub struct GruLayer {
    wz: Dense,
    wr: Dense,
    wn: Dense,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        hidden: usize,
    ) -> Self {
        GruLayer {
            wz: Dense::new(store, rng, &format!("{name}.z"), d_in + hidden, hidden),
            wr: Dense::new(store, rng, &format!("{name}.r"), d_in + hidden, hidden),
            wn: Dense::new(store, rng, &format!("{name}.n"), d_in + hidden, hidden),
            hidden,
        }
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let xh = g.concat2(x, h);
        let z = self.wz.forward(g, xh);
        let z = g.sigmoid(z);
        let r = self.wr.forward(g, xh);
        let r = g.sigmoid(r);
        let rh = g.mul(r, h);
        let xrh = g.concat2(x, rh);
        let n = self.wn.forward(g, xrh);
        let n = g.tanh(n);
        let zh = g.mul(z, h);
        let zn = g.mul(z, n);
        let keep = g.sub(h, zh);
        g.add(keep, zn)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.wz.params();
        p.extend(self.wr.params());
        p.extend(self.wn.params());
        p
    }
}

/// Stacked GRU. Hidden state is one (B, hidden) array per layer.
pub struct Gru {
    pub layers: Vec<GruLayer>,
}

impl Gru {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        hidden: usize,
        num_layers: usize,
    ) -> Self {
        let mut layers = Vec::new();
        for l in 0..num_layers {
            let din = if l == 0 { d_in } else { hidden };
            layers.push(GruLayer::new(store, rng, &format!("{name}.l{l}"), din, hidden));
        }
        Gru { layers }
    }

    pub fn step(&self, g: &mut Graph, x: Var, hs: &[Var]) -> (Var, Vec<Var>) {
        assert_eq!(hs.len(), self.layers.len());
        let mut inp = x;
        let mut new_hs = Vec::with_capacity(hs.len());
        for (layer, &h) in self.layers.iter().zip(hs) {
            let h2 = layer.step(g, inp, h);
            new_hs.push(h2);
            inp = h2;
        }
        (inp, new_hs)
    }

    pub fn zero_state(&self, batch: usize) -> Vec<Array2<f64>> {
        self.layers
            .iter()
            .map(|l| Array2::zeros((batch, l.hidden)))
            .collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

/// Image batch (B, 3, H, W) helpers.
pub fn batch_from_images(images: &[ndarray::Array3<f64>]) -> Array4<f64> {
    assert!(!images.is_empty());
    let (c, h, w) = images[0].dim();
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (b, img) in images.iter().enumerate() {
        out.slice_mut(ndarray::s![b, .., .., ..]).assign(img);
    }
    out
}
