//! Tape-based reverse-mode autodiff over `ndarray` arrays.
//!
//! A `Graph` records every op in creation order; `backward` walks the tape in
//! reverse. Node evaluation order is fixed, reductions are sequential, and
//! the conv kernels only parallelize disjoint writes, so forward and backward
//! are bit-deterministic regardless of the parallelism setting.

use ndarray::{Array1, Array2, ArrayD, Axis, Ix2, Ix4, IxDyn};

use super::kernels;
use super::store::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MinElem(Var, Var),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    MeanAll(Var),
    SumAll(Var),
    SumRows(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    Dense { x: Var, w: Var },
    BiasAdd2 { x: Var, b: Var },
    BiasAdd4 { x: Var, b: Var },
    ScaleChannel { x: Var, g: Var },
    ScaleShiftPerSample { x: Var, g: Var, b: Var },
    Conv2d { x: Var, w: Var, stride: usize },
    ReflectPad(Var, usize),
    Upsample2(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    InstanceNorm { x: Var, inv_std: Array2<f64> },
    Concat2 { a: Var, b: Var },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_cache: Vec<Option<Var>>,
}

pub struct Grads {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_cache: vec![None; store.len()],
        }
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        val.iter().next().copied().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; gradients never flow into it.
    pub fn input(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Parameter leaf. Cached per graph so repeated use of the same parameter
    /// accumulates gradients on one node. Frozen params behave as constants.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache[id.0] {
            return v;
        }
        let trainable = self.store.is_trainable(id);
        let v = self.push(self.store.get(id).clone(), Op::Leaf, trainable);
        self.nodes[v.0].param = Some(id);
        self.param_cache[id.0] = Some(v);
        v
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op: Op, value: ArrayD<f64>) -> Var {
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.binary_same_shape(a, b, Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.binary_same_shape(a, b, Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.binary_same_shape(a, b, Op::Mul(a, b), v)
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let mut v = self.nodes[a.0].value.clone();
        v.zip_mut_with(&self.nodes[b.0].value, |x, &y| {
            if y < *x {
                *x = y;
            }
        });
        self.binary_same_shape(a, b, Op::MinElem(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| -x);
        let ng = self.ng(a);
        self.push(v, Op::Neg(a), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        let ng = self.ng(a);
        self.push(v, Op::MulScalar(a, c), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::abs);
        let ng = self.ng(a);
        self.push(v, Op::Abs(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(softplus);
        let ng = self.ng(a);
        self.push(v, Op::Softplus(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(v, Op::Clamp(a, lo, hi), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.nodes[a.0].value.mean().unwrap();
        let ng = self.ng(a);
        self.push(scalar_arr(m), Op::MeanAll(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let ng = self.ng(a);
        self.push(scalar_arr(s), Op::SumAll(a), ng)
    }

    /// (B, D) -> (B,) row sums.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.nodes[a.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("sum_rows wants 2-d");
        let v = m.sum_axis(Axis(1)).into_dyn();
        let ng = self.ng(a);
        self.push(v, Op::SumRows(a), ng)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let m = self.nodes[a.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("log_softmax wants 2-d");
        let mut out = m.to_owned();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            row.mapv_inplace(|x| x - lse);
        }
        let ng = self.ng(a);
        self.push(out.into_dyn(), Op::LogSoftmax(a), ng)
    }

    /// Select one entry per row: (B, A) with indices -> (B,).
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let m = self.nodes[a.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("pick wants 2-d");
        assert_eq!(m.nrows(), idx.len());
        let v = Array1::from_iter(idx.iter().enumerate().map(|(b, &i)| m[[b, i]])).into_dyn();
        let ng = self.ng(a);
        self.push(v, Op::Pick(a, idx), ng)
    }

    /// x: (B, Din), w: (Dout, Din) -> (B, Dout).
    pub fn dense(&mut self, x: Var, w: Var) -> Var {
        let xm = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("dense input 2-d");
        let wm = self.nodes[w.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("dense weight 2-d");
        assert_eq!(xm.ncols(), wm.ncols(), "dense dims");
        let v = xm.dot(&wm.t()).into_dyn();
        let ng = self.ng(x) || self.ng(w);
        self.push(v, Op::Dense { x, w }, ng)
    }

    pub fn bias_add2(&mut self, x: Var, b: Var) -> Var {
        let xm = self.nodes[x.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let v = (&xm + &bv).into_dyn();
        let ng = self.ng(x) || self.ng(b);
        self.push(v, Op::BiasAdd2 { x, b }, ng)
    }

    pub fn bias_add4(&mut self, x: Var, b: Var) -> Var {
        let xm = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let bv = self.nodes[b.0].value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut v = xm.to_owned();
        for (c, mut plane) in v.axis_iter_mut(Axis(1)).enumerate() {
            plane += bv[c];
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(v.into_dyn(), Op::BiasAdd4 { x, b }, ng)
    }

    pub fn scale_channel(&mut self, x: Var, g: Var) -> Var {
        let xm = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let gv = self.nodes[g.0].value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut v = xm.to_owned();
        for (c, mut plane) in v.axis_iter_mut(Axis(1)).enumerate() {
            plane *= gv[c];
        }
        let ng = self.ng(x) || self.ng(g);
        self.push(v.into_dyn(), Op::ScaleChannel { x, g }, ng)
    }

    /// Per-sample channel affine: x (B,C,H,W), g and b (B,C).
    pub fn scale_shift_per_sample(&mut self, x: Var, g: Var, b: Var) -> Var {
        let xm = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let gm = self.nodes[g.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bm = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let (bs, c, _, _) = xm.dim();
        assert_eq!(gm.dim(), (bs, c));
        assert_eq!(bm.dim(), (bs, c));
        let mut v = xm.to_owned();
        for bi in 0..bs {
            for ci in 0..c {
                let mut plane = v.slice_mut(ndarray::s![bi, ci, .., ..]);
                plane.mapv_inplace(|x| x * gm[[bi, ci]] + bm[[bi, ci]]);
            }
        }
        let ng = self.ng(x) || self.ng(g) || self.ng(b);
        self.push(v.into_dyn(), Op::ScaleShiftPerSample { x, g, b }, ng)
    }

    /// Valid convolution (pad explicitly first).
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let wv = self.nodes[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let v = kernels::conv2d_forward(xv, wv, stride).into_dyn();
        let ng = self.ng(x) || self.ng(w);
        self.push(v, Op::Conv2d { x, w, stride }, ng)
    }

    pub fn reflect_pad(&mut self, x: Var, p: usize) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let v = kernels::reflect_pad(xv, p).into_dyn();
        let ng = self.ng(x);
        self.push(v, Op::ReflectPad(x, p), ng)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let v = kernels::upsample2_forward(xv).into_dyn();
        let ng = self.ng(x);
        self.push(v, Op::Upsample2(x), ng)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let v = kernels::avgpool2_forward(xv).into_dyn();
        let ng = self.ng(x);
        self.push(v, Op::AvgPool2(x), ng)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = xv.dim();
        let mut out = Array2::<f64>::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                out[[bi, ci]] = xv.slice(ndarray::s![bi, ci, .., ..]).sum() / (h * w) as f64;
            }
        }
        let ng = self.ng(x);
        self.push(out.into_dyn(), Op::GlobalAvgPool(x), ng)
    }

    /// Instance normalization without affine terms.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.nodes[x.0].value.view().into_dimensionality::<Ix4>().unwrap();
        let (b, c, h, w) = xv.dim();
        let n = (h * w) as f64;
        let mut out = xv.to_owned();
        let mut inv_std = Array2::<f64>::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                let mut plane = out.slice_mut(ndarray::s![bi, ci, .., ..]);
                let mean = plane.sum() / n;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std[[bi, ci]] = inv;
                plane.mapv_inplace(|v| (v - mean) * inv);
            }
        }
        let ng = self.ng(x);
        self.push(out.into_dyn(), Op::InstanceNorm { x, inv_std }, ng)
    }

    /// Concatenate along axis 1 for 2-d tensors.
    pub fn concat2(&mut self, a: Var, b: Var) -> Var {
        let am = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap();
        let bm = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap();
        assert_eq!(am.nrows(), bm.nrows());
        let v = ndarray::concatenate(Axis(1), &[am, bm]).unwrap().into_dyn();
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Concat2 { a, b }, ng)
    }

    /// L1 distance with mean-over-elements reduction.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }

    pub fn backward(&mut self, loss: Var) -> Grads {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(scalar_arr(1.0));
        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, i: usize, g: &ArrayD<f64>, grads: &mut Vec<Option<ArrayD<f64>>>) {
        let add_to = |grads: &mut Vec<Option<ArrayD<f64>>>, v: Var, contrib: ArrayD<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, g * val(*b));
                add_to(grads, *b, g * val(*a));
            }
            Op::MinElem(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let mut ga = g.clone();
                let mut gb = g.clone();
                ndarray::Zip::from(&mut ga).and(av).and(bv).for_each(|gg, &x, &y| {
                    if y < x {
                        *gg = 0.0;
                    }
                });
                ndarray::Zip::from(&mut gb).and(av).and(bv).for_each(|gg, &x, &y| {
                    if x <= y {
                        *gg = 0.0;
                    }
                });
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::Neg(a) => add_to(grads, *a, g.mapv(|x| -x)),
            Op::AddScalar(a) => add_to(grads, *a, g.clone()),
            Op::MulScalar(a, c) => add_to(grads, *a, g.mapv(|x| x * c)),
            Op::Abs(a) => {
                let mut ga = g.clone();
                ndarray::Zip::from(&mut ga).and(val(*a)).for_each(|gg, &x| {
                    *gg *= if x >= 0.0 { 1.0 } else { -1.0 };
                });
                add_to(grads, *a, ga);
            }
            Op::Relu(a) => {
                let mut ga = g.clone();
                ndarray::Zip::from(&mut ga).and(val(*a)).for_each(|gg, &x| {
                    if x <= 0.0 {
                        *gg = 0.0;
                    }
                });
                add_to(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let mut ga = g.clone();
                ndarray::Zip::from(&mut ga).and(val(*a)).for_each(|gg, &x| {
                    if x <= 0.0 {
                        *gg *= s;
                    }
                });
                add_to(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Softplus(a) => {
                add_to(grads, *a, g * &val(*a).mapv(sigmoid));
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g * y);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let mut ga = g.clone();
                ndarray::Zip::from(&mut ga).and(val(*a)).for_each(|gg, &x| {
                    if x <= lo || x >= hi {
                        *gg = 0.0;
                    }
                });
                add_to(grads, *a, ga);
            }
            Op::MeanAll(a) => {
                let n = val(*a).len() as f64;
                let gv = g.iter().next().copied().unwrap() / n;
                add_to(grads, *a, ArrayD::from_elem(val(*a).raw_dim(), gv));
            }
            Op::SumAll(a) => {
                let gv = g.iter().next().copied().unwrap();
                add_to(grads, *a, ArrayD::from_elem(val(*a).raw_dim(), gv));
            }
            Op::SumRows(a) => {
                let av = val(*a).view().into_dimensionality::<Ix2>().unwrap();
                let g1 = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let mut ga = Array2::<f64>::zeros(av.dim());
                for (bi, mut row) in ga.rows_mut().into_iter().enumerate() {
                    row.fill(g1[bi]);
                }
                add_to(grads, *a, ga.into_dyn());
            }
            Op::LogSoftmax(a) => {
                // dx = g - softmax * rowsum(g)
                let y = self.nodes[i].value.view().into_dimensionality::<Ix2>().unwrap();
                let gm = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut ga = gm.to_owned();
                for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                    let s: f64 = grow.sum();
                    for (gv, yv) in grow.iter_mut().zip(yrow.iter()) {
                        *gv -= yv.exp() * s;
                    }
                }
                add_to(grads, *a, ga.into_dyn());
            }
            Op::Pick(a, idx) => {
                let av = val(*a).view().into_dimensionality::<Ix2>().unwrap();
                let g1 = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let mut ga = Array2::<f64>::zeros(av.dim());
                for (b, &ix) in idx.iter().enumerate() {
                    ga[[b, ix]] = g1[b];
                }
                add_to(grads, *a, ga.into_dyn());
            }
            Op::Dense { x, w } => {
                let gm = g.view().into_dimensionality::<Ix2>().unwrap();
                let xm = val(*x).view().into_dimensionality::<Ix2>().unwrap();
                let wm = val(*w).view().into_dimensionality::<Ix2>().unwrap();
                if self.nodes[x.0].needs_grad {
                    add_to(grads, *x, gm.dot(&wm).into_dyn());
                }
                if self.nodes[w.0].needs_grad {
                    add_to(grads, *w, gm.t().dot(&xm).into_dyn());
                }
            }
            Op::BiasAdd2 { x, b } => {
                add_to(grads, *x, g.clone());
                let gm = g.view().into_dimensionality::<Ix2>().unwrap();
                add_to(grads, *b, gm.sum_axis(Axis(0)).into_dyn());
            }
            Op::BiasAdd4 { x, b } => {
                add_to(grads, *x, g.clone());
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                let c = gm.dim().1;
                let mut db = Array1::<f64>::zeros(c);
                for (ci, plane) in gm.axis_iter(Axis(1)).enumerate() {
                    db[ci] = plane.sum();
                }
                add_to(grads, *b, db.into_dyn());
            }
            Op::ScaleChannel { x, g: gw } => {
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                let xm = val(*x).view().into_dimensionality::<Ix4>().unwrap();
                let gv = val(*gw).view().into_dimensionality::<ndarray::Ix1>().unwrap();
                if self.nodes[x.0].needs_grad {
                    let mut gx = gm.to_owned();
                    for (ci, mut plane) in gx.axis_iter_mut(Axis(1)).enumerate() {
                        plane *= gv[ci];
                    }
                    add_to(grads, *x, gx.into_dyn());
                }
                if self.nodes[gw.0].needs_grad {
                    let c = gm.dim().1;
                    let mut dg = Array1::<f64>::zeros(c);
                    for ci in 0..c {
                        dg[ci] = (&gm.index_axis(Axis(1), ci) * &xm.index_axis(Axis(1), ci)).sum();
                    }
                    add_to(grads, *gw, dg.into_dyn());
                }
            }
            Op::ScaleShiftPerSample { x, g: gw, b } => {
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                let xm = val(*x).view().into_dimensionality::<Ix4>().unwrap();
                let gv = val(*gw).view().into_dimensionality::<Ix2>().unwrap();
                let (bs, c, _, _) = gm.dim();
                if self.nodes[x.0].needs_grad {
                    let mut gx = gm.to_owned();
                    for bi in 0..bs {
                        for ci in 0..c {
                            let mut plane = gx.slice_mut(ndarray::s![bi, ci, .., ..]);
                            plane *= gv[[bi, ci]];
                        }
                    }
                    add_to(grads, *x, gx.into_dyn());
                }
                if self.nodes[gw.0].needs_grad {
                    let mut dg = Array2::<f64>::zeros((bs, c));
                    for bi in 0..bs {
                        for ci in 0..c {
                            dg[[bi, ci]] = (&gm.slice(ndarray::s![bi, ci, .., ..])
                                * &xm.slice(ndarray::s![bi, ci, .., ..]))
                                .sum();
                        }
                    }
                    add_to(grads, *gw, dg.into_dyn());
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = Array2::<f64>::zeros((bs, c));
                    for bi in 0..bs {
                        for ci in 0..c {
                            db[[bi, ci]] = gm.slice(ndarray::s![bi, ci, .., ..]).sum();
                        }
                    }
                    add_to(grads, *b, db.into_dyn());
                }
            }
            Op::Conv2d { x, w, stride } => {
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                let xm = val(*x).view().into_dimensionality::<Ix4>().unwrap();
                let wm = val(*w).view().into_dimensionality::<Ix4>().unwrap();
                let (dx, dw) = kernels::conv2d_backward(
                    xm,
                    wm,
                    gm,
                    *stride,
                    self.nodes[x.0].needs_grad,
                    self.nodes[w.0].needs_grad,
                );
                if let Some(dx) = dx {
                    add_to(grads, *x, dx.into_dyn());
                }
                if let Some(dw) = dw {
                    add_to(grads, *w, dw.into_dyn());
                }
            }
            Op::ReflectPad(x, p) => {
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                let xs = val(*x).shape();
                let dx = kernels::reflect_pad_adjoint(gm, *p, xs[2], xs[3]);
                add_to(grads, *x, dx.into_dyn());
            }
            Op::Upsample2(x) => {
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                add_to(grads, *x, kernels::upsample2_backward(gm).into_dyn());
            }
            Op::AvgPool2(x) => {
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                add_to(grads, *x, kernels::avgpool2_backward(gm).into_dyn());
            }
            Op::GlobalAvgPool(x) => {
                let gm = g.view().into_dimensionality::<Ix2>().unwrap();
                let xs = val(*x).shape();
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let n = (h * w) as f64;
                let mut dx = ndarray::Array4::<f64>::zeros((b, c, h, w));
                for bi in 0..b {
                    for ci in 0..c {
                        dx.slice_mut(ndarray::s![bi, ci, .., ..]).fill(gm[[bi, ci]] / n);
                    }
                }
                add_to(grads, *x, dx.into_dyn());
            }
            Op::InstanceNorm { x, inv_std } => {
                // dx = inv * (g - mean(g) - y * mean(g*y)) per (b, c) plane.
                let gm = g.view().into_dimensionality::<Ix4>().unwrap();
                let y = self.nodes[i].value.view().into_dimensionality::<Ix4>().unwrap();
                let (bs, c, h, w) = gm.dim();
                let n = (h * w) as f64;
                let mut dx = gm.to_owned();
                for bi in 0..bs {
                    for ci in 0..c {
                        let gp = gm.slice(ndarray::s![bi, ci, .., ..]);
                        let yp = y.slice(ndarray::s![bi, ci, .., ..]);
                        let gmean = gp.sum() / n;
                        let gymean = (&gp * &yp).sum() / n;
                        let inv = inv_std[[bi, ci]];
                        let mut plane = dx.slice_mut(ndarray::s![bi, ci, .., ..]);
                        ndarray::Zip::from(&mut plane).and(&yp).for_each(|d, &yv| {
                            *d = inv * (*d - gmean - yv * gymean);
                        });
                    }
                }
                add_to(grads, *x, dx.into_dyn());
            }
            Op::Concat2 { a, b } => {
                let gm = g.view().into_dimensionality::<Ix2>().unwrap();
                let da = val(*a).shape()[1];
                add_to(grads, *a, gm.slice(ndarray::s![.., ..da]).to_owned().into_dyn());
                add_to(grads, *b, gm.slice(ndarray::s![.., da..]).to_owned().into_dyn());
            }
        }
    }

    /// Parameter gradients present on the tape, in `ParamId` order.
    pub fn param_grads<'g>(&self, grads: &'g Grads) -> Vec<(ParamId, &'g ArrayD<f64>)> {
        let mut out = Vec::new();
        for (pid, slot) in self.param_cache.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = &grads.grads[v.0] {
                    if self.nodes[v.0].needs_grad {
                        out.push((ParamId(pid), g));
                    }
                }
            }
        }
        out
    }

    /// Gradient w.r.t. an arbitrary node, if one was produced.
    pub fn grad_of<'g>(&self, grads: &'g Grads, v: Var) -> Option<&'g ArrayD<f64>> {
        grads.grads[v.0].as_ref()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn scalar_arr(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}
