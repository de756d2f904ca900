//! Adaptation objective terms. Reduction conventions are part of the
//! contract and are pinned by the unit tests below:
//!
//! - policy consistency: batch mean of the per-sample sum of absolute
//!   feature differences;
//! - lambda_pol: reciprocal of the batch-mean per-sample sum-abs feature
//!   norm, recomputed from source-domain features;
//! - image reconstruction: per-pixel mean L1, one term per domain, summed;
//! - latent reconstruction: mean |dc| + mean |ds| per direction, summed
//!   over both directions;
//! - adversarial: log-sigmoid cross-entropy, averaged over discriminator
//!   scales, summed over domains. The generator term is non-saturating by
//!   default.

use ndarray::Array2;
use thiserror::Error;

use crate::nn::{Graph, Var};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty feature batch")]
    EmptyBatch,
    #[error("zero mean feature norm; lambda_pol is undefined")]
    ZeroFeatureNorm,
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_pol: f64,
    pub lambda_im_rec: f64,
    pub lambda_lat_rec: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_pol: 1.0,
            lambda_im_rec: 10.0,
            lambda_lat_rec: 1.0,
            lambda_adv: 1.0,
        }
    }
}

/// Scalar values of every term, recorded per iteration.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub l_pol: f64,
    pub l_im_rec: f64,
    pub l_lat_rec: f64,
    pub l_adv_gen: f64,
    pub l_adv_dis: f64,
    pub total: f64,
}

/// Batch mean of the per-sample sum of absolute feature differences
/// between features of an image and features of its translation.
pub fn policy_consistency_loss(g: &mut Graph, feat_a: Var, feat_b: Var) -> Var {
    let d = g.sub(feat_a, feat_b);
    let d = g.abs(d);
    let rows = g.sum_rows(d);
    g.mean_all(rows)
}

/// Normalization for the policy-consistency weight: the reciprocal of the
/// batch-mean per-sample sum-abs feature norm.
pub fn compute_lambda_pol(features: &Array2<f64>) -> Result<f64, LossError> {
    if features.nrows() == 0 {
        return Err(LossError::EmptyBatch);
    }
    let mean_norm = features
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .sum::<f64>()
        / features.nrows() as f64;
    if mean_norm <= 0.0 {
        return Err(LossError::ZeroFeatureNorm);
    }
    Ok(1.0 / mean_norm)
}

/// Within-domain reconstruction: mean L1 per domain, both domains summed.
pub fn image_reconstruction_loss(
    g: &mut Graph,
    recon_src: Var,
    real_src: Var,
    recon_tgt: Var,
    real_tgt: Var,
) -> Var {
    let a = g.l1_mean(recon_src, real_src);
    let b = g.l1_mean(recon_tgt, real_tgt);
    g.add(a, b)
}

/// Latent codes recovered from a translated image against the codes that
/// produced it: one (content, style) pair per translation direction.
pub fn latent_reconstruction_loss(g: &mut Graph, pairs: &[(Var, Var, Var, Var)]) -> Var {
    assert!(!pairs.is_empty());
    let mut acc: Option<Var> = None;
    for &(content, content_rec, style, style_rec) in pairs {
        let lc = g.l1_mean(content_rec, content);
        let ls = g.l1_mean(style_rec, style);
        let term = g.add(lc, ls);
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term),
        });
    }
    acc.unwrap()
}

/// Mean of `softplus(-x)` = -mean log sigmoid(x), averaged over scales.
fn mean_softplus_neg(g: &mut Graph, logits: &[Var]) -> Var {
    let mut acc: Option<Var> = None;
    for &l in logits {
        let n = g.neg(l);
        let sp = g.softplus(n);
        let m = g.mean_all(sp);
        acc = Some(match acc {
            None => m,
            Some(a) => g.add(a, m),
        });
    }
    let acc = acc.expect("at least one scale");
    g.mul_scalar(acc, 1.0 / logits.len() as f64)
}

/// Mean of `softplus(x)` = -mean log(1 - sigmoid(x)), averaged over scales.
fn mean_softplus(g: &mut Graph, logits: &[Var]) -> Var {
    let mut acc: Option<Var> = None;
    for &l in logits {
        let sp = g.softplus(l);
        let m = g.mean_all(sp);
        acc = Some(match acc {
            None => m,
            Some(a) => g.add(a, m),
        });
    }
    let acc = acc.expect("at least one scale");
    g.mul_scalar(acc, 1.0 / logits.len() as f64)
}

/// One domain's discriminator training loss:
/// `-E[log D(real)] - E[log(1 - D(fake))]`, scale-averaged.
pub fn adversarial_discriminator_loss(g: &mut Graph, real: &[Var], fake: &[Var]) -> Var {
    let r = mean_softplus_neg(g, real);
    let f = mean_softplus(g, fake);
    g.add(r, f)
}

/// One domain's generator term. Non-saturating (`-E[log D(fake)]`) by
/// default; `saturating` switches to `E[log(1 - D(fake))]`.
pub fn adversarial_generator_loss(g: &mut Graph, fake: &[Var], saturating: bool) -> Var {
    if saturating {
        let f = mean_softplus(g, fake);
        g.neg(f)
    } else {
        mean_softplus_neg(g, fake)
    }
}

/// The adversarial objective in its stated form,
/// `E[log D(real)] + E[log(1 - D(fake))]` for one domain (the quantity the
/// discriminator ascends). Equal to the negated discriminator loss.
pub fn adversarial_objective(g: &mut Graph, real: &[Var], fake: &[Var]) -> Var {
    let l = adversarial_discriminator_loss(g, real, fake);
    g.neg(l)
}

/// Weighted sum of the generator-side terms.
pub fn full_generator_objective(
    g: &mut Graph,
    w: &LossWeights,
    l_pol: Var,
    l_im_rec: Var,
    l_lat_rec: Var,
    l_adv_gen: Var,
) -> Var {
    let a = g.mul_scalar(l_pol, w.lambda_pol);
    let b = g.mul_scalar(l_im_rec, w.lambda_im_rec);
    let c = g.mul_scalar(l_lat_rec, w.lambda_lat_rec);
    let d = g.mul_scalar(l_adv_gen, w.lambda_adv);
    let ab = g.add(a, b);
    let abc = g.add(ab, c);
    g.add(abc, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use ndarray::{arr2, Array4};

    fn graph_store() -> ParamStore {
        ParamStore::new()
    }

    #[test]
    fn policy_consistency_is_batch_mean_of_sum_abs() {
        let store = graph_store();
        let mut g = Graph::new(&store);
        let a = g.input(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        let b = g.input(arr2(&[[0.0, 2.0], [3.0, 2.0]]).into_dyn());
        let l = policy_consistency_loss(&mut g, a, b);
        // Rows: |1|+|0| = 1 and |0|+|2| = 2; mean 1.5.
        assert_eq!(g.scalar(l), 1.5);
    }

    #[test]
    fn lambda_pol_reciprocal_of_mean_norm() {
        // Every row has sum-abs norm 4 -> lambda = 0.25.
        let f = arr2(&[[1.0, -3.0], [2.0, 2.0], [-4.0, 0.0]]);
        assert_eq!(compute_lambda_pol(&f).unwrap(), 0.25);
    }

    #[test]
    fn lambda_pol_rejects_degenerate_batches() {
        let empty = Array2::<f64>::zeros((0, 4));
        assert_eq!(compute_lambda_pol(&empty), Err(LossError::EmptyBatch));
        let zeros = Array2::<f64>::zeros((3, 4));
        assert_eq!(compute_lambda_pol(&zeros), Err(LossError::ZeroFeatureNorm));
    }

    #[test]
    fn image_reconstruction_sums_per_domain_mean_l1() {
        let store = graph_store();
        let mut g = Graph::new(&store);
        let rs = g.input(Array4::from_elem((2, 3, 4, 4), 0.2).into_dyn());
        let xs = g.input(Array4::from_elem((2, 3, 4, 4), 0.0).into_dyn());
        let rt = g.input(Array4::from_elem((2, 3, 4, 4), -0.1).into_dyn());
        let xt = g.input(Array4::from_elem((2, 3, 4, 4), 0.1).into_dyn());
        let l = image_reconstruction_loss(&mut g, rs, xs, rt, xt);
        assert!((g.scalar(l) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn latent_reconstruction_sums_both_directions() {
        let store = graph_store();
        let mut g = Graph::new(&store);
        // Content recovered exactly; style off by 0.5 in each direction.
        let c = g.input(Array4::from_elem((1, 2, 2, 2), 0.3).into_dyn());
        let cr = g.input(Array4::from_elem((1, 2, 2, 2), 0.3).into_dyn());
        let s = g.input(arr2(&[[0.0, 0.0]]).into_dyn());
        let sr = g.input(arr2(&[[0.5, 0.5]]).into_dyn());
        let l = latent_reconstruction_loss(&mut g, &[(c, cr, s, sr), (c, cr, s, sr)]);
        assert!((g.scalar(l) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_objective_at_indifferent_discriminator() {
        // Zero logits mean D = 0.5 on everything. Per domain the objective
        // is 2 log(1/2); two domains give 4 log(1/2).
        let store = graph_store();
        let mut g = Graph::new(&store);
        let mut total = 0.0;
        for _ in 0..2 {
            let real: Vec<Var> = (0..2)
                .map(|_| g.input(Array4::<f64>::zeros((1, 1, 2, 2)).into_dyn()))
                .collect();
            let fake: Vec<Var> = (0..2)
                .map(|_| g.input(Array4::<f64>::zeros((1, 1, 2, 2)).into_dyn()))
                .collect();
            let o = adversarial_objective(&mut g, &real, &fake);
            total += g.scalar(o);
        }
        assert!((total - 4.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_conventions() {
        let store = graph_store();
        let mut g = Graph::new(&store);
        let fake = vec![g.input(Array4::<f64>::zeros((1, 1, 2, 2)).into_dyn())];
        let ns = adversarial_generator_loss(&mut g, &fake, false);
        // Non-saturating at D = 0.5: -log(0.5) = log 2.
        assert!((g.scalar(ns) - 2.0f64.ln()).abs() < 1e-12);
        let sat = adversarial_generator_loss(&mut g, &fake, true);
        // Saturating: log(1 - 0.5) = -log 2.
        assert!((g.scalar(sat) + 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn full_objective_is_the_weighted_sum() {
        let store = graph_store();
        let mut g = Graph::new(&store);
        let one = |g: &mut Graph, v: f64| g.input(ndarray::arr0(v).into_dyn());
        let lp = one(&mut g, 2.0);
        let li = one(&mut g, 0.3);
        let ll = one(&mut g, 0.7);
        let la = one(&mut g, 1.1);
        let w = LossWeights {
            lambda_pol: 0.25,
            ..LossWeights::default()
        };
        let total = full_generator_objective(&mut g, &w, lp, li, ll, la);
        let expect = 0.25 * 2.0 + 10.0 * 0.3 + 1.0 * 0.7 + 1.0 * 1.1;
        assert!((g.scalar(total) - expect).abs() < 1e-12);
    }
}
