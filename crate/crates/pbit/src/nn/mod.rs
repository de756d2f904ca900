pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod store;

pub use graph::{scalar_arr, Grads, Graph, Var};
pub use store::{ParamBlob, ParamId, ParamStore};

use ndarray::ArrayD;

/// Central finite differences over the listed parameters.
///
/// Returns the worst per-tensor relative error
/// `||g_fd - g_an|| / max(||g_fd||, ||g_an||, 1e-8)`.
pub fn finite_diff_rel_err<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &[(ParamId, ArrayD<f64>)],
    step: f64,
    mut loss: F,
) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut worst: f64 = 0.0;
    for id in ids {
        let n = store.get(*id).len();
        let mut fd = vec![0.0; n];
        for i in 0..n {
            let orig = store.get(*id).as_slice().unwrap()[i];
            store.get_mut(*id).as_slice_mut().unwrap()[i] = orig + step;
            let fp = loss(store);
            store.get_mut(*id).as_slice_mut().unwrap()[i] = orig - step;
            let fm = loss(store);
            store.get_mut(*id).as_slice_mut().unwrap()[i] = orig;
            fd[i] = (fp - fm) / (2.0 * step);
        }
        let an: Vec<f64> = match analytic.iter().find(|(pid, _)| pid == id) {
            Some((_, g)) => g.iter().copied().collect(),
            None => vec![0.0; n],
        };
        let diff_norm = fd
            .iter()
            .zip(&an)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let fd_norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        let an_norm = an.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff_norm / fd_norm.max(an_norm).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
