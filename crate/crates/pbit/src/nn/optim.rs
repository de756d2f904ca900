//! Adam with an optional global gradient scale (used for norm clipping).

use ndarray::ArrayD;

use super::store::{ParamId, ParamStore};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: Vec<Option<(ArrayD<f64>, ArrayD<f64>)>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            state: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One update. `scale` multiplies every gradient before the moment
    /// updates (1.0 for plain Adam). Frozen parameters are rejected.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, &ArrayD<f64>)], scale: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, grad) in grads {
            assert!(
                store.is_trainable(*id),
                "optimizer step on frozen parameter {}",
                store.name(*id)
            );
            if self.state.len() <= id.0 {
                self.state.resize_with(id.0 + 1, || None);
            }
            let slot = &mut self.state[id.0];
            if slot.is_none() {
                let z = ArrayD::zeros(grad.raw_dim());
                *slot = Some((z.clone(), z));
            }
            let (m, v) = slot.as_mut().unwrap();
            let p = store.get_mut(*id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(*grad)
                .for_each(|p, m, v, &g| {
                    let g = g * scale;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

/// Global L2 norm of a gradient set.
pub fn global_grad_norm(grads: &[(ParamId, &ArrayD<f64>)]) -> f64 {
    grads
        .iter()
        .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}
