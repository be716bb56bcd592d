//! Parameter-update rules over [`PolicyGradient`] ascent directions.

use super::config::OptimizerKind;
use crate::policy::{MultiheadPolicy, PolicyGradient};

/// Optimizer state. SGD is stateless; Adam keeps first/second moments shaped
/// like the policy and re-zeros the slots of freshly added heads.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: PolicyGradient,
        v: PolicyGradient,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, policy: &MultiheadPolicy) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: PolicyGradient::zeros_like(policy),
                v: PolicyGradient::zeros_like(policy),
            },
        }
    }

    /// Grow moment buffers when the policy gained heads.
    pub fn sync_shape(&mut self, policy: &MultiheadPolicy) {
        if let Optimizer::Adam { m, v, .. } = self {
            while m.heads.len() < policy.k() {
                let template = PolicyGradient::zeros_like(policy);
                m.heads.push(template.heads[m.heads.len()].clone());
                v.heads.push(template.heads[v.heads.len()].clone());
            }
        }
    }

    /// Ascent step `theta += direction(grad)`.
    pub fn apply(&mut self, policy: &mut MultiheadPolicy, grad: &PolicyGradient) {
        match self {
            Optimizer::Sgd { lr } => policy.apply_gradient(*lr, grad),
            Optimizer::Adam { lr, beta1, beta2, eps, step, m, v } => {
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                let g = grad.flatten();
                let mut mf = m.flatten();
                let mut vf = v.flatten();
                let mut update = vec![0.0; g.len()];
                for i in 0..g.len() {
                    mf[i] = *beta1 * mf[i] + (1.0 - *beta1) * g[i];
                    vf[i] = *beta2 * vf[i] + (1.0 - *beta2) * g[i] * g[i];
                    update[i] = *lr * (mf[i] / bc1) / ((vf[i] / bc2).sqrt() + *eps);
                }
                m.unflatten_from(&mf).expect("moment shapes match");
                v.unflatten_from(&vf).expect("moment shapes match");
                let mut theta = policy.flatten();
                for (t, u) in theta.iter_mut().zip(&update) {
                    *t += u;
                }
                policy
                    .unflatten_from(&theta)
                    .expect("flatten/unflatten shapes agree");
            }
        }
    }
}
