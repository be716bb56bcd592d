//! Minimal dense-network numerics: forward passes, analytic gradients,
//! Gaussian action distributions, KL divergence, and gradient verification.
//!
//! Everything is `f64` and every operation is a pure function of its inputs.

mod gauss;
mod gradcheck;
mod mat;
mod net;

pub use gauss::{
    gaussian_log_prob, gaussian_log_prob_grad, kl_diag_gaussian, kl_diag_gaussian_grad_p,
    GaussianActionDist,
};
pub use gradcheck::{gradient_check, gradient_check_flat, GradCheckReport};
pub use mat::{matmul_nn, matmul_nt, matmul_tn, Mat};
pub use net::{apply_gradient, Activation, DenseNetParams, ForwardCache, GradientBundle, Layer};
