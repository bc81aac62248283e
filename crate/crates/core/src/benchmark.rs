//! The two-state, single-input benchmark population and its published
//! reference estimates.

use crate::linalg::Mat;
use crate::model::{CostSpec, SystemDynamics};

pub fn dynamics() -> SystemDynamics {
    SystemDynamics::new(
        Mat::from_row_slice(2, 2, &[0.3, 0.7, -0.9, 0.5]),
        Mat::from_row_slice(2, 1, &[0.2, 0.0]),
        Mat::from_row_slice(2, 2, &[0.05, 0.03, 0.05, 0.02]),
        Mat::from_row_slice(2, 1, &[0.05, 0.06]),
    )
    .expect("benchmark dynamics are well formed")
}

pub fn cost() -> CostSpec {
    CostSpec::new(
        Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]),
        Mat::from_element(1, 1, 1.25),
        Mat::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.9]),
    )
    .expect("benchmark cost is well formed")
}

/// Initial stabilizing gain used for data collection.
pub fn k0() -> Mat {
    Mat::from_row_slice(1, 2, &[6.0, -3.0])
}

pub const XBAR0: [f64; 2] = [2.0, 2.0];
pub const POPULATION: usize = 40;

/// Reference learned value matrix `P̂`.
pub fn reference_p() -> Mat {
    Mat::from_row_slice(2, 2, &[61.8, -36.5983, -36.5983, 84.2412])
}

/// Reference learned feedback gain `K̂`.
pub fn reference_k() -> Mat {
    Mat::from_row_slice(1, 2, &[8.4670, -4.9231])
}

/// Reference learned `DᵀPD`.
pub const REFERENCE_LAMBDA: f64 = 0.2010;
/// Spectral norm of the Riccati residual at [`reference_p`].
pub const REFERENCE_RESIDUAL: f64 = 0.7299;
pub const REFERENCE_GAIN_ERROR: f64 = 0.0698;
pub const REFERENCE_LAMBDA_ERROR: f64 = 0.0371;

/// Model-based `S` computed at the reference feedback estimate, as `[s11, s12, s22]`.
pub const REFERENCE_S_TRUE: [f64; 3] = [-3.4935, 3.5718, -9.7025];
pub const REFERENCE_KS_TRUE: [f64; 2] = [-0.4815, 0.4923];
/// Learned `Ŝ` and `K̂_s`.
pub const REFERENCE_S_LEARNED: [f64; 3] = [-3.5591, 3.6498, -9.8665];
pub const REFERENCE_KS_LEARNED: [f64; 2] = [-0.4899, 0.4977];

pub fn reference_a_hat() -> Mat {
    Mat::from_row_slice(2, 2, &[0.3028, 0.7082, -0.8887, 0.4995])
}

pub fn reference_b_hat() -> Mat {
    Mat::from_row_slice(2, 1, &[0.2009, 0.0011])
}

/// Identified closed-loop matrix `Â − B̂(K̂ + K̂_s)`.
pub fn reference_closed_loop() -> Mat {
    Mat::from_row_slice(2, 2, &[-1.2995, 1.5971, -0.8975, 0.5044])
}
