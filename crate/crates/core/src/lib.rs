//! Channel estimation from low-resolution quantized MIMO measurements using
//! generalized approximate message passing with built-in estimation of the
//! prior and noise parameters.

pub mod artifact;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod gamp;
pub mod input_channel;
pub mod linalg;
pub mod output_channel;
pub mod parallel;
pub mod params;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
pub use gamp::{run_gamp, run_gamp_from, GampOptions, GampResult, GampState};
pub use input_channel::{posterior_x_moments, prior_log_evidence, ParamLambda};
pub use linalg::{DenseOperator, LinearOperator, C64};
pub use output_channel::{
    default_quantizer, log_bin_probability, posterior_z_moments, quantize, ParamTheta, QuantizedVector, QuantizerSpec,
};
pub use params::{estimate_joint, update_lambda, update_theta, JointEstimate, OuterLoopOptions, OuterStep};
pub use sim::{assemble_operator, generate_channel, nmse_db, simulate_measurements, ChannelConfig, MimoOperator};
