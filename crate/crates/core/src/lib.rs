//! Liquid time-constant (LTC) neuron dynamics, their approximate closed-form
//! solution, a compiler from LTC networks to closed-form networks, and the
//! trainable closed-form continuous-depth (CfC) cell family.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bench;
pub mod closed_form;
pub mod compiler;
mod error;
pub mod ltc;
pub mod models;
pub mod training;

pub use autodiff::{Eval, Gradients, Graph, Tape, Tensor, Var};
pub use bench::{bench_inference, BenchConfig, BenchMethod, BenchReport};
pub use closed_form::{
    closed_form_scalar, error_bound, sharpness_inf, sharpness_sup, SharpnessProbe,
};
pub use compiler::{
    compile, sample_signal, simulate_ode, verify_compiled, verify_fidelity, ClosedFormNetwork,
    CompiledTime, FidelityReport, LtcNetworkSpec,
};
pub use error::{Error, Result};
pub use ltc::{
    exact_piecewise, ltc_rhs, solve_ivp, LtcLayerParams, LtcScalarParams, PiecewiseConstantSignal,
    RhsForm, SolverConfig, SolverMethod, Trajectory,
};
pub use models::{
    Activation, BackboneConfig, CfcModel, IrregularSeries, ModelConfig, TimeMode, TimePolicy,
    Variant,
};
pub use training::{TrainConfig, TrainReport, XorDatasetConfig, XorEncoding, XorFeatures};
