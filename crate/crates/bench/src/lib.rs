//! Workload grid shared by the criterion benches.

use cfc_core::bench::{prepare, Workload};
use cfc_core::{BenchConfig, BenchMethod, Result};

/// Hidden sizes.
pub const HIDDEN: [usize; 1] = [64];
/// Sequence lengths; the CfC per-step cost should stay flat across them.
pub const LENGTHS: [usize; 3] = [250, 1000, 4000];

pub const METHODS: [BenchMethod; 4] = [
    BenchMethod::LtcEuler,
    BenchMethod::LtcRk4,
    BenchMethod::ClosedForm,
    BenchMethod::Cfc,
];

/// Every `(method, k, n)` in the grid, prepared with the default config
/// (one input channel, 10 solver steps per sample interval).
pub fn grid() -> Result<Vec<(BenchMethod, usize, usize, Workload)>> {
    let cfg = BenchConfig::default();
    let mut out = Vec::new();
    for &k in &HIDDEN {
        for &n in &LENGTHS {
            for &m in &METHODS {
                out.push((m, k, n, prepare(m, k, n, &cfg)?));
            }
        }
    }
    Ok(out)
}
