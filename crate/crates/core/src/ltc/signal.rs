use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// An input that holds `levels[i]` on `[breakpoints[i], breakpoints[i + 1])`;
/// the last level extends to infinity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSignal")]
pub struct PiecewiseConstantSignal {
    breakpoints: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignal {
    breakpoints: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

impl TryFrom<RawSignal> for PiecewiseConstantSignal {
    type Error = crate::Error;

    fn try_from(raw: RawSignal) -> Result<Self> {
        Self::new(raw.breakpoints, raw.levels)
    }
}

impl PiecewiseConstantSignal {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != levels.len() {
            return Err(invalid(format!(
                "signal needs one level per breakpoint (got {} breakpoints, {} levels)",
                breakpoints.len(),
                levels.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(invalid("first breakpoint must be 0"));
        }
        if breakpoints
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(invalid(
                "breakpoints must be finite and strictly increasing",
            ));
        }
        let channels = levels[0].len();
        if levels.iter().any(|l| l.len() != channels) {
            return Err(invalid("all levels must have the same number of channels"));
        }
        if levels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("signal levels must be finite"));
        }
        Ok(Self {
            breakpoints,
            levels,
        })
    }

    /// One-channel signal.
    pub fn scalar(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        Self::new(breakpoints, levels.into_iter().map(|v| vec![v]).collect())
    }

    pub fn constant(level: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0], vec![level])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn channels(&self) -> usize {
        self.levels[0].len()
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len()
    }

    /// Index `k` with `breakpoints[k] <= t < breakpoints[k + 1]`. Negative
    /// times map to the first segment.
    pub fn segment_index(&self, t: f64) -> usize {
        self.breakpoints
            .partition_point(|&b| b <= t)
            .saturating_sub(1)
    }

    pub fn level(&self, t: f64) -> &[f64] {
        &self.levels[self.segment_index(t)]
    }

    /// First channel of [`level`](Self::level).
    pub fn scalar_level(&self, t: f64) -> f64 {
        self.level(t)[0]
    }
}
