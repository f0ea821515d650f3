use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A sequence of `T` samples with `m` features each.
///
/// `timestamps` are absolute, non-negative and strictly increasing over the
/// valid (`mask == true`) steps. Masked steps are padding and never update a
/// model's state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrregularSeries {
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
    pub mask: Vec<bool>,
    pub label: f64,
}

impl IrregularSeries {
    /// All steps valid.
    pub fn new(values: Vec<Vec<f64>>, timestamps: Option<Vec<f64>>, label: f64) -> Result<Self> {
        let mask = vec![true; values.len()];
        let s = Self {
            values,
            timestamps,
            mask,
            label,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.values.len();
        if self.mask.len() != t {
            return Err(invalid(format!(
                "mask has {} entries for {t} samples",
                self.mask.len()
            )));
        }
        if let Some(first) = self.values.first() {
            if self.values.iter().any(|r| r.len() != first.len()) {
                return Err(invalid("all samples must have the same number of features"));
            }
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("series values must be finite"));
        }
        if !self.label.is_finite() {
            return Err(invalid("series label must be finite"));
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != t {
                return Err(invalid(format!("{} timestamps for {t} samples", ts.len())));
            }
            let mut last = None;
            for (&v, &m) in ts.iter().zip(&self.mask) {
                if !m {
                    continue;
                }
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(invalid(format!("timestamp {v} must be finite and >= 0")));
                }
                if last.is_some_and(|p| !(v > p)) {
                    return Err(invalid(
                        "timestamps must increase strictly over valid steps",
                    ));
                }
                last = Some(v);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Features per sample (0 for an empty series).
    pub fn dims(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Elapsed time since the previous valid step (since 0 for the first);
    /// zero on masked steps.
    pub fn deltas(&self) -> Result<Vec<f64>> {
        let ts = self
            .timestamps
            .as_ref()
            .ok_or_else(|| invalid("timestamped mode needs timestamps"))?;
        let mut prev = 0.0;
        Ok(ts
            .iter()
            .zip(&self.mask)
            .map(|(&t, &m)| {
                if m {
                    let d = t - prev;
                    prev = t;
                    d
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Appends masked zero samples up to `len`.
    pub fn padded(&self, len: usize) -> Self {
        let mut s = self.clone();
        let extra = len.saturating_sub(s.len());
        let m = s.dims();
        let last_t = s
            .timestamps
            .as_ref()
            .and_then(|t| t.last().copied())
            .unwrap_or(0.0);
        s.values.extend(std::iter::repeat_n(vec![0.0; m], extra));
        s.mask.extend(std::iter::repeat_n(false, extra));
        if let Some(ts) = &mut s.timestamps {
            ts.extend(std::iter::repeat_n(last_t, extra));
        }
        s
    }
}
