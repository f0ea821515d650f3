use super::{IrregularSeries, TimeMode, TimePolicy};
use crate::autodiff::Tensor;
use crate::error::{invalid, Result};

/// Series stacked along a leading batch axis and padded to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub steps: usize,
    pub inputs: Vec<Tensor>,
    /// `times[k][r]`: the `t` fed to row `r` at step `k`.
    pub times: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    /// `[size, 1]`.
    pub labels: Tensor,
}

impl Batch {
    /// Equidistant times are spaced over each row's valid steps, so padding
    /// never shifts them.
    pub fn new(series: &[&IrregularSeries], policy: &TimePolicy) -> Result<Self> {
        let size = series.len();
        if size == 0 {
            return Err(invalid("empty batch"));
        }
        let steps = series.iter().map(|s| s.len()).max().unwrap_or(0);
        let dims = series
            .iter()
            .map(|s| s.dims())
            .find(|&d| d > 0)
            .unwrap_or(0);
        let mut inputs = vec![vec![0.0; size * dims]; steps];
        let mut times = vec![vec![0.0; size]; steps];
        let mut mask = vec![vec![false; size]; steps];
        for (r, s) in series.iter().enumerate() {
            s.validate()?;
            if !s.is_empty() && s.dims() != dims {
                return Err(invalid(format!(
                    "series {r} has {} features, expected {dims}",
                    s.dims()
                )));
            }
            let t = match policy.mode {
                TimeMode::Timestamped => s.deltas()?,
                TimeMode::Equidistant => {
                    let valid = s.mask.iter().filter(|&&m| m).count();
                    let mut k = 0;
                    s.mask
                        .iter()
                        .map(|&m| {
                            if m {
                                k += 1;
                                policy.equidistant(k - 1, valid)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                }
            };
            for k in 0..s.len() {
                inputs[k][r * dims..(r + 1) * dims].copy_from_slice(&s.values[k]);
                times[k][r] = t[k];
                mask[k][r] = s.mask[k];
            }
        }
        let inputs = inputs
            .into_iter()
            .map(|d| Tensor::new(vec![size, dims], d))
            .collect::<Result<_>>()?;
        let labels = Tensor::new(vec![size, 1], series.iter().map(|s| s.label).collect())?;
        Ok(Self {
            size,
            steps,
            inputs,
            times,
            mask,
            labels,
        })
    }

    pub fn dims(&self) -> usize {
        self.inputs.first().map_or(0, Tensor::last_dim)
    }
}
