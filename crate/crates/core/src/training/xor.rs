use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::IrregularSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XorEncoding {
    /// One event per bit, one time unit apart.
    Dense,
    /// One event per run of equal bits; its duration is the run length.
    Event,
}

impl std::str::FromStr for XorEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" | "equidistant" => Ok(Self::Dense),
            "event" => Ok(Self::Event),
            other => Err(invalid(format!("unknown encoding '{other}'"))),
        }
    }
}

/// Per-step input features built from a sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XorFeatures {
    /// `[value]`.
    #[default]
    Value,
    /// `[value, dt]`. The gates are monotone in elapsed time, so an event
    /// model can only read a run's length parity if `dt` is also an input.
    ValueDt,
}

impl XorFeatures {
    pub fn dims(self) -> usize {
        match self {
            Self::Value => 1,
            Self::ValueDt => 2,
        }
    }
}

impl std::str::FromStr for XorFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(Self::Value),
            "value-dt" => Ok(Self::ValueDt),
            other => Err(invalid(format!("unknown feature set '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XorDatasetConfig {
    pub n_sequences: usize,
    pub bits_per_sequence: usize,
    pub encoding: XorEncoding,
    pub seed: u64,
    /// Draw each training sequence length uniformly from
    /// `[min_bits, bits_per_sequence]`. Validation and test splits always use
    /// the full length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_bits: Option<usize>,
}

impl XorDatasetConfig {
    pub fn new(n_sequences: usize, encoding: XorEncoding, seed: u64) -> Self {
        Self {
            n_sequences,
            bits_per_sequence: 32,
            encoding,
            seed,
            min_bits: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits_per_sequence == 0 {
            return Err(invalid("bits_per_sequence must be >= 1"));
        }
        if let Some(lo) = self.min_bits {
            if lo == 0 || lo > self.bits_per_sequence {
                return Err(invalid(format!(
                    "min_bits must be in [1, {}], got {lo}",
                    self.bits_per_sequence
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XorEvent {
    pub value: f64,
    pub dt: f64,
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XorSequence {
    pub events: Vec<XorEvent>,
    pub label: f64,
}

impl XorSequence {
    pub fn encode(bits: &[u8], encoding: XorEncoding) -> Self {
        let label = f64::from(bits.iter().fold(0u8, |acc, b| acc ^ (b & 1)));
        let mut events: Vec<XorEvent> = Vec::new();
        for &b in bits {
            let value = f64::from(b & 1);
            match (encoding, events.last_mut()) {
                (XorEncoding::Event, Some(e)) if e.value == value => e.dt += 1.0,
                _ => events.push(XorEvent { value, dt: 1.0 }),
            }
        }
        Self { events, label }
    }

    /// Features `[value]`, timestamps at the end of each event.
    pub fn to_series(&self) -> Result<IrregularSeries> {
        self.to_series_with(XorFeatures::Value)
    }

    pub fn to_series_with(&self, features: XorFeatures) -> Result<IrregularSeries> {
        let mut t = 0.0;
        let mut ts = Vec::with_capacity(self.events.len());
        for e in &self.events {
            t += e.dt;
            ts.push(t);
        }
        IrregularSeries::new(
            self.events
                .iter()
                .map(|e| match features {
                    XorFeatures::Value => vec![e.value],
                    XorFeatures::ValueDt => vec![e.value, e.dt],
                })
                .collect(),
            Some(ts),
            self.label,
        )
    }

    pub fn duration(&self) -> f64 {
        self.events.iter().map(|e| e.dt).sum()
    }
}

/// Deterministic in `cfg.seed`.
pub fn generate_xor(cfg: &XorDatasetConfig) -> Result<Vec<XorSequence>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bits = vec![0u8; cfg.bits_per_sequence];
    Ok((0..cfg.n_sequences)
        .map(|_| {
            let len = match cfg.min_bits {
                Some(lo) => rng.gen_range(lo..=cfg.bits_per_sequence),
                None => cfg.bits_per_sequence,
            };
            for b in bits[..len].iter_mut() {
                *b = rng.gen_range(0..2);
            }
            XorSequence::encode(&bits[..len], cfg.encoding)
        })
        .collect())
}

/// Train, validation and test sets in a 70/15/15 ratio, each drawn from its
/// own seed derived from `cfg.seed`. `min_bits` only shapes the training set.
pub fn xor_splits(cfg: &XorDatasetConfig) -> Result<[Vec<XorSequence>; 3]> {
    let n = cfg.n_sequences;
    let val = n * 15 / 100;
    let test = n * 15 / 100;
    let sizes = [n - val - test, val, test];
    let mut out: [Vec<XorSequence>; 3] = Default::default();
    for (k, (slot, size)) in out.iter_mut().zip(sizes).enumerate() {
        *slot = generate_xor(&XorDatasetConfig {
            n_sequences: size,
            seed: split_seed(cfg.seed, k),
            min_bits: if k == 0 { cfg.min_bits } else { None },
            ..*cfg
        })?;
    }
    Ok(out)
}

fn split_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((k as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn to_series(data: &[XorSequence], features: XorFeatures) -> Result<Vec<IrregularSeries>> {
    data.iter().map(|s| s.to_series_with(features)).collect()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}
