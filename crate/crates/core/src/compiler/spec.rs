use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SPEC_VERSION: u32 = 1;

/// Parameters of the synapse from node `j` to node `i`. Node indices run
/// over inputs first (`0..n_inputs`) and hidden neurons after
/// (`n_inputs..n_inputs + n_hidden`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynapseParams {
    pub i: usize,
    pub j: usize,
    pub sigma: f64,
    pub mu: f64,
    pub a: f64,
}

/// A trained LTC network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtcNetworkSpec {
    pub version: u32,
    pub n_inputs: usize,
    pub n_hidden: usize,
    /// `(n_inputs + n_hidden)²`; `adjacency[i][j] == 1` is a synapse j → i.
    pub adjacency: Vec<Vec<u8>>,
    pub synapses: Vec<SynapseParams>,
    /// Per hidden neuron; the leak rate is `1 / tau`.
    pub tau: Vec<f64>,
    pub x0: Vec<f64>,
}

impl LtcNetworkSpec {
    pub fn nodes(&self) -> usize {
        self.n_inputs + self.n_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes();
        if self.version != SPEC_VERSION {
            return Err(invalid(format!(
                "unsupported spec version {}",
                self.version
            )));
        }
        if self.adjacency.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            return Err(invalid(format!("adjacency must be {n}×{n}")));
        }
        if self.adjacency.iter().flatten().any(|&e| e > 1) {
            return Err(invalid("adjacency entries must be 0 or 1"));
        }
        if self.tau.len() != self.n_hidden || self.x0.len() != self.n_hidden {
            return Err(invalid(format!(
                "tau and x0 need {} entries (got {} and {})",
                self.n_hidden,
                self.tau.len(),
                self.x0.len()
            )));
        }
        if let Some(t) = self.tau.iter().find(|&&t| !(t > 0.0) || !t.is_finite()) {
            return Err(invalid(format!("tau must be finite and > 0, got {t}")));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0 must be finite"));
        }
        for (i, row) in self.adjacency.iter().enumerate().take(self.n_inputs) {
            if let Some(j) = row.iter().position(|&e| e == 1) {
                return Err(invalid(format!("synapse ({i}, {j}) targets an input node")));
            }
        }
        let mut seen = vec![vec![false; n]; n];
        for s in &self.synapses {
            if s.i >= n || s.j >= n {
                return Err(invalid(format!("synapse ({}, {}) out of range", s.i, s.j)));
            }
            if self.adjacency[s.i][s.j] != 1 {
                return Err(invalid(format!(
                    "synapse ({}, {}) has parameters but no adjacency entry",
                    s.i, s.j
                )));
            }
            if seen[s.i][s.j] {
                return Err(invalid(format!("synapse ({}, {}) listed twice", s.i, s.j)));
            }
            if ![s.sigma, s.mu, s.a].iter().all(|v| v.is_finite()) {
                return Err(invalid(format!(
                    "synapse ({}, {}) has non-finite parameters",
                    s.i, s.j
                )));
            }
            seen[s.i][s.j] = true;
        }
        for (i, row) in self.adjacency.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                if e == 1 && !seen[i][j] {
                    return Err(Error::DanglingSynapse { i, j });
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// A network where every adjacency entry in `edges` (node-index pairs
    /// `(target, source)`) gets random synapse parameters: `sigma ∈ [1, 3]`,
    /// `mu ∈ [-0.5, 0.5]`, `A ∈ [-1, 1]`, and `tau ∈ [1, 2]`, `x0 ∈ [-0.5, 0.5]`.
    pub fn random(
        n_inputs: usize,
        n_hidden: usize,
        edges: &[(usize, usize)],
        seed: u64,
    ) -> Result<Self> {
        let n = n_inputs + n_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adjacency = vec![vec![0u8; n]; n];
        let mut synapses = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(invalid(format!("edge ({i}, {j}) out of range")));
            }
            adjacency[i][j] = 1;
            synapses.push(SynapseParams {
                i,
                j,
                sigma: rng.gen_range(1.0..3.0),
                mu: rng.gen_range(-0.5..0.5),
                a: rng.gen_range(-1.0..1.0),
            });
        }
        let spec = Self {
            version: SPEC_VERSION,
            n_inputs,
            n_hidden,
            adjacency,
            synapses,
            tau: (0..n_hidden).map(|_| rng.gen_range(1.0..2.0)).collect(),
            x0: (0..n_hidden).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every input projects onto every hidden neuron, and each hidden neuron
    /// also receives `fan_in` distinct hidden sources drawn at random
    /// (self-loops allowed).
    pub fn random_fan_in(
        n_inputs: usize,
        n_hidden: usize,
        fan_in: usize,
        seed: u64,
    ) -> Result<Self> {
        if fan_in > n_hidden {
            return Err(invalid(format!(
                "fan_in {fan_in} exceeds the {n_hidden} hidden neurons"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
        let n = n_inputs + n_hidden;
        let hidden: Vec<usize> = (n_inputs..n).collect();
        let mut edges = Vec::with_capacity(n_hidden * (n_inputs + fan_in));
        for i in n_inputs..n {
            edges.extend((0..n_inputs).map(|j| (i, j)));
            let mut sources: Vec<usize> =
                hidden.choose_multiple(&mut rng, fan_in).copied().collect();
            sources.sort_unstable();
            edges.extend(sources.into_iter().map(|j| (i, j)));
        }
        Self::random(n_inputs, n_hidden, &edges, seed)
    }

    /// Every input and every hidden neuron projects onto every hidden neuron.
    pub fn fully_connected(n_inputs: usize, n_hidden: usize, seed: u64) -> Result<Self> {
        let n = n_inputs + n_hidden;
        let edges: Vec<(usize, usize)> = (n_inputs..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .collect();
        Self::random(n_inputs, n_hidden, &edges, seed)
    }
}
