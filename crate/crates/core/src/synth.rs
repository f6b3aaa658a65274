//! Analytic test energies, exhaustive structured inference and synthetic
//! dataset generation.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::rng;

/// Largest output dimension accepted by exhaustive enumeration.
pub const MAX_ENUMERATION_DIM: usize = 20;

/// Features that drive both synthetic energies (1-based).
pub const GROUND_TRUTH_FEATURES: [usize; 4] = [1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticEnergy {
    E1,
    E2,
}

impl SyntheticEnergy {
    pub fn output_dim(self) -> usize {
        match self {
            SyntheticEnergy::E1 => 2,
            SyntheticEnergy::E2 => 4,
        }
    }

    pub const fn min_input_dim(self) -> usize {
        4
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticEnergy::E1 => "e1",
            SyntheticEnergy::E2 => "e2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "e1" | "E1" => Some(SyntheticEnergy::E1),
            "e2" | "E2" => Some(SyntheticEnergy::E2),
            _ => None,
        }
    }

    /// Evaluates the energy. `y` entries must be 0 or 1.
    pub fn eval(self, x: &[f64], y: &[u8]) -> Result<f64> {
        if x.len() < self.min_input_dim() {
            return Err(Error::InvalidInput(alloc::format!(
                "energy needs at least {} features, got {}",
                self.min_input_dim(),
                x.len()
            )));
        }
        if y.len() != self.output_dim() {
            return Err(dim_mismatch("structured output", self.output_dim(), y.len()));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("outputs must be binary".into()));
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(self, x: &[f64], y: &[u8]) -> f64 {
        let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
        match self {
            SyntheticEnergy::E1 => {
                let (y1, y2) = (y[0] as f64, y[1] as f64);
                (x1 * y1 + x4) * (1.0 - y2) + (x2 * (1.0 - y1) + x3) * y2
            }
            SyntheticEnergy::E2 => {
                let (y1, y2, y3, y4) = (y[0] as f64, y[1] as f64, y[2] as f64, y[3] as f64);
                (libm::sin(x1) * y1 * y3 + libm::fabs(x4)) * (1.0 - y2) * y4
                    + (libm::exp(x2 / 10.0 - 1.0) * (1.0 - y1) * (1.0 - y3) + x3) * y2 * (1.0 - y4)
            }
        }
    }
}

/// Writes the bits of `code` into `y`, `y[0]` being the most significant.
pub fn decode_output(code: u64, y: &mut [u8]) {
    let d = y.len();
    for (i, v) in y.iter_mut().enumerate() {
        *v = ((code >> (d - 1 - i)) & 1) as u8;
    }
}

/// Exhaustive minimization over all `2^d` binary outputs.
///
/// Enumerates in lexicographic order (y1 most significant) and keeps the
/// first strict minimum, so exact ties resolve to the smallest bit string.
pub fn brute_force_argmin<F>(d: usize, mut energy: F) -> Result<(Vec<u8>, f64)>
where
    F: FnMut(&[u8]) -> f64,
{
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::Capacity { dim: d, bound: MAX_ENUMERATION_DIM });
    }
    let mut y = vec![0u8; d];
    let mut best = vec![0u8; d];
    let mut best_energy = f64::INFINITY;
    for code in 0..(1u64 << d) {
        decode_output(code, &mut y);
        let e = energy(&y);
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&y);
        }
    }
    Ok((best, best_energy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub energy: SyntheticEnergy,
    pub n: usize,
    pub num_samples: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < self.energy.min_input_dim() {
            return Err(Error::Config(alloc::format!(
                "input dimension must be at least {}, got {}",
                self.energy.min_input_dim(),
                self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n: usize,
    pub d: usize,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<u8>>,
    /// 1-based feature indices.
    pub ground_truth_features: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Splits off the trailing `fraction` of rows.
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let held = libm::round((self.len() as f64) * fraction.clamp(0.0, 1.0)) as usize;
        let cut = self.len() - held;
        let part = |range: core::ops::Range<usize>| Dataset {
            n: self.n,
            d: self.d,
            inputs: self.inputs[range.clone()].to_vec(),
            outputs: self.outputs[range].to_vec(),
            ground_truth_features: self.ground_truth_features.clone(),
        };
        (part(0..cut), part(cut..self.len()))
    }
}

/// Standard-normal feature vector for row `row` of the stream keyed by `seed`.
pub fn sample_input(seed: u64, row: u64, n: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, row);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Draws inputs i.i.d. standard normal (row `i` from stream `i`) and labels
/// each row with the exact argmin of the generating energy.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.energy.output_dim();
    let mut inputs = Vec::with_capacity(spec.num_samples);
    let mut outputs = Vec::with_capacity(spec.num_samples);
    for row in 0..spec.num_samples {
        let x = sample_input(spec.seed, row as u64, spec.n);
        let (y, _) = brute_force_argmin(d, |y| spec.energy.eval_unchecked(&x, y))?;
        inputs.push(x);
        outputs.push(y);
    }
    Ok(Dataset {
        n: spec.n,
        d,
        inputs,
        outputs,
        ground_truth_features: GROUND_TRUTH_FEATURES.to_vec(),
    })
}
