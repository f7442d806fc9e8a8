//! Temperature-based multi-dataset sampling.
//!
//! Dataset `i` with size `n_i` is drawn with probability
//! `n_i^α / Σ_j n_j^α`. `α = 1` is natural (size-proportional) sampling,
//! `α = 0` is uniform over datasets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::rng::{SeededRng, PRNG_NAME};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("sampling spec has no datasets")]
    EmptySpec,
    #[error("dataset {name:?} has non-positive size {size}")]
    InvalidSize { name: String, size: f64 },
    #[error("expected {expected} dataset item counts, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("dataset {0} has no items to draw from")]
    EmptyDataset(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSize<S> {
    pub name: String,
    pub size: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSpec<S> {
    pub datasets: Vec<DatasetSize<S>>,
    pub alpha: S,
}

impl<S: Real> SamplingSpec<S> {
    pub fn new(datasets: Vec<DatasetSize<S>>, alpha: S) -> Self {
        Self { datasets, alpha }
    }

    pub fn from_sizes(sizes: &[S], alpha: S) -> Self {
        let datasets = sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| DatasetSize { name: format!("dataset{i}"), size })
            .collect();
        Self { datasets, alpha }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.datasets.is_empty() {
            return Err(SamplerError::EmptySpec);
        }
        // NaN fails both comparisons.
        if !(self.alpha >= S::zero() && self.alpha <= S::one()) {
            return Err(SamplerError::InvalidAlpha(self.alpha.as_f64()));
        }
        for d in &self.datasets {
            if !(d.size > S::zero()) || !d.size.is_finite() {
                return Err(SamplerError::InvalidSize {
                    name: d.name.clone(),
                    size: d.size.as_f64(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry<S> {
    pub name: String,
    pub size: S,
    pub p: S,
}

/// Resolved sampling distribution plus the seed for stream generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan<S> {
    pub alpha: S,
    pub datasets: Vec<PlanEntry<S>>,
    pub seed: u64,
    pub prng: String,
}

impl<S: Real> SamplingPlan<S> {
    pub fn probabilities(&self) -> Vec<S> {
        self.datasets.iter().map(|d| d.p).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// A fresh, independent stream over this plan.
    pub fn stream(&self, item_counts: &[u64]) -> Result<SampleStream, SamplerError> {
        if item_counts.len() != self.datasets.len() {
            return Err(SamplerError::CountMismatch {
                expected: self.datasets.len(),
                got: item_counts.len(),
            });
        }
        if let Some(i) = item_counts.iter().position(|&c| c == 0) {
            return Err(SamplerError::EmptyDataset(i));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = self
            .datasets
            .iter()
            .map(|d| {
                acc += d.p.as_f64();
                acc
            })
            .collect();
        // Guard the last bucket against rounding below 1.
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Ok(SampleStream {
            rng: SeededRng::new(self.seed),
            cumulative,
            counts: item_counts.to_vec(),
        })
    }
}

/// `p_i = n_i^α / Σ_j n_j^α`.
pub fn sampling_probabilities<S: Real>(spec: &SamplingSpec<S>) -> Result<SamplingPlan<S>, SamplerError> {
    spec.validate()?;
    let weights: Vec<S> = spec.datasets.iter().map(|d| d.size.powf(spec.alpha)).collect();
    let total = weights.iter().fold(S::zero(), |a, &w| a + w);
    let datasets = spec
        .datasets
        .iter()
        .zip(&weights)
        .map(|(d, &w)| PlanEntry {
            name: d.name.clone(),
            size: d.size,
            p: w / total,
        })
        .collect();
    Ok(SamplingPlan {
        alpha: spec.alpha,
        datasets,
        seed: 0,
        prng: PRNG_NAME.to_owned(),
    })
}

/// Endless iterator of `(dataset index, item index)` draws.
///
/// Each consumer owns its stream; clone to fork an identical one.
#[derive(Clone, Debug)]
pub struct SampleStream {
    rng: SeededRng,
    cumulative: Vec<f64>,
    counts: Vec<u64>,
}

impl Iterator for SampleStream {
    type Item = (usize, u64);

    fn next(&mut self) -> Option<Self::Item> {
        let u = self.rng.unit();
        let dataset = self.cumulative.partition_point(|&c| c <= u);
        let item = self.rng.below(self.counts[dataset]);
        Some((dataset, item))
    }
}

pub fn draw_stream<S: Real>(
    plan: &SamplingPlan<S>,
    item_counts: &[u64],
    length: usize,
) -> Result<Vec<(usize, u64)>, SamplerError> {
    Ok(plan.stream(item_counts)?.take(length).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(sizes: &[f64], alpha: f64) -> Vec<f64> {
        sampling_probabilities(&SamplingSpec::from_sizes(sizes, alpha))
            .unwrap()
            .probabilities()
    }

    #[test]
    fn natural_and_uniform_endpoints() {
        assert_eq!(probs(&[3.0, 1.0], 1.0), vec![0.75, 0.25]);
        assert_eq!(probs(&[3.0, 1.0], 0.0), vec![0.5, 0.5]);
    }

    #[test]
    fn sqrt_temperature() {
        let p = probs(&[100.0, 1.0], 0.5);
        assert!((p[0] - 10.0 / 11.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let p = sampling_probabilities(&SamplingSpec::from_sizes(&[3.0f32, 1.0], 1.0))
            .unwrap()
            .probabilities();
        assert_eq!(p, vec![0.75f32, 0.25]);
    }

    #[test]
    fn errors() {
        let e = sampling_probabilities(&SamplingSpec::<f64>::from_sizes(&[], 0.5)).unwrap_err();
        assert_eq!(e, SamplerError::EmptySpec);
        for bad in [-0.1, 1.5, f64::NAN] {
            let e = sampling_probabilities(&SamplingSpec::from_sizes(&[1.0], bad)).unwrap_err();
            assert!(matches!(e, SamplerError::InvalidAlpha(_)));
        }
        let e = sampling_probabilities(&SamplingSpec::from_sizes(&[1.0, 0.0], 0.5)).unwrap_err();
        assert!(matches!(e, SamplerError::InvalidSize { .. }));
    }

    #[test]
    fn stream_basics() {
        let plan = sampling_probabilities(&SamplingSpec::from_sizes(&[3.0, 1.0], 1.0))
            .unwrap()
            .with_seed(11);
        assert!(draw_stream(&plan, &[3, 1], 0).unwrap().is_empty());
        let a = draw_stream(&plan, &[3, 1], 500).unwrap();
        let b = draw_stream(&plan, &[3, 1], 500).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&(d, i)| (d == 0 && i < 3) || (d == 1 && i < 1)));
        let other = draw_stream(&plan.clone().with_seed(12), &[3, 1], 500).unwrap();
        assert_ne!(a, other);
        assert!(matches!(
            draw_stream(&plan, &[3], 1),
            Err(SamplerError::CountMismatch { .. })
        ));
        assert!(matches!(draw_stream(&plan, &[3, 0], 1), Err(SamplerError::EmptyDataset(1))));
    }
}
