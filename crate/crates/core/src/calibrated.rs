//! Bayes-optimal decisions for a calibrated local model.
//!
//! With `P(label = 1 | x) = f`, predicting 0 costs `delta_fn * f` in
//! expectation, predicting 1 costs `delta_fp * (1 - f)`, and offloading costs
//! `beta`. The optimal action takes the smallest of the three; the binary
//! rule resolves ties as "predict 1 beats offload beats predict 0", which is
//! the half-open band `beta/delta_fn <= f < 1 - beta/delta_fp` together with
//! the `f >= delta_fp / (delta_fp + delta_fn)` predictor.

use crate::domain::{CostModel, Decision, Label};
use crate::error::{Error, Result};

/// Expected cost of each binary action at score `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionCosts {
    pub predict0: f64,
    pub predict1: f64,
}

pub fn action_costs(f: f64, costs: &CostModel) -> ActionCosts {
    ActionCosts {
        predict0: costs.delta_fn() * f,
        predict1: costs.delta_fp() * (1.0 - f),
    }
}

/// Predicts 1 iff `f >= delta_fp / (delta_fp + delta_fn)`.
///
/// Evaluated as `delta_fp * (1 - f) <= delta_fn * f`, which is the same
/// condition without the division.
pub fn optimal_predictor(f: f64, costs: &CostModel) -> Result<Label> {
    if costs.delta_fp() + costs.delta_fn() <= 0.0 {
        return Err(Error::invalid(
            "optimal predictor undefined when both misclassification costs are zero",
        ));
    }
    let c = action_costs(f, costs);
    Ok(if c.predict1 <= c.predict0 {
        Label::One
    } else {
        Label::Zero
    })
}

/// Offload band `[beta / delta_fn, 1 - beta / delta_fp)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadBand {
    pub lower: f64,
    pub upper: f64,
    pub empty: bool,
}

impl OffloadBand {
    pub fn contains(&self, f: f64) -> bool {
        !self.empty && self.lower <= f && f < self.upper
    }
}

/// `beta >= delta_fp * delta_fn / (delta_fp + delta_fn)`: half the harmonic
/// mean of the two misclassification costs.
pub fn no_offload_threshold(costs: &CostModel) -> f64 {
    let (a, b) = (costs.delta_fp(), costs.delta_fn());
    a * b / (a + b)
}

pub fn optimal_band(beta: f64, costs: &CostModel) -> Result<OffloadBand> {
    if costs.delta_fp() <= 0.0 || costs.delta_fn() <= 0.0 {
        return Err(Error::invalid(
            "offload band requires strictly positive misclassification costs",
        ));
    }
    if beta < 0.0 {
        return Err(Error::invalid(format!("offload cost {beta} is negative")));
    }
    Ok(OffloadBand {
        lower: beta / costs.delta_fn(),
        upper: 1.0 - beta / costs.delta_fp(),
        empty: beta >= no_offload_threshold(costs),
    })
}

/// Optimal action at score `f`, decided on expected costs directly.
///
/// Offloads iff `beta <= delta_fn * f` and `beta < delta_fp * (1 - f)`.
pub fn optimal_decision(f: f64, beta: f64, costs: &CostModel) -> Result<Decision> {
    let pred = optimal_predictor(f, costs)?;
    let c = action_costs(f, costs);
    if beta <= c.predict0 && beta < c.predict1 {
        Ok(Decision::Offload)
    } else {
        Ok(Decision::local(pred))
    }
}

pub fn expected_cost(f: f64, beta: f64, costs: &CostModel) -> f64 {
    let c = action_costs(f, costs);
    beta.min(c.predict1).min(c.predict0)
}

/// Row-major `K x K` misclassification costs; `C[i][j]` is the cost of
/// predicting class `j` when the truth is `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!(
                "need at least two classes, got {k}"
            )));
        }
        if entries.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                actual: entries.len(),
            });
        }
        if entries.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("cost matrix entries must lie in [0, 1]"));
        }
        if (0..k).any(|i| entries[i * k + i] != 0.0) {
            return Err(Error::invalid("cost matrix diagonal must be zero"));
        }
        Ok(Self { k, entries })
    }

    /// `[[0, delta_fp], [delta_fn, 0]]`.
    pub fn binary(costs: &CostModel) -> Self {
        Self {
            k: 2,
            entries: vec![0.0, costs.delta_fp(), costs.delta_fn(), 0.0],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> f64 {
        self.entries[truth * self.k + predicted]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxVector(Vec<f64>);

impl SoftmaxVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("softmax entries must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "softmax entries sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    /// `(1 - f1, f1)`.
    pub fn binary(f1: f64) -> Result<Self> {
        Self::new(vec![1.0 - f1, f1])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// `f^T C_k` for every candidate prediction `k`.
pub fn column_costs(f: &SoftmaxVector, c: &CostMatrix) -> Result<Vec<f64>> {
    if f.0.len() != c.k {
        return Err(Error::DimensionMismatch {
            expected: c.k,
            actual: f.0.len(),
        });
    }
    Ok((0..c.k)
        .map(|k| {
            f.0.iter()
                .enumerate()
                .fold(0.0, |acc, (i, p)| acc + p * c.get(i, k))
        })
        .collect())
}

/// `argmin_k f^T C_k`; ties go to the larger class index.
pub fn multiclass_predict(f: &SoftmaxVector, c: &CostMatrix) -> Result<usize> {
    Ok(argmin_prefer_last(&column_costs(f, c)?).0)
}

fn argmin_prefer_last(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v <= best.1 {
            best = (k, v);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MulticlassDecision {
    Local(usize),
    Offload,
}

/// Offloads when `min_k f^T C_k > beta`. At equality the sample is kept
/// local unless the cheapest local class is class 0, which keeps the `K = 2`
/// case identical to the binary half-open band.
pub fn multiclass_decide(
    f: &SoftmaxVector,
    c: &CostMatrix,
    beta: f64,
) -> Result<(MulticlassDecision, f64)> {
    let (k, best) = argmin_prefer_last(&column_costs(f, c)?);
    let offload = best > beta || (best == beta && k == 0);
    let decision = if offload {
        MulticlassDecision::Offload
    } else {
        MulticlassDecision::Local(k)
    };
    Ok((decision, beta.min(best)))
}
