//! Independent verification engines: exhaustive permutation search, Monte
//! Carlo utility estimation, and finite-difference gradient checks.

use crate::click::{sample_clicks, ClickModelConfig};
use crate::data::RankedRequest;
use crate::error::{CrumError, Result};
use crate::perm::Permutation;
use crate::scalar::{upcast, Scalar};
use itertools::Itertools;

/// Exhaustive permutation runs refuse lists longer than this (7! = 5040
/// utility evaluations per request stays under a second).
pub const PERMUTATION_CAP: usize = 7;

/// Outcome of an exhaustive permutation search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<S: Scalar> {
    pub best_permutation: Permutation,
    pub best_utility: S,
    /// Every enumerated permutation with its utility, in lexicographic order
    /// of the position vectors.
    pub utility_of: Vec<(Permutation, S)>,
    /// Number of permutations visited; always `n!`.
    pub visited: usize,
}

/// Evaluates `utility_fn` on every permutation of `n` items and returns the
/// argmax, breaking ties toward the lexicographically smallest position
/// vector.
///
/// Refuses `n > n_cap`: the caller opted into a factorial search and the cap
/// is the contract that keeps it bounded.
pub fn enumerate_best_permutation<S: Scalar>(
    n: usize,
    mut utility_fn: impl FnMut(&Permutation) -> S,
    n_cap: usize,
) -> Result<OracleResult<S>> {
    if n == 0 {
        return Err(CrumError::Domain("cannot enumerate an empty list".into()));
    }
    if n > n_cap {
        return Err(CrumError::Refusal(format!(
            "exhaustive search over {n} items needs {n}! utility evaluations; cap is {n_cap}"
        )));
    }

    let mut best: Option<(Permutation, S)> = None;
    let mut utility_of = Vec::new();
    let mut visited = 0;
    // Position vectors enumerate in lexicographic order, so keeping the first
    // strict maximum realizes the tie-break.
    for positions in (1..=n).permutations(n) {
        let perm = Permutation::from_positions(positions)?;
        let u = utility_fn(&perm);
        if !u.is_finite() {
            return Err(CrumError::Numeric(format!(
                "utility is not finite at permutation {:?}",
                perm.positions()
            )));
        }
        visited += 1;
        if best.as_ref().is_none_or(|(_, b)| u > *b) {
            best = Some((perm.clone(), u));
        }
        utility_of.push((perm, u));
    }

    let (best_permutation, best_utility) = best.expect("n >= 1 enumerates at least one");
    Ok(OracleResult {
        best_permutation,
        best_utility,
        utility_of,
        visited,
    })
}

/// Estimates the expected click-weighted bid sum under the oracle click model
/// by repeated sampling; returns `(mean, standard error)`.
///
/// Trial `t` uses click seed `seed + t`, so estimates are deterministic and
/// trials are independent streams.
pub fn monte_carlo_utility<S: Scalar>(
    request: &RankedRequest<S>,
    permutation: &Permutation,
    config: &ClickModelConfig,
    relevance_probs: &[f64],
    trials: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(CrumError::Domain("trials must be at least 1".into()));
    }
    let bids: Vec<f64> = request.items.iter().map(|it| upcast(it.bid)).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for trial in 0..trials {
        let log = sample_clicks(request, permutation, config, relevance_probs, seed + trial)?;
        let utility: f64 = log
            .clicks
            .iter()
            .zip(&bids)
            .map(|(&c, b)| f64::from(c) * b)
            .sum();
        sum += utility;
        sum_sq += utility * utility;
    }
    let n = trials as f64;
    let mean = sum / n;
    let variance = (sum_sq / n - mean * mean).max(0.0);
    let stderr = if trials > 1 {
        (variance / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, stderr))
}

/// Central-difference check of an analytic gradient.
///
/// Perturbs each coordinate by `±epsilon`, compares `(f⁺ − f⁻) / 2ε` against
/// `analytic_grad`, and returns the maximum relative error with denominator
/// `max(|numeric|, |analytic|, 1e-8)`.
pub fn finite_difference_gradcheck<S: Scalar>(
    mut loss_fn: impl FnMut(&[S]) -> Result<S>,
    params: &[S],
    analytic_grad: &[S],
    epsilon: f64,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(CrumError::Domain("epsilon must be positive".into()));
    }
    if params.len() != analytic_grad.len() {
        return Err(CrumError::Config(format!(
            "gradient has {} coordinates for {} parameters",
            analytic_grad.len(),
            params.len()
        )));
    }

    let mut work = params.to_vec();
    let mut max_error = 0.0f64;
    for i in 0..params.len() {
        let base = work[i];
        work[i] = base + crate::scalar::lit(epsilon);
        let plus = eval_finite(&mut loss_fn, &work)?;
        work[i] = base - crate::scalar::lit(epsilon);
        let minus = eval_finite(&mut loss_fn, &work)?;
        work[i] = base;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = upcast(analytic_grad[i]);
        let denom = numeric.abs().max(analytic.abs()).max(1e-8);
        max_error = max_error.max((numeric - analytic).abs() / denom);
    }
    Ok(max_error)
}

fn eval_finite<S: Scalar>(
    loss_fn: &mut impl FnMut(&[S]) -> Result<S>,
    params: &[S],
) -> Result<f64> {
    let value = upcast(loss_fn(params)?);
    if !value.is_finite() {
        return Err(CrumError::Numeric(
            "loss is not finite at a perturbed point".into(),
        ));
    }
    Ok(value)
}
