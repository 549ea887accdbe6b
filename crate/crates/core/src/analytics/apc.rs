//! Average predictive comparisons and subject-level transition summaries.

use rayon::prelude::*;

use super::stationary::stationary_distribution;
use crate::dataset::DesignMatrix;
use crate::mcmc::ChainSet;
use crate::model::{LogitTransitions, Params};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonTarget {
    /// `P(H_{t+1} = to | H_t = from)`, 0-based states.
    Transition { from: usize, to: usize },
    /// Long-run share of `state` in the last-day transition matrix.
    Stationary { state: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveComparisonRequest {
    pub covariate: usize,
    pub u_hi: f64,
    pub u_lo: f64,
    pub target: ComparisonTarget,
}

impl PredictiveComparisonRequest {
    pub fn new(covariate: usize, u_hi: f64, u_lo: f64, target: ComparisonTarget) -> Result<Self> {
        if u_hi == u_lo || !u_hi.is_finite() || !u_lo.is_finite() {
            return Err(Error::InvalidInput("comparison values must be finite and distinct".into()));
        }
        Ok(Self {
            covariate,
            u_hi,
            u_lo,
            target,
        })
    }

    /// Request for a named covariate at the design's default comparison
    /// values (the two codes of a binary input, otherwise mean ± 1 sd).
    pub fn named(design: &DesignMatrix, name: &str, target: ComparisonTarget) -> Result<Self> {
        let covariate = design
            .covariate_index(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown covariate '{name}'")))?;
        let (hi, lo) = design.comparison_values(covariate);
        Self::new(covariate, hi, lo, target)
    }
}

fn check(trans: &LogitTransitions, design: &DesignMatrix, covariate: usize) -> Result<()> {
    if covariate >= design.n_covariates() {
        return Err(Error::InvalidInput(format!("unknown covariate index {covariate}")));
    }
    if design.n_covariates() != trans.n_covariates() || design.n_subjects() != trans.n_subjects() {
        return Err(Error::Dimension("design does not match the fitted parameters".into()));
    }
    if design.n_days() < 2 {
        return Err(Error::Dimension("need at least two days".into()));
    }
    Ok(())
}

/// Row-major `S×S` matrix of `B_jm(U)` at one parameter value: the
/// difference between transition probabilities with `U = u_hi` and
/// `U = u_lo`, other inputs at their observed values, averaged over every
/// subject and every day with a following transition.
pub fn transition_difference_matrix(
    trans: &LogitTransitions,
    design: &DesignMatrix,
    covariate: usize,
    u_hi: f64,
    u_lo: f64,
) -> Result<Vec<f64>> {
    check(trans, design, covariate)?;
    let k = trans.n_states();
    let mut acc = vec![0.0; k * k];
    let mut x_hi = vec![0.0; design.n_covariates()];
    let mut x_lo = x_hi.clone();
    let mut row_hi = vec![0.0; k];
    let mut row_lo = vec![0.0; k];
    for i in 0..design.n_subjects() {
        for t in 0..design.n_days() - 1 {
            x_hi.copy_from_slice(design.row(i, t));
            x_lo.copy_from_slice(design.row(i, t));
            x_hi[covariate] = u_hi;
            x_lo[covariate] = u_lo;
            for r in 0..k {
                trans.fill_row(i, r, &x_hi, &mut row_hi)?;
                trans.fill_row(i, r, &x_lo, &mut row_lo)?;
                for s in 0..k {
                    acc[r * k + s] += row_hi[s] - row_lo[s];
                }
            }
        }
    }
    let cells = (design.n_subjects() * (design.n_days() - 1)) as f64;
    acc.iter_mut().for_each(|v| *v /= cells);
    Ok(acc)
}

/// Differences in stationary probabilities of each subject's last-day
/// transition matrix at `u_hi` versus `u_lo`, averaged over subjects.
pub fn stationary_difference(
    trans: &LogitTransitions,
    design: &DesignMatrix,
    covariate: usize,
    u_hi: f64,
    u_lo: f64,
) -> Result<Vec<f64>> {
    check(trans, design, covariate)?;
    let k = trans.n_states();
    let last = design.n_days() - 1;
    let mut acc = vec![0.0; k];
    for i in 0..design.n_subjects() {
        let mut x = design.row(i, last).to_vec();
        x[covariate] = u_hi;
        let hi = stationary_distribution(&trans.matrix_at(i, &x)?, k)?;
        x[covariate] = u_lo;
        let lo = stationary_distribution(&trans.matrix_at(i, &x)?, k)?;
        for s in 0..k {
            acc[s] += hi[s] - lo[s];
        }
    }
    acc.iter_mut().for_each(|v| *v /= design.n_subjects() as f64);
    Ok(acc)
}

fn per_draw<T: Send>(set: &ChainSet, f: impl Fn(&Params) -> Result<T> + Sync) -> Result<Vec<T>> {
    let index: Vec<(usize, usize)> = set
        .chains
        .iter()
        .enumerate()
        .flat_map(|(c, chain)| (0..chain.n_draws()).map(move |g| (c, g)))
        .collect();
    index
        .par_iter()
        .map(|&(c, g)| f(&set.chains[c].draw(g)))
        .collect()
}

/// Full `S×S` comparison matrix for every stored draw (chains in order).
pub fn transition_difference_draws(
    set: &ChainSet,
    design: &DesignMatrix,
    covariate: usize,
    u_hi: f64,
    u_lo: f64,
) -> Result<Vec<Vec<f64>>> {
    per_draw(set, |p| transition_difference_matrix(p.transitions(), design, covariate, u_hi, u_lo))
}

/// Posterior draws of `B_jm(U)` for a transition target.
pub fn average_transition_difference(
    set: &ChainSet,
    design: &DesignMatrix,
    request: &PredictiveComparisonRequest,
) -> Result<Vec<f64>> {
    let ComparisonTarget::Transition { from, to } = request.target else {
        return Err(Error::InvalidInput("request target is not a transition".into()));
    };
    let k = set.shape.n_states;
    if from >= k || to >= k {
        return Err(Error::InvalidInput(format!("transition ({from}, {to}) outside {k} states")));
    }
    per_draw(set, |p| {
        let trans = p.transitions();
        check(trans, design, request.covariate)?;
        let mut hi = design.row(0, 0).to_vec();
        let mut lo = hi.clone();
        let mut row_hi = vec![0.0; k];
        let mut row_lo = vec![0.0; k];
        let mut acc = 0.0;
        for i in 0..design.n_subjects() {
            for t in 0..design.n_days() - 1 {
                hi.copy_from_slice(design.row(i, t));
                lo.copy_from_slice(design.row(i, t));
                hi[request.covariate] = request.u_hi;
                lo[request.covariate] = request.u_lo;
                trans.fill_row(i, from, &hi, &mut row_hi)?;
                trans.fill_row(i, from, &lo, &mut row_lo)?;
                acc += row_hi[to] - row_lo[to];
            }
        }
        Ok(acc / (design.n_subjects() * (design.n_days() - 1)) as f64)
    })
}

/// Posterior draws of the average stationary-probability difference.
pub fn average_stationary_difference(
    set: &ChainSet,
    design: &DesignMatrix,
    request: &PredictiveComparisonRequest,
) -> Result<Vec<f64>> {
    let ComparisonTarget::Stationary { state } = request.target else {
        return Err(Error::InvalidInput("request target is not a stationary probability".into()));
    };
    if state >= set.shape.n_states {
        return Err(Error::InvalidInput(format!("state {state} outside {} states", set.shape.n_states)));
    }
    per_draw(set, |p| {
        stationary_difference(p.transitions(), design, request.covariate, request.u_hi, request.u_lo)
            .map(|d| d[state])
    })
}

/// Stationary-difference vectors for every stored draw.
pub fn stationary_difference_draws(
    set: &ChainSet,
    design: &DesignMatrix,
    covariate: usize,
    u_hi: f64,
    u_lo: f64,
) -> Result<Vec<Vec<f64>>> {
    per_draw(set, |p| stationary_difference(p.transitions(), design, covariate, u_hi, u_lo))
}

/// Posterior mean of subject `subject`'s transition matrix on `day`
/// (covariates of that day), row-major `S×S`.
pub fn posterior_mean_transitions(set: &ChainSet, design: &DesignMatrix, subject: usize, day: usize) -> Result<Vec<f64>> {
    let x = design.design_vector(subject, day)?;
    let k = set.shape.n_states;
    if subject >= set.shape.n_subjects {
        return Err(Error::Dimension(format!("subject {subject} outside the fit")));
    }
    let total = set.n_draws();
    if total == 0 {
        return Err(Error::InvalidInput("no stored draws".into()));
    }
    let mut acc = vec![0.0; k * k];
    for p in set.draws() {
        for (a, v) in acc.iter_mut().zip(p.transitions().matrix_at(subject, &x)?) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|v| *v /= total as f64);
    Ok(acc)
}

/// Posterior mean of the population matrix `softmax(μ)` (average random
/// intercepts, covariates at zero).
pub fn posterior_mean_population_matrix(set: &ChainSet) -> Result<Vec<f64>> {
    let total = set.n_draws();
    if total == 0 {
        return Err(Error::InvalidInput("no stored draws".into()));
    }
    let k = set.shape.n_states;
    let mut acc = vec![0.0; k * k];
    for p in set.draws() {
        for (a, v) in acc.iter_mut().zip(p.transitions().mean_matrix()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|v| *v /= total as f64);
    Ok(acc)
}
