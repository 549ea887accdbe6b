//! Pooled, homogeneous starting values.

use rand_distr::{Distribution, StandardNormal};

use crate::dataset::ObservationPanel;
use crate::model::{inverse_softmax, HmmParams, LogitTransitions, MarkovParams, ModelKind, Params};
use crate::rng::{substream, STREAM_INIT};
use crate::{Error, Result};

pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITERATIONS: usize = 500;
/// Probabilities below this are raised before logit inversion.
pub const INVERSION_FLOOR: f64 = 1e-6;

/// Homogeneous fit pooled over subjects, ignoring covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub n_states: usize,
    pub n_levels: usize,
    /// Row-major S×S.
    pub transition: Vec<f64>,
    /// Row-major S×M; the identity for a Markov fit.
    pub emissions: Vec<f64>,
    pub initial: Vec<f64>,
    /// Log-likelihood before each update and after the last one.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

fn starting_point(k: usize, m: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut transition = vec![0.0; k * k];
    for r in 0..k {
        for s in 0..k {
            transition[r * k + s] = if r == s { 0.8 } else { 0.2 / (k - 1) as f64 };
        }
    }
    // State s leans on the level at the same relative position.
    let mut emissions = vec![0.0; k * m];
    for s in 0..k {
        let target = if k > 1 {
            (s as f64 * (m - 1) as f64 / (k - 1) as f64).round() as usize
        } else {
            0
        };
        for l in 0..m {
            emissions[s * m + l] = if l == target { 0.6 } else { 0.4 / (m - 1).max(1) as f64 };
        }
        if m == 1 {
            emissions[s * m] = 1.0;
        }
    }
    (transition, emissions, vec![1.0 / k as f64; k])
}

/// Baum–Welch for a homogeneous HMM pooled over all subjects. Missing cells
/// contribute no emission term. With `n_states == 1` the emission row is
/// the empirical level distribution.
pub fn em_initialize(panel: &ObservationPanel, n_states: usize) -> Result<EmFit> {
    let (k, m, t_days) = (n_states, panel.n_levels(), panel.n_days());
    if k == 0 {
        return Err(Error::InvalidInput("need at least one hidden state".into()));
    }
    if panel.n_observed() == 0 {
        return Err(Error::InvalidInput("panel has no observed cells".into()));
    }
    if k == 1 {
        let counts = panel.counts().per_level;
        let total: usize = counts.iter().sum();
        return Ok(EmFit {
            n_states: 1,
            n_levels: m,
            transition: vec![1.0],
            emissions: counts.iter().map(|c| *c as f64 / total as f64).collect(),
            initial: vec![1.0],
            log_likelihood: vec![counts
                .iter()
                .filter(|c| **c > 0)
                .map(|c| *c as f64 * (*c as f64 / total as f64).ln())
                .sum()],
            converged: true,
        });
    }
    let (mut a, mut b, mut pi) = starting_point(k, m);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut alpha = vec![0.0; t_days * k];
    let mut beta = vec![0.0; t_days * k];
    let mut scale = vec![0.0; t_days];
    let mut emit = vec![0.0; t_days * k];
    for _ in 0..=EM_MAX_ITERATIONS {
        let mut num_a = vec![0.0; k * k];
        let mut num_b = vec![0.0; k * m];
        let mut num_pi = vec![0.0; k];
        let mut ll = 0.0;
        for i in 0..panel.n_subjects() {
            for t in 0..t_days {
                for s in 0..k {
                    emit[t * k + s] = panel.get(i, t).map_or(1.0, |y| b[s * m + y]);
                }
            }
            for t in 0..t_days {
                let mut total = 0.0;
                for j in 0..k {
                    let prior = if t == 0 {
                        pi[j]
                    } else {
                        (0..k).map(|r| alpha[(t - 1) * k + r] * a[r * k + j]).sum()
                    };
                    alpha[t * k + j] = prior * emit[t * k + j];
                    total += alpha[t * k + j];
                }
                if !(total > 0.0) {
                    return Err(Error::Numerical(format!("EM forward pass collapsed at subject {}", i + 1)));
                }
                scale[t] = total;
                ll += total.ln();
                alpha[t * k..(t + 1) * k].iter_mut().for_each(|v| *v /= total);
            }
            beta[(t_days - 1) * k..].fill(1.0);
            for t in (0..t_days - 1).rev() {
                for r in 0..k {
                    beta[t * k + r] = (0..k)
                        .map(|j| a[r * k + j] * emit[(t + 1) * k + j] * beta[(t + 1) * k + j])
                        .sum::<f64>()
                        / scale[t + 1];
                }
            }
            for t in 0..t_days {
                for s in 0..k {
                    let g = alpha[t * k + s] * beta[t * k + s];
                    if t == 0 {
                        num_pi[s] += g;
                    }
                    if let Some(y) = panel.get(i, t) {
                        num_b[s * m + y] += g;
                    }
                }
                if t + 1 < t_days {
                    for r in 0..k {
                        for j in 0..k {
                            num_a[r * k + j] += alpha[t * k + r]
                                * a[r * k + j]
                                * emit[(t + 1) * k + j]
                                * beta[(t + 1) * k + j]
                                / scale[t + 1];
                        }
                    }
                }
            }
        }
        if let Some(prev) = trace.last() {
            if ll - prev < EM_TOLERANCE {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if trace.len() > EM_MAX_ITERATIONS {
            break;
        }
        normalize_rows(&mut num_a, k, &a);
        normalize_rows(&mut num_b, m, &b);
        normalize_rows(&mut num_pi, k, &pi);
        a = num_a;
        b = num_b;
        pi = num_pi;
    }
    // The final entry belongs to the parameters in hand only when the loop
    // stopped on convergence; otherwise the last update is one step ahead.
    Ok(EmFit {
        n_states: k,
        n_levels: m,
        transition: a,
        emissions: b,
        initial: pi,
        log_likelihood: trace,
        converged,
    })
}

/// Rows of expected counts to probabilities; empty rows keep `fallback`.
fn normalize_rows(counts: &mut [f64], width: usize, fallback: &[f64]) {
    for (row, old) in counts.chunks_mut(width).zip(fallback.chunks(width)) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row.copy_from_slice(old);
        }
    }
}

/// Pooled empirical transition frequencies between consecutive observed
/// days and first-observation frequencies. Rows without data are uniform.
pub fn empirical_markov_fit(panel: &ObservationPanel) -> Result<EmFit> {
    let k = panel.n_levels();
    if panel.n_observed() == 0 {
        return Err(Error::InvalidInput("panel has no observed cells".into()));
    }
    let mut trans = vec![0.0; k * k];
    let mut first = vec![0.0; k];
    for i in 0..panel.n_subjects() {
        if let Some(y) = (0..panel.n_days()).find_map(|t| panel.get(i, t)) {
            first[y] += 1.0;
        }
        for t in 1..panel.n_days() {
            if let (Some(a), Some(b)) = (panel.get(i, t - 1), panel.get(i, t)) {
                trans[a * k + b] += 1.0;
            }
        }
    }
    let uniform = vec![1.0 / k as f64; k * k];
    normalize_rows(&mut trans, k, &uniform);
    normalize_rows(&mut first, k, &uniform[..k]);
    let mut identity = vec![0.0; k * k];
    for s in 0..k {
        identity[s * k + s] = 1.0;
    }
    Ok(EmFit {
        n_states: k,
        n_levels: k,
        transition: trans,
        emissions: identity,
        initial: first,
        log_likelihood: Vec::new(),
        converged: true,
    })
}

/// Starting parameters for chain `chain`: β = 0, μ reproducing the fitted
/// transition rows, α = μ plus `jitter`·N(0, 1) per subject and chain,
/// σ = 1, and π, P from the fit.
pub fn init_chain(
    fit: &EmFit,
    kind: ModelKind,
    n_subjects: usize,
    n_covariates: usize,
    chain: usize,
    jitter: f64,
    seed: u64,
) -> Result<Params> {
    let k = fit.n_states;
    let mut trans = LogitTransitions::zeros(k, n_covariates, n_subjects);
    for r in 0..k {
        let logits = inverse_softmax(&fit.transition[r * k..(r + 1) * k], INVERSION_FLOOR);
        for s in 1..k {
            let at = trans.pair(r, s);
            trans.mu[at] = logits[s - 1];
        }
    }
    let mut rng = substream(seed, &[STREAM_INIT, chain as u64]);
    let free = trans.n_free();
    for i in 0..n_subjects {
        for j in 0..free {
            let z: f64 = StandardNormal.sample(&mut rng);
            trans.alpha[i * free + j] = trans.mu[j] + jitter * z;
        }
    }
    let clamp = |row: &[f64]| {
        let raised: Vec<f64> = row.iter().map(|p| p.max(INVERSION_FLOOR)).collect();
        let total: f64 = raised.iter().sum();
        raised.into_iter().map(|p| p / total).collect::<Vec<_>>()
    };
    let initial = clamp(&fit.initial);
    Ok(match kind {
        ModelKind::Hmm => {
            let emissions: Vec<f64> = fit.emissions.chunks(fit.n_levels).flat_map(clamp).collect();
            Params::Hmm(HmmParams::new(trans, initial, emissions, fit.n_levels)?)
        }
        ModelKind::Markov => {
            if fit.n_levels != k {
                return Err(Error::Dimension("Markov start needs one state per level".into()));
            }
            Params::Markov(MarkovParams::new(trans, initial)?)
        }
    })
}
