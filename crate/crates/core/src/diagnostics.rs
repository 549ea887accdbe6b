//! Convergence and model-comparison summaries.
//!
//! R̂ is the original between/within estimator without chain splitting. For
//! m chains of length n with chain means x̄_j, overall mean x̄, within-chain
//! sample variances s_j² (divisor n − 1):
//!
//! ```text
//! W = mean_j s_j²
//! B = n/(m − 1) · Σ_j (x̄_j − x̄)²
//! var⁺ = (n − 1)/n · W + B/n
//! R̂ = sqrt(var⁺ / W)
//! ```
//!
//! Effective sample size uses Geyer's initial positive sequence: with lag-t
//! autocorrelations ρ_t (autocovariances with divisor n), pair sums
//! Γ_k = ρ_{2k} + ρ_{2k+1} are added while positive and
//! ESS = n / (−1 + 2 Σ_k Γ_k). The denominator is floored at 1/log10(n), so
//! antithetic traces report at most n·log10(n). Across chains the per-chain
//! values are added.

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::inference::view_log_likelihood;
use crate::mcmc::ChainSet;
use crate::model::{softmax_with_baseline, Params};
use crate::params_io::params_from_values;
use crate::{Error, Result};

/// Potential scale reduction factor of per-chain traces.
pub fn potential_scale_reduction(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InvalidInput("R-hat needs at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("R-hat needs equal-length chains of at least two draws".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mean)| c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    let b = nf / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    if !(w > 0.0) {
        return Err(Error::Numerical("R-hat undefined: zero within-chain variance".into()));
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// Autocovariances at lags 0..n (divisor n) via zero-padded FFT.
pub fn autocovariance(trace: &[f64]) -> Vec<f64> {
    let n = trace.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = trace
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter().take(n).map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size of one chain.
pub fn effective_sample_size(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::InvalidInput("ESS needs at least ten draws".into()));
    }
    let acov = autocovariance(trace);
    if !(acov[0] > 0.0) {
        return Err(Error::Numerical("ESS undefined: constant trace".into()));
    }
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov[2 * k] + acov[2 * k + 1]) / acov[0];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    Ok(n as f64 / tau.max(1.0 / (n as f64).log10()))
}

/// Total effective sample size over chains.
pub fn effective_sample_size_chains(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::InvalidInput("no chains".into()));
    }
    chains.iter().map(|c| effective_sample_size(c)).sum()
}

/// `−2·log p(Y_obs | θ)`: the forward recursion for the HMM at (α, β, π, P)
/// (random-effect prior terms excluded) and the gap-bridged marginal for the
/// Markov model.
pub fn deviance(panel: &ObservationPanel, design: &DesignMatrix, params: &Params) -> Result<f64> {
    let ll = view_log_likelihood(&params.view(), panel, design)?;
    if !ll.is_finite() {
        return Err(Error::Numerical("data have zero likelihood at these parameters".into()));
    }
    Ok(-2.0 * ll)
}

/// Averaging space for probability vectors in the posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanSpace {
    /// Element-wise mean, renormalized.
    #[default]
    Probability,
    /// Mean of log-ratios against the first entry, mapped back by softmax.
    Logit,
}

const LOGIT_FLOOR: f64 = 1e-300;

/// Posterior mean of every scalar over all stored draws. Logits, effects
/// and scales are averaged directly; π and emission rows according to
/// `space`.
pub fn posterior_mean(set: &ChainSet, space: MeanSpace) -> Result<Params> {
    let total = set.n_draws();
    if total == 0 {
        return Err(Error::InvalidInput("no stored draws".into()));
    }
    let shape = set.shape;
    let k = shape.n_states;
    let n_scalars = set.n_scalars();
    let simplex_start = n_scalars - k - if shape.kind == crate::model::ModelKind::Hmm { k * shape.n_levels } else { 0 };
    let widths: Vec<usize> = std::iter::once(k)
        .chain(std::iter::repeat_n(shape.n_levels, if shape.kind == crate::model::ModelKind::Hmm { k } else { 0 }))
        .collect();
    let mut mean = vec![0.0; n_scalars];
    for chain in &set.chains {
        for g in 0..chain.n_draws() {
            let v = chain.draw_values(g);
            for (acc, x) in mean[..simplex_start].iter_mut().zip(v) {
                *acc += x;
            }
            let mut at = simplex_start;
            for w in &widths {
                let block = &v[at..at + w];
                match space {
                    MeanSpace::Probability => {
                        for (acc, x) in mean[at..at + w].iter_mut().zip(block) {
                            *acc += x;
                        }
                    }
                    MeanSpace::Logit => {
                        let base = block[0].max(LOGIT_FLOOR).ln();
                        for (acc, x) in mean[at + 1..at + w].iter_mut().zip(&block[1..]) {
                            *acc += x.max(LOGIT_FLOOR).ln() - base;
                        }
                    }
                }
                at += w;
            }
        }
    }
    mean.iter_mut().for_each(|x| *x /= total as f64);
    let mut at = simplex_start;
    for w in &widths {
        let block = &mut mean[at..at + w];
        match space {
            MeanSpace::Probability => {
                let s: f64 = block.iter().sum();
                block.iter_mut().for_each(|x| *x /= s);
            }
            MeanSpace::Logit => {
                let logits = block[1..].to_vec();
                softmax_with_baseline(&logits, block);
            }
        }
        at += w;
    }
    let params = params_from_values(&shape, &mean)?;
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicReport {
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

impl DicReport {
    pub fn new(mean_deviance: f64, deviance_at_mean: f64) -> Self {
        let p_d = mean_deviance - deviance_at_mean;
        Self {
            mean_deviance,
            deviance_at_mean,
            p_d,
            dic: mean_deviance + p_d,
        }
    }
}

/// DIC from the stored per-draw deviances and the deviance at the
/// posterior mean.
pub fn dic(set: &ChainSet, panel: &ObservationPanel, design: &DesignMatrix, space: MeanSpace) -> Result<DicReport> {
    let devs = set.deviances();
    if devs.is_empty() {
        return Err(Error::InvalidInput("no stored draws".into()));
    }
    let mean_dev = devs.iter().sum::<f64>() / devs.len() as f64;
    let at_mean = deviance(panel, design, &posterior_mean(set, space)?)?;
    Ok(DicReport::new(mean_dev, at_mean))
}

/// DIC recomputed on consecutive blocks of `block` draws per chain
/// (Monte Carlo variability check).
pub fn dic_blocks(
    set: &ChainSet,
    panel: &ObservationPanel,
    design: &DesignMatrix,
    block: usize,
    space: MeanSpace,
) -> Result<Vec<DicReport>> {
    if block == 0 {
        return Err(Error::InvalidInput("block size must be positive".into()));
    }
    let n = set.chains.iter().map(|c| c.n_draws()).min().unwrap_or(0);
    (0..n / block)
        .map(|b| {
            let mut sub = set.clone();
            for chain in &mut sub.chains {
                let s = chain.n_scalars;
                chain.values = chain.values[b * block * s..(b + 1) * block * s].to_vec();
                chain.deviance = chain.deviance[b * block..(b + 1) * block].to_vec();
            }
            dic(&sub, panel, design, space)
        })
        .collect()
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    /// `None` with fewer than two chains or zero within-chain variance.
    pub rhat: Option<f64>,
    /// `None` for constant traces.
    pub ess: Option<f64>,
}

pub fn summarize_traces(name: &str, chains: &[Vec<f64>]) -> ParameterSummary {
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let sd = if all.len() > 1 {
        (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    all.sort_by(f64::total_cmp);
    ParameterSummary {
        name: name.to_string(),
        mean,
        sd,
        q025: quantile_sorted(&all, 0.025),
        q500: quantile_sorted(&all, 0.5),
        q975: quantile_sorted(&all, 0.975),
        rhat: potential_scale_reduction(chains).ok(),
        ess: effective_sample_size_chains(chains).ok(),
    }
}

/// Summary of every stored scalar, in parameter-file order.
pub fn summarize(set: &ChainSet) -> Vec<ParameterSummary> {
    (0..set.n_scalars())
        .into_par_iter()
        .map(|j| summarize_traces(&set.names[j], &set.traces(j)))
        .collect()
}

/// Per-chain traces of the population transition probabilities
/// `softmax(μ_r)` (subject at the population mean, covariates zero), named
/// `qbar[r][s]`.
pub fn mean_transition_traces(set: &ChainSet) -> Vec<(String, Vec<Vec<f64>>)> {
    let k = set.shape.n_states;
    let per_chain: Vec<Vec<Vec<f64>>> = set
        .chains
        .iter()
        .map(|c| (0..c.n_draws()).map(|g| c.draw(g).transitions().mean_matrix()).collect())
        .collect();
    let mut out = Vec::with_capacity(k * k);
    for r in 0..k {
        for s in 0..k {
            let traces = per_chain
                .iter()
                .map(|draws| draws.iter().map(|q| q[r * k + s]).collect())
                .collect();
            out.push((format!("qbar[{}][{}]", r + 1, s + 1), traces));
        }
    }
    out
}
