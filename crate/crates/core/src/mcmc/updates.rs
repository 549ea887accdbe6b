//! Single-block updates and their closed-form full conditionals.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use super::{PriorSpec, SigmaPrior};
use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::inference::ffbs_subject;
use crate::model::{ChainView, MarkovParams};
use crate::{Error, Result};

/// One random-walk Metropolis step on a scalar. Returns the new value and
/// whether the proposal was accepted.
pub fn rw_metropolis<R: Rng + ?Sized>(
    current: f64,
    step: f64,
    log_target: impl Fn(f64) -> f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let here = log_target(current);
    if !here.is_finite() {
        return Err(Error::Numerical(format!("log target is {here} at the current state")));
    }
    let z: f64 = StandardNormal.sample(rng);
    let proposal = current + step * z;
    let there = log_target(proposal);
    let u: f64 = rng.random();
    if u.ln() < there - here {
        Ok((proposal, true))
    } else {
        Ok((current, false))
    }
}

/// Mean and standard deviation of `μ | α, σ` under a `N(0, mu_sd²)` prior.
pub fn mu_conditional(alpha_sum: f64, n: usize, sigma: f64, mu_sd: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let precision = n as f64 / s2 + 1.0 / (mu_sd * mu_sd);
    ((alpha_sum / s2) / precision, precision.sqrt().recip())
}

pub fn draw_mu<R: Rng + ?Sized>(alpha_sum: f64, n: usize, sigma: f64, mu_sd: f64, rng: &mut R) -> f64 {
    let (mean, sd) = mu_conditional(alpha_sum, n, sigma, mu_sd);
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// Inverse-gamma `(shape, scale)` of `σ² | α, μ` given the sum of squares
/// `ss = Σ_i (α_i − μ)²` over `n` subjects.
///
/// A flat prior on σ gives density ∝ (σ²)^{-(n+1)/2} exp(−ss/2σ²), that is
/// shape (n−1)/2; a flat prior on σ² gives shape n/2 − 1. Both equal a
/// scaled inverse χ² with `2·shape` degrees of freedom.
pub fn sigma_sq_conditional(ss: f64, n: usize, prior: SigmaPrior) -> Result<(f64, f64)> {
    let shape = match prior {
        SigmaPrior::FlatSigma => (n as f64 - 1.0) / 2.0,
        SigmaPrior::FlatVariance => n as f64 / 2.0 - 1.0,
    };
    if shape <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "{n} subjects are too few for the random-effect scale update"
        )));
    }
    if !(ss > 0.0) {
        return Err(Error::Numerical("random effects have zero spread".into()));
    }
    Ok((shape, ss / 2.0))
}

/// Draw of σ (not σ²). With an upper bound `u` the precision `τ = 1/σ²`
/// is a gamma truncated to `τ ≥ 1/u²`: plain rejection when the gamma mode
/// lies inside that range, otherwise a shifted-exponential proposal on the
/// tail.
pub fn draw_sigma<R: Rng + ?Sized>(ss: f64, n: usize, prior: &PriorSpec, rng: &mut R) -> Result<f64> {
    let (shape, rate) = sigma_sq_conditional(ss, n, prior.sigma_prior)?;
    let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numerical(e.to_string()))?;
    let Some(upper) = prior.sigma_upper else {
        return Ok((1.0 / gamma.sample(rng)).sqrt());
    };
    let floor = 1.0 / (upper * upper);
    let tail = shape <= 1.0 || rate * floor > shape - 1.0;
    // Exponential rate minimizing the rejection bound, and the point where
    // the target-to-proposal ratio peaks.
    let (lambda, peak) = if shape <= 1.0 {
        (rate, floor)
    } else {
        let b = shape + floor * rate;
        let interior = 2.0 * rate / (b + (b * b - 4.0 * floor * rate).sqrt());
        let lambda = interior.max(rate - (shape - 1.0) / floor);
        (lambda, ((shape - 1.0) / (rate - lambda)).max(floor))
    };
    let log_ratio = |tau: f64| (shape - 1.0) * tau.ln() - (rate - lambda) * tau;
    for _ in 0..100_000 {
        let tau = if tail {
            let e: f64 = Exp1.sample(rng);
            let tau = floor + e / lambda;
            if rng.random::<f64>().ln() >= log_ratio(tau) - log_ratio(peak) {
                continue;
            }
            tau
        } else {
            gamma.sample(rng)
        };
        if tau >= floor {
            return Ok(tau.sqrt().recip());
        }
    }
    Err(Error::Numerical("truncated scale draw failed to land below the bound".into()))
}

pub fn draw_dirichlet<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = concentration
        .iter()
        .map(|a| Gamma::new(*a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // All gammas underflowed (tiny concentrations); put the mass on the
        // largest parameter.
        let best = concentration
            .iter()
            .enumerate()
            .fold(0, |b, (i, a)| if *a > concentration[b] { i } else { b });
        draws.fill(0.0);
        draws[best] = 1.0;
    }
    draws
}

/// `Dirichlet(c + counts)`.
pub fn draw_simplex<R: Rng + ?Sized>(counts: &[f64], concentration: f64, rng: &mut R) -> Vec<f64> {
    let a: Vec<f64> = counts.iter().map(|c| c + concentration).collect();
    draw_dirichlet(&a, rng)
}

/// Count of `(hidden state, observed level)` pairs over observed cells,
/// row-major S×M.
pub fn emission_counts(panel: &ObservationPanel, hidden: &[usize], n_states: usize) -> Vec<f64> {
    let m = panel.n_levels();
    let t_days = panel.n_days();
    let mut counts = vec![0.0; n_states * m];
    for i in 0..panel.n_subjects() {
        for t in 0..t_days {
            if let Some(y) = panel.get(i, t) {
                counts[hidden[i * t_days + t] * m + y] += 1.0;
            }
        }
    }
    counts
}

/// Counts of the day-1 states.
pub fn initial_counts(latent: &[usize], n_days: usize, n_states: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_states];
    for row in latent.chunks(n_days) {
        counts[row[0]] += 1.0;
    }
    counts
}

/// Imputes one subject's missing cells from their joint conditional given
/// the observed ones.
pub fn impute_subject<R: Rng + ?Sized>(
    params: &MarkovParams,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut out = vec![0; obs.len()];
    ffbs_subject(&ChainView::markov(params), design, subject, obs, rng, &mut out)?;
    Ok(out)
}

/// Completed copy of the panel (row-major N×T levels) for the Markov model.
pub fn sample_missing_y<R: Rng + ?Sized>(
    params: &MarkovParams,
    panel: &ObservationPanel,
    design: &DesignMatrix,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(panel.n_subjects() * panel.n_days());
    for i in 0..panel.n_subjects() {
        out.extend(impute_subject(params, design, i, &panel.subject(i), rng)?);
    }
    Ok(out)
}

/// `ln Σ_s exp(η_s)` with the baseline logit 0 included.
#[inline]
pub(crate) fn log_normalizer(eta: &[f64]) -> f64 {
    let m = eta.iter().fold(0.0f64, |a, b| a.max(*b));
    let total: f64 = (-m).exp() + eta.iter().map(|e| (e - m).exp()).sum::<f64>();
    m + total.ln()
}
