//! Likelihoods, smoothing, sampling and decoding of the latent chain.
//!
//! Missing observations contribute an all-ones emission vector, so the
//! forward vector is propagated through every daily matrix of a gap. That
//! is exactly multiplication by the multi-step matrix over the gap, and it
//! also yields hidden-state draws for the unobserved days.
//!
//! The forward pass is normalized per day; `scaling[t]` is the one-step
//! predictive probability of day `t`'s observation (1 on missing days) and
//! the log-likelihood is the sum of their logs.

use rand::Rng;

use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::model::{
    multi_step_matrix, sample_categorical, ChainView, Emission, HmmParams, MarkovParams,
    Params,
};
use crate::{Error, Result};

/// Forward-backward output for one subject. Vectors are stored day-major,
/// `n_states` entries per day.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackwardResult {
    pub n_states: usize,
    pub log_likelihood: f64,
    pub filtered: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub scaling: Vec<f64>,
}

impl ForwardBackwardResult {
    pub fn filtered_at(&self, day: usize) -> &[f64] {
        &self.filtered[day * self.n_states..(day + 1) * self.n_states]
    }

    pub fn smoothed_at(&self, day: usize) -> &[f64] {
        &self.smoothed[day * self.n_states..(day + 1) * self.n_states]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    pub log_joint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictiveMode {
    /// `p(y_t | all earlier observations)` from the forward recursion.
    OneStep,
    /// `p(y_t | y_{t-1})`; absent when the previous day is missing.
    Markov,
}

/// Scaled forward pass over precomputed daily matrices.
pub(crate) struct Forward {
    pub filtered: Vec<f64>,
    pub scaling: Vec<f64>,
    pub log_likelihood: f64,
}

pub(crate) fn forward_pass(view: &ChainView<'_>, mats: &[f64], obs: &[Option<usize>]) -> Forward {
    let k = view.n_states();
    let n = obs.len();
    let mut filtered = vec![0.0; n * k];
    let mut scaling = vec![1.0; n];
    let mut emit = vec![0.0; k];
    let mut log_likelihood = 0.0;
    for t in 0..n {
        view.emission_vector(obs[t], &mut emit);
        let (prev, cur) = filtered.split_at_mut(t * k);
        let cur = &mut cur[..k];
        if t == 0 {
            cur.copy_from_slice(view.initial);
        } else {
            let f_prev = &prev[(t - 1) * k..];
            let q = &mats[(t - 1) * k * k..t * k * k];
            for (j, c) in cur.iter_mut().enumerate() {
                *c = (0..k).map(|r| f_prev[r] * q[r * k + j]).sum();
            }
        }
        let mut total = 0.0;
        for (c, e) in cur.iter_mut().zip(&emit) {
            *c *= e;
            total += *c;
        }
        scaling[t] = total;
        if !(total > 0.0) {
            return Forward {
                filtered,
                scaling,
                log_likelihood: f64::NEG_INFINITY,
            };
        }
        for c in cur.iter_mut() {
            *c /= total;
        }
        log_likelihood += total.ln();
    }
    Forward {
        filtered,
        scaling,
        log_likelihood,
    }
}

/// Backward sampling given a completed forward pass.
pub(crate) fn backward_sample<R: Rng + ?Sized>(
    k: usize,
    mats: &[f64],
    fwd: &Forward,
    rng: &mut R,
    out: &mut [usize],
) -> Result<()> {
    let n = out.len();
    if n == 0 {
        return Ok(());
    }
    if !fwd.log_likelihood.is_finite() {
        return Err(Error::Numerical(
            "observations have zero probability under the current parameters".into(),
        ));
    }
    out[n - 1] = sample_categorical(&fwd.filtered[(n - 1) * k..n * k], rng);
    let mut w = vec![0.0; k];
    for t in (0..n - 1).rev() {
        let next = out[t + 1];
        let q = &mats[t * k * k..(t + 1) * k * k];
        for (s, ws) in w.iter_mut().enumerate() {
            *ws = fwd.filtered[t * k + s] * q[s * k + next];
        }
        out[t] = sample_categorical(&w, rng);
    }
    Ok(())
}

fn check_subject(params_subjects: usize, design: &DesignMatrix, panel: &ObservationPanel) -> Result<()> {
    if panel.n_subjects() > params_subjects || panel.n_subjects() > design.n_subjects() {
        return Err(Error::Dimension(format!(
            "panel has {} subjects, parameters {} and design {}",
            panel.n_subjects(),
            params_subjects,
            design.n_subjects()
        )));
    }
    if panel.n_days() > design.n_days() {
        return Err(Error::Dimension(format!(
            "panel has {} days, design {}",
            panel.n_days(),
            design.n_days()
        )));
    }
    Ok(())
}

fn check_view(view: &ChainView<'_>, design: &DesignMatrix, panel: &ObservationPanel) -> Result<()> {
    check_subject(view.trans.n_subjects(), design, panel)?;
    if design.n_covariates() != view.trans.n_covariates() {
        return Err(Error::Dimension("design/parameter covariate count".into()));
    }
    let levels = match view.emission {
        Emission::Matrix { n_levels, .. } => n_levels,
        Emission::Identity => view.n_states(),
    };
    if levels != panel.n_levels() {
        return Err(Error::Dimension(format!(
            "panel has {} levels, model {levels}",
            panel.n_levels()
        )));
    }
    Ok(())
}

pub(crate) fn subject_forward(
    view: &ChainView<'_>,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
) -> Result<(Vec<f64>, Forward)> {
    let mats = view.daily_matrices(design, subject, obs.len())?;
    let fwd = forward_pass(view, &mats, obs);
    Ok((mats, fwd))
}

pub(crate) fn view_log_likelihood(
    view: &ChainView<'_>,
    panel: &ObservationPanel,
    design: &DesignMatrix,
) -> Result<f64> {
    check_view(view, design, panel)?;
    let mut total = 0.0;
    for i in 0..panel.n_subjects() {
        total += subject_forward(view, design, i, &panel.subject(i))?.1.log_likelihood;
    }
    Ok(total)
}

/// `log p(Y_obs | θ)` for the HMM, hidden states summed out. Subjects are
/// conditionally independent, so contributions add; a subject with no
/// observed cell contributes 0.
pub fn log_likelihood_hmm(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    params: &HmmParams,
) -> Result<f64> {
    view_log_likelihood(&ChainView::hmm(params), panel, design)
}

/// Forward-backward for one subject of an HMM.
pub fn forward_backward(
    params: &HmmParams,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
) -> Result<ForwardBackwardResult> {
    view_forward_backward(&ChainView::hmm(params), design, subject, obs)
}

pub(crate) fn view_forward_backward(
    view: &ChainView<'_>,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
) -> Result<ForwardBackwardResult> {
    let k = view.n_states();
    let n = obs.len();
    let (mats, fwd) = subject_forward(view, design, subject, obs)?;
    if !fwd.log_likelihood.is_finite() {
        return Err(Error::Numerical(format!(
            "subject {subject}: observations have zero probability"
        )));
    }
    let mut smoothed = vec![0.0; n * k];
    let mut back = vec![1.0; k];
    let mut next_back = vec![0.0; k];
    let mut emit = vec![0.0; k];
    for t in (0..n).rev() {
        if t + 1 < n {
            view.emission_vector(obs[t + 1], &mut emit);
            let q = &mats[t * k * k..(t + 1) * k * k];
            for (s, nb) in next_back.iter_mut().enumerate() {
                *nb = (0..k).map(|j| q[s * k + j] * emit[j] * back[j]).sum::<f64>()
                    / fwd.scaling[t + 1];
            }
            std::mem::swap(&mut back, &mut next_back);
        }
        let gamma = &mut smoothed[t * k..(t + 1) * k];
        let mut total = 0.0;
        for s in 0..k {
            gamma[s] = fwd.filtered[t * k + s] * back[s];
            total += gamma[s];
        }
        for g in gamma.iter_mut() {
            *g /= total;
        }
    }
    Ok(ForwardBackwardResult {
        n_states: k,
        log_likelihood: fwd.log_likelihood,
        filtered: fwd.filtered,
        smoothed,
        scaling: fwd.scaling,
    })
}

/// `log p(Y_obs | θ)` for the Markov model.
///
/// Without `imputed`, the first observed cell has probability
/// `(π Q_1 ⋯ Q_{t-1})[y_t]` and each later observed cell is reached from
/// the previous observed one through the multi-step matrix spanning the
/// gap. With `imputed` (a row-major complete panel of 0-based levels that
/// agrees with every observed cell) the complete-data log-likelihood is
/// returned instead.
pub fn log_likelihood_markov(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    params: &MarkovParams,
    imputed: Option<&[usize]>,
) -> Result<f64> {
    let view = ChainView::markov(params);
    check_view(&view, design, panel)?;
    let (n, t_days, k) = (panel.n_subjects(), panel.n_days(), params.n_levels());
    let trans = &params.transitions;
    let mut total = 0.0;
    if let Some(z) = imputed {
        if z.len() != n * t_days {
            return Err(Error::Dimension("imputed panel size".into()));
        }
        let mut row = vec![0.0; k];
        for i in 0..n {
            let zi = &z[i * t_days..(i + 1) * t_days];
            for (t, &zt) in zi.iter().enumerate() {
                if zt >= k || panel.get(i, t).is_some_and(|y| y != zt) {
                    return Err(Error::InvalidInput(format!(
                        "imputed value at subject {}, day {} conflicts with the data",
                        i + 1,
                        t + 1
                    )));
                }
            }
            if t_days == 0 {
                continue;
            }
            total += params.initial[zi[0]].ln();
            for t in 0..t_days - 1 {
                trans.fill_row(i, zi[t], design.row(i, t), &mut row)?;
                total += row[zi[t + 1]].ln();
            }
        }
        return Ok(total);
    }
    for i in 0..n {
        let mut last: Option<(usize, usize)> = None;
        for t in 0..t_days {
            let Some(y) = panel.get(i, t) else { continue };
            let p = match last {
                None if t == 0 => params.initial[y],
                None => {
                    let m = multi_step_matrix(i, 0, t - 1, trans, design)?;
                    (0..k).map(|r| params.initial[r] * m[r * k + y]).sum()
                }
                Some((prev_day, prev_y)) => {
                    let m = multi_step_matrix(i, prev_day, t - prev_day - 1, trans, design)?;
                    m[prev_y * k + y]
                }
            };
            total += p.ln();
            last = Some((t, y));
        }
    }
    Ok(total)
}

/// Draws one subject's latent path from its full conditional.
pub(crate) fn ffbs_subject<R: Rng + ?Sized>(
    view: &ChainView<'_>,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
    rng: &mut R,
    out: &mut [usize],
) -> Result<f64> {
    let (mats, fwd) = subject_forward(view, design, subject, obs)?;
    backward_sample(view.n_states(), &mats, &fwd, rng, out)?;
    Ok(fwd.log_likelihood)
}

/// Exact draw of every subject's hidden path (row-major N×T), including
/// days with missing observations.
pub fn ffbs_sample_hidden<R: Rng + ?Sized>(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    params: &HmmParams,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let view = ChainView::hmm(params);
    check_view(&view, design, panel)?;
    let t_days = panel.n_days();
    let mut out = vec![0; panel.n_subjects() * t_days];
    for i in 0..panel.n_subjects() {
        ffbs_subject(&view, design, i, &panel.subject(i), rng, &mut out[i * t_days..(i + 1) * t_days])?;
    }
    Ok(out)
}

/// `p(H_it = s | Y_obs, θ)` as `[subject][day][state]`.
pub fn smoothed_marginals(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    params: &HmmParams,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let view = ChainView::hmm(params);
    check_view(&view, design, panel)?;
    (0..panel.n_subjects())
        .map(|i| {
            let fb = view_forward_backward(&view, design, i, &panel.subject(i))?;
            Ok(fb.smoothed.chunks(fb.n_states).map(<[f64]>::to_vec).collect())
        })
        .collect()
}

/// Most probable hidden path for one subject. Missing days contribute
/// transition terms only. Ties go to the lower state index.
pub fn viterbi_subject(
    params: &HmmParams,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
) -> Result<ViterbiPath> {
    let view = ChainView::hmm(params);
    let k = view.n_states();
    let n = obs.len();
    if n == 0 {
        return Ok(ViterbiPath {
            states: Vec::new(),
            log_joint: 0.0,
        });
    }
    let mats = view.daily_matrices(design, subject, n)?;
    let log_mats: Vec<f64> = mats.iter().map(|p| p.ln()).collect();
    let mut emit = vec![0.0; k];
    let mut delta = vec![0.0; k];
    let mut next = vec![0.0; k];
    let mut back = vec![0usize; n * k];
    view.emission_vector(obs[0], &mut emit);
    for s in 0..k {
        delta[s] = view.initial[s].ln() + emit[s].ln();
    }
    for t in 1..n {
        view.emission_vector(obs[t], &mut emit);
        let lq = &log_mats[(t - 1) * k * k..t * k * k];
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for r in 0..k {
                let v = delta[r] + lq[r * k + j];
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            next[j] = best + emit[j].ln();
            back[t * k + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    for s in 1..k {
        if delta[s] > delta[last] {
            last = s;
        }
    }
    let log_joint = delta[last];
    if !log_joint.is_finite() {
        return Err(Error::Numerical(format!(
            "subject {subject}: no hidden path has positive probability"
        )));
    }
    let mut states = vec![0; n];
    states[n - 1] = last;
    for t in (1..n).rev() {
        states[t - 1] = back[t * k + states[t]];
    }
    Ok(ViterbiPath { states, log_joint })
}

pub fn viterbi(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    params: &HmmParams,
) -> Result<Vec<ViterbiPath>> {
    check_view(&ChainView::hmm(params), design, panel)?;
    (0..panel.n_subjects())
        .map(|i| viterbi_subject(params, design, i, &panel.subject(i)))
        .collect()
}

/// `log p(H = states, Y_obs | θ)` for one subject.
pub fn path_log_joint(
    params: &HmmParams,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
    states: &[usize],
) -> Result<f64> {
    if states.len() != obs.len() {
        return Err(Error::Dimension("path and observation lengths differ".into()));
    }
    let mut total = 0.0;
    let mut row = vec![0.0; params.n_states()];
    for (t, (&h, y)) in states.iter().zip(obs).enumerate() {
        total += if t == 0 {
            params.initial[h].ln()
        } else {
            params
                .transitions
                .fill_row(subject, states[t - 1], design.row(subject, t - 1), &mut row)?;
            row[h].ln()
        };
        if let Some(level) = y {
            total += params.emission_row(h)[*level].ln();
        }
    }
    Ok(total)
}

/// Per-cell predictive probabilities of the observed data, `[subject][day]`,
/// `None` on missing cells.
pub fn pointwise_predictive(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    params: &Params,
    mode: PredictiveMode,
) -> Result<Vec<Vec<Option<f64>>>> {
    let view = params.view();
    check_view(&view, design, panel)?;
    (0..panel.n_subjects())
        .map(|i| subject_pointwise(&view, design, i, &panel.subject(i), mode))
        .collect()
}

pub(crate) fn subject_pointwise(
    view: &ChainView<'_>,
    design: &DesignMatrix,
    subject: usize,
    obs: &[Option<usize>],
    mode: PredictiveMode,
) -> Result<Vec<Option<f64>>> {
    let n = obs.len();
    let k = view.n_states();
    let mats = view.daily_matrices(design, subject, n)?;
    match mode {
        PredictiveMode::OneStep => {
            let fwd = forward_pass(view, &mats, obs);
            Ok(obs
                .iter()
                .zip(&fwd.scaling)
                .map(|(y, c)| y.map(|_| *c))
                .collect())
        }
        PredictiveMode::Markov => {
            // Prior marginals of the latent state; the previous day's state
            // is weighted by its prior marginal times its emission.
            let mut marginal = view.initial.to_vec();
            let mut out = Vec::with_capacity(n);
            let mut e_prev = vec![0.0; k];
            let mut e_cur = vec![0.0; k];
            for t in 0..n {
                let prev_marginal = marginal.clone();
                if t > 0 {
                    marginal = propagate(&prev_marginal, &mats[(t - 1) * k * k..t * k * k], k);
                }
                let Some(y) = obs[t] else {
                    out.push(None);
                    continue;
                };
                view.emission_vector(Some(y), &mut e_cur);
                let p = if t == 0 {
                    Some((0..k).map(|s| view.initial[s] * e_cur[s]).sum())
                } else if let Some(prev) = obs[t - 1] {
                    view.emission_vector(Some(prev), &mut e_prev);
                    let w: Vec<f64> = (0..k).map(|r| prev_marginal[r] * e_prev[r]).collect();
                    let wt: f64 = w.iter().sum();
                    let q = &mats[(t - 1) * k * k..t * k * k];
                    let mut num = 0.0;
                    for r in 0..k {
                        for s in 0..k {
                            num += w[r] * q[r * k + s] * e_cur[s];
                        }
                    }
                    Some(num / wt)
                } else {
                    None
                };
                out.push(p);
            }
            Ok(out)
        }
    }
}

fn propagate(v: &[f64], q: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|j| (0..k).map(|r| v[r] * q[r * k + j]).sum()).collect()
}

/// Multi-step matrix spanning observed days `a < b` (helper for tests and
/// analytics that reason about gaps explicitly).
pub fn gap_matrix(
    params: &Params,
    design: &DesignMatrix,
    subject: usize,
    a: usize,
    b: usize,
) -> Result<Vec<f64>> {
    if b <= a {
        return Err(Error::InvalidInput("gap must move forward in time".into()));
    }
    multi_step_matrix(subject, a, b - a - 1, params.transitions(), design)
}

