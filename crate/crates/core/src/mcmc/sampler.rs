use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::updates::{draw_mu, draw_sigma, draw_simplex, emission_counts, initial_counts, log_normalizer};
use super::{PriorSpec, SamplerConfig, SigmaPrior};
use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::inference::{ffbs_subject, view_log_likelihood};
use crate::model::{LogitTransitions, ModelKind, Params};
use crate::rng::{substream, StreamRng, STREAM_ALPHA, STREAM_BETA, STREAM_EMISSION, STREAM_HYPER, STREAM_INITIAL, STREAM_LATENT};
use crate::{Error, Result};

pub const ADAPT_BATCH: usize = 50;
pub const TARGET_ACCEPTANCE: f64 = 0.44;
const MIN_STEP: f64 = 1e-4;
const MAX_STEP: f64 = 50.0;
const INITIAL_GROUP_STEP: f64 = 0.1;

/// Transitions of one subject out of one state under the current latent
/// path, with their logits `η_s` (s ≥ 1) and log normalizers cached.
#[derive(Debug, Clone, Default)]
struct RowCache {
    day: Vec<u32>,
    to: Vec<u8>,
    eta: Vec<f64>,
    lse: Vec<f64>,
    lse_new: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct SubjectCache {
    rows: Vec<RowCache>,
}

impl SubjectCache {
    fn rebuild(&mut self, i: usize, path: &[usize], trans: &LogitTransitions, design: &DesignMatrix) {
        let k = trans.n_states();
        let w = k - 1;
        self.rows.resize_with(k, RowCache::default);
        for row in &mut self.rows {
            row.day.clear();
            row.to.clear();
            row.eta.clear();
            row.lse.clear();
        }
        for t in 0..path.len().saturating_sub(1) {
            let (r, next) = (path[t], path[t + 1]);
            let x = design.row(i, t);
            let row = &mut self.rows[r];
            let start = row.eta.len();
            for s in 1..k {
                let beta = &trans.beta[trans.beta_index(r, s, 0)..][..x.len()];
                let eta = trans.alpha[trans.alpha_index(i, r, s)] + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                row.eta.push(eta);
            }
            row.lse.push(log_normalizer(&row.eta[start..start + w]));
            row.day.push(t as u32);
            row.to.push(next as u8);
        }
        for row in &mut self.rows {
            row.lse_new.resize(row.lse.len(), 0.0);
        }
    }
}

/// Accepted and proposed counts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub accepted: u64,
    pub proposed: u64,
}

impl Tally {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn add(&mut self, other: Tally) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
    }
}

/// Metropolis-within-Gibbs state for one chain.
///
/// One [`sweep`](Sampler::sweep) updates, in order: the latent layer (hidden
/// states by forward filtering/backward sampling, or the missing
/// observations of the Markov model), every `α_irs` by random walk, every
/// `β_rsk` by random walk, then `μ` and `σ` from their conjugate
/// conditionals followed by two non-centred moves per `(r, s)` (a common
/// shift of `μ` and every `α`, and a common rescaling of `σ` and every
/// `α − μ`), then the emission rows (HMM only) and `π`.
pub struct Sampler<'a> {
    kind: ModelKind,
    panel: ObservationPanel,
    design: &'a DesignMatrix,
    prior: PriorSpec,
    seed: u64,
    chain: u64,
    iteration: u64,
    params: Params,
    latent: Vec<usize>,
    caches: Vec<SubjectCache>,
    step_alpha: Vec<f64>,
    step_beta: Vec<f64>,
    batch_alpha: Vec<Tally>,
    batch_beta: Vec<Tally>,
    total_alpha: Vec<Tally>,
    total_beta: Vec<Tally>,
    /// Steps and batch tallies of the shift and rescaling moves.
    step_shift: Vec<f64>,
    step_scale: Vec<f64>,
    batch_shift: Vec<Tally>,
    batch_scale: Vec<Tally>,
    adapting: bool,
    batches: u64,
    rng_beta: StreamRng,
    rng_hyper: StreamRng,
    rng_emission: StreamRng,
    rng_initial: StreamRng,
}

impl<'a> Sampler<'a> {
    pub fn new(
        panel: &ObservationPanel,
        design: &'a DesignMatrix,
        prior: &PriorSpec,
        config: &SamplerConfig,
        chain: usize,
        init: Params,
    ) -> Result<Self> {
        prior.validate()?;
        config.validate()?;
        init.validate()?;
        let kind = init.kind();
        let trans = init.transitions();
        let (n, t_days) = (panel.n_subjects(), panel.n_days());
        if n < 2 {
            return Err(Error::InvalidInput("at least two subjects are needed".into()));
        }
        if t_days == 0 {
            return Err(Error::InvalidInput("panel has no days".into()));
        }
        if design.n_subjects() < n || design.n_days() < t_days || design.n_covariates() != trans.n_covariates() {
            return Err(Error::Dimension("design does not cover the panel".into()));
        }
        if trans.n_subjects() != n {
            return Err(Error::Dimension(format!(
                "starting values have {} subjects, panel has {n}",
                trans.n_subjects()
            )));
        }
        if init.n_levels() != panel.n_levels() {
            return Err(Error::Dimension("level count differs between panel and parameters".into()));
        }
        if trans.n_states() > 256 {
            return Err(Error::InvalidInput("at most 256 states are supported".into()));
        }
        let seed = config.seed;
        let c = chain as u64;
        Ok(Self {
            kind,
            panel: panel.clone(),
            design,
            prior: prior.clone(),
            seed,
            chain: c,
            iteration: 0,
            latent: vec![0; n * t_days],
            caches: vec![SubjectCache::default(); n],
            step_alpha: vec![config.rw_step_alpha; trans.n_free()],
            step_beta: vec![config.rw_step_beta; trans.beta.len()],
            batch_alpha: vec![Tally::default(); trans.n_free()],
            batch_beta: vec![Tally::default(); trans.beta.len()],
            total_alpha: vec![Tally::default(); trans.n_free()],
            total_beta: vec![Tally::default(); trans.beta.len()],
            step_shift: vec![INITIAL_GROUP_STEP; trans.n_free()],
            step_scale: vec![INITIAL_GROUP_STEP; trans.n_free()],
            batch_shift: vec![Tally::default(); trans.n_free()],
            batch_scale: vec![Tally::default(); trans.n_free()],
            adapting: false,
            batches: 0,
            rng_beta: substream(seed, &[STREAM_BETA, c]),
            rng_hyper: substream(seed, &[STREAM_HYPER, c]),
            rng_emission: substream(seed, &[STREAM_EMISSION, c]),
            rng_initial: substream(seed, &[STREAM_INITIAL, c]),
            params: init,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Hidden states (HMM) or completed observations (Markov), row-major N×T.
    pub fn latent(&self) -> &[usize] {
        &self.latent
    }

    pub fn panel(&self) -> &ObservationPanel {
        &self.panel
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Swaps in a new data set of the same shape (used by joint-distribution
    /// tests that alternate data simulation with parameter updates).
    pub fn set_panel(&mut self, panel: ObservationPanel) -> Result<()> {
        if (panel.n_subjects(), panel.n_days(), panel.n_levels())
            != (self.panel.n_subjects(), self.panel.n_days(), self.panel.n_levels())
        {
            return Err(Error::Dimension("replacement panel has a different shape".into()));
        }
        self.panel = panel;
        Ok(())
    }

    /// Overrides the current parameters (same shape).
    pub fn set_params(&mut self, params: Params) -> Result<()> {
        params.validate()?;
        if params.kind() != self.kind || params.transitions().alpha.len() != self.params.transitions().alpha.len() {
            return Err(Error::Dimension("replacement parameters have a different shape".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn set_adapting(&mut self, on: bool) {
        self.adapting = on;
    }

    pub fn steps(&self) -> (&[f64], &[f64]) {
        (&self.step_alpha, &self.step_beta)
    }

    /// Acceptance counts since the last [`reset_acceptance`](Self::reset_acceptance).
    pub fn acceptance(&self) -> (&[Tally], &[Tally]) {
        (&self.total_alpha, &self.total_beta)
    }

    pub fn reset_acceptance(&mut self) {
        self.total_alpha.fill(Tally::default());
        self.total_beta.fill(Tally::default());
    }

    /// `−2·log p(Y_obs | θ)` at the current parameters.
    pub fn deviance(&self) -> Result<f64> {
        let ll = view_log_likelihood(&self.params.view(), &self.panel, self.design)?;
        if !ll.is_finite() {
            return Err(Error::Numerical("observed data have zero likelihood".into()));
        }
        Ok(-2.0 * ll)
    }

    pub fn sweep(&mut self) -> Result<()> {
        self.update_latent()?;
        self.update_alpha()?;
        self.update_beta()?;
        self.update_mu_sigma()?;
        self.update_group_moves()?;
        if self.kind == ModelKind::Hmm {
            self.update_emissions();
        }
        self.update_initial();
        self.iteration += 1;
        if self.adapting && self.iteration % ADAPT_BATCH as u64 == 0 {
            self.adapt();
        }
        Ok(())
    }

    fn update_latent(&mut self) -> Result<()> {
        let t_days = self.panel.n_days();
        let (seed, chain, iter) = (self.seed, self.chain, self.iteration);
        let view = self.params.view();
        let trans = self.params.transitions();
        let design = self.design;
        let panel = &self.panel;
        self.latent
            .par_chunks_mut(t_days)
            .zip(self.caches.par_iter_mut())
            .enumerate()
            .try_for_each(|(i, (path, cache))| {
                let mut rng = substream(seed, &[STREAM_LATENT, chain, iter, i as u64]);
                let ll = ffbs_subject(&view, design, i, &panel.subject(i), &mut rng, path)?;
                if !ll.is_finite() {
                    return Err(Error::Numerical(format!("subject {} has zero likelihood", i + 1)));
                }
                cache.rebuild(i, path, trans, design);
                Ok(())
            })
    }

    fn update_alpha(&mut self) -> Result<()> {
        let (seed, chain, iter) = (self.seed, self.chain, self.iteration);
        let trans = self.params.transitions_mut();
        let k = trans.n_states();
        let free = trans.n_free();
        let LogitTransitions { alpha, mu, sigma, .. } = trans;
        let (mu, sigma) = (&*mu, &*sigma);
        let steps = &self.step_alpha;
        let tallies: Vec<Vec<Tally>> = alpha
            .par_chunks_mut(free)
            .zip(self.caches.par_iter_mut())
            .enumerate()
            .map(|(i, (a_i, cache))| {
                let mut rng = substream(seed, &[STREAM_ALPHA, chain, iter, i as u64]);
                let mut tally = vec![Tally::default(); free];
                for r in 0..k {
                    let row = &mut cache.rows[r];
                    for s in 1..k {
                        let j = r * (k - 1) + s - 1;
                        let accepted = alpha_step(row, k, s, &mut a_i[j], mu[j], sigma[j], steps[j], &mut rng)?;
                        tally[j].proposed += 1;
                        tally[j].accepted += accepted as u64;
                    }
                }
                Ok(tally)
            })
            .collect::<Result<_>>()?;
        for tally in tallies {
            for (j, t) in tally.into_iter().enumerate() {
                self.batch_alpha[j].add(t);
                self.total_alpha[j].add(t);
            }
        }
        Ok(())
    }

    fn update_beta(&mut self) -> Result<()> {
        let trans = self.params.transitions_mut();
        let (k, p) = (trans.n_states(), trans.n_covariates());
        let w = k - 1;
        let sd = self.prior.beta_sd;
        let mut eta_buf = vec![0.0; w];
        for r in 0..k {
            for s in 1..k {
                for c in 0..p {
                    let idx = trans.beta_index(r, s, c);
                    let current = trans.beta[idx];
                    let z: f64 = StandardNormal.sample(&mut self.rng_beta);
                    let delta = self.step_beta[idx] * z;
                    let mut log_ratio = (current * current - (current + delta) * (current + delta)) / (2.0 * sd * sd);
                    for (i, cache) in self.caches.iter_mut().enumerate() {
                        let row = &mut cache.rows[r];
                        for n in 0..row.day.len() {
                            let x = self.design.row(i, row.day[n] as usize)[c];
                            let eta = &row.eta[n * w..(n + 1) * w];
                            eta_buf.copy_from_slice(eta);
                            eta_buf[s - 1] += delta * x;
                            let lse = log_normalizer(&eta_buf);
                            row.lse_new[n] = lse;
                            log_ratio -= lse - row.lse[n];
                            if row.to[n] as usize == s {
                                log_ratio += delta * x;
                            }
                        }
                    }
                    if !log_ratio.is_finite() && log_ratio != f64::NEG_INFINITY {
                        return Err(Error::Numerical("non-finite coefficient acceptance ratio".into()));
                    }
                    let u: f64 = self.rng_beta.random();
                    let accepted = u.ln() < log_ratio;
                    if accepted {
                        trans.beta[idx] = current + delta;
                        for (i, cache) in self.caches.iter_mut().enumerate() {
                            let row = &mut cache.rows[r];
                            for n in 0..row.day.len() {
                                let x = self.design.row(i, row.day[n] as usize)[c];
                                row.eta[n * w + s - 1] += delta * x;
                                row.lse[n] = row.lse_new[n];
                            }
                        }
                    }
                    self.batch_beta[idx].proposed += 1;
                    self.total_beta[idx].proposed += 1;
                    self.batch_beta[idx].accepted += accepted as u64;
                    self.total_beta[idx].accepted += accepted as u64;
                }
            }
        }
        Ok(())
    }

    fn update_mu_sigma(&mut self) -> Result<()> {
        let trans = self.params.transitions_mut();
        let n = trans.n_subjects();
        let free = trans.n_free();
        for j in 0..free {
            let sum: f64 = (0..n).map(|i| trans.alpha[i * free + j]).sum();
            trans.mu[j] = draw_mu(sum, n, trans.sigma[j], self.prior.mu_sd, &mut self.rng_hyper);
            let mu = trans.mu[j];
            let ss: f64 = (0..n).map(|i| (trans.alpha[i * free + j] - mu).powi(2)).sum();
            trans.sigma[j] = draw_sigma(ss, n, &self.prior, &mut self.rng_hyper)?;
        }
        Ok(())
    }

    /// For each `(r, s)`: a random-walk shift `μ → μ + δ`, `α_i → α_i + δ`,
    /// then a log-scale rescaling `σ → cσ`, `α_i → μ + c(α_i − μ)`. Both
    /// leave the standardized intercepts unchanged, so they move along the
    /// ridge that the one-at-a-time updates cross slowly when σ is small.
    fn update_group_moves(&mut self) -> Result<()> {
        let trans = self.params.transitions_mut();
        let (k, n) = (trans.n_states(), trans.n_subjects());
        let free = trans.n_free();
        let mut deltas = vec![0.0; n];
        for r in 0..k {
            for s in 1..k {
                let j = trans.pair(r, s);
                let mu = trans.mu[j];
                let z: f64 = StandardNormal.sample(&mut self.rng_hyper);
                let shift = self.step_shift[j] * z;
                deltas.fill(shift);
                let mut log_ratio = (mu * mu - (mu + shift).powi(2)) / (2.0 * self.prior.mu_sd * self.prior.mu_sd)
                    + row_shift_ratio(&mut self.caches, k, r, s, &deltas);
                let accepted = self.rng_hyper.random::<f64>().ln() < log_ratio;
                if accepted {
                    trans.mu[j] += shift;
                    for i in 0..n {
                        trans.alpha[i * free + j] += shift;
                    }
                    commit_row_shift(&mut self.caches, k, r, s, &deltas);
                }
                self.batch_shift[j].proposed += 1;
                self.batch_shift[j].accepted += accepted as u64;

                let mu = trans.mu[j];
                let z: f64 = StandardNormal.sample(&mut self.rng_hyper);
                let log_c = self.step_scale[j] * z;
                let c = log_c.exp();
                let sigma = trans.sigma[j] * c;
                let u: f64 = self.rng_hyper.random();
                let mut accepted = false;
                if self.prior.sigma_upper.is_none_or(|b| sigma <= b) {
                    for i in 0..n {
                        deltas[i] = (c - 1.0) * (trans.alpha[i * free + j] - mu);
                    }
                    // Jacobian c^(N+1) against the c^(−N) change of the
                    // intercept density leaves c; a flat prior on σ² adds
                    // another c.
                    log_ratio = log_c + row_shift_ratio(&mut self.caches, k, r, s, &deltas);
                    if self.prior.sigma_prior == SigmaPrior::FlatVariance {
                        log_ratio += log_c;
                    }
                    accepted = u.ln() < log_ratio;
                }
                if accepted {
                    trans.sigma[j] = sigma;
                    for i in 0..n {
                        trans.alpha[i * free + j] += deltas[i];
                    }
                    commit_row_shift(&mut self.caches, k, r, s, &deltas);
                }
                self.batch_scale[j].proposed += 1;
                self.batch_scale[j].accepted += accepted as u64;
            }
        }
        Ok(())
    }

    fn update_emissions(&mut self) {
        let Params::Hmm(h) = &mut self.params else { return };
        let k = h.n_states();
        let m = h.n_levels();
        let counts = emission_counts(&self.panel, &self.latent, k);
        for s in 0..k {
            let row = draw_simplex(&counts[s * m..(s + 1) * m], self.prior.dirichlet_concentration, &mut self.rng_emission);
            h.emissions[s * m..(s + 1) * m].copy_from_slice(&row);
        }
    }

    fn update_initial(&mut self) {
        let k = self.params.n_states();
        let counts = initial_counts(&self.latent, self.panel.n_days(), k);
        let pi = draw_simplex(&counts, self.prior.dirichlet_concentration, &mut self.rng_initial);
        *self.params.initial_mut() = pi;
    }

    /// Robbins–Monro step on the log step size toward the target rate.
    fn adapt(&mut self) {
        self.batches += 1;
        let gain = (2.0 / (self.batches as f64).sqrt()).min(1.0);
        for (step, tally) in self
            .step_alpha
            .iter_mut()
            .zip(&mut self.batch_alpha)
            .chain(self.step_beta.iter_mut().zip(&mut self.batch_beta))
            .chain(self.step_shift.iter_mut().zip(&mut self.batch_shift))
            .chain(self.step_scale.iter_mut().zip(&mut self.batch_scale))
        {
            if tally.proposed > 0 && *step > 0.0 {
                let next = step.ln() + gain * (tally.rate() - TARGET_ACCEPTANCE);
                *step = next.exp().clamp(MIN_STEP, MAX_STEP);
            }
            *tally = Tally::default();
        }
    }
}

/// Log-likelihood change of every subject's transitions out of state `r`
/// when subject `i`'s logit for destination `s` moves by `deltas[i]`. The
/// proposed normalizers are left in `lse_new`.
fn row_shift_ratio(caches: &mut [SubjectCache], k: usize, r: usize, s: usize, deltas: &[f64]) -> f64 {
    let w = k - 1;
    let mut eta_buf = vec![0.0; w];
    let mut total = 0.0;
    for (cache, delta) in caches.iter_mut().zip(deltas) {
        let row = &mut cache.rows[r];
        for n in 0..row.day.len() {
            eta_buf.copy_from_slice(&row.eta[n * w..(n + 1) * w]);
            eta_buf[s - 1] += delta;
            let lse = log_normalizer(&eta_buf);
            row.lse_new[n] = lse;
            total -= lse - row.lse[n];
            if row.to[n] as usize == s {
                total += delta;
            }
        }
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

fn commit_row_shift(caches: &mut [SubjectCache], k: usize, r: usize, s: usize, deltas: &[f64]) {
    let w = k - 1;
    for (cache, delta) in caches.iter_mut().zip(deltas) {
        let row = &mut cache.rows[r];
        for n in 0..row.day.len() {
            row.eta[n * w + s - 1] += delta;
            row.lse[n] = row.lse_new[n];
        }
    }
}

/// Random-walk update of one intercept `α_irs`; returns acceptance.
#[allow(clippy::too_many_arguments)]
fn alpha_step(
    row: &mut RowCache,
    k: usize,
    s: usize,
    a: &mut f64,
    mu: f64,
    sigma: f64,
    step: f64,
    rng: &mut StreamRng,
) -> Result<bool> {
    let w = k - 1;
    let z: f64 = StandardNormal.sample(rng);
    let delta = step * z;
    let proposal = *a + delta;
    let mut log_ratio = ((*a - mu).powi(2) - (proposal - mu).powi(2)) / (2.0 * sigma * sigma);
    let mut buf = [0.0f64; 16];
    let mut heap;
    let eta_buf: &mut [f64] = if w <= 16 {
        &mut buf[..w]
    } else {
        heap = vec![0.0; w];
        &mut heap
    };
    for n in 0..row.day.len() {
        eta_buf.copy_from_slice(&row.eta[n * w..(n + 1) * w]);
        eta_buf[s - 1] += delta;
        let lse = log_normalizer(eta_buf);
        row.lse_new[n] = lse;
        log_ratio -= lse - row.lse[n];
        if row.to[n] as usize == s {
            log_ratio += delta;
        }
    }
    if log_ratio.is_nan() {
        return Err(Error::Numerical("non-finite intercept acceptance ratio".into()));
    }
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        *a = proposal;
        for n in 0..row.day.len() {
            row.eta[n * w + s - 1] += delta;
            row.lse[n] = row.lse_new[n];
        }
        Ok(true)
    } else {
        Ok(false)
    }
}
