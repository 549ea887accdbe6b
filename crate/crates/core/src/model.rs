//! Parameter containers and generative kernels.
//!
//! Row `r` of a subject's transition matrix on day `t` is a multinomial
//! logit with state 0 as baseline:
//!
//! ```text
//! P(next = s | current = r) = exp(η_s) / Σ_k exp(η_k),
//! η_0 = 0,  η_s = α_irs + X_it'β_rs  (s ≥ 1)
//! ```
//!
//! The same container serves the HMM (rows indexed by hidden state) and the
//! Markov model (rows indexed by the previous observation).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

pub const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Hmm,
    Markov,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hmm => "hmm",
            ModelKind::Markov => "markov",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hmm" => Ok(ModelKind::Hmm),
            "markov" => Ok(ModelKind::Markov),
            other => Err(Error::InvalidInput(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Random-intercept multinomial-logit transition model.
///
/// Layouts (all row-major, target index `s` runs over `1..K` and is stored
/// at offset `s - 1`):
/// - `alpha[i][r][s]`, `beta[r][s][k]`, `mu[r][s]`, `sigma[r][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTransitions {
    n_states: usize,
    n_covariates: usize,
    n_subjects: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LogitTransitions {
    /// All intercepts and effects zero, σ = 1.
    pub fn zeros(n_states: usize, n_covariates: usize, n_subjects: usize) -> Self {
        let free = n_states * n_states.saturating_sub(1);
        Self {
            n_states,
            n_covariates,
            n_subjects,
            alpha: vec![0.0; n_subjects * free],
            beta: vec![0.0; free * n_covariates],
            mu: vec![0.0; free],
            sigma: vec![1.0; free],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    /// Number of (row, target) logit pairs, `K(K-1)`.
    pub fn n_free(&self) -> usize {
        self.n_states * (self.n_states - 1)
    }

    #[inline]
    pub fn pair(&self, r: usize, s: usize) -> usize {
        debug_assert!(s >= 1 && s < self.n_states);
        r * (self.n_states - 1) + s - 1
    }

    #[inline]
    pub fn alpha_index(&self, i: usize, r: usize, s: usize) -> usize {
        i * self.n_free() + self.pair(r, s)
    }

    #[inline]
    pub fn beta_index(&self, r: usize, s: usize, k: usize) -> usize {
        self.pair(r, s) * self.n_covariates + k
    }

    /// `α_ir·` as a slice of length `K-1`.
    #[inline]
    pub fn alpha_row(&self, i: usize, r: usize) -> &[f64] {
        let w = self.n_states - 1;
        let start = i * self.n_free() + r * w;
        &self.alpha[start..start + w]
    }

    /// `β_r··` as a slice of length `(K-1)·p`.
    #[inline]
    pub fn beta_row(&self, r: usize) -> &[f64] {
        let w = (self.n_states - 1) * self.n_covariates;
        &self.beta[r * w..(r + 1) * w]
    }

    /// Copy with every subject's intercepts replaced by `alpha`.
    pub fn with_alpha(&self, alpha: Vec<f64>, n_subjects: usize) -> Result<Self> {
        if alpha.len() != n_subjects * self.n_free() {
            return Err(Error::Dimension(format!(
                "{} intercepts for {n_subjects} subjects",
                alpha.len()
            )));
        }
        let mut out = self.clone();
        out.alpha = alpha;
        out.n_subjects = n_subjects;
        Ok(out)
    }

    /// Fills `out` (length K) with row `r` for subject `i` at covariates `x`.
    #[inline]
    pub fn fill_row(&self, i: usize, r: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        fill_transition_row(self.alpha_row(i, r), self.beta_row(r), x, out)
    }

    /// Row-major K×K matrix for subject `i` at covariates `x`.
    pub fn matrix_at(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.n_states;
        let mut m = vec![0.0; k * k];
        for r in 0..k {
            self.fill_row(i, r, x, &mut m[r * k..(r + 1) * k])?;
        }
        Ok(m)
    }

    /// Population-average matrix: softmax of `μ` with covariates at zero.
    pub fn mean_matrix(&self) -> Vec<f64> {
        let k = self.n_states;
        let mut m = vec![0.0; k * k];
        for r in 0..k {
            let w = k - 1;
            softmax_with_baseline(&self.mu[r * w..(r + 1) * w], &mut m[r * k..(r + 1) * k]);
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let free = self.n_free();
        if self.alpha.len() != self.n_subjects * free
            || self.beta.len() != free * self.n_covariates
            || self.mu.len() != free
            || self.sigma.len() != free
        {
            return Err(Error::Dimension("transition parameter block sizes".into()));
        }
        if let Some(bad) = self.sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {bad}")));
        }
        if self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.mu)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical("non-finite transition parameter".into()));
        }
        Ok(())
    }
}

/// Writes `exp(η_s) / Σ exp(η_k)` with `η_0 = 0` and `η_{1..} = logits`,
/// subtracting the largest logit first.
#[inline]
pub(crate) fn softmax_with_baseline(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(0.0_f64, f64::max);
    out[0] = (-max).exp();
    let mut total = out[0];
    for (o, &eta) in out[1..].iter_mut().zip(logits) {
        *o = (eta - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Non-allocating form of [`transition_row`].
#[inline]
pub fn fill_transition_row(alpha: &[f64], beta: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
    let w = alpha.len();
    let p = x.len();
    debug_assert_eq!(out.len(), w + 1);
    debug_assert_eq!(beta.len(), w * p);
    if w > 16 {
        return fill_row_large(alpha, beta, x, out);
    }
    let mut buf = [0.0_f64; 16];
    let logits = &mut buf[..w];
    for s in 0..w {
        let b = &beta[s * p..(s + 1) * p];
        let eta = alpha[s] + b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        if !eta.is_finite() {
            return Err(Error::Numerical(format!("non-finite linear predictor {eta}")));
        }
        logits[s] = eta;
    }
    softmax_with_baseline(logits, out);
    Ok(())
}

#[cold]
fn fill_row_large(alpha: &[f64], beta: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
    let p = x.len();
    let mut logits = Vec::with_capacity(alpha.len());
    for (s, a) in alpha.iter().enumerate() {
        let eta = a + beta[s * p..(s + 1) * p].iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        if !eta.is_finite() {
            return Err(Error::Numerical(format!("non-finite linear predictor {eta}")));
        }
        logits.push(eta);
    }
    softmax_with_baseline(&logits, out);
    Ok(())
}

/// One row of a transition matrix: `alpha` holds `α_r2..α_rK`, `beta` holds
/// the matching `β_rs` vectors back to back.
pub fn transition_row(alpha: &[f64], beta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != alpha.len() * x.len() {
        return Err(Error::Dimension(format!(
            "beta has {} entries, expected {}",
            beta.len(),
            alpha.len() * x.len()
        )));
    }
    let mut out = vec![0.0; alpha.len() + 1];
    fill_transition_row(alpha, beta, x, &mut out)?;
    Ok(out)
}

/// Transition matrix from day `day` to `day + 1` for `subject`, using the
/// design vector of day `day`.
pub fn transition_matrix(
    subject: usize,
    day: usize,
    trans: &LogitTransitions,
    design: &DesignMatrix,
) -> Result<Vec<f64>> {
    check_index(subject, day, trans, design)?;
    trans.matrix_at(subject, design.row(subject, day))
}

/// Ordered product of the `gap + 1` daily matrices starting at `start_day`,
/// i.e. the transition law from `start_day` to `start_day + gap + 1`.
pub fn multi_step_matrix(
    subject: usize,
    start_day: usize,
    gap: usize,
    trans: &LogitTransitions,
    design: &DesignMatrix,
) -> Result<Vec<f64>> {
    let end = start_day + gap + 1;
    if end >= design.n_days() {
        return Err(Error::Dimension(format!(
            "window {start_day}..{end} exceeds {} days",
            design.n_days()
        )));
    }
    let mut acc = transition_matrix(subject, start_day, trans, design)?;
    for day in start_day + 1..end {
        let next = transition_matrix(subject, day, trans, design)?;
        acc = mat_mul(&acc, &next, trans.n_states());
    }
    Ok(acc)
}

pub(crate) fn mat_mul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for r in 0..k {
        for m in 0..k {
            let arm = a[r * k + m];
            if arm == 0.0 {
                continue;
            }
            for c in 0..k {
                out[r * k + c] += arm * b[m * k + c];
            }
        }
    }
    out
}

fn check_index(
    subject: usize,
    day: usize,
    trans: &LogitTransitions,
    design: &DesignMatrix,
) -> Result<()> {
    if subject >= trans.n_subjects() || subject >= design.n_subjects() || day >= design.n_days() {
        return Err(Error::Dimension(format!(
            "(subject {subject}, day {day}) out of bounds"
        )));
    }
    if design.n_covariates() != trans.n_covariates() {
        return Err(Error::Dimension(format!(
            "design has {} covariates, parameters expect {}",
            design.n_covariates(),
            trans.n_covariates()
        )));
    }
    Ok(())
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    let total: f64 = v.iter().sum();
    if v.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > PROB_TOLERANCE * 10.0 {
        return Err(Error::InvalidInput(format!("{what} is not a probability vector: {v:?}")));
    }
    Ok(())
}

/// Hidden Markov model parameters: transitions over S hidden states, an
/// initial distribution and an S×M emission matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pub transitions: LogitTransitions,
    pub initial: Vec<f64>,
    /// Row-major S×M, row `s` is `p_s`.
    pub emissions: Vec<f64>,
    n_levels: usize,
}

impl HmmParams {
    pub fn new(
        transitions: LogitTransitions,
        initial: Vec<f64>,
        emissions: Vec<f64>,
        n_levels: usize,
    ) -> Result<Self> {
        let out = Self {
            transitions,
            initial,
            emissions,
            n_levels,
        };
        out.validate()?;
        Ok(out)
    }

    /// Builds without checking that rows are distributions.
    pub fn new_unchecked(
        transitions: LogitTransitions,
        initial: Vec<f64>,
        emissions: Vec<f64>,
        n_levels: usize,
    ) -> Self {
        Self {
            transitions,
            initial,
            emissions,
            n_levels,
        }
    }

    pub fn n_states(&self) -> usize {
        self.transitions.n_states()
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn emission_row(&self, state: usize) -> &[f64] {
        &self.emissions[state * self.n_levels..(state + 1) * self.n_levels]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_states();
        self.transitions.validate()?;
        if self.initial.len() != s || self.emissions.len() != s * self.n_levels {
            return Err(Error::Dimension("initial/emission sizes".into()));
        }
        check_simplex(&self.initial, "initial distribution")?;
        for st in 0..s {
            check_simplex(self.emission_row(st), "emission row")?;
        }
        Ok(())
    }
}

/// `p(Y = level | H = state)`.
pub fn emission_prob(state: usize, level: usize, params: &HmmParams) -> f64 {
    params.emissions[state * params.n_levels + level]
}

/// First-order Markov model on the observations themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovParams {
    pub transitions: LogitTransitions,
    pub initial: Vec<f64>,
}

impl MarkovParams {
    pub fn new(transitions: LogitTransitions, initial: Vec<f64>) -> Result<Self> {
        let out = Self {
            transitions,
            initial,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn n_levels(&self) -> usize {
        self.transitions.n_states()
    }

    pub fn validate(&self) -> Result<()> {
        self.transitions.validate()?;
        if self.initial.len() != self.transitions.n_states() {
            return Err(Error::Dimension("initial distribution size".into()));
        }
        check_simplex(&self.initial, "initial distribution")
    }
}

/// Parameters of either model.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Hmm(HmmParams),
    Markov(MarkovParams),
}

impl Params {
    pub fn kind(&self) -> ModelKind {
        match self {
            Params::Hmm(_) => ModelKind::Hmm,
            Params::Markov(_) => ModelKind::Markov,
        }
    }

    pub fn transitions(&self) -> &LogitTransitions {
        match self {
            Params::Hmm(p) => &p.transitions,
            Params::Markov(p) => &p.transitions,
        }
    }

    pub fn transitions_mut(&mut self) -> &mut LogitTransitions {
        match self {
            Params::Hmm(p) => &mut p.transitions,
            Params::Markov(p) => &mut p.transitions,
        }
    }

    pub fn initial(&self) -> &[f64] {
        match self {
            Params::Hmm(p) => &p.initial,
            Params::Markov(p) => &p.initial,
        }
    }

    pub fn initial_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Params::Hmm(p) => &mut p.initial,
            Params::Markov(p) => &mut p.initial,
        }
    }

    pub fn n_states(&self) -> usize {
        self.transitions().n_states()
    }

    pub fn n_levels(&self) -> usize {
        match self {
            Params::Hmm(p) => p.n_levels(),
            Params::Markov(p) => p.n_levels(),
        }
    }

    pub fn as_hmm(&self) -> Option<&HmmParams> {
        match self {
            Params::Hmm(p) => Some(p),
            Params::Markov(_) => None,
        }
    }

    pub fn as_markov(&self) -> Option<&MarkovParams> {
        match self {
            Params::Markov(p) => Some(p),
            Params::Hmm(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Params::Hmm(p) => p.validate(),
            Params::Markov(p) => p.validate(),
        }
    }

    pub(crate) fn view(&self) -> ChainView<'_> {
        match self {
            Params::Hmm(p) => ChainView::hmm(p),
            Params::Markov(p) => ChainView::markov(p),
        }
    }
}

/// Emission model seen by the shared forward/backward code.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Emission<'a> {
    Matrix { probs: &'a [f64], n_levels: usize },
    /// Observation equals state (the Markov model).
    Identity,
}

/// A latent chain with its observation model.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChainView<'a> {
    pub trans: &'a LogitTransitions,
    pub initial: &'a [f64],
    pub emission: Emission<'a>,
}

impl<'a> ChainView<'a> {
    pub fn hmm(p: &'a HmmParams) -> Self {
        Self {
            trans: &p.transitions,
            initial: &p.initial,
            emission: Emission::Matrix {
                probs: &p.emissions,
                n_levels: p.n_levels,
            },
        }
    }

    pub fn markov(p: &'a MarkovParams) -> Self {
        Self {
            trans: &p.transitions,
            initial: &p.initial,
            emission: Emission::Identity,
        }
    }

    pub fn n_states(&self) -> usize {
        self.trans.n_states()
    }

    /// `p(y | state)` for every state; all ones when `y` is missing.
    #[inline]
    pub fn emission_vector(&self, y: Option<usize>, out: &mut [f64]) {
        match (y, self.emission) {
            (None, _) => out.fill(1.0),
            (Some(level), Emission::Matrix { probs, n_levels }) => {
                for (s, o) in out.iter_mut().enumerate() {
                    *o = probs[s * n_levels + level];
                }
            }
            (Some(level), Emission::Identity) => {
                out.fill(0.0);
                out[level] = 1.0;
            }
        }
    }

    /// Row-major `(T-1)` daily K×K matrices for one subject.
    pub fn daily_matrices(&self, design: &DesignMatrix, subject: usize, n_days: usize) -> Result<Vec<f64>> {
        let k = self.n_states();
        let mut mats = vec![0.0; n_days.saturating_sub(1) * k * k];
        for t in 0..n_days.saturating_sub(1) {
            let x = design.row(subject, t);
            for r in 0..k {
                let off = (t * k + r) * k;
                self.trans.fill_row(subject, r, x, &mut mats[off..off + k])?;
            }
        }
        Ok(mats)
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off fallback: last state with positive mass.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// A simulated panel. `complete` holds the observation drawn under every
/// cell, including the ones the mask hides in `observed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub hidden: Option<Vec<usize>>,
    pub complete: Vec<usize>,
    pub observed: ObservationPanel,
    pub seed: u64,
}

fn check_simulation(
    trans: &LogitTransitions,
    design: &DesignMatrix,
    n_subjects: usize,
    n_days: usize,
    mask: Option<&[bool]>,
) -> Result<()> {
    if n_subjects > trans.n_subjects() || n_subjects > design.n_subjects() || n_days > design.n_days() {
        return Err(Error::Dimension(format!(
            "cannot simulate {n_subjects}x{n_days} from parameters for {} subjects and a {}x{} design",
            trans.n_subjects(),
            design.n_subjects(),
            design.n_days()
        )));
    }
    if design.n_covariates() != trans.n_covariates() {
        return Err(Error::Dimension("design/parameter covariate count".into()));
    }
    if let Some(m) = mask {
        if m.len() != n_subjects * n_days {
            return Err(Error::Dimension(format!(
                "mask has {} cells, expected {}",
                m.len(),
                n_subjects * n_days
            )));
        }
    }
    Ok(())
}

/// Draws one subject's latent path and observations.
pub(crate) fn simulate_subject<R: Rng + ?Sized>(
    view: &ChainView<'_>,
    design: &DesignMatrix,
    subject: usize,
    n_days: usize,
    rng: &mut R,
    latent: &mut [usize],
    observed: &mut [usize],
) -> Result<()> {
    let k = view.n_states();
    let mut row = vec![0.0; k];
    for t in 0..n_days {
        let state = if t == 0 {
            sample_categorical(view.initial, rng)
        } else {
            view.trans
                .fill_row(subject, latent[t - 1], design.row(subject, t - 1), &mut row)?;
            sample_categorical(&row, rng)
        };
        latent[t] = state;
        observed[t] = match view.emission {
            Emission::Identity => state,
            Emission::Matrix { probs, n_levels } => {
                sample_categorical(&probs[state * n_levels..(state + 1) * n_levels], rng)
            }
        };
    }
    Ok(())
}

pub(crate) fn simulate_view(
    view: &ChainView<'_>,
    design: &DesignMatrix,
    n_subjects: usize,
    n_days: usize,
    n_levels: usize,
    mask: Option<&[bool]>,
    mut rng_for: impl FnMut(usize) -> StreamRng,
) -> Result<(Vec<usize>, Vec<usize>, ObservationPanel)> {
    check_simulation(view.trans, design, n_subjects, n_days, mask)?;
    let mut latent = vec![0; n_subjects * n_days];
    let mut complete = vec![0; n_subjects * n_days];
    for i in 0..n_subjects {
        let mut rng = rng_for(i);
        let span = i * n_days..(i + 1) * n_days;
        simulate_subject(
            view,
            design,
            i,
            n_days,
            &mut rng,
            &mut latent[span.clone()],
            &mut complete[span],
        )?;
    }
    let cells: Vec<Option<usize>> = complete
        .iter()
        .enumerate()
        .map(|(idx, &y)| match mask {
            Some(m) if m[idx] => None,
            _ => Some(y),
        })
        .collect();
    let observed = ObservationPanel::new(n_subjects, n_days, n_levels, &cells)?;
    Ok((latent, complete, observed))
}

/// Simulates hidden paths and observations for the first `n_subjects`
/// subjects, hiding cells under `mask`.
pub fn simulate_hmm(
    params: &HmmParams,
    design: &DesignMatrix,
    n_subjects: usize,
    n_days: usize,
    mask: Option<&[bool]>,
    seed: u64,
) -> Result<SimulatedPanel> {
    params.validate()?;
    let (hidden, complete, observed) = simulate_view(
        &ChainView::hmm(params),
        design,
        n_subjects,
        n_days,
        params.n_levels(),
        mask,
        |i| rng::substream(seed, &[rng::STREAM_SIMULATE, i as u64]),
    )?;
    Ok(SimulatedPanel {
        hidden: Some(hidden),
        complete,
        observed,
        seed,
    })
}

pub fn simulate_markov(
    params: &MarkovParams,
    design: &DesignMatrix,
    n_subjects: usize,
    n_days: usize,
    mask: Option<&[bool]>,
    seed: u64,
) -> Result<SimulatedPanel> {
    params.validate()?;
    let (_, complete, observed) = simulate_view(
        &ChainView::markov(params),
        design,
        n_subjects,
        n_days,
        params.n_levels(),
        mask,
        |i| rng::substream(seed, &[rng::STREAM_SIMULATE, i as u64]),
    )?;
    Ok(SimulatedPanel {
        hidden: None,
        complete,
        observed,
        seed,
    })
}

/// Fresh random intercepts `α_irs ~ N(μ_rs, σ_rs²)` for `n_subjects` subjects.
pub fn draw_intercepts<R: Rng + ?Sized>(
    trans: &LogitTransitions,
    n_subjects: usize,
    rng: &mut R,
) -> Vec<f64> {
    let free = trans.n_free();
    let mut alpha = Vec::with_capacity(n_subjects * free);
    for _ in 0..n_subjects {
        for j in 0..free {
            let z: f64 = StandardNormal.sample(rng);
            alpha.push(trans.mu[j] + trans.sigma[j] * z);
        }
    }
    alpha
}

/// Logits `log(q_s / q_0)` that reproduce probability row `q` through the
/// baseline softmax. Entries below `floor` are raised to it (and the row
/// renormalized) before inversion.
pub fn inverse_softmax(q: &[f64], floor: f64) -> Vec<f64> {
    let clamped: Vec<f64> = q.iter().map(|p| p.max(floor)).collect();
    let total: f64 = clamped.iter().sum();
    let base = clamped[0] / total;
    clamped[1..].iter().map(|p| (p / total / base).ln()).collect()
}
