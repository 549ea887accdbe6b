//! Metropolis-within-Gibbs samplers for the hidden Markov and Markov models.

mod canonical;
mod em;
mod sampler;
pub mod updates;

use rayon::prelude::*;

pub use canonical::{canonical_order, emission_order_violated, permute_states};
pub use em::{em_initialize, empirical_markov_fit, init_chain, EmFit, EM_MAX_ITERATIONS, EM_TOLERANCE, INVERSION_FLOOR};
pub use sampler::{Sampler, Tally, ADAPT_BATCH, TARGET_ACCEPTANCE};

use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::model::{ModelKind, Params};
use crate::params_io::{params_from_values, scalar_names, scalar_values, ParamShape};
use crate::{Error, Result};

/// Which scale the flat random-effect prior is placed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaPrior {
    /// `p(σ) ∝ 1`.
    #[default]
    FlatSigma,
    /// `p(σ²) ∝ 1`.
    FlatVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub beta_sd: f64,
    pub mu_sd: f64,
    pub sigma_prior: SigmaPrior,
    /// Optional upper bound on σ; makes the scale prior proper.
    pub sigma_upper: Option<f64>,
    /// Dirichlet parameter for π and every emission row.
    pub dirichlet_concentration: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta_sd: 10.0,
            mu_sd: 10.0,
            sigma_prior: SigmaPrior::FlatSigma,
            sigma_upper: None,
            dirichlet_concentration: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.beta_sd) || !ok(self.mu_sd) || !ok(self.dirichlet_concentration) || self.sigma_upper.is_some_and(|u| !ok(u)) {
            return Err(Error::InvalidInput("prior settings must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_burnin: usize,
    pub n_keep: usize,
    /// Iterations per stored draw after burn-in.
    pub thin: usize,
    pub rw_step_alpha: f64,
    pub rw_step_beta: f64,
    pub adapt_during_burnin: bool,
    pub seed: u64,
    /// Standard deviation of the per-chain perturbation of starting
    /// intercepts.
    pub init_jitter: f64,
    /// Keep the latent layer of every stored draw, not just occupancy tallies.
    pub store_latent_trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_burnin: 10_000,
            n_keep: 10_000,
            thin: 1,
            rw_step_alpha: 0.4,
            rw_step_beta: 0.1,
            adapt_during_burnin: true,
            seed: 1,
            init_jitter: 0.1,
            store_latent_trace: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_keep == 0 || self.thin == 0 {
            return Err(Error::InvalidInput("chains, kept draws and thinning must be positive".into()));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.rw_step_alpha) || !ok(self.rw_step_beta) || !ok(self.init_jitter) {
            return Err(Error::InvalidInput("step sizes and jitter must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Output of one chain. Draws are stored flat in the order of
/// [`scalar_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub index: usize,
    pub shape: ParamShape,
    pub n_scalars: usize,
    pub values: Vec<f64>,
    /// `−2·log p(Y_obs | θ)` per stored draw.
    pub deviance: Vec<f64>,
    /// Post-burn-in acceptance per intercept pair and per coefficient.
    pub acceptance_alpha: Vec<Tally>,
    pub acceptance_beta: Vec<Tally>,
    pub step_alpha: Vec<f64>,
    pub step_beta: Vec<f64>,
    pub initial: Params,
    /// Latent layer after the last iteration (row-major N×T).
    pub final_latent: Vec<usize>,
    /// Counts over stored draws of latent value `s` at `(i, t)`, N×T×K.
    pub occupancy: Vec<u32>,
    pub latent_trace: Option<Vec<Vec<u8>>>,
    /// Stored HMM draws whose emission modes are not nondecreasing in the
    /// state index.
    pub label_violations: usize,
}

impl Chain {
    /// A chain rebuilt from flat stored values, without sampler
    /// bookkeeping (acceptance, latent state).
    pub fn from_values(index: usize, shape: ParamShape, values: Vec<f64>, deviance: Vec<f64>) -> Result<Self> {
        let n_scalars = scalar_names(&shape).len();
        if deviance.is_empty() || values.len() != n_scalars * deviance.len() {
            return Err(Error::Dimension(format!(
                "{} values do not form {} draws of {n_scalars} scalars",
                values.len(),
                deviance.len()
            )));
        }
        let initial = params_from_values(&shape, &values[..n_scalars])?;
        Ok(Self {
            index,
            shape,
            n_scalars,
            values,
            deviance,
            acceptance_alpha: Vec::new(),
            acceptance_beta: Vec::new(),
            step_alpha: Vec::new(),
            step_beta: Vec::new(),
            initial,
            final_latent: Vec::new(),
            occupancy: Vec::new(),
            latent_trace: None,
            label_violations: 0,
        })
    }

    /// A chain holding the given draws.
    pub fn from_draws(index: usize, draws: &[Params], deviance: Vec<f64>) -> Result<Self> {
        let first = draws.first().ok_or_else(|| Error::InvalidInput("no draws".into()))?;
        let shape = ParamShape::of(first);
        let mut values = Vec::new();
        for d in draws {
            if ParamShape::of(d) != shape {
                return Err(Error::Dimension("draws have different shapes".into()));
            }
            values.extend(scalar_values(d));
        }
        Self::from_values(index, shape, values, deviance)
    }

    pub fn n_draws(&self) -> usize {
        self.deviance.len()
    }

    pub fn draw_values(&self, g: usize) -> &[f64] {
        &self.values[g * self.n_scalars..(g + 1) * self.n_scalars]
    }

    pub fn draw(&self, g: usize) -> Params {
        params_from_values(&self.shape, self.draw_values(g)).expect("stored draw has the chain's shape")
    }

    pub fn trace(&self, scalar: usize) -> Vec<f64> {
        self.values.iter().skip(scalar).step_by(self.n_scalars).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    pub kind: ModelKind,
    pub shape: ParamShape,
    pub names: Vec<String>,
    pub chains: Vec<Chain>,
}

impl ChainSet {
    pub fn from_chains(chains: Vec<Chain>) -> Result<Self> {
        let first = chains.first().ok_or_else(|| Error::InvalidInput("no chains".into()))?;
        let shape = first.shape;
        if chains.iter().any(|c| c.shape != shape) {
            return Err(Error::Dimension("chains have different shapes".into()));
        }
        Ok(Self {
            kind: shape.kind,
            shape,
            names: scalar_names(&shape),
            chains,
        })
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_scalars(&self) -> usize {
        self.names.len()
    }

    pub fn scalar_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// One trace per chain for a scalar.
    pub fn traces(&self, scalar: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.trace(scalar)).collect()
    }

    /// Every stored draw of every chain, chain by chain.
    pub fn draws(&self) -> impl Iterator<Item = Params> + '_ {
        self.chains.iter().flat_map(|c| (0..c.n_draws()).map(move |g| c.draw(g)))
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Chain::n_draws).sum()
    }

    pub fn deviances(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.deviance.iter().copied()).collect()
    }

    pub fn label_violations(&self) -> usize {
        self.chains.iter().map(|c| c.label_violations).sum()
    }

    /// Relabels the hidden states of each chain so that states are ordered
    /// by the mode (then mean) of their posterior-mean emission row.
    /// Returns the permutation applied to each chain.
    pub fn canonicalize(&mut self) -> Vec<Vec<usize>> {
        if self.kind != ModelKind::Hmm {
            return self.chains.iter().map(|_| (0..self.shape.n_states).collect()).collect();
        }
        let shape = self.shape;
        let (k, m) = (shape.n_states, shape.n_levels);
        let mut perms = Vec::new();
        for chain in &mut self.chains {
            let offset = chain.n_scalars - k * m;
            let mut mean = vec![0.0; k * m];
            for g in 0..chain.n_draws() {
                for (acc, v) in mean.iter_mut().zip(&chain.draw_values(g)[offset..]) {
                    *acc += v / chain.n_draws() as f64;
                }
            }
            let perm = canonical_order(&mean, m);
            if perm.iter().enumerate().any(|(j, p)| j != *p) {
                for g in 0..chain.n_draws() {
                    let relabeled = permute_states(&chain.draw(g), &perm);
                    chain.values[g * chain.n_scalars..(g + 1) * chain.n_scalars]
                        .copy_from_slice(&scalar_values(&relabeled));
                }
                let t_days = chain.final_latent.len() / shape.n_subjects.max(1);
                let mut inverse = vec![0; k];
                for (new, old) in perm.iter().enumerate() {
                    inverse[*old] = new;
                }
                chain.final_latent.iter_mut().for_each(|h| *h = inverse[*h]);
                if let Some(trace) = &mut chain.latent_trace {
                    trace.iter_mut().flatten().for_each(|h| *h = inverse[*h as usize] as u8);
                }
                let mut occ = vec![0; chain.occupancy.len()];
                for cell in 0..shape.n_subjects * t_days {
                    for (new, old) in perm.iter().enumerate() {
                        occ[cell * k + new] = chain.occupancy[cell * k + old];
                    }
                }
                chain.occupancy = occ;
                chain.initial = permute_states(&chain.initial, &perm);
            }
            chain.label_violations = (0..chain.n_draws())
                .filter(|g| emission_order_violated(&chain.draw_values(*g)[offset..], m))
                .count();
            perms.push(perm);
        }
        perms
    }
}

/// Pooled starting fit for the given model.
pub fn initial_fit(kind: ModelKind, panel: &ObservationPanel, n_states: usize) -> Result<EmFit> {
    match kind {
        ModelKind::Hmm => {
            if n_states < 2 {
                return Err(Error::InvalidInput("the hidden Markov model needs at least two states".into()));
            }
            em_initialize(panel, n_states)
        }
        ModelKind::Markov => empirical_markov_fit(panel),
    }
}

/// Runs one chain from the given starting values.
pub fn run_chain_from(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    prior: &PriorSpec,
    config: &SamplerConfig,
    chain: usize,
    init: Params,
) -> Result<Chain> {
    let shape = ParamShape::of(&init);
    let mut sampler = Sampler::new(panel, design, prior, config, chain, init.clone())?;
    let (n, t_days, k) = (panel.n_subjects(), panel.n_days(), shape.n_states);
    sampler.set_adapting(config.adapt_during_burnin);
    for _ in 0..config.n_burnin {
        sampler.sweep()?;
    }
    sampler.set_adapting(false);
    sampler.reset_acceptance();
    let n_scalars = scalar_names(&shape).len();
    let mut values = Vec::with_capacity(config.n_keep * n_scalars);
    let mut deviance = Vec::with_capacity(config.n_keep);
    let mut occupancy = vec![0u32; n * t_days * k];
    let mut latent_trace = config.store_latent_trace.then(Vec::new);
    let mut label_violations = 0;
    for _ in 0..config.n_keep {
        for _ in 0..config.thin {
            sampler.sweep()?;
        }
        let params = sampler.params();
        values.extend(scalar_values(params));
        deviance.push(sampler.deviance()?);
        for (cell, h) in sampler.latent().iter().enumerate() {
            occupancy[cell * k + h] += 1;
        }
        if let Some(trace) = &mut latent_trace {
            trace.push(sampler.latent().iter().map(|h| *h as u8).collect());
        }
        if let Params::Hmm(h) = params {
            label_violations += emission_order_violated(&h.emissions, h.n_levels()) as usize;
        }
    }
    let (acc_a, acc_b) = sampler.acceptance();
    let (step_a, step_b) = sampler.steps();
    Ok(Chain {
        index: chain,
        shape,
        n_scalars,
        values,
        deviance,
        acceptance_alpha: acc_a.to_vec(),
        acceptance_beta: acc_b.to_vec(),
        step_alpha: step_a.to_vec(),
        step_beta: step_b.to_vec(),
        initial: init,
        final_latent: sampler.latent().to_vec(),
        occupancy,
        latent_trace,
        label_violations,
    })
}

/// Fits the pooled starting point and runs chain `chain`.
pub fn run_chain(
    kind: ModelKind,
    panel: &ObservationPanel,
    design: &DesignMatrix,
    n_states: usize,
    prior: &PriorSpec,
    config: &SamplerConfig,
    chain: usize,
) -> Result<Chain> {
    let fit = initial_fit(kind, panel, n_states)?;
    let init = init_chain(&fit, kind, panel.n_subjects(), design.n_covariates(), chain, config.init_jitter, config.seed)?;
    run_chain_from(panel, design, prior, config, chain, init)
}

/// Runs `config.n_chains` chains (concurrently when threads are available)
/// from jittered copies of one pooled starting fit.
pub fn run_chains(
    kind: ModelKind,
    panel: &ObservationPanel,
    design: &DesignMatrix,
    n_states: usize,
    prior: &PriorSpec,
    config: &SamplerConfig,
) -> Result<ChainSet> {
    config.validate()?;
    let fit = initial_fit(kind, panel, n_states)?;
    let chains = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let init = init_chain(&fit, kind, panel.n_subjects(), design.n_covariates(), c, config.init_jitter, config.seed)?;
            run_chain_from(panel, design, prior, config, c, init)
        })
        .collect::<Result<Vec<_>>>()?;
    ChainSet::from_chains(chains)
}
