//! Posterior predictive checks.
//!
//! Levels are read as 0 = abstinent, 1 = moderate, 2 = heavy; a drinking day
//! is any observed level ≥ 1. Statistics only look at observed cells, and
//! replicates carry the observed missingness mask.

use rayon::prelude::*;

use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::mcmc::ChainSet;
use crate::model::{draw_intercepts, simulate_view, Params};
use crate::rng::{substream, STREAM_PPC};
use crate::{Error, Result};

pub const BLOCK_DAYS: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicateMode {
    /// Fresh intercepts `α ~ N(μ, σ²)` for a new set of subjects.
    NewSubjects,
    /// The sampled intercepts of the observed subjects.
    SameSubjects,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcResult {
    pub name: String,
    pub observed: f64,
    pub replicates: Vec<f64>,
    pub quantile: f64,
}

fn level_name(m: usize) -> String {
    match m {
        0 => "abstinent".into(),
        1 => "moderate".into(),
        2 => "heavy".into(),
        _ => format!("level{}", m + 1),
    }
}

pub fn n_blocks(n_days: usize) -> usize {
    n_days.div_ceil(BLOCK_DAYS)
}

/// Names of the statistics returned by [`ppc_statistics`], in order.
pub fn statistic_names(n_days: usize, n_levels: usize) -> Vec<String> {
    let mut names: Vec<String> = [
        "moderate_mean",
        "moderate_var",
        "heavy_mean",
        "heavy_var",
        "fdd_mean",
        "fdd_sd",
        "never_drinkers",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for b in 0..n_blocks(n_days) {
        for m in 0..n_levels {
            for moment in ["mean", "sd"] {
                names.push(format!("block{}_{}_{moment}", b + 1, level_name(m)));
            }
        }
    }
    names
}

/// Index of the first block statistic in [`statistic_names`].
pub const BLOCK_OFFSET: usize = 7;

/// Mean and sample variance (divisor n − 1; NaN below two values).
fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    (mean, values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Per-subject integer summaries from which every statistic follows.
#[derive(Debug, Clone, PartialEq)]
struct SubjectCounts {
    moderate: Vec<u32>,
    heavy: Vec<u32>,
    /// 1-based first drinking day.
    first_drink: Vec<Option<usize>>,
    /// `[subject][block][level]`, flattened.
    block: Vec<u32>,
    n_blocks: usize,
    n_levels: usize,
}

impl SubjectCounts {
    fn finish(&self) -> Vec<f64> {
        let n = self.moderate.len();
        let as_f = |v: &[u32]| v.iter().map(|c| *c as f64).collect::<Vec<_>>();
        let (mod_mean, mod_var) = moments(&as_f(&self.moderate));
        let (heavy_mean, heavy_var) = moments(&as_f(&self.heavy));
        let fdd: Vec<f64> = self.first_drink.iter().flatten().map(|d| *d as f64).collect();
        let (fdd_mean, fdd_var) = moments(&fdd);
        let never = self.first_drink.iter().filter(|d| d.is_none()).count() as f64;
        let mut out = vec![mod_mean, mod_var, heavy_mean, heavy_var, fdd_mean, fdd_var.sqrt(), never];
        let stride = self.n_blocks * self.n_levels;
        for b in 0..self.n_blocks {
            for m in 0..self.n_levels {
                let column: Vec<f64> = (0..n)
                    .map(|i| self.block[i * stride + b * self.n_levels + m] as f64)
                    .collect();
                let (mean, var) = moments(&column);
                out.push(mean);
                out.push(var.sqrt());
            }
        }
        out
    }
}

/// Statistic values for a panel, in [`statistic_names`] order: moderate-
/// and heavy-day count mean and variance across subjects; first-drinking-
/// day mean and sd over subjects who drank; the Never-Drinker count; per
/// 28-day block and level, mean and sd of the per-subject day counts.
pub fn ppc_statistics(panel: &ObservationPanel) -> Vec<f64> {
    let n = panel.n_subjects();
    let t = panel.n_days();
    let m = panel.n_levels();
    let blocks = n_blocks(t);
    let mut counts = SubjectCounts {
        moderate: Vec::with_capacity(n),
        heavy: Vec::with_capacity(n),
        first_drink: Vec::with_capacity(n),
        block: Vec::with_capacity(n * blocks * m),
        n_blocks: blocks,
        n_levels: m,
    };
    for i in 0..n {
        let row = panel.subject(i);
        let observed = || row.iter().flatten();
        counts.moderate.push(observed().filter(|y| **y == 1).count() as u32);
        counts.heavy.push(observed().filter(|y| **y == 2).count() as u32);
        counts
            .first_drink
            .push(row.iter().position(|y| matches!(y, Some(l) if *l >= 1)).map(|d| d + 1));
        for chunk in row.chunks(BLOCK_DAYS) {
            for level in 0..m {
                counts
                    .block
                    .push(chunk.iter().filter(|y| **y == Some(level)).count() as u32);
            }
        }
    }
    counts.finish()
}

/// Streaming tally over cells in any order; gives the same statistics as
/// [`ppc_statistics`].
#[derive(Debug, Clone)]
pub struct StatisticTally {
    counts: SubjectCounts,
}

impl StatisticTally {
    pub fn new(n_subjects: usize, n_days: usize, n_levels: usize) -> Self {
        let blocks = n_blocks(n_days);
        Self {
            counts: SubjectCounts {
                moderate: vec![0; n_subjects],
                heavy: vec![0; n_subjects],
                first_drink: vec![None; n_subjects],
                block: vec![0; n_subjects * blocks * n_levels],
                n_blocks: blocks,
                n_levels,
            },
        }
    }

    /// Records an observed level on a 0-based day.
    pub fn push(&mut self, subject: usize, day: usize, level: usize) {
        let c = &mut self.counts;
        match level {
            1 => c.moderate[subject] += 1,
            2 => c.heavy[subject] += 1,
            _ => {}
        }
        if level >= 1 {
            let d = day + 1;
            c.first_drink[subject] = Some(c.first_drink[subject].map_or(d, |f| f.min(d)));
        }
        c.block[(subject * c.n_blocks + day / BLOCK_DAYS) * c.n_levels + level] += 1;
    }

    pub fn finish(&self) -> Vec<f64> {
        self.counts.finish()
    }
}

/// Share of replicates below `observed`, ties counted half. NaN replicates
/// are ignored; NaN when nothing is left to compare.
pub fn ppc_quantile(observed: f64, replicates: &[f64]) -> f64 {
    let valid: Vec<f64> = replicates.iter().copied().filter(|v| !v.is_nan()).collect();
    if valid.is_empty() || observed.is_nan() {
        return f64::NAN;
    }
    let below = valid.iter().filter(|v| **v < observed).count() as f64;
    let ties = valid.iter().filter(|v| **v == observed).count() as f64;
    (below + 0.5 * ties) / valid.len() as f64
}

/// One replicate panel from one parameter draw. `mask` marks missing cells
/// (subject-major, `n_subjects × n_days`).
pub fn replicate_draw(
    params: &Params,
    design: &DesignMatrix,
    n_days: usize,
    mask: &[bool],
    mode: ReplicateMode,
    seed: u64,
    draw: u64,
) -> Result<ObservationPanel> {
    let n = params.transitions().n_subjects();
    let fresh;
    let params = match mode {
        ReplicateMode::SameSubjects => params,
        ReplicateMode::NewSubjects => {
            let trans = params.transitions();
            let alpha = draw_intercepts(trans, n, &mut substream(seed, &[STREAM_PPC, draw, 0]));
            let mut p = params.clone();
            *p.transitions_mut() = trans.with_alpha(alpha, n)?;
            fresh = p;
            &fresh
        }
    };
    let (_, _, observed) = simulate_view(&params.view(), design, n, n_days, params.n_levels(), Some(mask), |i| {
        substream(seed, &[STREAM_PPC, draw, 1, i as u64])
    })?;
    Ok(observed)
}

/// Evenly spaced indices of `count` draws among `total`.
pub fn select_draws(total: usize, count: Option<usize>) -> Vec<usize> {
    match count {
        Some(c) if c < total => (0..c).map(|j| j * total / c).collect(),
        _ => (0..total).collect(),
    }
}

fn draw_lookup(set: &ChainSet, global: usize) -> Params {
    let mut g = global;
    for chain in &set.chains {
        if g < chain.n_draws() {
            return chain.draw(g);
        }
        g -= chain.n_draws();
    }
    unreachable!("draw index {global} outside the chain set")
}

/// Replicate panels for the selected draws (global indices over chains in
/// order; all draws when `draws` is `None`).
pub fn ppc_replicate(
    set: &ChainSet,
    design: &DesignMatrix,
    panel: &ObservationPanel,
    mode: ReplicateMode,
    draws: Option<usize>,
    seed: u64,
) -> Result<Vec<ObservationPanel>> {
    select_draws(set.n_draws(), draws)
        .par_iter()
        .map(|&g| replicate_draw(&draw_lookup(set, g), design, panel.n_days(), panel.mask(), mode, seed, g as u64))
        .collect()
}

/// Every statistic of the observed panel against its replicate
/// distribution over `draws` posterior draws (all draws when `None`).
pub fn posterior_predictive_check(
    set: &ChainSet,
    design: &DesignMatrix,
    panel: &ObservationPanel,
    mode: ReplicateMode,
    draws: Option<usize>,
    seed: u64,
) -> Result<Vec<PpcResult>> {
    if set.n_draws() == 0 {
        return Err(Error::InvalidInput("no stored draws".into()));
    }
    if panel.n_subjects() != set.shape.n_subjects {
        return Err(Error::Dimension("panel does not match the fitted subjects".into()));
    }
    let observed = ppc_statistics(panel);
    let rep: Vec<Vec<f64>> = select_draws(set.n_draws(), draws)
        .par_iter()
        .map(|&g| {
            let y = replicate_draw(&draw_lookup(set, g), design, panel.n_days(), panel.mask(), mode, seed, g as u64)?;
            Ok(ppc_statistics(&y))
        })
        .collect::<Result<_>>()?;
    Ok(statistic_names(panel.n_days(), panel.n_levels())
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let replicates: Vec<f64> = rep.iter().map(|r| r[j]).collect();
            PpcResult {
                quantile: ppc_quantile(observed[j], &replicates),
                name,
                observed: observed[j],
                replicates,
            }
        })
        .collect())
}
