//! Serial-dependence motifs and relapse episodes.

use rayon::prelude::*;

use super::ppc::select_draws;
use crate::dataset::{DesignMatrix, ObservationPanel};
use crate::inference::{pointwise_predictive, PredictiveMode};
use crate::mcmc::ChainSet;
use crate::model::{ModelKind, Params};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifKind {
    /// `(a, b, a)`: a one-day departure followed by a return.
    Return,
    /// `(a, b, b)`: a change that persists.
    Stay,
}

/// Three consecutive observed days `day, day+1, day+2` with a level change
/// between the first two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Motif {
    pub subject: usize,
    pub day: usize,
    pub levels: [usize; 3],
}

impl Motif {
    pub fn kind(&self) -> MotifKind {
        if self.levels[2] == self.levels[0] {
            MotifKind::Return
        } else {
            MotifKind::Stay
        }
    }
}

/// Every `(a, b, a)` and `(a, b, b)` triplet with `a ≠ b`.
pub fn find_motifs(panel: &ObservationPanel) -> Vec<Motif> {
    let mut out = Vec::new();
    for i in 0..panel.n_subjects() {
        let row = panel.subject(i);
        for (t, w) in row.windows(3).enumerate() {
            if let [Some(a), Some(b), Some(c)] = *w {
                if a != b && (c == a || c == b) {
                    out.push(Motif {
                        subject: i,
                        day: t,
                        levels: [a, b, c],
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotifRow {
    pub levels: [usize; 3],
    pub kind: MotifKind,
    pub count: usize,
    /// Mean predictive probability of the third element under the HMM.
    pub hmm: f64,
    /// The same under the Markov model.
    pub markov: f64,
}

/// Average, over `draws`, of the one-step predictive probability of the
/// third element of every motif.
fn motif_probabilities(panel: &ObservationPanel, design: &DesignMatrix, motifs: &[Motif], draws: &[Params]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no parameter draws".into()));
    }
    let per_draw: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|p| {
            let pred = pointwise_predictive(panel, design, p, PredictiveMode::OneStep)?;
            Ok(motifs
                .iter()
                .map(|m| pred[m.subject][m.day + 2].unwrap_or(f64::NAN))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..motifs.len())
        .map(|j| per_draw.iter().map(|d| d[j]).sum::<f64>() / draws.len() as f64)
        .collect())
}

/// Motif table from explicit parameter draws of each model.
pub fn motif_table(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    hmm_draws: &[Params],
    markov_draws: &[Params],
) -> Result<Vec<MotifRow>> {
    let motifs = find_motifs(panel);
    if motifs.is_empty() {
        return Ok(Vec::new());
    }
    let hmm = motif_probabilities(panel, design, &motifs, hmm_draws)?;
    let markov = motif_probabilities(panel, design, &motifs, markov_draws)?;
    let mut patterns: Vec<[usize; 3]> = motifs.iter().map(|m| m.levels).collect();
    patterns.sort_by_key(|l| (l[2] != l[0], *l));
    patterns.dedup();
    Ok(patterns
        .into_iter()
        .map(|levels| {
            let hits: Vec<usize> = (0..motifs.len()).filter(|&j| motifs[j].levels == levels).collect();
            let mean = |v: &[f64]| hits.iter().map(|&j| v[j]).sum::<f64>() / hits.len() as f64;
            MotifRow {
                levels,
                kind: motifs[hits[0]].kind(),
                count: hits.len(),
                hmm: mean(&hmm),
                markov: mean(&markov),
            }
        })
        .collect())
}

/// Compares how each fitted model predicts the third day of `(a, b, a)`
/// and `(a, b, b)` motifs, averaging over up to `draws` evenly spaced
/// posterior draws of each chain set.
pub fn serial_dependence_table(
    panel: &ObservationPanel,
    design: &DesignMatrix,
    hmm: &ChainSet,
    markov: &ChainSet,
    draws: Option<usize>,
) -> Result<Vec<MotifRow>> {
    if hmm.kind != ModelKind::Hmm || markov.kind != ModelKind::Markov {
        return Err(Error::InvalidInput("expected an HMM fit and a Markov fit".into()));
    }
    let pick = |set: &ChainSet| -> Vec<Params> {
        let all: Vec<Params> = set.draws().collect();
        select_draws(all.len(), draws).into_iter().map(|g| all[g].clone()).collect()
    };
    motif_table(panel, design, &pick(hmm), &pick(markov))
}

/// A maximal run of days spent in relapse states (0-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
    /// Decoded state on the first day of the run.
    pub state: usize,
}

/// Relapse episodes of every decoded path: maximal runs of consecutive days
/// whose state is in `relapse_states`.
pub fn relapse_segments(paths: &[Vec<usize>], relapse_states: &[usize]) -> Vec<Vec<Episode>> {
    paths
        .iter()
        .map(|path| {
            let mut out = Vec::new();
            let mut start: Option<usize> = None;
            for (t, s) in path.iter().enumerate() {
                let inside = relapse_states.contains(s);
                match (inside, start) {
                    (true, None) => start = Some(t),
                    (false, Some(a)) => {
                        out.push(Episode {
                            start: a,
                            end: t - 1,
                            state: path[a],
                        });
                        start = None;
                    }
                    _ => {}
                }
            }
            if let Some(a) = start {
                out.push(Episode {
                    start: a,
                    end: path.len() - 1,
                    state: path[a],
                });
            }
            out
        })
        .collect()
}
