//! Hidden-state relabelling.

use crate::model::{LogitTransitions, Params};

fn mode(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (m, v)| if *v > row[best] { m } else { best })
}

fn mean_level(row: &[f64]) -> f64 {
    row.iter().enumerate().map(|(m, v)| m as f64 * v).sum()
}

/// True unless the emission modes are nondecreasing in the state index.
pub fn emission_order_violated(emissions: &[f64], n_levels: usize) -> bool {
    emissions
        .chunks(n_levels)
        .map(mode)
        .collect::<Vec<_>>()
        .windows(2)
        .any(|w| w[1] < w[0])
}

/// Permutation `perm` (new state `j` is old state `perm[j]`) ordering states
/// by emission mode, ties broken by mean level.
pub fn canonical_order(emissions: &[f64], n_levels: usize) -> Vec<usize> {
    let rows: Vec<&[f64]> = emissions.chunks(n_levels).collect();
    let mut perm: Vec<usize> = (0..rows.len()).collect();
    perm.sort_by(|a, b| {
        mode(rows[*a])
            .cmp(&mode(rows[*b]))
            .then(mean_level(rows[*a]).total_cmp(&mean_level(rows[*b])))
    });
    perm
}

/// Relabels hidden states: new state `j` is old state `perm[j]`.
///
/// Transition probabilities are preserved exactly: intercepts, coefficients
/// and their means are re-expressed against the new baseline state. The
/// random-effect scales are exact when the baseline keeps its label; when it
/// moves, a new logit is a difference of two old ones and its scale is taken
/// as `sqrt(σ_a² + σ_b²)`, which is only the scale of that difference.
/// For the Markov model states are observed levels and only the HMM should
/// be relabelled.
pub fn permute_states(params: &Params, perm: &[usize]) -> Params {
    let old = params.transitions();
    let k = old.n_states();
    assert_eq!(perm.len(), k, "permutation length");
    let (p, n) = (old.n_covariates(), old.n_subjects());
    let base = perm[0];
    let mut t = LogitTransitions::zeros(k, p, n);
    // Old logit of target `s` from row `r`, baseline 0.
    let logit = |v: &[f64], idx: &dyn Fn(usize) -> usize, s: usize| if s == 0 { 0.0 } else { v[idx(s)] };
    for r_new in 0..k {
        let r = perm[r_new];
        for s_new in 1..k {
            let s = perm[s_new];
            let j_new = t.pair(r_new, s_new);
            for i in 0..n {
                let idx = |x: usize| old.alpha_index(i, r, x);
                let at = t.alpha_index(i, r_new, s_new);
                t.alpha[at] = logit(&old.alpha, &idx, s) - logit(&old.alpha, &idx, base);
            }
            for c in 0..p {
                let idx = |x: usize| old.beta_index(r, x, c);
                let at = t.beta_index(r_new, s_new, c);
                t.beta[at] = logit(&old.beta, &idx, s) - logit(&old.beta, &idx, base);
            }
            let idx = |x: usize| old.pair(r, x);
            t.mu[j_new] = logit(&old.mu, &idx, s) - logit(&old.mu, &idx, base);
            let var = |x: usize| if x == 0 { 0.0 } else { old.sigma[old.pair(r, x)].powi(2) };
            t.sigma[j_new] = (var(s) + var(base)).sqrt();
        }
    }
    let initial: Vec<f64> = perm.iter().map(|o| params.initial()[*o]).collect();
    match params {
        Params::Hmm(h) => {
            let m = h.n_levels();
            let emissions = perm.iter().flat_map(|o| h.emission_row(*o).to_vec()).collect();
            let mut out = h.clone();
            out.transitions = t;
            out.initial = initial;
            out.emissions = emissions;
            debug_assert_eq!(out.n_levels(), m);
            Params::Hmm(out)
        }
        Params::Markov(mk) => {
            let mut out = mk.clone();
            out.transitions = t;
            out.initial = initial;
            Params::Markov(out)
        }
    }
}
