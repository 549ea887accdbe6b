#![allow(dead_code)]

use panelhmm::dataset::{DesignMatrix, ObservationPanel};
use panelhmm::model::{HmmParams, LogitTransitions, MarkovParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

pub fn random_transitions(rng: &mut ChaCha8Rng, k: usize, p: usize, n: usize) -> LogitTransitions {
    let mut t = LogitTransitions::zeros(k, p, n);
    for v in t.alpha.iter_mut().chain(&mut t.mu) {
        *v = rng.random_range(-2.0..2.0);
    }
    for v in &mut t.beta {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in &mut t.sigma {
        *v = rng.random_range(0.2..1.5);
    }
    t
}

pub fn random_design(rng: &mut ChaCha8Rng, n: usize, days: usize, p: usize) -> DesignMatrix {
    let values: Vec<f64> = (0..n * days * p).map(|_| rng.random_range(-0.5..0.5)).collect();
    DesignMatrix::from_fn(n, days, p, |i, t, c| values[(i * days + t) * p + c])
}

pub fn random_hmm(seed: u64, k: usize, m: usize, p: usize, n: usize) -> HmmParams {
    let mut r = rng(seed);
    let trans = random_transitions(&mut r, k, p, n);
    let initial = random_simplex(&mut r, k);
    let emissions: Vec<f64> = (0..k).flat_map(|_| random_simplex(&mut r, m)).collect();
    HmmParams::new(trans, initial, emissions, m).unwrap()
}

pub fn random_markov(seed: u64, k: usize, p: usize, n: usize) -> MarkovParams {
    let mut r = rng(seed);
    let trans = random_transitions(&mut r, k, p, n);
    let initial = random_simplex(&mut r, k);
    MarkovParams::new(trans, initial).unwrap()
}

pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, days: usize, m: usize, p_missing: f64) -> ObservationPanel {
    let cells: Vec<Option<usize>> = (0..n * days)
        .map(|_| (!rng.random_bool(p_missing)).then(|| rng.random_range(0..m)))
        .collect();
    ObservationPanel::new(n, days, m, &cells).unwrap()
}

/// Transition row computed straight from the definition, independent of the
/// library kernel.
pub fn naive_row(trans: &LogitTransitions, i: usize, r: usize, x: &[f64]) -> Vec<f64> {
    let k = trans.n_states();
    let mut w = vec![1.0];
    for s in 1..k {
        let mut eta = trans.alpha[trans.alpha_index(i, r, s)];
        for (c, xc) in x.iter().enumerate() {
            eta += trans.beta[trans.beta_index(r, s, c)] * xc;
        }
        w.push(eta.exp());
    }
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Every sequence in `{0..k}^len`.
pub fn all_paths(k: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

/// `p(H = path, Y_obs)` by direct multiplication.
pub fn naive_joint(
    params: &HmmParams,
    design: &DesignMatrix,
    i: usize,
    obs: &[Option<usize>],
    path: &[usize],
) -> f64 {
    let mut p = params.initial[path[0]];
    for t in 0..path.len() {
        if t > 0 {
            p *= naive_row(&params.transitions, i, path[t - 1], design.row(i, t - 1))[path[t]];
        }
        if let Some(y) = obs[t] {
            p *= params.emission_row(path[t])[y];
        }
    }
    p
}

/// `p(Y_obs)` for one subject by summing over all hidden paths.
pub fn naive_likelihood(params: &HmmParams, design: &DesignMatrix, i: usize, obs: &[Option<usize>]) -> f64 {
    all_paths(params.n_states(), obs.len())
        .iter()
        .map(|path| naive_joint(params, design, i, obs, path))
        .sum()
}

/// Markov chain probability of a complete level path.
pub fn naive_markov_path(params: &MarkovParams, design: &DesignMatrix, i: usize, path: &[usize]) -> f64 {
    let mut p = params.initial[path[0]];
    for t in 1..path.len() {
        p *= naive_row(&params.transitions, i, path[t - 1], design.row(i, t - 1))[path[t]];
    }
    p
}

/// Marginal probability of the observed cells of a Markov chain panel row,
/// summing over all completions of the missing cells.
pub fn naive_markov_likelihood(params: &MarkovParams, design: &DesignMatrix, i: usize, obs: &[Option<usize>]) -> f64 {
    let k = params.initial.len();
    all_paths(k, obs.len())
        .iter()
        .filter(|path| obs.iter().zip(path.iter()).all(|(o, h)| o.is_none_or(|y| y == *h)))
        .map(|path| naive_markov_path(params, design, i, path))
        .sum()
}

/// Emission rows used for synthetic three-state fixtures (abstinent,
/// moderate, heavy drinking states).
pub const SYNTHETIC_EMISSIONS: [f64; 9] = [0.997, 0.003, 0.0, 0.026, 0.956, 0.018, 0.031, 0.004, 0.965];

/// Two covariates: a ±0.5 group indicator and a centred time ramp with
/// standard deviation 1/2.
pub fn synthetic_design(n: usize, days: usize) -> DesignMatrix {
    let span = 3f64.sqrt();
    DesignMatrix::from_fn(n, days, 2, move |i, t, c| match c {
        0 => if i % 2 == 0 { 0.5 } else { -0.5 },
        _ => (t as f64 / (days.max(2) - 1) as f64 - 0.5) * span,
    })
}

/// Persistent three-state truth (diagonal ≈ 0.85 at the mean) with modest
/// covariate effects and σ = `sigma`; intercepts drawn from the population.
pub fn synthetic_truth(n: usize, sigma: f64, seed: u64) -> HmmParams {
    use panelhmm::model::{draw_intercepts, inverse_softmax};
    let mut trans = LogitTransitions::zeros(3, 2, n);
    for r in 0..3 {
        let row: Vec<f64> = (0..3).map(|s| if s == r { 0.85 } else { 0.075 }).collect();
        let logits = inverse_softmax(&row, 0.0);
        for s in 1..3 {
            let j = trans.pair(r, s);
            trans.mu[j] = logits[s - 1];
            trans.sigma[j] = sigma;
        }
    }
    let effects = [0.4, -0.2, -0.3, 0.1, 0.2, 0.0, -0.1, 0.3, 0.0, -0.2, 0.3, 0.1];
    trans.beta.copy_from_slice(&effects);
    let alpha = draw_intercepts(&trans, n, &mut rng(seed));
    let trans = trans.with_alpha(alpha, n).unwrap();
    HmmParams::new(trans, vec![0.5, 0.3, 0.2], SYNTHETIC_EMISSIONS.to_vec(), 3).unwrap()
}

/// Missing-at-random mask with the given rate.
pub fn mar_mask(n: usize, days: usize, rate: f64, seed: u64) -> Vec<bool> {
    let mut r = rng(seed);
    (0..n * days).map(|_| r.random_bool(rate)).collect()
}

/// One-sample Kolmogorov–Smirnov distance of `u` from Uniform(0, 1).
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut v = u.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Rows of Q^(2^60) by repeated squaring, then plain power steps.
pub fn power_iteration(q: &[f64], k: usize) -> Vec<f64> {
    let mut m = q.to_vec();
    for _ in 0..60 {
        m = (0..k * k)
            .map(|idx| (0..k).map(|j| m[(idx / k) * k + j] * m[j * k + idx % k]).sum())
            .collect();
        for row in m.chunks_mut(k) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    let mut pi = m[..k].to_vec();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    for _ in 0..1_000_000 {
        let next: Vec<f64> = (0..k).map(|s| (0..k).map(|r| pi[r] * q[r * k + s]).sum()).collect();
        let change = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if change < 1e-16 {
            break;
        }
    }
    pi
}

pub fn random_primitive(r: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut q = vec![0.0; k * k];
    for row in 0..k {
        for s in 0..k {
            let keep = s == row || s == (row + 1) % k || r.random_bool(0.6);
            q[row * k + s] = if keep { r.random_range(0.01f64..1.0) } else { 0.0 };
        }
        let total: f64 = q[row * k..(row + 1) * k].iter().sum();
        q[row * k..(row + 1) * k].iter_mut().for_each(|v| *v /= total);
    }
    q
}
