//! Flat key-value parameter text.
//!
//! ```text
//! # panelhmm parameters v1
//! model = hmm
//! states = 3
//! levels = 3
//! covariates = 4
//! subjects = 240
//! alpha[1][1][2] = -3.2
//! ...
//! ```
//!
//! One line per scalar, indices 1-based, in the order: `alpha[i][r][s]`,
//! `beta[r][s][k]`, `mu[r][s]`, `sigma[r][s]`, `pi[s]` and, for the HMM,
//! `p[s][m]`. Target index `s` of the logit blocks starts at 2 because
//! state 1 is the baseline. Values are written in shortest round-trip form.

use std::fmt::Write as _;

use crate::model::{HmmParams, LogitTransitions, MarkovParams, ModelKind, Params};
use crate::{Error, Result};

pub const PARAMS_HEADER: &str = "# panelhmm parameters v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamShape {
    pub kind: ModelKind,
    pub n_states: usize,
    pub n_levels: usize,
    pub n_covariates: usize,
    pub n_subjects: usize,
}

impl ParamShape {
    pub fn of(params: &Params) -> Self {
        let t = params.transitions();
        Self {
            kind: params.kind(),
            n_states: t.n_states(),
            n_levels: params.n_levels(),
            n_covariates: t.n_covariates(),
            n_subjects: t.n_subjects(),
        }
    }

    pub fn zero_params(&self) -> Params {
        let trans = LogitTransitions::zeros(self.n_states, self.n_covariates, self.n_subjects);
        let initial = vec![0.0; self.n_states];
        match self.kind {
            ModelKind::Hmm => Params::Hmm(HmmParams::new_unchecked(
                trans,
                initial,
                vec![0.0; self.n_states * self.n_levels],
                self.n_levels,
            )),
            ModelKind::Markov => Params::Markov(MarkovParams {
                transitions: trans,
                initial,
            }),
        }
    }

    pub fn header(&self) -> String {
        format!(
            "model = {}\nstates = {}\nlevels = {}\ncovariates = {}\nsubjects = {}\n",
            self.kind.as_str(),
            self.n_states,
            self.n_levels,
            self.n_covariates,
            self.n_subjects
        )
    }
}

/// Scalar paths in file order for parameters of the given shape.
pub fn scalar_names(shape: &ParamShape) -> Vec<String> {
    let k = shape.n_states;
    let mut out = Vec::new();
    for i in 0..shape.n_subjects {
        for r in 0..k {
            for s in 1..k {
                out.push(format!("alpha[{}][{}][{}]", i + 1, r + 1, s + 1));
            }
        }
    }
    for r in 0..k {
        for s in 1..k {
            for c in 0..shape.n_covariates {
                out.push(format!("beta[{}][{}][{}]", r + 1, s + 1, c + 1));
            }
        }
    }
    for name in ["mu", "sigma"] {
        for r in 0..k {
            for s in 1..k {
                out.push(format!("{name}[{}][{}]", r + 1, s + 1));
            }
        }
    }
    for s in 0..k {
        out.push(format!("pi[{}]", s + 1));
    }
    if shape.kind == ModelKind::Hmm {
        for s in 0..k {
            for m in 0..shape.n_levels {
                out.push(format!("p[{}][{}]", s + 1, m + 1));
            }
        }
    }
    out
}

/// Scalars of `params` in the order of [`scalar_names`].
pub fn scalar_values(params: &Params) -> Vec<f64> {
    let t = params.transitions();
    let mut out = Vec::with_capacity(t.alpha.len() + t.beta.len() + 2 * t.mu.len() + 16);
    out.extend_from_slice(&t.alpha);
    out.extend_from_slice(&t.beta);
    out.extend_from_slice(&t.mu);
    out.extend_from_slice(&t.sigma);
    out.extend_from_slice(params.initial());
    if let Params::Hmm(h) = params {
        out.extend_from_slice(&h.emissions);
    }
    out
}

/// Inverse of [`scalar_values`]. The result is not validated.
pub fn params_from_values(shape: &ParamShape, values: &[f64]) -> Result<Params> {
    let mut params = shape.zero_params();
    let expected = scalar_values(&params).len();
    if values.len() != expected {
        return Err(Error::Dimension(format!(
            "{} scalars for a parameter set of {expected}",
            values.len()
        )));
    }
    let mut rest = values;
    let mut take = |dst: &mut [f64]| {
        let (head, tail) = rest.split_at(dst.len());
        dst.copy_from_slice(head);
        rest = tail;
    };
    let t = params.transitions_mut();
    take(&mut t.alpha);
    take(&mut t.beta);
    take(&mut t.mu);
    take(&mut t.sigma);
    take(params.initial_mut());
    if let Params::Hmm(h) = &mut params {
        take(&mut h.emissions);
    }
    Ok(params)
}

/// Every scalar of `params` with its path, in file order.
pub fn scalar_entries(params: &Params) -> Vec<(String, f64)> {
    scalar_names(&ParamShape::of(params))
        .into_iter()
        .zip(scalar_values(params))
        .collect()
}

pub fn write_params(params: &Params) -> String {
    let mut out = format!("{PARAMS_HEADER}\n{}", ParamShape::of(params).header());
    for (path, v) in scalar_entries(params) {
        writeln!(out, "{path} = {v}").unwrap();
    }
    out
}

/// Splits `name[a][b]` into the name and 1-based indices.
pub fn parse_path(path: &str) -> Option<(&str, Vec<usize>)> {
    let open = path.find('[').unwrap_or(path.len());
    let name = &path[..open];
    let mut idx = Vec::new();
    let mut rest = &path[open..];
    while !rest.is_empty() {
        let close = rest.find(']')?;
        if !rest.starts_with('[') {
            return None;
        }
        idx.push(rest[1..close].trim().parse().ok()?);
        rest = &rest[close + 1..];
    }
    Some((name, idx))
}

/// Incrementally fills a parameter set from `(path, value)` entries.
pub struct ParamBuilder {
    shape: ParamShape,
    params: Params,
    seen_alpha: usize,
}

impl ParamBuilder {
    pub fn new(shape: ParamShape) -> Self {
        Self {
            shape,
            params: shape.zero_params(),
            seen_alpha: 0,
        }
    }

    pub fn set(&mut self, path: &str, value: f64) -> Result<()> {
        let bad = || Error::InvalidInput(format!("unknown parameter path '{path}'"));
        let (name, idx) = parse_path(path).ok_or_else(bad)?;
        let sh = self.shape;
        let k = sh.n_states;
        let in_range = |v: usize, lo: usize, hi: usize| v >= lo && v <= hi;
        let state = |v: usize| in_range(v, 1, k);
        let target = |v: usize| in_range(v, 2, k);
        let trans = self.params.transitions_mut();
        match (name, idx.as_slice()) {
            ("alpha", &[i, r, s]) if in_range(i, 1, sh.n_subjects) && state(r) && target(s) => {
                let at = trans.alpha_index(i - 1, r - 1, s - 1);
                trans.alpha[at] = value;
                self.seen_alpha += 1;
            }
            ("beta", &[r, s, c]) if state(r) && target(s) && in_range(c, 1, sh.n_covariates) => {
                let at = trans.beta_index(r - 1, s - 1, c - 1);
                trans.beta[at] = value;
            }
            ("mu", &[r, s]) if state(r) && target(s) => {
                let at = trans.pair(r - 1, s - 1);
                trans.mu[at] = value;
            }
            ("sigma", &[r, s]) if state(r) && target(s) => {
                let at = trans.pair(r - 1, s - 1);
                trans.sigma[at] = value;
            }
            ("pi", &[s]) if state(s) => self.params.initial_mut()[s - 1] = value,
            ("p", &[s, m]) if state(s) && in_range(m, 1, sh.n_levels) => match &mut self.params {
                Params::Hmm(h) => h.emissions[(s - 1) * sh.n_levels + m - 1] = value,
                Params::Markov(_) => return Err(bad()),
            },
            _ => return Err(bad()),
        }
        Ok(())
    }

    /// True when every subject intercept was supplied.
    pub fn has_alpha(&self) -> bool {
        self.seen_alpha > 0 && self.seen_alpha >= self.params.transitions().alpha.len()
    }

    pub fn finish(self) -> Result<Params> {
        self.params.validate()?;
        Ok(self.params)
    }

    /// Finishes without validation (used for averaged draws before
    /// renormalization).
    pub fn finish_unchecked(self) -> Params {
        self.params
    }
}

/// Parsed parameter file; `has_alpha` is false when the file carries no
/// subject intercepts (they are then all zero).
pub struct ParsedParams {
    pub params: Params,
    pub has_alpha: bool,
}

pub fn parse_params(text: &str) -> Result<ParsedParams> {
    let mut header = std::collections::HashMap::new();
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.contains('[') {
            let v: f64 = value.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("'{value}' is not a number"),
            })?;
            entries.push((lineno + 1, key.to_string(), v));
        } else {
            header.insert(key.to_string(), (lineno + 1, value.to_string()));
        }
    }
    let get = |k: &str| -> Result<&str> {
        header
            .get(k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("parameter file lacks '{k}'")))
    };
    let count = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::InvalidInput(format!("'{k}' must be a count")))
    };
    let kind: ModelKind = get("model")?.parse()?;
    let n_states = count("states")?;
    let shape = ParamShape {
        kind,
        n_states,
        n_levels: if kind == ModelKind::Markov { n_states } else { count("levels")? },
        n_covariates: count("covariates")?,
        n_subjects: count("subjects")?,
    };
    if n_states < 1 {
        return Err(Error::InvalidInput("states must be at least 1".into()));
    }
    let mut builder = ParamBuilder::new(shape);
    for (line, key, v) in entries {
        builder.set(&key, v).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    }
    let has_alpha = builder.has_alpha();
    Ok(ParsedParams {
        params: builder.finish()?,
        has_alpha,
    })
}
