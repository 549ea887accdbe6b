//! Observation panels, raw covariates and the standardized design matrix.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const DEFAULT_LEVELS: usize = 3;
pub const DEFAULT_MISSING_TOKEN: &str = "NA";

/// N×T grid of ordinal levels with a separate missingness mask.
///
/// Levels are stored 0-based (`0..n_levels`); the file format uses `1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    n_subjects: usize,
    n_days: usize,
    n_levels: usize,
    codes: Vec<u8>,
    missing: Vec<bool>,
}

/// Level and missing-cell counts reported after a load.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelCounts {
    pub per_level: Vec<usize>,
    pub missing: usize,
}

impl ObservationPanel {
    /// Builds a panel from row-major cells holding 0-based levels.
    pub fn new(
        n_subjects: usize,
        n_days: usize,
        n_levels: usize,
        cells: &[Option<usize>],
    ) -> Result<Self> {
        if cells.len() != n_subjects * n_days {
            return Err(Error::Dimension(format!(
                "{} cells for a {n_subjects}x{n_days} panel",
                cells.len()
            )));
        }
        if n_levels == 0 || n_levels > u8::MAX as usize {
            return Err(Error::InvalidInput(format!("unsupported level count {n_levels}")));
        }
        let mut codes = Vec::with_capacity(cells.len());
        let mut missing = Vec::with_capacity(cells.len());
        for (idx, cell) in cells.iter().enumerate() {
            match *cell {
                Some(level) if level < n_levels => {
                    codes.push(level as u8);
                    missing.push(false);
                }
                Some(level) => {
                    return Err(Error::InvalidInput(format!(
                        "level {} at subject {}, day {} outside 1..={n_levels}",
                        level + 1,
                        idx / n_days.max(1) + 1,
                        idx % n_days.max(1) + 1
                    )))
                }
                None => {
                    codes.push(0);
                    missing.push(true);
                }
            }
        }
        Ok(Self {
            n_subjects,
            n_days,
            n_levels,
            codes,
            missing,
        })
    }

    pub fn from_rows(rows: &[Vec<Option<usize>>], n_levels: usize) -> Result<Self> {
        let n_days = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_days) {
            return Err(Error::Dimension(format!(
                "row {} has {} cells, expected {n_days}",
                bad + 1,
                rows[bad].len()
            )));
        }
        let cells: Vec<Option<usize>> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), n_days, n_levels, &cells)
    }

    pub fn all_missing(n_subjects: usize, n_days: usize, n_levels: usize) -> Self {
        Self {
            n_subjects,
            n_days,
            n_levels,
            codes: vec![0; n_subjects * n_days],
            missing: vec![true; n_subjects * n_days],
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn get(&self, subject: usize, day: usize) -> Option<usize> {
        let idx = subject * self.n_days + day;
        (!self.missing[idx]).then(|| self.codes[idx] as usize)
    }

    pub fn is_missing(&self, subject: usize, day: usize) -> bool {
        self.missing[subject * self.n_days + day]
    }

    /// Row-major missingness mask (`true` = missing).
    pub fn mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn subject(&self, subject: usize) -> Vec<Option<usize>> {
        (0..self.n_days).map(|t| self.get(subject, t)).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.missing.iter().filter(|m| !**m).count()
    }

    pub fn counts(&self) -> PanelCounts {
        let mut per_level = vec![0; self.n_levels];
        let mut missing = 0;
        for (code, miss) in self.codes.iter().zip(&self.missing) {
            if *miss {
                missing += 1;
            } else {
                per_level[*code as usize] += 1;
            }
        }
        PanelCounts { per_level, missing }
    }

    /// Copy of the panel with extra cells blanked out; `mask` is row-major.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.missing.len() {
            return Err(Error::Dimension(format!(
                "mask has {} cells, panel has {}",
                mask.len(),
                self.missing.len()
            )));
        }
        let mut out = self.clone();
        for (m, extra) in out.missing.iter_mut().zip(mask) {
            *m |= *extra;
        }
        Ok(out)
    }

    /// Parses delimited text: one row per subject, one column per day.
    ///
    /// Cells are integer codes `1..=n_levels`, the missing token (matched
    /// case-insensitively) or empty. A leading row with no integer cells is
    /// treated as a header and skipped.
    pub fn parse(text: &str, missing_token: &str, n_levels: usize) -> Result<Self> {
        let mut rows: Vec<Vec<Option<usize>>> = Vec::new();
        let mut width = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = split_fields(line);
            if rows.is_empty() && width.is_none() && is_header(&fields, missing_token) {
                width = Some(fields.len());
                continue;
            }
            let mut row = Vec::with_capacity(fields.len());
            for (col, raw) in fields.iter().enumerate() {
                row.push(parse_code(raw, missing_token, n_levels).map_err(|message| {
                    Error::Parse {
                        line: lineno + 1,
                        message: format!("column {}: {message}", col + 1),
                    }
                })?);
            }
            match width {
                Some(w) if w != row.len() => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("ragged row: {} cells, expected {w}", row.len()),
                    })
                }
                _ => width = Some(row.len()),
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("observation file has no data rows".into()));
        }
        Self::from_rows(&rows, n_levels)
    }

    pub fn load(path: impl AsRef<Path>, missing_token: &str, n_levels: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, missing_token, n_levels)
    }

    pub fn to_csv(&self, missing_token: &str) -> String {
        let mut out = String::new();
        for i in 0..self.n_subjects {
            for t in 0..self.n_days {
                if t > 0 {
                    out.push(',');
                }
                match self.get(i, t) {
                    Some(level) => write!(out, "{}", level + 1).unwrap(),
                    None => out.push_str(missing_token),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, missing_token: &str) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(missing_token)).map_err(|e| Error::io(path, e))
    }
}

/// Shorthand for [`ObservationPanel::load`] with the default three levels.
pub fn load_observations(path: impl AsRef<Path>, missing_token: &str) -> Result<ObservationPanel> {
    ObservationPanel::load(path, missing_token, DEFAULT_LEVELS)
}

fn split_fields(line: &str) -> Vec<&str> {
    let delim = if line.contains(',') {
        ','
    } else if line.contains('\t') {
        '\t'
    } else {
        ' '
    };
    if delim == ' ' {
        line.split_whitespace().collect()
    } else {
        line.split(delim).map(|f| f.trim().trim_matches('"')).collect()
    }
}

fn is_missing_token(raw: &str, token: &str) -> bool {
    raw.is_empty() || raw.eq_ignore_ascii_case(token)
}

fn is_header(fields: &[&str], missing_token: &str) -> bool {
    fields
        .iter()
        .all(|f| !is_missing_token(f, missing_token) && f.parse::<i64>().is_err())
}

fn parse_code(
    raw: &str,
    missing_token: &str,
    n_levels: usize,
) -> std::result::Result<Option<usize>, String> {
    if is_missing_token(raw, missing_token) {
        return Ok(None);
    }
    let code: i64 = raw
        .parse()
        .map_err(|_| format!("'{raw}' is neither a level code nor the missing token"))?;
    if code < 1 || code as usize > n_levels {
        return Err(format!("code {code} outside 1..={n_levels}"));
    }
    Ok(Some(code as usize - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sex {
    Male,
    Female,
}

/// Ordinal drinking level (1 = none, 2 = light, 3 = heavy) for a raw count of
/// standard drinks. Heavy starts at 4 drinks for women and 5 for men.
pub fn encode_drinks(raw_count: u32, sex: Sex) -> u8 {
    let heavy_threshold = match sex {
        Sex::Female => 4,
        Sex::Male => 5,
    };
    match raw_count {
        0 => 1,
        c if c >= heavy_threshold => 3,
        _ => 2,
    }
}

/// Previous-drinking index: moderate-day proportion plus twice the
/// heavy-day proportion, i.e. `d_drink + d_heavy`, in `[0, 2]`.
pub fn prior_drinking_index(d_drink: f64, d_heavy: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d_drink) || !(0.0..=1.0).contains(&d_heavy) || d_heavy > d_drink {
        return Err(Error::InvalidInput(format!(
            "need 0 <= d_heavy <= d_drink <= 1, got d_drink={d_drink}, d_heavy={d_heavy}"
        )));
    }
    let moderate = d_drink - d_heavy;
    Ok(moderate + 2.0 * d_heavy)
}

/// Affine map taking a raw covariate to mean 0 and standard deviation 1/2.
///
/// `scale` is twice the population standard deviation (divisor n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
    /// Raw values were all 0 or 1.
    pub binary: bool,
}

impl Standardization {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.scale
    }

    pub fn invert(&self, standardized: f64) -> f64 {
        standardized * self.scale + self.mean
    }
}

pub fn standardize(raw: &[f64]) -> Result<(Vec<f64>, Standardization)> {
    if raw.len() < 2 {
        return Err(Error::DegenerateCovariate(format!(
            "{} value(s); need at least two distinct values",
            raw.len()
        )));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateCovariate("standard deviation is zero".into()));
    }
    let record = Standardization {
        mean,
        scale: 2.0 * sd,
        binary: raw.iter().all(|&x| x == 0.0 || x == 1.0),
    };
    Ok((raw.iter().map(|&x| record.apply(x)).collect(), record))
}

/// Per-subject covariates as read from `x.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCovariates {
    /// 1 = active treatment, 0 = placebo.
    pub treatment: Vec<f64>,
    /// 1 = female, 0 = male.
    pub sex: Vec<f64>,
    pub d_drink: Vec<f64>,
    pub d_heavy: Vec<f64>,
}

impl RawCovariates {
    pub fn n_subjects(&self) -> usize {
        self.treatment.len()
    }

    /// Parses a headed delimited table with columns `sex`, `treatment`,
    /// `d_drink` and `d_heavy` in any order. Sex accepts 0/1 or
    /// male/female (m/f).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("covariate file is empty".into()))?;
        let names: Vec<String> = split_fields(header.trim_end_matches('\r'))
            .iter()
            .map(|s| s.to_ascii_lowercase())
            .collect();
        let column = |name: &str| {
            names.iter().position(|n| n == name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column '{name}'"),
            })
        };
        let (c_sex, c_trt, c_drink, c_heavy) = (
            column("sex")?,
            column("treatment")?,
            column("d_drink")?,
            column("d_heavy")?,
        );
        let mut out = RawCovariates {
            treatment: Vec::new(),
            sex: Vec::new(),
            d_drink: Vec::new(),
            d_heavy: Vec::new(),
        };
        for (lineno, line) in lines {
            let fields = split_fields(line.trim_end_matches('\r'));
            let line = lineno + 1;
            if fields.len() != names.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("{} fields, header has {}", fields.len(), names.len()),
                });
            }
            let num = |col: usize| -> Result<f64> {
                fields[col].parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("'{}' in column '{}' is not a number", fields[col], names[col]),
                })
            };
            let sex = match fields[c_sex].to_ascii_lowercase().as_str() {
                "f" | "female" => 1.0,
                "m" | "male" => 0.0,
                _ => num(c_sex)?,
            };
            let treatment = num(c_trt)?;
            for (v, col) in [(sex, c_sex), (treatment, c_trt)] {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Parse {
                        line,
                        message: format!("column '{}' must be binary, got {v}", names[col]),
                    });
                }
            }
            let (d_drink, d_heavy) = (num(c_drink)?, num(c_heavy)?);
            prior_drinking_index(d_drink, d_heavy).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            out.sex.push(sex);
            out.treatment.push(treatment);
            out.d_drink.push(d_drink);
            out.d_heavy.push(d_heavy);
        }
        if out.treatment.is_empty() {
            return Err(Error::InvalidInput("covariate file has no data rows".into()));
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sex,treatment,d_drink,d_heavy\n");
        for i in 0..self.n_subjects() {
            writeln!(
                out,
                "{},{},{},{}",
                self.sex[i], self.treatment[i], self.d_drink[i], self.d_heavy[i]
            )
            .unwrap();
        }
        out
    }
}

pub const COVARIATE_NAMES: [&str; 4] = ["treatment", "sex", "prior_drinking", "time"];

/// Standardized covariates for every (subject, day), stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_subjects: usize,
    n_days: usize,
    names: Vec<String>,
    values: Vec<f64>,
    standardization: Vec<Standardization>,
}

impl DesignMatrix {
    /// Standard design in the order treatment, sex, prior_drinking, time.
    ///
    /// Subject-level covariates are standardized over subjects; time is the
    /// day index `1..=n_days` standardized over all subject-days.
    pub fn from_covariates(raw: &RawCovariates, n_days: usize) -> Result<Self> {
        let n = raw.n_subjects();
        let prior: Vec<f64> = raw
            .d_drink
            .iter()
            .zip(&raw.d_heavy)
            .map(|(&d, &h)| prior_drinking_index(d, h))
            .collect::<Result<_>>()?;
        let named = |name: &str, res: Result<(Vec<f64>, Standardization)>| {
            res.map_err(|e| Error::DegenerateCovariate(format!("{name}: {e}")))
        };
        let (trt, s_trt) = named("treatment", standardize(&raw.treatment))?;
        let (sex, s_sex) = named("sex", standardize(&raw.sex))?;
        let (pri, s_pri) = named("prior_drinking", standardize(&prior))?;
        // Every subject shares days 1..=T, so the subject-day population has
        // the same moments as the day sequence itself.
        let days: Vec<f64> = (1..=n_days).map(|d| d as f64).collect();
        let (time, s_time) = named("time", standardize(&days))?;
        let mut values = Vec::with_capacity(n * n_days * 4);
        for i in 0..n {
            for &tv in &time {
                values.extend_from_slice(&[trt[i], sex[i], pri[i], tv]);
            }
        }
        Ok(Self {
            n_subjects: n,
            n_days,
            names: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            values,
            standardization: vec![s_trt, s_sex, s_pri, s_time],
        })
    }

    /// All-zero design with `n_covariates` columns named `x1..`.
    pub fn zeros(n_subjects: usize, n_days: usize, n_covariates: usize) -> Self {
        Self::from_fn(n_subjects, n_days, n_covariates, |_, _, _| 0.0)
    }

    /// Design filled from `f(subject, day, covariate)`, taken as already
    /// standardized (identity standardization records).
    pub fn from_fn(
        n_subjects: usize,
        n_days: usize,
        n_covariates: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n_subjects * n_days * n_covariates);
        for i in 0..n_subjects {
            for t in 0..n_days {
                for k in 0..n_covariates {
                    values.push(f(i, t, k));
                }
            }
        }
        Self {
            n_subjects,
            n_days,
            names: (1..=n_covariates).map(|k| format!("x{k}")).collect(),
            values,
            standardization: vec![
                Standardization {
                    mean: 0.0,
                    scale: 1.0,
                    binary: false
                };
                n_covariates
            ],
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn standardization(&self) -> &[Standardization] {
        &self.standardization
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    /// Unchecked view of `X_it`.
    #[inline]
    pub fn row(&self, subject: usize, day: usize) -> &[f64] {
        let p = self.names.len();
        let start = (subject * self.n_days + day) * p;
        &self.values[start..start + p]
    }

    pub fn design_vector(&self, subject: usize, day: usize) -> Result<Vec<f64>> {
        if subject >= self.n_subjects || day >= self.n_days {
            return Err(Error::Dimension(format!(
                "(subject {subject}, day {day}) outside {}x{} design",
                self.n_subjects, self.n_days
            )));
        }
        Ok(self.row(subject, day).to_vec())
    }

    /// Default high/low comparison values on the standardized scale: the two
    /// codes of a binary input, otherwise mean ± 1 sd (i.e. ±1/2).
    pub fn comparison_values(&self, covariate: usize) -> (f64, f64) {
        let s = &self.standardization[covariate];
        if s.binary {
            (s.apply(1.0), s.apply(0.0))
        } else {
            (0.5, -0.5)
        }
    }

    /// The design restricted to the first `n_subjects` subjects.
    pub fn truncated(&self, n_subjects: usize) -> Result<Self> {
        if n_subjects > self.n_subjects {
            return Err(Error::Dimension(format!(
                "cannot take {n_subjects} subjects from a design with {}",
                self.n_subjects
            )));
        }
        let mut out = self.clone();
        out.n_subjects = n_subjects;
        out.values.truncate(n_subjects * self.n_days * self.names.len());
        Ok(out)
    }
}
