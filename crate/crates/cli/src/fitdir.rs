//! Layout of a fit directory and loading of its artifacts.
//!
//! ```text
//! fit.txt         key = value description of the run
//! y.csv, x.csv    the observations and covariates the chains were run on
//! samples.csv     chain,iteration,parameter,value
//! deviance.csv    chain,iteration,deviance
//! acceptance.csv  chain,parameter,accepted,proposed,rate,step
//! manifest.txt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use panelhmm::dataset::{DesignMatrix, ObservationPanel, RawCovariates};
use panelhmm::mcmc::{Chain, ChainSet};
use panelhmm::model::ModelKind;
use panelhmm::params_io::{scalar_names, ParamShape};

use crate::error::{in_file, CliError, CliResult};
use crate::output::{parse_field, read_csv, CsvWriter, Num, SCHEMA_VERSION};

pub const FIT_INFO: &str = "fit.txt";
pub const Y_FILE: &str = "y.csv";
pub const X_FILE: &str = "x.csv";
pub const SAMPLES: &str = "samples.csv";
pub const DEVIANCE: &str = "deviance.csv";
pub const ACCEPTANCE: &str = "acceptance.csv";
pub const SAMPLES_HEADER: [&str; 4] = ["chain", "iteration", "parameter", "value"];
pub const DEVIANCE_HEADER: [&str; 3] = ["chain", "iteration", "deviance"];
const STORED_MISSING: &str = "NA";

/// Observations and design as used by a fit.
pub struct Inputs {
    pub panel: ObservationPanel,
    pub raw: Option<RawCovariates>,
    pub design: DesignMatrix,
}

/// Reads `y` and optional `x`, checking they describe the same subjects.
pub fn load_inputs(y: &Path, x: Option<&Path>, missing_token: &str, n_levels: usize) -> CliResult<Inputs> {
    let panel = in_file(y, ObservationPanel::load(y, missing_token, n_levels))?;
    let (raw, design) = match x {
        Some(x) => {
            let raw = in_file(x, RawCovariates::load(x))?;
            if raw.n_subjects() != panel.n_subjects() {
                return Err(CliError::input(format!(
                    "{} has {} subjects but {} has {}",
                    x.display(),
                    raw.n_subjects(),
                    y.display(),
                    panel.n_subjects()
                )));
            }
            let design = in_file(x, DesignMatrix::from_covariates(&raw, panel.n_days()))?;
            (Some(raw), design)
        }
        None => (None, DesignMatrix::zeros(panel.n_subjects(), panel.n_days(), 0)),
    };
    Ok(Inputs { panel, raw, design })
}

/// Writes a panel with a schema line and a `day1..` header. The result is
/// readable by [`ObservationPanel::parse`].
pub fn write_panel(path: &Path, panel: &ObservationPanel) -> CliResult<PathBuf> {
    let mut text = format!("# schema-version: {SCHEMA_VERSION}\n");
    let header: Vec<String> = (1..=panel.n_days()).map(|t| format!("day{t}")).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    text.push_str(&panel.to_csv(STORED_MISSING));
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_covariates(path: &Path, raw: &RawCovariates) -> CliResult<PathBuf> {
    let text = format!("# schema-version: {SCHEMA_VERSION}\n{}", raw.to_csv());
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Contents of `fit.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInfo {
    pub shape: ParamShape,
    pub n_days: usize,
    pub covariates: Vec<String>,
    pub has_x: bool,
    pub chains: usize,
    pub burnin: usize,
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
}

impl FitInfo {
    pub fn to_text(&self) -> String {
        let mut s = format!("# panelhmm fit\nschema-version = {SCHEMA_VERSION}\n");
        s.push_str(&self.shape.header());
        let _ = write!(
            s,
            "days = {}\ncovariate-names = {}\nhas-x = {}\nchains = {}\nburnin = {}\nkeep = {}\nthin = {}\nseed = {}\n",
            self.n_days,
            self.covariates.join(","),
            self.has_x,
            self.chains,
            self.burnin,
            self.keep,
            self.thin,
            self.seed
        );
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("malformed line '{line}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| CliError::input(format!("missing key '{k}'")));
        let version: u32 = parse_field(get("schema-version")?, "schema-version")?;
        if version != SCHEMA_VERSION {
            return Err(CliError::input(format!(
                "schema-version mismatch: expected {SCHEMA_VERSION}, found {version}"
            )));
        }
        let num = |k: &str| -> CliResult<usize> { parse_field(get(k)?, k) };
        let kind: ModelKind = get("model")?.parse()?;
        let names = get("covariate-names")?;
        Ok(Self {
            shape: ParamShape {
                kind,
                n_states: num("states")?,
                n_levels: num("levels")?,
                n_covariates: num("covariates")?,
                n_subjects: num("subjects")?,
            },
            n_days: num("days")?,
            covariates: names.split(',').filter(|s| !s.is_empty()).map(String::from).collect(),
            has_x: parse_field(get("has-x")?, "has-x")?,
            chains: num("chains")?,
            burnin: num("burnin")?,
            keep: num("keep")?,
            thin: num("thin")?,
            seed: parse_field(get("seed")?, "seed")?,
        })
    }
}

/// Stored iteration number of kept draw `g` (1-based, counting burn-in).
pub fn iteration_of(info: &FitInfo, g: usize) -> usize {
    info.burnin + (g + 1) * info.thin
}

pub fn write_samples(dir: &Path, info: &FitInfo, set: &ChainSet) -> CliResult<Vec<PathBuf>> {
    let mut samples = CsvWriter::create(&dir.join(SAMPLES), &SAMPLES_HEADER)?;
    let mut deviance = CsvWriter::create(&dir.join(DEVIANCE), &DEVIANCE_HEADER)?;
    for chain in &set.chains {
        let c = chain.index + 1;
        for g in 0..chain.n_draws() {
            let it = iteration_of(info, g);
            for (name, v) in set.names.iter().zip(chain.draw_values(g)) {
                samples.record(format_args!("{c},{it},{name},{}", Num(*v)))?;
            }
            deviance.record(format_args!("{c},{it},{}", Num(chain.deviance[g])))?;
        }
    }
    let mut acceptance = CsvWriter::create(
        &dir.join(ACCEPTANCE),
        &["chain", "parameter", "accepted", "proposed", "rate", "step"],
    )?;
    let k = set.shape.n_states;
    let n_pairs = k * (k - 1);
    for chain in &set.chains {
        let c = chain.index + 1;
        let tallies = chain.acceptance_alpha.iter().zip(&chain.step_alpha);
        let beta = chain.acceptance_beta.iter().zip(&chain.step_beta);
        for (j, (tally, step)) in tallies.chain(beta).enumerate() {
            // Intercept proposals are tallied per (row, target) pair over all subjects.
            let name = if j < n_pairs {
                format!("alpha[*][{}][{}]", j / (k - 1) + 1, j % (k - 1) + 2)
            } else {
                set.names[set.shape.n_subjects * n_pairs + j - n_pairs].clone()
            };
            acceptance.record(format_args!(
                "{c},{name},{},{},{},{}",
                tally.accepted,
                tally.proposed,
                Num(tally.rate()),
                Num(*step)
            ))?;
        }
    }
    Ok(vec![samples.finish()?, deviance.finish()?, acceptance.finish()?])
}

/// A fit directory read back into memory.
pub struct LoadedFit {
    pub dir: PathBuf,
    pub info: FitInfo,
    pub inputs: Inputs,
    pub set: ChainSet,
}

impl LoadedFit {
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "missing fit artifact {}; run 'panelhmm fit' first",
            path.display()
        )))
    }
}

pub fn read_fit_info(dir: &Path) -> CliResult<FitInfo> {
    let path = dir.join(FIT_INFO);
    require(&path)?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    FitInfo::parse(&text).map_err(|e| match e {
        CliError::Input(m) => CliError::input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_fit(dir: &Path) -> CliResult<LoadedFit> {
    let info = read_fit_info(dir)?;
    for name in [Y_FILE, SAMPLES, DEVIANCE] {
        require(&dir.join(name))?;
    }
    let x = dir.join(X_FILE);
    if info.has_x {
        require(&x)?;
    }
    let inputs = load_inputs(
        &dir.join(Y_FILE),
        info.has_x.then_some(x.as_path()),
        STORED_MISSING,
        info.shape.n_levels,
    )?;
    let shape = info.shape;
    if inputs.panel.n_subjects() != shape.n_subjects
        || inputs.panel.n_days() != info.n_days
        || inputs.design.n_covariates() != shape.n_covariates
    {
        return Err(CliError::input(format!(
            "{}: stored data do not match {FIT_INFO}",
            dir.display()
        )));
    }

    let mut deviance: Vec<Vec<f64>> = vec![Vec::new(); info.chains];
    let dev_path = dir.join(DEVIANCE);
    read_csv(&dev_path, &DEVIANCE_HEADER, |_, f| {
        let c: usize = parse_field(f[0], "chain")?;
        let slot = deviance
            .get_mut(c.wrapping_sub(1))
            .ok_or_else(|| CliError::input(format!("chain {c} outside 1..={}", info.chains)))?;
        slot.push(parse_field(f[2], "deviance")?);
        Ok(())
    })?;

    let names = scalar_names(&shape);
    let n_scalars = names.len();
    let mut values: Vec<Vec<f64>> = deviance.iter().map(|d| Vec::with_capacity(d.len() * n_scalars)).collect();
    read_csv(&dir.join(SAMPLES), &SAMPLES_HEADER, |_, f| {
        let c: usize = parse_field(f[0], "chain")?;
        let slot = values
            .get_mut(c.wrapping_sub(1))
            .ok_or_else(|| CliError::input(format!("chain {c} outside 1..={}", info.chains)))?;
        let expected = &names[slot.len() % n_scalars];
        if f[2] != expected {
            return Err(CliError::input(format!("expected parameter '{expected}', found '{}'", f[2])));
        }
        let v: f64 = if f[3] == "NA" { f64::NAN } else { parse_field(f[3], "value")? };
        slot.push(v);
        Ok(())
    })?;

    let chains = values
        .into_iter()
        .zip(deviance)
        .enumerate()
        .map(|(c, (v, d))| {
            if v.len() != d.len() * n_scalars {
                return Err(CliError::input(format!(
                    "{}: chain {} has {} deviance rows but {} samples",
                    dir.display(),
                    c + 1,
                    d.len(),
                    v.len()
                )));
            }
            Ok(Chain::from_values(c, shape, v, d)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let set = ChainSet::from_chains(chains)?;
    Ok(LoadedFit {
        dir: dir.to_path_buf(),
        info,
        inputs,
        set,
    })
}

/// Evenly spaced subset of about `draws` stored draws, split equally over
/// chains. Returns the reduced set and the kept `(chain, draw)` positions.
pub fn subsample(set: &ChainSet, draws: Option<usize>) -> CliResult<(ChainSet, Vec<(usize, usize)>)> {
    let Some(total) = draws.filter(|&d| d < set.n_draws()) else {
        let all = set
            .chains
            .iter()
            .enumerate()
            .flat_map(|(c, ch)| (0..ch.n_draws()).map(move |g| (c, g)))
            .collect();
        return Ok((set.clone(), all));
    };
    let per_chain = total.div_ceil(set.n_chains()).max(1);
    let mut kept = Vec::new();
    let chains = set
        .chains
        .iter()
        .enumerate()
        .map(|(c, chain)| {
            let picks = panelhmm::analytics::select_draws(chain.n_draws(), Some(per_chain));
            let params: Vec<_> = picks.iter().map(|&g| chain.draw(g)).collect();
            let deviance = picks.iter().map(|&g| chain.deviance[g]).collect();
            kept.extend(picks.iter().map(|&g| (c, g)));
            Chain::from_draws(c, &params, deviance)
        })
        .collect::<panelhmm::Result<Vec<_>>>()?;
    Ok((ChainSet::from_chains(chains)?, kept))
}
