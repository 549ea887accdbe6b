use std::path::PathBuf;

use clap::Args;
use panelhmm::dataset::{DesignMatrix, ObservationPanel, RawCovariates};
use panelhmm::model::{draw_intercepts, simulate_hmm, simulate_markov, Params};
use panelhmm::params_io::{parse_params, write_params};
use panelhmm::rng::{substream, STREAM_SIMULATE};
use rand::Rng;

use crate::config::Resolver;
use crate::error::{in_file, CliError, CliResult};
use crate::fitdir;
use crate::output::{prepare_dir, CsvWriter, Manifest};

/// Stream paths under the simulation tag that no subject index reaches.
const ALPHA_PATH: u64 = u64::MAX - 1;
const MASK_PATH: u64 = u64::MAX;

#[derive(Args)]
pub struct SimulateArgs {
    /// Parameter file. Intercepts missing from it are drawn from N(mu, sigma^2).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Subject covariates; required when the parameters have covariate effects.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Number of subjects, when neither the parameters nor --x fix it.
    #[arg(long)]
    subjects: Option<usize>,
    /// Days per subject.
    #[arg(long)]
    days: Option<usize>,
    /// Probability that a day is missing, independently per cell [default: 0].
    #[arg(long)]
    missing_rate: Option<f64>,
    /// Observation file whose missing cells are copied to the output.
    #[arg(long)]
    mask_from: Option<PathBuf>,
    /// Missing token of --mask-from [default: NA].
    #[arg(long)]
    missing_token: Option<String>,
    /// Master seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: SimulateArgs, mut r: Resolver) -> CliResult<()> {
    let params_path = r.path("params", a.params)?;
    let x = r.path_opt("x", a.x)?;
    let subjects = r.pick_opt("subjects", a.subjects)?;
    let days: usize = r.require("days", a.days)?;
    let rate = r.pick("missing-rate", a.missing_rate, 0.0)?;
    let mask_from = r.path_opt("mask-from", a.mask_from)?;
    let token = r.pick("missing-token", a.missing_token, "NA".into())?;
    let seed = r.pick("seed", a.seed, 1u64)?;
    let out = r.path("out", a.out)?;
    if days == 0 {
        return Err(CliError::input("--days must be positive"));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(CliError::input("--missing-rate must lie in [0, 1)"));
    }
    if rate > 0.0 && mask_from.is_some() {
        return Err(CliError::input("--missing-rate and --mask-from are exclusive"));
    }
    prepare_dir(&out, "simulate")?;

    let text = std::fs::read_to_string(&params_path).map_err(|e| CliError::io(&params_path, e))?;
    let parsed = in_file(&params_path, parse_params(&text))?;
    let mut params = parsed.params;
    let raw = x.as_deref().map(|p| in_file(p, RawCovariates::load(p))).transpose()?;

    let fixed = [
        parsed.has_alpha.then(|| params.transitions().n_subjects()),
        raw.as_ref().map(RawCovariates::n_subjects),
        subjects,
    ];
    let mut n = None;
    for v in fixed.into_iter().flatten() {
        match n {
            Some(m) if m != v => {
                return Err(CliError::input(format!(
                    "inconsistent subject counts ({m} vs {v}) among the parameters, --x and --subjects"
                )))
            }
            _ => n = Some(v),
        }
    }
    let n = n.ok_or_else(|| CliError::input("the subject count is unknown; pass --subjects"))?;

    let n_cov = params.transitions().n_covariates();
    let design = match &raw {
        Some(raw) => in_file(x.as_deref().unwrap(), DesignMatrix::from_covariates(raw, days))?,
        None if n_cov == 0 => DesignMatrix::zeros(n, days, 0),
        None => {
            return Err(CliError::input(format!(
                "the parameters have {n_cov} covariate effects; pass --x"
            )))
        }
    };
    if design.n_covariates() != n_cov {
        return Err(CliError::input(format!(
            "the parameters have {n_cov} covariate effects but the design has {}",
            design.n_covariates()
        )));
    }
    if !parsed.has_alpha {
        let trans = params.transitions();
        let alpha = draw_intercepts(trans, n, &mut substream(seed, &[STREAM_SIMULATE, ALPHA_PATH]));
        *params.transitions_mut() = trans.with_alpha(alpha, n)?;
    }

    let mask: Option<Vec<bool>> = match &mask_from {
        Some(path) => {
            let source = in_file(path, ObservationPanel::load(path, &token, params.n_levels()))?;
            if source.n_subjects() != n || source.n_days() != days {
                return Err(CliError::input(format!(
                    "{} is {}x{}, expected {n}x{days}",
                    path.display(),
                    source.n_subjects(),
                    source.n_days()
                )));
            }
            Some(source.mask().to_vec())
        }
        None if rate > 0.0 => {
            let mut rng = substream(seed, &[STREAM_SIMULATE, MASK_PATH]);
            Some((0..n * days).map(|_| rng.random_bool(rate)).collect())
        }
        None => None,
    };

    let sim = match &params {
        Params::Hmm(p) => simulate_hmm(p, &design, n, days, mask.as_deref(), seed)?,
        Params::Markov(p) => simulate_markov(p, &design, n, days, mask.as_deref(), seed)?,
    };

    let mut outputs = vec![fitdir::write_panel(&out.join("y.csv"), &sim.observed)?];
    let day_header: Vec<String> = (1..=days).map(|t| format!("day{t}")).collect();
    let day_header: Vec<&str> = day_header.iter().map(String::as_str).collect();
    let mut complete = CsvWriter::create(&out.join("complete.csv"), &day_header)?;
    for row in sim.complete.chunks(days) {
        let cells: Vec<String> = row.iter().map(|v| (v + 1).to_string()).collect();
        complete.record(format_args!("{}", cells.join(",")))?;
    }
    outputs.push(complete.finish()?);
    if let Some(hidden) = &sim.hidden {
        let mut w = CsvWriter::create(&out.join("hidden.csv"), &day_header)?;
        for row in hidden.chunks(days) {
            let cells: Vec<String> = row.iter().map(|v| (v + 1).to_string()).collect();
            w.record(format_args!("{}", cells.join(",")))?;
        }
        outputs.push(w.finish()?);
    }
    let params_out = out.join("params.txt");
    std::fs::write(&params_out, write_params(&params)).map_err(|e| CliError::io(&params_out, e))?;
    outputs.push(params_out);
    if let Some(raw) = &raw {
        outputs.push(fitdir::write_covariates(&out.join("x.csv"), raw)?);
    }

    let mut manifest = Manifest::new("simulate");
    manifest.config(r.snapshot());
    manifest.input("params", &params_path)?;
    if let Some(x) = &x {
        manifest.input("x", x)?;
    }
    if let Some(m) = &mask_from {
        manifest.input("mask-from", m)?;
    }
    if let Some(c) = r.config_source() {
        manifest.input("config", c)?;
    }
    manifest.seed("master", seed);
    manifest.seed(
        "expansion",
        "ChaCha8 substreams: (seed, 8, subject) per subject path; (seed, 8, 2^64-2) intercepts; (seed, 8, 2^64-1) missingness",
    );
    manifest.write(&out, &outputs)?;
    let counts = sim.observed.counts();
    println!(
        "simulated {} subjects x {days} days ({} missing cells); wrote {}",
        n,
        counts.missing,
        out.display()
    );
    Ok(())
}
