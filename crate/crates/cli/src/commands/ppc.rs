use std::path::PathBuf;

use clap::Args;
use panelhmm::analytics::{posterior_predictive_check, select_draws, ReplicateMode};
use panelhmm::diagnostics::quantile;

use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::fitdir::{self, load_fit};
use crate::output::{prepare_dir, CsvWriter, Manifest, Num};

#[derive(Args)]
pub struct PpcArgs {
    /// Directory written by `panelhmm fit`.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// new-subjects draws fresh intercepts; same-subjects reuses the sampled
    /// ones [default: new-subjects].
    #[arg(long)]
    mode: Option<String>,
    /// Replicated panels, from evenly spaced stored draws [default: 1000].
    #[arg(long)]
    draws: Option<usize>,
    /// Seed for the replicates [default: the fit seed].
    #[arg(long)]
    seed: Option<u64>,
}

fn replicate_mode(name: &str) -> CliResult<ReplicateMode> {
    match name {
        "new-subjects" => Ok(ReplicateMode::NewSubjects),
        "same-subjects" => Ok(ReplicateMode::SameSubjects),
        other => Err(CliError::input(format!(
            "unknown --mode '{other}' (new-subjects or same-subjects)"
        ))),
    }
}

pub fn run(a: PpcArgs, mut r: Resolver) -> CliResult<()> {
    let fit_dir = r.path("fit", a.fit)?;
    let out = r.path("out", a.out)?;
    let mode = replicate_mode(&r.pick("mode", a.mode, "new-subjects".into())?)?;
    let draws = r.pick("draws", a.draws, 1000)?;
    if draws == 0 {
        return Err(CliError::input("--draws must be positive"));
    }
    prepare_dir(&out, "ppc")?;
    let fit = load_fit(&fit_dir)?;
    let seed = r.pick("seed", a.seed, fit.info.seed)?;
    let set = &fit.set;
    let results = posterior_predictive_check(set, &fit.inputs.design, &fit.inputs.panel, mode, Some(draws), seed)?;
    let picked = select_draws(set.n_draws(), Some(draws));

    let mut tidy = CsvWriter::create(&out.join("ppc_draws.csv"), &["statistic", "replicate", "draw", "value"])?;
    let mut summary = CsvWriter::create(
        &out.join("ppc_summary.csv"),
        &["statistic", "observed", "quantile", "replicate_mean", "q2.5", "q97.5", "replicates"],
    )?;
    for res in &results {
        for (j, (v, g)) in res.replicates.iter().zip(&picked).enumerate() {
            tidy.record(format_args!("{},{},{},{}", res.name, j + 1, g + 1, Num(*v)))?;
        }
        let valid: Vec<f64> = res.replicates.iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        };
        let (lo, hi) = if valid.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (quantile(&valid, 0.025), quantile(&valid, 0.975))
        };
        summary.record(format_args!(
            "{},{},{},{},{},{},{}",
            res.name,
            Num(res.observed),
            Num(res.quantile),
            Num(mean),
            Num(lo),
            Num(hi),
            valid.len()
        ))?;
    }
    let outputs = vec![tidy.finish()?, summary.finish()?];

    let mut manifest = Manifest::new("ppc");
    manifest.config(r.snapshot());
    for name in [fitdir::FIT_INFO, fitdir::SAMPLES, fitdir::DEVIANCE, fitdir::Y_FILE] {
        manifest.input(name, &fit.artifact(name))?;
    }
    if let Some(c) = r.config_source() {
        manifest.input("config", c)?;
    }
    manifest.seed("master", seed);
    manifest.seed(
        "expansion",
        "ChaCha8 substreams: (seed, 9, draw, 0) new intercepts; (seed, 9, draw, 1, subject) paths, where draw is the global stored-draw index",
    );
    manifest.write(&out, &outputs)?;

    let extreme = results
        .iter()
        .filter(|res| res.quantile < 0.025 || res.quantile > 0.975)
        .count();
    println!(
        "ppc: {} statistics over {} replicates, {extreme} outside the central 95%; wrote {}",
        results.len(),
        picked.len(),
        out.display()
    );
    Ok(())
}
