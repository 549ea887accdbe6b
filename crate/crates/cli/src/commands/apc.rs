use std::path::PathBuf;

use clap::Args;
use panelhmm::analytics::{
    posterior_mean_population_matrix, posterior_mean_transitions, stationary_difference_draws,
    transition_difference_draws,
};
use panelhmm::diagnostics::quantile;

use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::fitdir::{self, iteration_of, load_fit, subsample};
use crate::output::{prepare_dir, CsvWriter, Manifest, Num};

#[derive(Args)]
pub struct ApcArgs {
    /// Directory written by `panelhmm fit`.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Covariate to compare (repeatable or comma-separated) [default: every covariate].
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    /// Use about this many evenly spaced stored draws [default: all].
    #[arg(long)]
    draws: Option<usize>,
    /// Day (1-based) of the per-subject posterior-mean transition matrices
    /// [default: the middle day].
    #[arg(long)]
    day: Option<usize>,
}

fn summarize(values: &[f64]) -> (Num, Num, Num) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (Num(mean), Num(quantile(values, 0.025)), Num(quantile(values, 0.975)))
}

pub fn run(a: ApcArgs, mut r: Resolver) -> CliResult<()> {
    let fit_dir = r.path("fit", a.fit)?;
    let out = r.path("out", a.out)?;
    let draws = r.pick_opt("draws", a.draws)?;
    let day = r.pick_opt("day", a.day)?;
    let listed = r.pick_opt("covariate", (!a.covariates.is_empty()).then(|| a.covariates.join(",")))?;
    prepare_dir(&out, "apc")?;
    let fit = load_fit(&fit_dir)?;
    let design = &fit.inputs.design;
    let n_days = fit.info.n_days;
    let day = day.unwrap_or(n_days.div_ceil(2));
    if day == 0 || day > n_days {
        return Err(CliError::input(format!("--day must lie in 1..={n_days}")));
    }
    let names: Vec<String> = match &listed {
        Some(list) => list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        None => design.names().to_vec(),
    };
    if names.is_empty() {
        return Err(CliError::input("the fit has no covariates to compare"));
    }
    let (set, kept) = subsample(&fit.set, draws)?;
    let k = set.shape.n_states;

    let mut draws_csv = CsvWriter::create(
        &out.join("apc_draws.csv"),
        &["covariate", "chain", "iteration", "from", "to", "value"],
    )?;
    let mut summary = CsvWriter::create(
        &out.join("apc_summary.csv"),
        &["covariate", "u_hi", "u_lo", "from", "to", "mean", "q2.5", "q97.5"],
    )?;
    let mut st_draws = CsvWriter::create(
        &out.join("stationary_draws.csv"),
        &["covariate", "chain", "iteration", "state", "value"],
    )?;
    let mut st_summary = CsvWriter::create(
        &out.join("stationary_summary.csv"),
        &["covariate", "u_hi", "u_lo", "state", "mean", "q2.5", "q97.5"],
    )?;
    for name in &names {
        let cov = design
            .covariate_index(name)
            .ok_or_else(|| CliError::input(format!("unknown covariate '{name}' (have {})", design.names().join(", "))))?;
        let (hi, lo) = design.comparison_values(cov);
        let trans = transition_difference_draws(&set, design, cov, hi, lo)?;
        let stat = stationary_difference_draws(&set, design, cov, hi, lo)?;
        for ((c, g), (b, s)) in kept.iter().zip(trans.iter().zip(&stat)) {
            let it = iteration_of(&fit.info, *g);
            for (cell, v) in b.iter().enumerate() {
                draws_csv.record(format_args!("{name},{},{it},{},{},{}", c + 1, cell / k + 1, cell % k + 1, Num(*v)))?;
            }
            for (state, v) in s.iter().enumerate() {
                st_draws.record(format_args!("{name},{},{it},{},{}", c + 1, state + 1, Num(*v)))?;
            }
        }
        for cell in 0..k * k {
            let values: Vec<f64> = trans.iter().map(|b| b[cell]).collect();
            let (m, q1, q2) = summarize(&values);
            summary.record(format_args!(
                "{name},{hi},{lo},{},{},{m},{q1},{q2}",
                cell / k + 1,
                cell % k + 1
            ))?;
        }
        for state in 0..k {
            let values: Vec<f64> = stat.iter().map(|s| s[state]).collect();
            let (m, q1, q2) = summarize(&values);
            st_summary.record(format_args!("{name},{hi},{lo},{},{m},{q1},{q2}", state + 1))?;
        }
    }

    let mut subjects = CsvWriter::create(
        &out.join("subject_transitions.csv"),
        &["subject", "day", "from", "to", "probability"],
    )?;
    for i in 0..set.shape.n_subjects {
        let q = posterior_mean_transitions(&set, design, i, day - 1)?;
        for (cell, v) in q.iter().enumerate() {
            subjects.record(format_args!("{},{day},{},{},{}", i + 1, cell / k + 1, cell % k + 1, Num(*v)))?;
        }
    }
    let mut population = CsvWriter::create(&out.join("population_transitions.csv"), &["from", "to", "probability"])?;
    for (cell, v) in posterior_mean_population_matrix(&set)?.iter().enumerate() {
        population.record(format_args!("{},{},{}", cell / k + 1, cell % k + 1, Num(*v)))?;
    }
    let outputs = vec![
        draws_csv.finish()?,
        summary.finish()?,
        st_draws.finish()?,
        st_summary.finish()?,
        subjects.finish()?,
        population.finish()?,
    ];

    let mut manifest = Manifest::new("apc");
    manifest.config(r.snapshot());
    for file in [fitdir::FIT_INFO, fitdir::SAMPLES, fitdir::Y_FILE] {
        manifest.input(file, &fit.artifact(file))?;
    }
    if fit.info.has_x {
        manifest.input(fitdir::X_FILE, &fit.artifact(fitdir::X_FILE))?;
    }
    if let Some(c) = r.config_source() {
        manifest.input("config", c)?;
    }
    manifest.note("comparisons use the standardized scale: binary inputs at their two codes, others at mean +/- 1 sd");
    manifest.write(&out, &outputs)?;
    println!(
        "apc: {} covariates over {} draws; wrote {}",
        names.len(),
        kept.len(),
        out.display()
    );
    Ok(())
}
