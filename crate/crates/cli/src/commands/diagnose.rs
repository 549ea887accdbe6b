use std::path::PathBuf;

use clap::Args;
use panelhmm::diagnostics::{dic, dic_blocks, mean_transition_traces, posterior_mean, summarize, summarize_traces, DicReport, MeanSpace};
use panelhmm::params_io::write_params;

use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::fitdir::{self, load_fit};
use crate::output::{opt_num, prepare_dir, CsvWriter, Manifest, Num};

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Directory written by `panelhmm fit`.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Averaging space for probability vectors in the posterior mean:
    /// probability or logit [default: probability].
    #[arg(long)]
    space: Option<String>,
    /// Also report DIC on consecutive blocks of this many draws per chain.
    #[arg(long)]
    block: Option<usize>,
}

pub fn mean_space(name: &str) -> CliResult<MeanSpace> {
    match name {
        "probability" => Ok(MeanSpace::Probability),
        "logit" => Ok(MeanSpace::Logit),
        other => Err(CliError::input(format!("unknown --space '{other}' (probability or logit)"))),
    }
}

pub const SUMMARY_HEADER: [&str; 8] = ["parameter", "mean", "sd", "q2.5", "q50", "q97.5", "rhat", "ess"];

pub fn run(a: DiagnoseArgs, mut r: Resolver) -> CliResult<()> {
    let fit_dir = r.path("fit", a.fit)?;
    let out = r.path("out", a.out)?;
    let space = mean_space(&r.pick("space", a.space, "probability".into())?)?;
    let block = r.pick_opt("block", a.block)?;
    prepare_dir(&out, "diagnose")?;
    let fit = load_fit(&fit_dir)?;
    let (set, panel, design) = (&fit.set, &fit.inputs.panel, &fit.inputs.design);

    let mut rows = summarize(set);
    rows.extend(
        mean_transition_traces(set)
            .iter()
            .map(|(name, chains)| summarize_traces(name, chains)),
    );
    let mut summary = CsvWriter::create(&out.join("summary.csv"), &SUMMARY_HEADER)?;
    for s in &rows {
        summary.record(format_args!(
            "{},{},{},{},{},{},{},{}",
            s.name,
            Num(s.mean),
            Num(s.sd),
            Num(s.q025),
            Num(s.q500),
            Num(s.q975),
            opt_num(s.rhat),
            opt_num(s.ess)
        ))?;
    }

    let overall = dic(set, panel, design, space)?;
    let blocks = match block {
        Some(b) => dic_blocks(set, panel, design, b, space)?,
        None => Vec::new(),
    };
    let mut dic_csv = CsvWriter::create(
        &out.join("dic.csv"),
        &["block", "mean_deviance", "deviance_at_mean", "p_d", "dic"],
    )?;
    let mut dic_row = |label: String, d: &DicReport| {
        dic_csv.record(format_args!(
            "{label},{},{},{},{}",
            Num(d.mean_deviance),
            Num(d.deviance_at_mean),
            Num(d.p_d),
            Num(d.dic)
        ))
    };
    dic_row("all".into(), &overall)?;
    for (b, d) in blocks.iter().enumerate() {
        dic_row((b + 1).to_string(), d)?;
    }

    let mean_path = out.join("posterior_mean.txt");
    let mean = posterior_mean(set, space)?;
    std::fs::write(&mean_path, write_params(&mean)).map_err(|e| CliError::io(&mean_path, e))?;
    let outputs = vec![summary.finish()?, dic_csv.finish()?, mean_path];

    let mut manifest = Manifest::new("diagnose");
    manifest.config(r.snapshot());
    for name in [fitdir::FIT_INFO, fitdir::SAMPLES, fitdir::DEVIANCE] {
        manifest.input(name, &fit.artifact(name))?;
    }
    if let Some(c) = r.config_source() {
        manifest.input("config", c)?;
    }
    manifest.seed("fit", fit.info.seed);
    manifest.write(&out, &outputs)?;

    let worst_rhat = rows.iter().filter_map(|s| s.rhat).fold(f64::NAN, f64::max);
    let least_ess = rows.iter().filter_map(|s| s.ess).fold(f64::NAN, f64::min);
    println!(
        "diagnose: {} parameters; max R-hat {}; min ESS {}; DIC {:.2} (pD {:.2}); wrote {}",
        rows.len(),
        if worst_rhat.is_nan() { "NA (needs two chains)".to_string() } else { format!("{worst_rhat:.3}") },
        if least_ess.is_nan() { "NA".to_string() } else { format!("{least_ess:.0}") },
        overall.dic,
        overall.p_d,
        out.display()
    );
    Ok(())
}
