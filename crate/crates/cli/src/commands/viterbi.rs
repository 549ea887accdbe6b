use std::path::PathBuf;

use clap::Args;
use panelhmm::analytics::relapse_segments;
use panelhmm::diagnostics::posterior_mean;
use panelhmm::inference::{smoothed_marginals, viterbi};
use panelhmm::model::Params;
use panelhmm::params_io::{parse_params, ParamShape};

use crate::commands::diagnose::mean_space;
use crate::config::Resolver;
use crate::error::{in_file, CliError, CliResult};
use crate::fitdir::{self, load_fit};
use crate::output::{parse_field, prepare_dir, CsvWriter, Manifest, Num};

#[derive(Args)]
pub struct ViterbiArgs {
    /// Directory written by `panelhmm fit --model hmm`.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decode under these parameters instead of the posterior mean.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Averaging space of the posterior mean [default: probability].
    #[arg(long)]
    space: Option<String>,
    /// Comma-separated 1-based states counted as relapse [default: the last state].
    #[arg(long)]
    relapse_states: Option<String>,
}

pub fn run(a: ViterbiArgs, mut r: Resolver) -> CliResult<()> {
    let fit_dir = r.path("fit", a.fit)?;
    let out = r.path("out", a.out)?;
    let params_path = r.path_opt("params", a.params)?;
    let space = mean_space(&r.pick("space", a.space, "probability".into())?)?;
    let relapse = r.pick_opt("relapse-states", a.relapse_states)?;
    prepare_dir(&out, "viterbi")?;
    let fit = load_fit(&fit_dir)?;
    let (panel, design) = (&fit.inputs.panel, &fit.inputs.design);
    let params = match &params_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let parsed = in_file(path, parse_params(&text))?;
            if !parsed.has_alpha || ParamShape::of(&parsed.params) != fit.set.shape {
                return Err(CliError::input(format!(
                    "{} does not match the fitted model (including per-subject intercepts)",
                    path.display()
                )));
            }
            parsed.params
        }
        None => posterior_mean(&fit.set, space)?,
    };
    let Params::Hmm(hmm) = &params else {
        return Err(CliError::input("Viterbi decoding needs a hidden Markov model fit"));
    };
    let k = hmm.n_states();
    let relapse_states: Vec<usize> = match &relapse {
        Some(list) => list
            .split(',')
            .map(|s| {
                let v: usize = parse_field(s, "relapse state")?;
                if v == 0 || v > k {
                    return Err(CliError::input(format!("relapse state {v} outside 1..={k}")));
                }
                Ok(v - 1)
            })
            .collect::<CliResult<_>>()?,
        None => vec![k - 1],
    };

    let paths = viterbi(panel, design, hmm)?;
    let marginals = smoothed_marginals(panel, design, hmm)?;
    let mut header = vec!["subject".to_string(), "day".into(), "observed".into(), "state".into()];
    header.extend((1..=k).map(|s| format!("p_state{s}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut decoded = CsvWriter::create(&out.join("viterbi.csv"), &header)?;
    for (i, path) in paths.iter().enumerate() {
        for (t, state) in path.states.iter().enumerate() {
            let observed = panel.get(i, t).map_or_else(|| "NA".to_string(), |m| (m + 1).to_string());
            let probs: Vec<String> = marginals[i][t].iter().map(|p| Num(*p).to_string()).collect();
            decoded.record(format_args!("{},{},{observed},{},{}", i + 1, t + 1, state + 1, probs.join(",")))?;
        }
    }
    let mut joint = CsvWriter::create(&out.join("viterbi_log_joint.csv"), &["subject", "log_joint"])?;
    for (i, path) in paths.iter().enumerate() {
        joint.record(format_args!("{},{}", i + 1, Num(path.log_joint)))?;
    }
    let states: Vec<Vec<usize>> = paths.iter().map(|p| p.states.clone()).collect();
    let episodes = relapse_segments(&states, &relapse_states);
    let mut relapse_csv = CsvWriter::create(
        &out.join("relapse.csv"),
        &["subject", "episode", "start_day", "end_day", "days", "first_state"],
    )?;
    let mut n_episodes = 0;
    for (i, eps) in episodes.iter().enumerate() {
        for (e, ep) in eps.iter().enumerate() {
            n_episodes += 1;
            relapse_csv.record(format_args!(
                "{},{},{},{},{},{}",
                i + 1,
                e + 1,
                ep.start + 1,
                ep.end + 1,
                ep.end - ep.start + 1,
                ep.state + 1
            ))?;
        }
    }
    let outputs = vec![decoded.finish()?, joint.finish()?, relapse_csv.finish()?];

    let mut manifest = Manifest::new("viterbi");
    manifest.config(r.snapshot());
    for file in [fitdir::FIT_INFO, fitdir::SAMPLES, fitdir::Y_FILE] {
        manifest.input(file, &fit.artifact(file))?;
    }
    if let Some(p) = &params_path {
        manifest.input("params", p)?;
    }
    if let Some(c) = r.config_source() {
        manifest.input("config", c)?;
    }
    manifest.write(&out, &outputs)?;
    println!(
        "viterbi: decoded {} subjects, {n_episodes} relapse episodes; wrote {}",
        paths.len(),
        out.display()
    );
    Ok(())
}
