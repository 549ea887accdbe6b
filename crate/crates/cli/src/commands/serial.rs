use std::path::PathBuf;

use clap::Args;
use panelhmm::analytics::{serial_dependence_table, MotifKind};

use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::fitdir::{self, load_fit};
use crate::output::{prepare_dir, CsvWriter, Manifest, Num};

#[derive(Args)]
pub struct SerialArgs {
    /// Directory of an HMM fit.
    #[arg(long)]
    hmm: Option<PathBuf>,
    /// Directory of a Markov fit to the same data.
    #[arg(long)]
    markov: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Average over this many evenly spaced draws of each fit [default: 200].
    #[arg(long)]
    draws: Option<usize>,
}

pub fn run(a: SerialArgs, mut r: Resolver) -> CliResult<()> {
    let hmm_dir = r.path("hmm", a.hmm)?;
    let markov_dir = r.path("markov", a.markov)?;
    let out = r.path("out", a.out)?;
    let draws = r.pick("draws", a.draws, 200)?;
    prepare_dir(&out, "serial")?;
    let hmm = load_fit(&hmm_dir)?;
    let markov = load_fit(&markov_dir)?;
    let same_y = crate::output::sha256_file(&hmm.artifact(fitdir::Y_FILE))?
        == crate::output::sha256_file(&markov.artifact(fitdir::Y_FILE))?;
    if !same_y || hmm.info.has_x != markov.info.has_x {
        return Err(CliError::input("the two fits were run on different data"));
    }
    let rows = serial_dependence_table(
        &hmm.inputs.panel,
        &hmm.inputs.design,
        &hmm.set,
        &markov.set,
        Some(draws),
    )?;
    let mut table = CsvWriter::create(
        &out.join("serial.csv"),
        &["first", "second", "third", "kind", "count", "hmm", "markov"],
    )?;
    for row in &rows {
        let kind = match row.kind {
            MotifKind::Return => "return",
            MotifKind::Stay => "stay",
        };
        table.record(format_args!(
            "{},{},{},{kind},{},{},{}",
            row.levels[0] + 1,
            row.levels[1] + 1,
            row.levels[2] + 1,
            row.count,
            Num(row.hmm),
            Num(row.markov)
        ))?;
    }
    let outputs = vec![table.finish()?];
    let mut manifest = Manifest::new("serial");
    manifest.config(r.snapshot());
    for (label, fit) in [("hmm", &hmm), ("markov", &markov)] {
        for file in [fitdir::FIT_INFO, fitdir::SAMPLES, fitdir::Y_FILE] {
            manifest.input(&format!("{label}.{file}"), &fit.artifact(file))?;
        }
    }
    if let Some(c) = r.config_source() {
        manifest.input("config", c)?;
    }
    manifest.write(&out, &outputs)?;
    println!("serial: {} motif patterns; wrote {}", rows.len(), out.display());
    Ok(())
}
