use std::path::PathBuf;

use clap::Args;
use panelhmm::dataset::DEFAULT_LEVELS;
use panelhmm::mcmc::{run_chains, PriorSpec, SamplerConfig, SigmaPrior};
use panelhmm::model::ModelKind;
use panelhmm::params_io::ParamShape;

use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::fitdir::{self, FitInfo};
use crate::output::{prepare_dir, Manifest};

#[derive(Args)]
pub struct FitArgs {
    /// Observations: one row per subject, one column per day.
    #[arg(long)]
    y: Option<PathBuf>,
    /// Subject covariates (sex, treatment, d_drink, d_heavy). Without it
    /// the model has no covariates.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// hmm or markov [default: hmm].
    #[arg(long)]
    model: Option<String>,
    /// Hidden states (HMM only) [default: 3].
    #[arg(long)]
    states: Option<usize>,
    /// Ordinal levels in the observations [default: 3].
    #[arg(long)]
    levels: Option<usize>,
    /// Cell value marking a missing day [default: NA].
    #[arg(long)]
    missing_token: Option<String>,
    /// Independent chains [default: 3].
    #[arg(long)]
    chains: Option<usize>,
    /// Burn-in sweeps per chain [default: 10000].
    #[arg(long)]
    burnin: Option<usize>,
    /// Stored draws per chain [default: 10000].
    #[arg(long)]
    keep: Option<usize>,
    /// Sweeps per stored draw [default: 1].
    #[arg(long)]
    thin: Option<usize>,
    /// Master seed; every chain and update block derives its own stream [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Prior sd of the covariate effects [default: 10].
    #[arg(long)]
    beta_sd: Option<f64>,
    /// Prior sd of the intercept means [default: 10].
    #[arg(long)]
    mu_sd: Option<f64>,
    /// flat-sigma or flat-variance [default: flat-sigma].
    #[arg(long)]
    sigma_prior: Option<String>,
    /// Upper bound on the intercept sds.
    #[arg(long)]
    sigma_upper: Option<f64>,
    /// Dirichlet concentration for initial and emission probabilities [default: 1].
    #[arg(long)]
    dirichlet: Option<f64>,
    /// Starting random-walk sd for intercepts [default: 0.4].
    #[arg(long)]
    step_alpha: Option<f64>,
    /// Starting random-walk sd for covariate effects [default: 0.1].
    #[arg(long)]
    step_beta: Option<f64>,
    /// Keep the starting step sizes during burn-in.
    #[arg(long)]
    no_adapt: bool,
    /// Sd of the per-chain perturbation of the starting intercepts [default: 0.1].
    #[arg(long)]
    init_jitter: Option<f64>,
}

fn sigma_prior(name: &str) -> CliResult<SigmaPrior> {
    match name {
        "flat-sigma" => Ok(SigmaPrior::FlatSigma),
        "flat-variance" => Ok(SigmaPrior::FlatVariance),
        other => Err(CliError::input(format!(
            "unknown --sigma-prior '{other}' (flat-sigma or flat-variance)"
        ))),
    }
}

pub fn run(a: FitArgs, mut r: Resolver) -> CliResult<()> {
    let y = r.path("y", a.y)?;
    let x = r.path_opt("x", a.x)?;
    let out = r.path("out", a.out)?;
    let kind: ModelKind = r.pick("model", a.model, "hmm".into())?.parse()?;
    let levels = r.pick("levels", a.levels, DEFAULT_LEVELS)?;
    let states = match kind {
        ModelKind::Hmm => r.pick("states", a.states, 3)?,
        ModelKind::Markov => levels,
    };
    let token = r.pick("missing-token", a.missing_token, "NA".into())?;
    let defaults = SamplerConfig::default();
    let config = SamplerConfig {
        n_chains: r.pick("chains", a.chains, defaults.n_chains)?,
        n_burnin: r.pick("burnin", a.burnin, defaults.n_burnin)?,
        n_keep: r.pick("keep", a.keep, defaults.n_keep)?,
        thin: r.pick("thin", a.thin, defaults.thin)?,
        rw_step_alpha: r.pick("step-alpha", a.step_alpha, defaults.rw_step_alpha)?,
        rw_step_beta: r.pick("step-beta", a.step_beta, defaults.rw_step_beta)?,
        adapt_during_burnin: !r.switch("no-adapt", a.no_adapt)?,
        seed: r.pick("seed", a.seed, defaults.seed)?,
        init_jitter: r.pick("init-jitter", a.init_jitter, defaults.init_jitter)?,
        store_latent_trace: false,
    };
    let prior_defaults = PriorSpec::default();
    let prior = PriorSpec {
        beta_sd: r.pick("beta-sd", a.beta_sd, prior_defaults.beta_sd)?,
        mu_sd: r.pick("mu-sd", a.mu_sd, prior_defaults.mu_sd)?,
        sigma_prior: sigma_prior(&r.pick("sigma-prior", a.sigma_prior, "flat-sigma".into())?)?,
        sigma_upper: r.pick_opt("sigma-upper", a.sigma_upper)?,
        dirichlet_concentration: r.pick("dirichlet", a.dirichlet, prior_defaults.dirichlet_concentration)?,
    };
    config.validate()?;
    prior.validate()?;
    prepare_dir(&out, "fit")?;

    let inputs = fitdir::load_inputs(&y, x.as_deref(), &token, levels)?;
    let (panel, design) = (&inputs.panel, &inputs.design);
    let mut set = run_chains(kind, panel, design, states, &prior, &config)?;
    set.canonicalize();

    let info = FitInfo {
        shape: ParamShape {
            kind,
            n_states: set.shape.n_states,
            n_levels: levels,
            n_covariates: design.n_covariates(),
            n_subjects: panel.n_subjects(),
        },
        n_days: panel.n_days(),
        covariates: design.names().to_vec(),
        has_x: inputs.raw.is_some(),
        chains: config.n_chains,
        burnin: config.n_burnin,
        keep: config.n_keep,
        thin: config.thin,
        seed: config.seed,
    };
    let info_path = out.join(fitdir::FIT_INFO);
    std::fs::write(&info_path, info.to_text()).map_err(|e| CliError::io(&info_path, e))?;
    let mut outputs = vec![info_path, fitdir::write_panel(&out.join(fitdir::Y_FILE), panel)?];
    if let Some(raw) = &inputs.raw {
        outputs.push(fitdir::write_covariates(&out.join(fitdir::X_FILE), raw)?);
    }
    outputs.extend(fitdir::write_samples(&out, &info, &set)?);

    let mut manifest = Manifest::new("fit");
    manifest.config(r.snapshot());
    manifest.input("y", &y)?;
    if let Some(x) = &x {
        manifest.input("x", x)?;
    }
    if let Some(c) = r.config_source() {
        manifest.input("config", c)?;
    }
    manifest.seed("master", config.seed);
    manifest.seed(
        "expansion",
        "ChaCha8 substreams keyed by (seed, stream, chain[, subject]); streams 1 init, 2 latent, 3 alpha, 4 beta, 5 hyper, 6 emission, 7 initial",
    );
    let violations = set.label_violations();
    if kind == ModelKind::Hmm {
        manifest.note(format!(
            "{violations} of {} stored draws break the emission ordering after relabelling",
            set.n_draws()
        ));
    }
    manifest.write(&out, &outputs)?;

    let rate = |alpha: bool| {
        let (acc, prop) = set.chains.iter().fold((0u64, 0u64), |(a, p), c| {
            let tallies = if alpha { &c.acceptance_alpha } else { &c.acceptance_beta };
            tallies.iter().fold((a, p), |(a, p), t| (a + t.accepted, p + t.proposed))
        });
        if prop == 0 {
            "NA".to_string()
        } else {
            format!("{:.3}", acc as f64 / prop as f64)
        }
    };
    println!(
        "fit {}: {} subjects x {} days, {} chains x {} draws; acceptance alpha {} beta {}; wrote {}",
        kind.as_str(),
        panel.n_subjects(),
        panel.n_days(),
        config.n_chains,
        config.n_keep,
        rate(true),
        rate(false),
        out.display()
    );
    Ok(())
}
