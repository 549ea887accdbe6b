use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn panelhmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panelhmm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = panelhmm(args);
    assert!(
        out.status.success(),
        "panelhmm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Simulated 16 x 40 panel with 10% missing days.
fn simulated(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("sim{seed}"));
    ok(&[
        "simulate",
        "--params",
        p(&fixture("hmm_params.txt")),
        "--x",
        p(&fixture("x.csv")),
        "--days",
        "40",
        "--missing-rate",
        "0.1",
        "--seed",
        seed,
        "--out",
        p(&out),
    ]);
    out
}

fn fit(dir: &Path, sim: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let y = sim.join("y.csv");
    let x = sim.join("x.csv");
    let mut args = vec!["fit", "--y", p(&y), "--x", p(&x), "--out", p(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

/// Rows of a tidy CSV, skipping the schema and header lines.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema-version: 1"), "{}", path.display());
    lines.next().expect("header");
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == name).unwrap();
    rows(path).into_iter().map(|r| r[j].clone()).collect()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn smoke_fit_writes_versioned_outputs_and_one_manifest() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "1");
    let out = fit(tmp.path(), &sim, "fit", &["--chains", "1", "--burnin", "10", "--keep", "10"]);
    for name in ["samples.csv", "deviance.csv", "acceptance.csv", "fit.txt", "y.csv", "x.csv", "manifest.txt"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    for dir in [&sim, &out] {
        for f in csv_files(dir) {
            let first = std::fs::read_to_string(&f).unwrap().lines().next().unwrap().to_string();
            assert_eq!(first, "# schema-version: 1", "{}", f.display());
        }
        let manifests = std::fs::read_dir(dir)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("manifest"))
            .count();
        assert_eq!(manifests, 1);
    }
    assert_eq!(rows(&out.join("deviance.csv")).len(), 10);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = fit"));
    assert!(manifest.contains("seed.master = 1"));
    assert!(manifest.contains("input.y = ") && manifest.contains("sha256:"));
}

#[test]
fn identical_seed_and_inputs_give_identical_samples() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "2");
    let args = ["--chains", "2", "--burnin", "20", "--keep", "15", "--seed", "9"];
    let a = fit(tmp.path(), &sim, "a", &args);
    let b = fit(tmp.path(), &sim, "b", &[&args[..], &["--threads", "1"]].concat());
    for name in ["samples.csv", "deviance.csv", "acceptance.csv"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let c = fit(tmp.path(), &sim, "c", &["--chains", "2", "--burnin", "20", "--keep", "15", "--seed", "10"]);
    assert_ne!(std::fs::read(a.join("samples.csv")).unwrap(), std::fs::read(c.join("samples.csv")).unwrap());

    let y = std::fs::read(sim.join("y.csv")).unwrap();
    simulated(tmp.path(), "2");
    assert_eq!(std::fs::read(sim.join("y.csv")).unwrap(), y);
    let again = simulated(&tmp.path().join("again"), "2");
    assert_eq!(std::fs::read(sim.join("y.csv")).unwrap(), std::fs::read(again.join("y.csv")).unwrap());
}

#[test]
fn one_chain_diagnose_reports_rhat_as_unavailable() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "3");
    let out = fit(tmp.path(), &sim, "fit", &["--chains", "1", "--burnin", "20", "--keep", "30"]);
    let diag = tmp.path().join("diag");
    let stdout = ok(&["diagnose", "--fit", p(&out), "--out", p(&diag)]);
    assert!(stdout.contains("NA"));
    let rhat = column(&diag.join("summary.csv"), "rhat");
    assert!(!rhat.is_empty() && rhat.iter().all(|v| v == "NA"));
    let ess = column(&diag.join("summary.csv"), "ess");
    assert!(ess.iter().any(|v| v.parse::<f64>().is_ok()));
}

#[test]
fn simulate_fit_diagnose_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "4");
    let out = fit(tmp.path(), &sim, "fit", &["--chains", "2", "--burnin", "200", "--keep", "100"]);
    let diag = tmp.path().join("diag");
    ok(&["diagnose", "--fit", p(&out), "--out", p(&diag), "--block", "50"]);

    let summary = diag.join("summary.csv");
    let names = column(&summary, "parameter");
    let shape_scalars = 16 * 6 + 24 + 6 + 6 + 3 + 9;
    assert_eq!(names.len(), shape_scalars + 9);
    assert_eq!(names.last().unwrap(), "qbar[3][3]");
    let rhat: Vec<f64> = column(&summary, "rhat").iter().filter_map(|v| v.parse().ok()).collect();
    assert!(rhat.len() > shape_scalars / 2);

    let dic = rows(&diag.join("dic.csv"));
    assert_eq!(dic.len(), 1 + 100 / 50);
    assert_eq!(dic[0][0], "all");
    let value = |r: &Vec<String>, j: usize| r[j].parse::<f64>().unwrap();
    assert!((value(&dic[0], 4) - value(&dic[0], 1) - value(&dic[0], 3)).abs() < 1e-9);

    // Rows of the population matrix are distributions; the abstinent state is sticky.
    let qbar: Vec<f64> = names
        .iter()
        .zip(column(&summary, "mean"))
        .filter(|(n, _)| n.starts_with("qbar"))
        .map(|(_, v)| v.parse().unwrap())
        .collect();
    for row in qbar.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{qbar:?}");
    }
    assert!(qbar[0] > 0.8, "{qbar:?}");

    let text = std::fs::read_to_string(diag.join("posterior_mean.txt")).unwrap();
    assert!(text.starts_with("# panelhmm parameters v1"));
}

fn replicate_sd(path: &Path, statistic: &str) -> f64 {
    let values: Vec<f64> = rows(path)
        .into_iter()
        .filter(|r| r[0] == statistic)
        .map(|r| r[3].parse().unwrap())
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn ppc_modes_differ_on_a_random_effect_heavy_fit() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "5");
    let out = fit(tmp.path(), &sim, "fit", &["--chains", "1", "--burnin", "300", "--keep", "200"]);
    let run = |mode: &str| {
        let dir = tmp.path().join(mode);
        ok(&["ppc", "--fit", p(&out), "--out", p(&dir), "--mode", mode, "--draws", "200"]);
        dir
    };
    let new = run("new-subjects");
    let same = run("same-subjects");
    let (a, b) = (new.join("ppc_draws.csv"), same.join("ppc_draws.csv"));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // Fresh intercepts add between-replicate variation of panel averages.
    for stat in ["moderate_mean", "heavy_mean"] {
        let (sd_new, sd_same) = (replicate_sd(&a, stat), replicate_sd(&b, stat));
        assert!(sd_new > 1.1 * sd_same, "{stat}: new {sd_new} vs same {sd_same}");
    }
    assert_eq!(
        column(&new.join("ppc_summary.csv"), "observed"),
        column(&same.join("ppc_summary.csv"), "observed")
    );
}

#[test]
fn apc_viterbi_and_serial_outputs() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "6");
    let hmm = fit(tmp.path(), &sim, "hmm", &["--chains", "1", "--burnin", "50", "--keep", "40"]);
    let markov = fit(
        tmp.path(),
        &sim,
        "markov",
        &["--model", "markov", "--chains", "1", "--burnin", "50", "--keep", "40"],
    );

    let apc = tmp.path().join("apc");
    ok(&["apc", "--fit", p(&hmm), "--out", p(&apc), "--covariate", "treatment,time", "--draws", "20"]);
    let draws = rows(&apc.join("apc_draws.csv"));
    assert_eq!(draws.len(), 2 * 20 * 9);
    for chunk in draws.chunks(3) {
        let s: f64 = chunk.iter().map(|r| r[5].parse::<f64>().unwrap()).sum();
        assert!(s.abs() < 1e-12, "row of differences sums to {s}");
    }
    assert_eq!(rows(&apc.join("apc_summary.csv")).len(), 18);
    assert_eq!(rows(&apc.join("stationary_summary.csv")).len(), 6);
    assert_eq!(rows(&apc.join("subject_transitions.csv")).len(), 16 * 9);

    let vit = tmp.path().join("vit");
    ok(&["viterbi", "--fit", p(&hmm), "--out", p(&vit)]);
    let decoded = rows(&vit.join("viterbi.csv"));
    assert_eq!(decoded.len(), 16 * 40);
    for r in &decoded {
        let total: f64 = r[4..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    let observed = column(&vit.join("viterbi.csv"), "observed");
    let y = rows(&sim.join("y.csv"));
    assert_eq!(observed[41], y[1][1]);

    let serial = tmp.path().join("serial");
    ok(&["serial", "--hmm", p(&hmm), "--markov", p(&markov), "--out", p(&serial), "--draws", "10"]);
    for r in rows(&serial.join("serial.csv")) {
        assert!(r[3] == "return" || r[3] == "stay");
        assert!(r[4].parse::<usize>().unwrap() > 0);
    }

    let refused = panelhmm(&["viterbi", "--fit", p(&markov), "--out", p(&tmp.path().join("v2"))]);
    assert_eq!(refused.status.code(), Some(2));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "7");
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# settings\nchains = 1\nburnin = 5\nkeep = 7\nseed = 3\n").unwrap();
    let a = fit(tmp.path(), &sim, "a", &["--config", p(&cfg)]);
    assert_eq!(rows(&a.join("deviance.csv")).len(), 7);
    let b = fit(tmp.path(), &sim, "b", &["--config", p(&cfg), "--keep", "4"]);
    assert_eq!(rows(&b.join("deviance.csv")).len(), 4);
    let manifest = std::fs::read_to_string(b.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.keep = 4") && manifest.contains("config.burnin = 5"));
    assert!(manifest.contains("input.config = "));
}

#[test]
fn exit_codes_and_input_errors() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(tmp.path(), "8");
    let before = std::fs::read(sim.join("y.csv")).unwrap();
    let out = fit(tmp.path(), &sim, "fit", &["--chains", "1", "--burnin", "5", "--keep", "10"]);
    assert_eq!(std::fs::read(sim.join("y.csv")).unwrap(), before, "inputs must not change");

    let missing = panelhmm(&["fit", "--y", p(&tmp.path().join("none.csv")), "--out", p(&tmp.path().join("z"))]);
    assert_eq!(missing.status.code(), Some(2));

    let usage = panelhmm(&["fit", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(2));

    let no_fit = panelhmm(&["diagnose", "--fit", p(&tmp.path().join("nothing")), "--out", p(&tmp.path().join("d0"))]);
    assert_eq!(no_fit.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_fit.stderr).contains("missing fit artifact"));

    let clobber = panelhmm(&["diagnose", "--fit", p(&out), "--out", p(&out)]);
    assert_eq!(clobber.status.code(), Some(2));

    let samples = out.join("samples.csv");
    let text = std::fs::read_to_string(&samples).unwrap();
    std::fs::write(&samples, text.replacen("# schema-version: 1", "# schema-version: 2", 1)).unwrap();
    let mismatch = panelhmm(&["diagnose", "--fit", p(&out), "--out", p(&tmp.path().join("d1"))]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("schema-version mismatch"));
    std::fs::write(&samples, &text).unwrap();

    // Emissions that rule out the heaviest level make the data impossible.
    let diag = tmp.path().join("diag");
    ok(&["diagnose", "--fit", p(&out), "--out", p(&diag)]);
    let mean = std::fs::read_to_string(diag.join("posterior_mean.txt")).unwrap();
    let impossible: String = mean
        .lines()
        .map(|l| match l.split_once(" = ") {
            Some((k, _)) if k.starts_with("p[") => {
                let v = if k.ends_with("[3]") { "0" } else { "0.5" };
                format!("{k} = {v}\n")
            }
            _ => format!("{l}\n"),
        })
        .collect();
    let bad = tmp.path().join("impossible.txt");
    std::fs::write(&bad, impossible).unwrap();
    let numerical = panelhmm(&["viterbi", "--fit", p(&out), "--params", p(&bad), "--out", p(&tmp.path().join("v"))]);
    assert_eq!(numerical.status.code(), Some(3), "{}", String::from_utf8_lossy(&numerical.stderr));
}
