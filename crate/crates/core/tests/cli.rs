use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nide(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nide"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nide(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn value_after<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .trim()
}

#[test]
fn generate_is_deterministic_and_checks_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let printed = ok(d, &["generate", "--system", "ide_spiral_2d", "--curves", "1", "--seed", "7", "--out", "a"]);
    assert!(printed.trim().ends_with("manifest.toml"));
    ok(d, &["generate", "--system", "ide_spiral_2d", "--curves", "1", "--seed", "7", "--out", "b"]);
    let (a, b) = (read_dir_sorted(&d.join("a")), read_dir_sorted(&d.join("b")));
    let strip = |files: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        // The recorded output directory is the only intended difference.
        files.into_iter().filter(|(n, _)| n != "run_config.toml").collect()
    };
    assert_eq!(strip(a), strip(b));

    let csv = fs::read_to_string(d.join("a/curve_0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21, "header plus the default 20 points");

    assert_eq!(code(&nide(d, &["generate", "--curves", "1"])), 64);
    assert_eq!(code(&nide(d, &["generate", "--system", "no_such_system"])), 64);
    assert_eq!(code(&nide(d, &["frobnicate"])), 64);
    fs::write(d.join("bad.toml"), "[generate]\nunknown = 1\n").unwrap();
    assert_eq!(code(&nide(d, &["generate", "--config", "bad.toml"])), 64);
}

#[test]
fn train_history_is_reproducible_from_the_recorded_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--system", "ide_spiral_2d", "--curves", "3", "--seed", "2", "--out", "data"]);
    let common = ["--data", "data", "--epochs", "4", "--seed", "9", "--f-hidden", "6", "--kernel-hidden", "6", "--integrand-hidden", "4", "--mask", "tail"];
    let mut args = vec!["train", "--out", "r1"];
    args.extend(common);
    ok(d, &args);
    let mut args = vec!["train", "--out", "r2"];
    args.extend(common);
    ok(d, &args);

    let history = fs::read_to_string(d.join("r1/history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,lr,train_mse"));
    assert_eq!(lines.count(), 4);
    assert_eq!(history, fs::read_to_string(d.join("r2/history.csv")).unwrap());

    // Replaying the recorded config into a new directory gives the same fit.
    ok(d, &["train", "--config", "r1/run_config.toml", "--out", "r3"]);
    for f in ["f.bin", "kernel.bin", "integrand.bin"] {
        assert_eq!(
            fs::read(d.join("r1/checkpoint").join(f)).unwrap(),
            fs::read(d.join("r3/checkpoint").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(history, fs::read_to_string(d.join("r3/history.csv")).unwrap());
}

#[test]
fn node_fits_the_ode_spiral_and_has_no_memory_term() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--system", "ode_spiral_2d", "--curves", "4", "--seed", "3", "--out", "data"]);
    let printed = ok(
        d,
        &[
            "train", "--data", "data", "--out", "run", "--model", "node", "--epochs", "300", "--batch-size", "4",
            "--lr-max", "1e-2", "--lr-min", "1e-4", "--lr-period", "600", "--seed", "1",
        ],
    );
    let final_mse: f64 = value_after(&printed, "final train_mse").parse().unwrap();
    assert!(final_mse <= 1e-3, "{final_mse}");

    let eval = ok(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "data", "--out", "eval"]);
    let mse: f64 = value_after(&eval, "mse ").parse().unwrap();
    let reported: f64 = value_after(&eval, "final_train_mse").parse().unwrap();
    assert!(mse <= 1e-3, "{mse}");
    assert!((mse - reported).abs() <= 0.1 * reported, "{mse} vs {reported}");

    ok(d, &["decompose", "--checkpoint", "run/checkpoint", "--data", "data", "--out", "dec"]);
    let rates = fs::read_to_string(d.join("dec/decomp_0_rates.csv")).unwrap();
    let mut lines = rates.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let memory: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("nonmarkov")).collect();
    assert_eq!(memory.len(), 2);
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(memory.iter().all(|&i| v[i] == 0.0), "{line}");
    }

    // A NODE has no integrand to embed with.
    assert_eq!(code(&nide(d, &["embed", "--checkpoint", "run/checkpoint", "--data", "data", "--out", "emb"])), 2);
}

#[test]
fn analysis_commands_emit_their_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--system", "decomp_curves_2d", "--curves", "3", "--seed", "4", "--out", "data"]);
    ok(d, &["generate", "--system", "ide_curves_4d", "--curves", "1", "--seed", "4", "--out", "data4"]);
    ok(
        d,
        &["train", "--data", "data", "--out", "run", "--epochs", "2", "--f-hidden", "6", "--kernel-hidden", "6", "--integrand-hidden", "4"],
    );
    let ck = "run/checkpoint";

    let horizons = ok(d, &["extrapolate", "--checkpoint", ck, "--data", "data", "--out", "ex", "--prefix", "15"]);
    let mut lines = horizons.lines();
    assert_eq!(lines.next(), Some("metric,t+1,t+2,t+3,t+4,t+5"));
    assert!(lines.next().unwrap().starts_with("mse,"));
    assert_eq!(lines.next(), Some("count,3,3,3,3,3"));
    assert!(d.join("ex/extrapolated_2.csv").exists());
    ok(d, &["extrapolate", "--config", "ex/run_config.toml", "--out", "ex2"]);
    assert_eq!(fs::read(d.join("ex/horizon_mse.csv")).unwrap(), fs::read(d.join("ex2/horizon_mse.csv")).unwrap());

    let summary = ok(d, &["decompose", "--checkpoint", ck, "--data", "data", "--out", "dec"]);
    let identity: f64 = value_after(&summary, "rate_sum_error").parse().unwrap();
    assert!(identity <= 1e-10);
    assert!(summary.contains("r2_markovian_rate"), "ground truth is scored: {summary}");

    let scores = ok(d, &["embed", "--checkpoint", ck, "--data", "data", "--out", "emb", "--k", "2"]);
    assert!(scores.contains("knn_time_r2_embedding") && scores.contains("k 2"));
    assert!(fs::read_to_string(d.join("emb/embed_0.csv")).unwrap().starts_with("t,z0,z1"));

    assert_eq!(code(&nide(d, &["eval", "--checkpoint", ck, "--data", "data4", "--out", "bad"])), 2);
    assert_eq!(code(&nide(d, &["eval", "--checkpoint", "missing", "--data", "data", "--out", "bad"])), 2);
    assert_eq!(code(&nide(d, &["eval", "--data", "data", "--out", "bad"])), 64);
}

#[test]
fn gradcheck_passes_and_archives_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let table = ok(tmp.path(), &["--jobs", "1", "gradcheck", "--out", "gc"]);
    assert!(table.contains("cosine"), "{table}");
    assert!(tmp.path().join("gc/kernel_sweep.csv").exists());
}
