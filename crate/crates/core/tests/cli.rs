use std::fs;
use std::process::Command;

fn demosim(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_demosim"))
        .args(args)
        .output()
        .unwrap();
    let text =
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

const SMALL: &str = r#"
steps = 20
batch_size = 4
[topology]
nodes = 2
accels_per_node = 2
[model]
kind = "quadratic"
dim = 64
[data]
size = 100
"#;

#[test]
fn verify_passes() {
    let (code, text) = demosim(&["verify"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("PASS byte_ratios: DeMo/Random = 2.000"));
}

#[test]
fn run_writes_outputs_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let (code, text) = demosim(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "7",
    ]);
    assert_eq!(code, 0, "{text}");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 8);
    assert!(out.join("summary.json").exists());
}

#[test]
fn config_errors_exit_with_two_and_list_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        format!("eval_every = 0\nwarmup_fraction = 2.0\n{SMALL}"),
    )
    .unwrap();
    let (code, text) = demosim(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(
        text.contains("eval_every") && text.contains("warmup_fraction"),
        "{text}"
    );
    assert_eq!(demosim(&["run", "/nonexistent.toml"]).0, 2);
}

#[test]
fn divergence_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = format!("{SMALL}[optimizer]\nkind = \"baseline_sgd\"\nlearning_rate = 1e100\nmomentum_decay = 0.0\n");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let (code, text) = demosim(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1, "{text}");
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("sweep");
    let (code, text) = demosim(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--axis",
        "sign",
        "--values",
        "on,off",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{text}");
    assert!(out.join("sign=on/metrics.csv").exists() && out.join("sign=off/metrics.csv").exists());
    assert_eq!(
        fs::read_to_string(out.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}
