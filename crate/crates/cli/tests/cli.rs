//! End-to-end tests of the command-line surface: the composable file
//! pipeline, error contract, and determinism of command outputs.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spherelab"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        !out.status.success(),
        "command {:?} unexpectedly passed",
        args
    );
    out
}

const TINY_CFG: &str = "\
[universe]
k_train = 20
k_unseen = 8
d_feat = 12
kappa = 5
utts_per_speaker = 6

[model]
hidden = 12
embed_dim = 6

[training]
epochs = 3
batch_size = 40

[evaluation]
n_target = 60
n_nontarget = 60
";

fn write_tiny_cfg(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY_CFG).unwrap();
    path
}

#[test]
fn gen_data_is_idempotent_and_composable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_cfg(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--out-dir",
        out_a.to_str().unwrap(),
    ]);
    run_ok(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--out-dir",
        out_b.to_str().unwrap(),
    ]);
    for name in ["train_utterances.tsv", "eval_utterances.tsv", "trials.txt"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical invocations");
        assert!(!a.is_empty());
    }
}

#[test]
fn train_extract_score_metrics_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_cfg(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    run_ok(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        run.to_str().unwrap(),
        "--name",
        "tiny",
    ]);

    let ckpt = run.join("tiny.ckpt");
    let emb = dir.path().join("emb.tsv");
    run_ok(&[
        "extract",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--utterances",
        data.join("eval_utterances.tsv").to_str().unwrap(),
        "--out",
        emb.to_str().unwrap(),
    ]);
    let scores = dir.path().join("scores.txt");
    run_ok(&[
        "score",
        "--embeddings",
        emb.to_str().unwrap(),
        "--trials",
        data.join("trials.txt").to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    let out = run_ok(&[
        "metrics",
        "--scores",
        scores.to_str().unwrap(),
        "--trials",
        data.join("trials.txt").to_str().unwrap(),
        "--p-target",
        "0.01",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("eer_percent ="), "metrics output: {text}");
    assert!(text.contains("min_dcf ="));
}

#[test]
fn metrics_on_perfectly_separated_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("t.txt");
    let scores = dir.path().join("s.txt");
    std::fs::write(&trials, "a b 1\nc d 1\ne f 0\ng h 0\n").unwrap();
    std::fs::write(&scores, "a b 0.9\nc d 0.8\ne f 0.2\ng h 0.1\n").unwrap();
    let out = run_ok(&[
        "metrics",
        "--scores",
        scores.to_str().unwrap(),
        "--trials",
        trials.to_str().unwrap(),
        "--p-target",
        "0.01",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("eer_percent = 0.000"), "got: {text}");
    assert!(text.contains("min_dcf = 0.0000"), "got: {text}");
}

#[test]
fn grad_check_passes_and_prints_verdict() {
    let out = run_ok(&[
        "grad-check",
        "--loss",
        "sphereface2",
        "--trials",
        "25",
        "--seed",
        "7",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sphereface2: max_rel_error ="), "got: {text}");
    assert!(text.contains("grad-check: PASS"), "got: {text}");
}

#[test]
fn grad_check_fail_exit_code() {
    // An absurd tolerance forces the FAIL path and a non-zero exit.
    let out = run_err(&[
        "grad-check",
        "--loss",
        "softmax",
        "--trials",
        "5",
        "--seed",
        "7",
        "--tolerance",
        "1e-30",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("grad-check: FAIL"), "got: {text}");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: InvariantViolation:"), "got: {err}");
}

#[test]
fn missing_seed_is_a_one_line_machine_parseable_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_cfg(dir.path());
    let out = run_err(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "expected one line, got: {err}");
    assert!(err.starts_with("error: InvalidConfig:"), "got: {err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.cfg");
    std::fs::write(&cfg, "[universe]\nk_trian = 10\n").unwrap();
    let out = run_err(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: InvalidConfig:"), "got: {err}");
    assert!(
        err.contains("k_trian"),
        "error should name the offending key: {err}"
    );
}

#[test]
fn malformed_data_file_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "u1\ts1\t0.1 0.2\nu2\tmissing-fields\n").unwrap();
    let ckpt = dir.path().join("no.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = run_err(&[
        "extract",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--utterances",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("e.tsv").to_str().unwrap(),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: ParseError:"), "got: {err}");
}

#[test]
fn sweep_emits_deterministic_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_cfg(dir.path());
    let grid = dir.path().join("grid.txt");
    std::fs::write(&grid, "# lambda t s m\n0.7 3 32 0.2\n0.7 3 32 0.1\n").unwrap();
    let out_a = dir.path().join("sa");
    let out_b = dir.path().join("sb");
    for out in [&out_a, &out_b] {
        run_ok(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            grid.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            "1",
        ]);
    }
    for name in ["sweep.txt", "sweep.csv"] {
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} not deterministic"
        );
    }
    let table = std::fs::read_to_string(out_a.join("sweep.txt")).unwrap();
    assert_eq!(table.lines().count(), 3, "header + two cells:\n{table}");
    assert!(table.contains("ok"));
}

#[test]
fn lmft_flow_and_marginless_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_cfg(dir.path());
    let run = dir.path().join("base");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        run.to_str().unwrap(),
        "--name",
        "base",
    ]);
    let ft = dir.path().join("ft");
    run_ok(&[
        "lmft",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        run.join("base.ckpt").to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        ft.to_str().unwrap(),
    ]);
    assert!(ft.join("lmft.report.txt").exists());

    // A margin-free loss cannot be fine-tuned.
    let softmax_cfg = dir.path().join("softmax.cfg");
    std::fs::write(
        &softmax_cfg,
        format!("{TINY_CFG}\n[loss]\nkind = softmax\n"),
    )
    .unwrap();
    let srun = dir.path().join("soft");
    run_ok(&[
        "train",
        "--config",
        softmax_cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        srun.to_str().unwrap(),
        "--name",
        "soft",
    ]);
    let out = run_err(&[
        "lmft",
        "--config",
        softmax_cfg.to_str().unwrap(),
        "--checkpoint",
        srun.join("soft.ckpt").to_str().unwrap(),
        "--out",
        dir.path().join("sft").to_str().unwrap(),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: InvalidConfig:"), "got: {err}");
}

#[test]
fn compare_builds_table_from_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_cfg(dir.path());
    let run = dir.path().join("runs");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        run.to_str().unwrap(),
        "--name",
        "sys-a",
    ]);
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        run.to_str().unwrap(),
        "--name",
        "sys-b",
    ]);
    let table_path = dir.path().join("table.txt");
    let reports = format!(
        "{},{}",
        run.join("sys-a.report.txt").display(),
        run.join("sys-b.report.txt").display()
    );
    let out = run_ok(&[
        "compare",
        "--reports",
        &reports,
        "--out",
        table_path.to_str().unwrap(),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("sys-a") && text.contains("sys-b"),
        "got: {text}"
    );
    assert!(table_path.exists());
    assert!(table_path.with_extension("csv").exists());
}

#[test]
fn noise_study_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_cfg(dir.path());
    let out_dir = dir.path().join("noise");
    run_ok(&[
        "noise-study",
        "--config",
        cfg.to_str().unwrap(),
        "--losses",
        "sphereface2",
        "--proportions",
        "0,0.3",
        "--seeds",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    let text = std::fs::read_to_string(out_dir.join("noise_study.txt")).unwrap();
    assert!(text.contains("sphereface2"));
    // One row per (proportion, seed) cell.
    assert_eq!(text.lines().count(), 3, "got:\n{text}");
}

#[test]
fn help_lists_flags_for_every_subcommand() {
    for sub in [
        "gen-data",
        "train",
        "extract",
        "score",
        "metrics",
        "grad-check",
        "sweep",
        "noise-study",
        "lmft",
        "compare",
    ] {
        let out = run_ok(&[sub, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("--"), "{sub} --help lists no flags");
    }
}
