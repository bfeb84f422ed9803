//! End-to-end checks of the command-line binary: determinism, exit codes and
//! the documented workflows at tiny scale.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mcdiff")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mcdiff-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().to_string(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("schedule-info"));
}

#[test]
fn unknown_command_and_flag_are_usage_errors() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["gen-data", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown flag"));
}

#[test]
fn gen_data_is_deterministic_across_reruns() {
    let dir = tmpdir("gen");
    let args = [
        "gen-data",
        "--n",
        "4",
        "--size",
        "16",
        "--seed",
        "7",
        "--out",
        dir.to_str().unwrap(),
    ];
    let a = run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let first = dir_bytes(&dir);
    let b = run(&args);
    assert_eq!(b.status.code(), Some(0));
    let line = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("checksum="))
            .map(str::to_string)
            .unwrap()
    };
    assert_eq!(line(&stdout(&a)), line(&stdout(&b)));
    assert_eq!(stdout(&a), stdout(&b), "reports must match");
    assert_eq!(
        first,
        dir_bytes(&dir),
        "rerun with the same config must be byte-identical"
    );
}

#[test]
fn gen_data_unwritable_out_is_io_error() {
    let out = run(&[
        "gen-data",
        "--n",
        "1",
        "--out",
        "/proc/definitely/not/writable",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn make_mask_count_oracle_and_determinism() {
    let dir = tmpdir("mask");
    let path = dir.join("m.mask");
    let out = run(&[
        "make-mask",
        "--width",
        "32",
        "--accel",
        "4",
        "--cf",
        "0.08",
        "--seed",
        "1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // round(32/4) = 8 columns, round(0.08*32) = 3 of them in the center block.
    assert!(stdout(&out).contains("sampled_columns=8"));
    let text = std::fs::read_to_string(&path).unwrap();
    let flags: &str = text
        .lines()
        .find_map(|l| l.strip_prefix("sampled="))
        .unwrap();
    assert_eq!(flags.chars().filter(|&c| c == '1').count(), 8);
    let center: String = flags.chars().skip(15).take(3).collect();
    assert_eq!(center, "111", "center block must be sampled: {flags}");

    let path2 = dir.join("m2.mask");
    run(&[
        "make-mask",
        "--width",
        "32",
        "--accel",
        "4",
        "--cf",
        "0.08",
        "--seed",
        "1",
        "--out",
        path2.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap()
    );
}

#[test]
fn make_mask_acceleration_one_samples_all() {
    let dir = tmpdir("maskall");
    let path = dir.join("all.mask");
    let out = run(&[
        "make-mask",
        "--width",
        "8",
        "--accel",
        "1",
        "--cf",
        "0",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("sampled_columns=8"));
}

#[test]
fn make_mask_budget_violation_is_usage_error() {
    let dir = tmpdir("maskbad");
    let out = run(&[
        "make-mask",
        "--width",
        "32",
        "--accel",
        "4",
        "--cf",
        "0.5",
        "--out",
        dir.join("m.mask").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("budget"));
}

#[test]
fn schedule_info_terminal_values_at_1000() {
    let out = run(&["schedule-info", "--t", "1000"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("1000"));
    let cols: Vec<&str> = last.split_whitespace().collect();
    let alpha_bar: f64 = cols[3].parse().unwrap();
    let beta_bar: f64 = cols[4].parse().unwrap();
    assert!(alpha_bar <= 1e-3, "terminal cumulative scale {alpha_bar}");
    assert!(
        (0.45..=0.55).contains(&beta_bar),
        "terminal width {beta_bar}"
    );
}

#[test]
fn schedule_info_single_step() {
    let out = run(&["schedule-info", "--t", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .collect();
    assert_eq!(rows.len(), 1);
    let cols: Vec<&str> = rows[0].split_whitespace().collect();
    let beta_tilde: f64 = cols[5].parse().unwrap();
    assert_eq!(beta_tilde, 0.0);
}

#[test]
fn schedule_info_respacing_preserves_terminals() {
    let full = run(&["schedule-info", "--t", "1000"]);
    let spaced = run(&["schedule-info", "--t", "1000", "--respace", "250"]);
    assert_eq!(spaced.status.code(), Some(0));
    let last_cols = |s: &str| -> (f64, f64) {
        let last = s.lines().last().unwrap();
        let cols: Vec<&str> = last.split_whitespace().collect();
        (cols[3].parse().unwrap(), cols[4].parse().unwrap())
    };
    let (a_full, b_full) = last_cols(&stdout(&full));
    let (a_sp, b_sp) = last_cols(&stdout(&spaced));
    let rows = stdout(&spaced)
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .count();
    assert_eq!(rows, 250);
    assert!(((a_full - a_sp) / a_full).abs() < 1e-5);
    assert!(((b_full - b_sp) / b_full).abs() < 1e-5);
}

/// Shared tiny pipeline: data, mask, short training.
fn tiny_pipeline(tag: &str) -> (PathBuf, PathBuf, PathBuf) {
    let root = tmpdir(tag);
    let data = root.join("data");
    let mask = root.join("m.mask");
    let run_dir = root.join("run");
    let ok = run(&[
        "gen-data",
        "--n",
        "4",
        "--size",
        "16",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let ok = run(&[
        "make-mask",
        "--width",
        "16",
        "--accel",
        "2",
        "--cf",
        "0.125",
        "--seed",
        "2",
        "--out",
        mask.to_str().unwrap(),
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let ok = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--t",
        "8",
        "--size",
        "16",
        "--steps",
        "12",
        "--batch",
        "2",
        "--ckpt-every",
        "4",
        "--seed",
        "11",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    (data, mask, run_dir)
}

#[test]
fn sample_outputs_are_deterministic_and_complete() {
    let (data, mask, run_dir) = tiny_pipeline("sample");
    let ckpt = run_dir.join("ckpt_final.mcdc");
    let s1 = run_dir.join("s1");
    let input = data.join("phantom_0000.mcdt");
    let args = [
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        s1.to_str().unwrap(),
        "--n-samples",
        "2",
        "--sampling-steps",
        "8",
        "--seed",
        "21",
    ];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let first = dir_bytes(&s1);
    let again = run(&args);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(first, dir_bytes(&s1), "same seed must give identical bytes");
    for name in [
        "sample_000.mcdt",
        "sample_001.mcdt",
        "mean.mcdt",
        "std.mcdt",
        "config.txt",
    ] {
        assert!(s1.join(name).exists(), "missing {name}");
    }
    // Distinct chains produced different samples.
    let a = std::fs::read(s1.join("sample_000.mcdt")).unwrap();
    let b = std::fs::read(s1.join("sample_001.mcdt")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn single_sample_std_map_is_zero() {
    let (data, mask, run_dir) = tiny_pipeline("std0");
    let ckpt = run_dir.join("ckpt_final.mcdc");
    let out_dir = run_dir.join("one");
    let out = run(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--input",
        data.join("phantom_0001.mcdt").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--n-samples",
        "1",
        "--sampling-steps",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let std_map = mcdiff::datagen::read_real_grid::<f64>(&out_dir.join("std.mcdt")).unwrap();
    assert!(std_map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sample_respaced_runs_and_missing_input_fails() {
    let (data, mask, run_dir) = tiny_pipeline("respace");
    let ckpt = run_dir.join("ckpt_final.mcdc");
    let out = run(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--input",
        data.join("phantom_0002.mcdt").to_str().unwrap(),
        "--out",
        run_dir.join("r").to_str().unwrap(),
        "--n-samples",
        "1",
        "--sampling-steps",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bad = run(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--input",
        "/nonexistent.mcdt",
        "--out",
        run_dir.join("x").to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_ground_truth_against_itself_hits_caps() {
    let (data, mask, _run) = tiny_pipeline("evalgt");
    let gt = data.join("phantom_0000.mcdt");
    let out = run(&[
        "eval",
        "--gt",
        gt.to_str().unwrap(),
        "--recon",
        gt.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("recon.psnr=100"), "{text}");
    assert!(text.contains("recon.ssim=1"), "{text}");
    assert!(text.contains("zf.psnr="), "{text}");
}

#[test]
fn eval_without_any_recon_is_usage_error() {
    let (data, _mask, _run) = tiny_pipeline("evalempty");
    let out = run(&[
        "eval",
        "--gt",
        data.join("phantom_0000.mcdt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_writes_csv_with_pinned_header() {
    let (data, mask, run_dir) = tiny_pipeline("evalcsv");
    let gt = data.join("phantom_0000.mcdt");
    let out_dir = run_dir.join("metrics");
    let out = run(&[
        "eval",
        "--gt",
        gt.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("metrics_zf.csv")).unwrap();
    assert!(csv.starts_with("psnr,ssim,nmse,mse,data_range\n"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn train_resume_reproduces_full_run() {
    let root = tmpdir("resume");
    let data = root.join("data");
    let mask = root.join("m.mask");
    run(&[
        "gen-data",
        "--n",
        "4",
        "--size",
        "16",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    run(&[
        "make-mask",
        "--width",
        "16",
        "--accel",
        "2",
        "--cf",
        "0.125",
        "--seed",
        "2",
        "--out",
        mask.to_str().unwrap(),
    ]);
    let full = root.join("full");
    let half = root.join("half");
    let common = [
        "--data",
        data.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--t",
        "8",
        "--size",
        "16",
        "--batch",
        "2",
        "--seed",
        "11",
        "--ckpt-every",
        "0",
    ];
    let mut args = vec!["train", "--out", full.to_str().unwrap(), "--steps", "10"];
    args.extend_from_slice(&common);
    assert_eq!(run(&args).status.code(), Some(0));

    let mut args = vec!["train", "--out", half.to_str().unwrap(), "--steps", "5"];
    args.extend_from_slice(&common);
    assert_eq!(run(&args).status.code(), Some(0));
    let resume_ckpt = half.join("ckpt_final.mcdc");
    let mut args = vec![
        "train",
        "--out",
        half.to_str().unwrap(),
        "--steps",
        "10",
        "--resume",
        resume_ckpt.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    assert_eq!(run(&args).status.code(), Some(0));

    let a = std::fs::read(full.join("ckpt_final.mcdc")).unwrap();
    let b = std::fs::read(half.join("ckpt_final.mcdc")).unwrap();
    assert_eq!(
        a, b,
        "resumed checkpoint must equal the uninterrupted run byte for byte"
    );
}

#[test]
fn short_overfit_run_halves_the_logged_loss() {
    let root = tmpdir("overfit");
    let data = root.join("data");
    let mask = root.join("m.mask");
    run(&[
        "gen-data",
        "--n",
        "4",
        "--size",
        "8",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    run(&[
        "make-mask",
        "--width",
        "8",
        "--accel",
        "2",
        "--cf",
        "0.25",
        "--seed",
        "2",
        "--out",
        mask.to_str().unwrap(),
    ]);
    let out_dir = root.join("run");
    // The default batch of 8 averages enough timestep draws per step for
    // the first and final logged losses to be comparable.
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--t",
        "8",
        "--size",
        "8",
        "--steps",
        "200",
        "--seed",
        "11",
        "--ckpt-every",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = std::fs::read_to_string(out_dir.join("loss.log")).unwrap();
    let loss_of = |line: &str| -> f64 { line.split_whitespace().nth(1).unwrap().parse().unwrap() };
    let first = loss_of(log.lines().next().unwrap());
    let last = loss_of(log.lines().last().unwrap());
    assert!(
        last < 0.5 * first,
        "final loss {last} did not drop below half of the first logged loss {first}"
    );
}

#[test]
fn eval_shape_mismatch_is_an_error() {
    let (data, _mask, _run) = tiny_pipeline("evalshape");
    let root = tmpdir("evalshape-other");
    run(&[
        "gen-data",
        "--n",
        "1",
        "--size",
        "32",
        "--seed",
        "9",
        "--out",
        root.to_str().unwrap(),
    ]);
    let out = run(&[
        "eval",
        "--gt",
        data.join("phantom_0000.mcdt").to_str().unwrap(),
        "--recon",
        root.join("phantom_0000.mcdt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn train_missing_inputs_fail_cleanly() {
    let root = tmpdir("trainbad");
    let out = run(&["train", "--out", root.join("r").to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "missing --data is a usage error"
    );
    let out = run(&[
        "train",
        "--data",
        "/nonexistent-dataset",
        "--mask",
        "/nonexistent.mask",
        "--out",
        root.join("r2").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "unreadable dataset is an I/O error"
    );
}

#[test]
fn config_file_drives_commands() {
    let root = tmpdir("cfgfile");
    let cfg = root.join("run.cfg");
    std::fs::write(
        &cfg,
        "width=16\nacceleration=2\ncenter_fraction=0.125\nseed=4\n",
    )
    .unwrap();
    let mask = root.join("m.mask");
    let out = run(&[
        "make-mask",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        mask.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("sampled_columns=8"));
    // Flags override the file.
    let mask2 = root.join("m2.mask");
    let out = run(&[
        "make-mask",
        "--config",
        cfg.to_str().unwrap(),
        "--accel",
        "4",
        "--out",
        mask2.to_str().unwrap(),
    ]);
    assert!(stdout(&out).contains("sampled_columns=4"));
}

#[test]
fn config_echo_lands_in_output_dirs() {
    let root = tmpdir("echo");
    let data = root.join("data");
    let out = run(&[
        "gen-data",
        "--n",
        "2",
        "--size",
        "16",
        "--seed",
        "1",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let echo = std::fs::read_to_string(data.join("config.txt")).unwrap();
    assert!(echo.contains("n_items=2"));
    assert!(echo.contains("image_size=16"));
    assert!(stdout(&out).contains("# resolved config"));
}
