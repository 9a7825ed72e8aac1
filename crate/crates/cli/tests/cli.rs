//! End-to-end checks of the command-line surface: exit codes, output
//! structure, and the files the commands leave behind.

use std::path::PathBuf;
use std::process::Command;

fn daocc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_daocc"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("daocc-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = daocc().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    let out = daocc().args(["bench", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn gradcheck_exits_zero_when_all_pass() {
    let out = daocc()
        .args(["gradcheck", "--tolerance", "1e-4"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("all gradient checks passed"));
    assert!(stdout.contains("model_end_to_end"));
}

#[test]
fn oracle_suite_exits_zero() {
    let out = daocc().arg("oracle-suite").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("all oracle comparisons passed"));
}

#[test]
fn bench_prints_latency_stats() {
    let out = daocc()
        .args(["bench", "--iterations", "3", "--warmup", "1"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("median_ms ="));
    assert!(stdout.contains("environment ="));
}

#[test]
fn ablate_emits_four_matrix_rows() {
    let out = daocc()
        .args(["ablate", "--steps", "12", "--scenes", "3"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    // The on/off matrix: exactly four data rows after the header.
    let header_at = stdout.find("DHA   DBA").expect("table header");
    let rows: Vec<&str> = stdout[header_at..]
        .lines()
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .collect();
    assert_eq!(rows.len(), 4, "{stdout}");
    assert!(rows[0].trim_start().starts_with("on"));
    assert!(rows[3].trim_start().starts_with('-'));
}

#[test]
fn train_eval_cycle_and_mask_flag_changes_miou() {
    let dir = temp_dir("train");
    let ck = dir.join("ck");
    let out = daocc()
        .args([
            "train-toy",
            "--steps",
            "60",
            "--scenes",
            "6",
            "--log-every",
            "0",
            "--out",
        ])
        .arg(&ck)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ck.join("params").join("manifest.txt").exists());
    assert!(ck.join("config.txt").exists());
    assert!(ck.join("loss_trace.txt").exists());

    let masked = daocc()
        .args(["eval", "--checkpoint"])
        .arg(&ck)
        .output()
        .unwrap();
    assert!(
        masked.status.success(),
        "{}",
        String::from_utf8_lossy(&masked.stderr)
    );
    let unmasked = daocc()
        .args(["eval", "--no-mask", "--checkpoint"])
        .arg(&ck)
        .output()
        .unwrap();
    assert!(unmasked.status.success());
    let field = |bytes: &[u8], key: &str| -> String {
        String::from_utf8_lossy(bytes)
            .lines()
            .find_map(|l| l.strip_prefix(key).map(|v| v.trim().to_string()))
            .unwrap_or_else(|| panic!("missing {key} line"))
    };
    // The flag must reach the metric: occluded voxels are scored only
    // without the mask. (The trained-model mIoU difference is asserted in
    // the acceptance suite, where training is long enough to matter.)
    assert_eq!(field(&masked.stdout, "masked = "), "true");
    assert_eq!(field(&unmasked.stdout, "masked = "), "false");
    let scored_masked: u64 = field(&masked.stdout, "voxels = ").parse().unwrap();
    let scored_all: u64 = field(&unmasked.stdout, "voxels = ").parse().unwrap();
    assert!(
        scored_all > scored_masked,
        "{scored_all} vs {scored_masked}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn export_writes_readable_voxels_and_scene() {
    let dir = temp_dir("export");
    let voxels = dir.join("scene.daov");
    let scene = dir.join("scene.bin");
    let out = daocc()
        .args(["export", "--seed", "11", "--out"])
        .arg(&voxels)
        .arg("--scene")
        .arg(&scene)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let grid = daocc_core::metrics::load_occupancy(&voxels, Some(6)).unwrap();
    assert_eq!(grid.grid.counts, [48, 48, 8]);
    assert!(grid.mask.is_some());
    let (rigs, cloud, gt) = daocc_core::scene::load_scene(&scene, Some(6)).unwrap();
    assert_eq!(rigs.len(), 4);
    assert!(!cloud.points.is_empty());
    assert_eq!(gt.labels, grid.labels);
    std::fs::remove_dir_all(&dir).ok();
}
