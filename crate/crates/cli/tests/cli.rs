use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sparseseg-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparseseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn clustered_annotation_has_g_times_floor_m_over_g_entries() {
    let dir = workdir("annotate");
    ok(&dir, &["gen", "--points", "2345", "--out", "g"]);
    // M = round(23.45) = 23, G = 1 → 23 entries; G = 5 → 20.
    for (g, expected) in [("1", 23usize), ("5", 20)] {
        ok(&dir, &["annotate", "--cloud", "g/scene.txt", "--rate", "0.01", "--G", g, "--out", g]);
        let text = fs::read_to_string(dir.join(g).join("labels.txt")).unwrap();
        let header: Vec<usize> = text
            .lines()
            .next()
            .unwrap()
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(header, vec![expected, 6]);
        assert_eq!(text.lines().count(), 1 + expected);
        assert!(dir.join(g).join("manifest.json").exists());
    }
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = workdir("bench");
    ok(
        &dir,
        &[
            "bench", "--points", "1000", "--scenes", "1", "--epochs", "2", "--start-epoch", "1",
            "--hidden", "4", "--out", "b",
        ],
    );
    let csv = fs::read_to_string(dir.join("b/bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 16);
    let gs: Vec<&str> = rows.iter().take(4).map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(gs, ["1", "10", "20", "M"]);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert!(!cols[5].is_empty() && !cols[6].is_empty(), "{r}");
    }
}

#[test]
fn flag_and_file_errors_exit_with_two() {
    let dir = workdir("errors");
    assert_eq!(run(&dir, &["gen", "--no-such-flag", "--out", "x"]).status.code(), Some(2));
    assert_eq!(
        run(&dir, &["annotate", "--cloud", "missing.txt", "--rate", "0.1", "--out", "x"]).status.code(),
        Some(2)
    );
    ok(&dir, &["gen", "--points", "300", "--out", "g"]);
    assert_eq!(
        run(&dir, &["annotate", "--cloud", "g/scene.txt", "--rate", "1.5", "--out", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&dir, &["downsample", "--cloud", "g/scene.txt", "--labels", "g/scene.txt", "--out", "x"]).status.code(),
        Some(2)
    );
}

#[test]
fn divergence_exits_with_three() {
    let dir = workdir("diverge");
    ok(&dir, &["gen", "--points", "500", "--out", "g"]);
    ok(&dir, &["annotate", "--cloud", "g/scene.txt", "--rate", "0.2", "--out", "a"]);
    let out = run(
        &dir,
        &[
            "train", "--cloud", "g/scene.txt", "--labels", "a/labels.txt", "--eval", "g/scene.txt",
            "--variant", "baseline", "--epochs", "30", "--lr", "1e200", "--out", "t",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn binary_clouds_and_thread_override_give_the_same_labels() {
    let dir = workdir("formats");
    ok(&dir, &["gen", "--points", "800", "--format", "bin", "--out", "b"]);
    ok(&dir, &["gen", "--points", "800", "--out", "t"]);
    ok(&dir, &["annotate", "--cloud", "b/scene.bin", "--rate", "0.05", "--G", "2", "--out", "lb"]);
    let out = Command::new(env!("CARGO_BIN_EXE_sparseseg"))
        .current_dir(&dir)
        .env("SPARSESEG_THREADS", "1")
        .args(["annotate", "--cloud", "t/scene.txt", "--rate", "0.05", "--G", "2", "--out", "lt"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(dir.join("lb/labels.txt")).unwrap(),
        fs::read(dir.join("lt/labels.txt")).unwrap()
    );
}
