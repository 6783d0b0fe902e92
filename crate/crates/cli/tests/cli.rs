//! End-to-end checks of the `sws` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sws"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn mean_of_csv(path: &Path) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let mut sum = 0.0;
    let mut count = 0usize;
    for line in text.lines() {
        for cell in line.split(',') {
            let cell = cell.trim();
            if !cell.is_empty() {
                sum += cell.parse::<f64>().unwrap();
                count += 1;
            }
        }
    }
    sum / count as f64
}

#[test]
fn synth_and_reconstruct_recover_homogeneous_speed() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("v.bin");
    let map = dir.path().join("m.csv");

    let out = sws(&["synth", "--preset", "homog15", "--out", vol.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    // Default flags end to end.
    let out = sws(&[
        "reconstruct",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        map.to_str().unwrap(),
        "--method",
        "td",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("method=td"));
    let mean = mean_of_csv(&map);
    assert!(
        (mean - 2.236).abs() / 2.236 < 0.02,
        "mean {mean} not within 2% of 2.236"
    );

    // With the 2 mm blind-zone exclusion next to the source.
    let out = sws(&[
        "reconstruct",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        map.to_str().unwrap(),
        "--method",
        "td",
        "--roi-x",
        "20,191",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mean = mean_of_csv(&map);
    assert!(
        (mean - 2.236).abs() / 2.236 < 0.015,
        "roi mean {mean} not within 1.5% of 2.236"
    );
}

#[test]
fn combined_gammas_are_validated_at_parse() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("v.bin");
    let out = sws(&[
        "synth",
        "--size",
        "24,4,64",
        "--bg-kpa",
        "15",
        "--out",
        vol.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let map = dir.path().join("m.csv");
    let ok = sws(&[
        "reconstruct",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        map.to_str().unwrap(),
        "--method",
        "combined",
        "--gamma1",
        "1.0",
        "--gamma2",
        "0.2",
    ]);
    assert!(ok.status.success(), "{}", stderr(&ok));

    let bad = sws(&[
        "reconstruct",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        map.to_str().unwrap(),
        "--method",
        "combined",
        "--gamma1",
        "0",
        "--gamma2",
        "0",
    ]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("gamma"), "{}", stderr(&bad));
}

#[test]
fn unknown_method_prints_usage_and_fails() {
    let out = sws(&[
        "reconstruct",
        "--in",
        "x.bin",
        "--out",
        "y.csv",
        "--method",
        "magic",
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("possible values") || err.contains("usage"), "{err}");
}

#[test]
fn artifacts_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("v.bin");
    let out = sws(&[
        "synth",
        "--size",
        "32,6,96",
        "--bg-kpa",
        "12",
        "--jitter",
        "0.05",
        "--seed",
        "7",
        "--out",
        vol.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let mut bytes = Vec::new();
    for threads in ["1", "2"] {
        let map = dir.path().join(format!("m{threads}.csv"));
        let out = sws(&[
            "reconstruct",
            "--in",
            vol.to_str().unwrap(),
            "--out",
            map.to_str().unwrap(),
            "--method",
            "td",
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        bytes.push(std::fs::read(&map).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "maps differ across thread counts");
}

#[test]
fn clean_then_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("v.bin");
    let label = dir.path().join("label.csv");
    let inc = dir.path().join("inc.csv");
    let bg = dir.path().join("bg.csv");

    let out = sws(&[
        "synth",
        "--preset",
        "1-4",
        "--jitter",
        "0.05",
        "--seed",
        "3",
        "--grid-scale",
        "2",
        "--out",
        vol.to_str().unwrap(),
        "--label-out",
        label.to_str().unwrap(),
        "--inc-mask-out",
        inc.to_str().unwrap(),
        "--bg-mask-out",
        bg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let cleaned = dir.path().join("c.bin");
    let out = sws(&[
        "clean",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        cleaned.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(cleaned.exists() && dir.path().join("c.bin.meta").exists());

    let map = dir.path().join("m.csv");
    let out = sws(&[
        "reconstruct",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        map.to_str().unwrap(),
        "--method",
        "pd",
        "--interp",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report = dir.path().join("report.txt");
    let out = sws(&[
        "evaluate",
        "--map",
        map.to_str().unwrap(),
        "--label",
        label.to_str().unwrap(),
        "--inc-mask",
        inc.to_str().unwrap(),
        "--bg-mask",
        bg.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for key in ["psnr_db", "cnr_db", "inclusion_mean", "background_mean"] {
        assert!(text.contains(key), "missing {key} in report:\n{text}");
    }
}

#[test]
fn pgm_and_raw_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let vol = dir.path().join("v.bin");
    let out = sws(&[
        "synth",
        "--size",
        "24,4,64",
        "--bg-kpa",
        "15",
        "--out",
        vol.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let pgm = dir.path().join("m.pgm");
    let out = sws(&[
        "reconstruct",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        pgm.to_str().unwrap(),
        "--method",
        "ttp",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n"), "not a binary PGM");

    let raw = dir.path().join("m.raw");
    let out = sws(&[
        "reconstruct",
        "--in",
        vol.to_str().unwrap(),
        "--out",
        raw.to_str().unwrap(),
        "--method",
        "xcorr",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("m.raw.meta").exists());
}
