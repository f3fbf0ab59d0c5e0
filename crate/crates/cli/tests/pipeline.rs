use std::fs;
use std::path::{Path, PathBuf};

use stnmf::export::read_count_matrix;
use stnmf::patterns::ComparisonReport;
use stnmf_cli::{run_cli, INCOMPLETE_MARKER};
use tempfile::TempDir;

fn stnmf(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(
        std::iter::once("stnmf").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["synth", "--out", p(dir)];
    args.extend_from_slice(extra);
    let (code, _, err) = stnmf(&args);
    assert_eq!(code, 0, "{err}");
    (dir.join("records_a.csv"), dir.join("records_b.csv"))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|path| {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read(&path).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn run_equals_stage_by_stage() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = synth(
        &tmp.path().join("s"),
        &["--rank", "4", "--drop", "1", "--noise", "0.02"],
    );
    let common = |out: &Path| {
        vec![
            "--input-a".to_string(),
            p(&a).into(),
            "--input-b".into(),
            p(&b).into(),
            "--ranks".into(),
            "2..6".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    let mut args = vec!["run".to_string()];
    args.extend(common(&whole));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(stnmf(&args).0, 0);
    for cmd in ["ingest", "rank-scan", "factorize"] {
        let mut args = vec![cmd.to_string()];
        args.extend(common(&staged));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, _, err) = stnmf(&args);
        assert_eq!(code, 0, "{cmd}: {err}");
    }
    assert!(!whole.join(INCOMPLETE_MARKER).exists());
    assert_eq!(files(&whole), files(&staged));
}

#[test]
fn identical_periods_match_themselves() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = synth(&tmp.path().join("s"), &["--rank", "3"]);
    let out = tmp.path().join("o");
    let (code, _, err) = stnmf(&[
        "run",
        "--input-a",
        p(&a),
        "--input-b",
        p(&a),
        "--rank-a",
        "3",
        "--rank-b",
        "3",
        "--ranks",
        "3..3",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let report: ComparisonReport =
        serde_json::from_slice(&fs::read(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(report.total_reduction_pct, 0.0);
    assert_eq!(report.matching.pairs.len(), 3);
    assert!(report.matching.unmatched_a.is_empty() && report.matching.unmatched_b.is_empty());
    for pair in &report.matching.pairs {
        assert_eq!(pair.a, pair.b);
        assert!((pair.similarity - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fixed_rank_overrides_recommendation() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = synth(&tmp.path().join("s"), &["--rank", "3", "--drop", "1"]);
    let out = tmp.path().join("o");
    let (code, stdout, _) = stnmf(&[
        "run",
        "--input-a",
        p(&a),
        "--input-b",
        p(&b),
        "--ranks",
        "2..5",
        "--rank-a",
        "5",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("period a recommended rank: 3"), "{stdout}");
    let report: ComparisonReport =
        serde_json::from_slice(&fs::read(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!((report.rank_a, report.rank_b), (5, 2));
}

#[test]
fn rank_scan_recommends_planted_rank() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = synth(&tmp.path().join("s"), &["--rank", "3"]);
    let out = tmp.path().join("o");
    assert_eq!(
        stnmf(&["ingest", "--input-a", p(&a), "--out", p(&out)]).0,
        0
    );
    let (code, stdout, _) = stnmf(&["rank-scan", "--ranks", "2..8", "--out", p(&out)]);
    assert_eq!(code, 0);
    assert_eq!(stdout.trim(), "period a recommended rank: 3");
    let table = fs::read_to_string(out.join("scan_a.csv")).unwrap();
    assert_eq!(table.lines().count(), 8);

    let (code, _, _) = stnmf(&["rank-scan", "--ranks", "4", "--out", p(&out)]);
    assert_eq!(code, 0);
    let table = fs::read_to_string(out.join("scan_a.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("4,"));
}

#[test]
fn factorize_without_rank_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = synth(&tmp.path().join("s"), &[]);
    let out = tmp.path().join("o");
    assert_eq!(
        stnmf(&["ingest", "--input-a", p(&a), "--out", p(&out)]).0,
        0
    );
    let (code, _, err) = stnmf(&["factorize", "--out", p(&out)]);
    assert_eq!(code, 1);
    assert!(err.contains("--rank-a"), "{err}");
    assert_eq!(
        stnmf(&["factorize", "--rank-a", "2", "--out", p(&out)]).0,
        0
    );
    assert!(out.join("spatial_a.geojson").exists());
    assert!(!out.join("comparison.json").exists());
}

#[test]
fn synth_zero_noise_rebuilds_planted_product() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = synth(
        tmp.path(),
        &["--locations", "60", "--rank", "3", "--seed", "11"],
    );
    let out = tmp.path().join("o");
    assert_eq!(
        stnmf(&["ingest", "--input-a", p(&a), "--out", p(&out)]).0,
        0
    );
    let m = read_count_matrix(fs::File::open(out.join("matrix_a.csv")).unwrap()).unwrap();
    assert_eq!(m.shape(), (60, 12));

    let spec = stnmf::SyntheticSpec::new(60, 12, 3).with_seed(11);
    let planted = stnmf::generate(&spec).unwrap();
    let row_of: std::collections::HashMap<_, _> = planted
        .locations
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.clone(), i))
        .collect();
    for (loc, row) in m.locations().iter().zip(m.values().rows()) {
        assert_eq!(row, planted.planted_product.row(row_of[&loc.id]));
    }
}

#[test]
fn synth_noise_is_calibrated() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), &["--noise", "0.05", "--seed", "4"]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("synth_a.json")).unwrap()).unwrap();
    let noise = report["measured_noise"].as_f64().unwrap();
    assert!((0.04..=0.06).contains(&noise), "{noise}");
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "--rank", "5", "--drop", "2", "--noise", "0.03", "--seed", "2",
    ];
    synth(&tmp.path().join("x"), &args);
    synth(&tmp.path().join("y"), &args);
    assert_eq!(files(&tmp.path().join("x")), files(&tmp.path().join("y")));
}

#[test]
fn missing_input_exits_nonzero_and_flags_partial_run() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let missing = tmp.path().join("absent.csv");
    let (code, _, err) = stnmf(&["ingest", "--input-a", p(&missing), "--out", p(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("missing input"), "{err}");

    let (code, _, _) = stnmf(&[
        "run",
        "--input-a",
        p(&missing),
        "--input-b",
        p(&missing),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 2);
    let marker = fs::read_to_string(out.join(INCOMPLETE_MARKER)).unwrap();
    assert!(marker.starts_with("failed"), "{marker}");
}

#[test]
fn malformed_input_reports_file_and_line() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("bad.csv");
    fs::write(
        &input,
        "count_point_id,hour,latitude,longitude,all_motor_vehicles\n1,8,51.5,-0.1,10\n2,8,51.6,-0.2,-4\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let (code, stdout, _) = stnmf(&["ingest", "--input-a", p(&input), "--out", p(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("1 locations × 12 hours"), "{stdout}");
    assert!(stdout.contains("1 rejected"), "{stdout}");
    assert!(stdout.contains("bad.csv:3:"), "{stdout}");

    fs::write(&input, "id,hour\n1,8\n").unwrap();
    let (code, _, err) = stnmf(&["ingest", "--input-a", p(&input), "--out", p(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("bad.csv"), "{err}");
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = synth(&tmp.path().join("s"), &[]);
    let out = tmp.path().join("o");
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "input_a = {:?}\nout = {:?}\nhours = \"7..10\"\nperiod_a = \"2019\"\n",
            p(&a),
            p(&out)
        ),
    )
    .unwrap();
    let (code, stdout, _) = stnmf(&["ingest", "--config", p(&config)]);
    assert_eq!(code, 0);
    assert!(
        stdout.contains("(2019): 60 locations × 4 hours"),
        "{stdout}"
    );
    let (code, stdout, _) = stnmf(&["ingest", "--config", p(&config), "--hours", "7..18"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("60 locations × 12 hours"), "{stdout}");

    fs::write(&config, "sede = 1\n").unwrap();
    assert_eq!(stnmf(&["ingest", "--config", p(&config)]).0, 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(stnmf(&["run", "--bogus"]).0, 1);
    assert_eq!(
        stnmf(&[
            "run",
            "--threshold",
            "2",
            "--input-a",
            "x",
            "--input-b",
            "y"
        ])
        .0,
        1
    );
    assert_eq!(stnmf(&["ingest"]).0, 1);
    assert_eq!(stnmf(&["--help"]).0, 0);
}
