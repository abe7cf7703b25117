use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn areaprof(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_areaprof"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic city plus the run config, generated once per test binary.
fn city() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-city");
        let _ = fs::remove_dir_all(&dir);
        let out = areaprof(&["synth", "--spec", s(&fixtures().join("city.toml")), "--out", s(&dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        fs::copy(fixtures().join("run.toml"), dir.join("run.toml")).unwrap();
        dir
    })
}

/// Output directory of one full pipeline run over the fixture.
fn full_run() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = areaprof(&["run-all", "--config", s(&city().join("run.toml")), "--out", s(dir.path())]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
    .path()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn assert_same_tree(a: &Path, b: &Path) {
    let mut names = Vec::new();
    for entry in fs::read_dir(a).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        if entry.file_type().unwrap().is_dir() {
            assert_same_tree(&entry.path(), &b.join(&name));
        } else {
            assert_eq!(fs::read(entry.path()).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?} differs");
        }
        names.push(name);
    }
    assert_eq!(names.len(), fs::read_dir(b).unwrap().count());
}

#[test]
fn synth_writes_three_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = fixtures().join("city.toml");
    for d in [&a, &b] {
        assert_eq!(code(&areaprof(&["synth", "--spec", s(&spec), "--out", s(d.path())])), 0);
    }
    let mut files: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files, ["cdr.csv", "pois.csv", "towers.csv"]);
    assert_same_tree(a.path(), b.path());
}

#[test]
fn synth_rejects_missing_or_invalid_spec() {
    let d = tempfile::tempdir().unwrap();
    let out = areaprof(&["synth", "--spec", s(&d.path().join("nope.toml")), "--out", s(d.path())]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());

    let bad = d.path().join("bad.toml");
    let text = fs::read_to_string(fixtures().join("city.toml")).unwrap();
    fs::write(&bad, text.replace("eating = 0.6", "eating = 0.9")).unwrap();
    assert_eq!(code(&areaprof(&["synth", "--spec", s(&bad), "--out", s(d.path())])), 2);
}

#[test]
fn cluster_map_has_four_clusters() {
    let geo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(full_run().join("clusters.geojson")).unwrap()).unwrap();
    let features = geo["features"].as_array().unwrap();
    assert_eq!(features.len(), 200);
    let clusters: BTreeSet<u64> = features.iter().map(|f| f["properties"]["cluster"].as_u64().unwrap()).collect();
    assert_eq!(clusters.len(), 4);
    let ring = features[0]["geometry"]["coordinates"][0].as_array().unwrap();
    assert_eq!(ring.len(), 5);
    assert_eq!(ring[0], ring[4]);
}

#[test]
fn single_cell_single_category_is_degenerate() {
    let d = tempfile::tempdir().unwrap();
    let pois = d.path().join("pois.csv");
    let mut text = String::from("id,lon,lat,poi_type\n");
    for i in 0..5 {
        text.push_str(&format!("{i},11.1002,46.0502,restaurant\n"));
    }
    fs::write(&pois, text).unwrap();
    let out = areaprof(&["cluster", "--pois", s(&pois), "--out", s(&d.path().join("out"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient distinct profiles"));
}

#[test]
fn empty_grid_is_degenerate() {
    let d = tempfile::tempdir().unwrap();
    let pois = d.path().join("pois.csv");
    fs::write(&pois, "id,lon,lat,poi_type\n").unwrap();
    let out = areaprof(&[
        "cluster", "--pois", s(&pois), "--bbox", "11.1,46.05,11.11,46.06", "--out", s(&d.path().join("out")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn missing_taxonomy_is_an_input_error() {
    let d = tempfile::tempdir().unwrap();
    let out = areaprof(&[
        "cluster",
        "--config", s(&city().join("run.toml")),
        "--taxonomy", s(&d.path().join("missing.csv")),
        "--out", s(&d.path().join("out")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn injected_spike_is_the_only_anomaly() {
    let anomalies = rows(&full_run().join("anomalies.csv"));
    assert_eq!(anomalies.len(), 1, "{anomalies:?}");
    assert_eq!(anomalies[0][1], "2013-04-03");
    assert_eq!(anomalies[0][2], "10");
    assert_eq!(anomalies[0][6], "above");
}

#[test]
fn holidays_are_left_out_of_profile_support() {
    // 56 days of data, one of them a holiday; daily profiles
    let profiles = rows(&full_run().join("profiles.csv"));
    assert_eq!(profiles.len(), 4 * 24);
    assert!(profiles.iter().all(|r| r[6] == "55"));
}

#[test]
fn empty_cdr_warns_and_writes_header_only_profiles() {
    let d = tempfile::tempdir().unwrap();
    let cdr = d.path().join("cdr.csv");
    fs::write(&cdr, "tower_id,timestamp,duration_s\n").unwrap();
    let out = d.path().join("out");
    let config = city().join("run.toml");
    assert_eq!(code(&areaprof(&["cluster", "--config", s(&config), "--out", s(&out)])), 0);
    let run = areaprof(&["patterns", "--config", s(&config), "--cdr", s(&cdr), "--out", s(&out)]);
    assert_eq!(code(&run), 0);
    assert!(String::from_utf8_lossy(&run.stderr).contains("warning"));
    assert_eq!(fs::read_to_string(out.join("profiles.csv")).unwrap(), "cluster,slot,mean,std,low,high,support\n");
}

#[test]
fn patterns_and_evaluate_need_upstream_outputs() {
    let d = tempfile::tempdir().unwrap();
    let config = city().join("run.toml");
    let out = d.path().join("out");
    assert_eq!(code(&areaprof(&["patterns", "--config", s(&config), "--out", s(&out)])), 2);
    assert_eq!(code(&areaprof(&["cluster", "--config", s(&config), "--out", s(&out)])), 0);
    assert_eq!(code(&areaprof(&["evaluate", "--config", s(&config), "--out", s(&out)])), 2);
}

#[test]
fn planted_clusters_have_positive_silhouettes() {
    let summary = rows(&full_run().join("silhouette_summary.csv"));
    assert_eq!(summary.len(), 4);
    for r in &summary {
        assert!(r[2].parse::<f64>().unwrap() >= 0.9, "{r:?}");
    }
}

/// Two POI archetypes in the lower and upper halves with the same diurnal
/// shape. One row of towers straddles the boundary, so every tower serves
/// both clusters equally and between-cluster distances match within-cluster ones.
/// K is set near the 100-cell group size so the eigengap finds the two halves.
const TWIN_CITY: &str = r#"
seed = 5

[grid]
origin_lon = 11.10
origin_lat = 46.05
nx = 20
ny = 10

[pois]
mean_per_cell = 12.0

[towers]
nx = 4
ny = 1
jitter = 0.0

[cdr]
start = "2013-03-04"
weeks = 4
rate_scale = 10.0

[[archetype]]
name = "food"
mixture = { eating = 0.6, shopping = 0.4 }
region = [0, 0, 20, 5]

[[archetype]]
name = "home"
mixture = { residential = 0.8, health_medicine = 0.2 }
region = [0, 5, 20, 10]
"#;

#[test]
fn identical_temporal_profiles_score_near_zero() {
    let d = tempfile::tempdir().unwrap();
    let spec = d.path().join("twin.toml");
    fs::write(&spec, TWIN_CITY).unwrap();
    assert_eq!(code(&areaprof(&["synth", "--spec", s(&spec), "--out", s(d.path())])), 0);
    let config = d.path().join("run.toml");
    fs::write(&config, "pois = \"pois.csv\"\ntowers = \"towers.csv\"\ncdr = \"cdr.csv\"\nknn = 80\n").unwrap();
    let out = d.path().join("out");
    let run = areaprof(&["run-all", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(rows(&out.join("silhouette_summary.csv")).len(), 2);
    let points = rows(&out.join("silhouette.csv"));
    let mean = points.iter().map(|r| r[4].parse::<f64>().unwrap()).sum::<f64>() / points.len() as f64;
    assert!(mean.abs() <= 0.1, "mean silhouette {mean}");
}

#[test]
fn non_positive_alpha_fails_before_any_work() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let run = areaprof(&["run-all", "--config", s(&city().join("run.toml")), "--alpha", "0", "--out", s(&out)]);
    assert_eq!(code(&run), 2);
    assert!(!out.exists());
    let run = areaprof(&["run-all", "--config", s(&city().join("run.toml")), "--alpha", "-1", "--out", s(&out)]);
    assert_eq!(code(&run), 2);
}

#[test]
fn corrupt_cdr_row_is_counted_and_skipped() {
    let d = tempfile::tempdir().unwrap();
    let mut text = fs::read_to_string(city().join("cdr.csv")).unwrap();
    text.push_str("T001,not-a-time,12\n");
    let cdr = d.path().join("cdr.csv");
    fs::write(&cdr, text).unwrap();
    let out = d.path().join("out");
    let run = areaprof(&["run-all", "--config", s(&city().join("run.toml")), "--cdr", s(&cdr), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let report = fs::read_to_string(out.join("cdr_report.txt")).unwrap();
    assert!(report.contains("malformed=1"), "{report}");
    for name in ["clusters.geojson", "profiles.csv", "anomalies.csv", "silhouette.csv", "run_report.txt"] {
        assert!(out.join(name).is_file(), "{name}");
    }
}

#[test]
fn effective_config_reproduces_the_run() {
    let d = tempfile::tempdir().unwrap();
    let run = areaprof(&["run-all", "--config", s(&full_run().join("effective_config.toml")), "--out", s(d.path())]);
    assert_eq!(code(&run), 0);
    assert_same_tree(full_run(), d.path());
}
