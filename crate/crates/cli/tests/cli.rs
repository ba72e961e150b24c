use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nfisac_core::scene::RadarCube;
use nfisac_core::spread::AngularSpreadTable;
use serde_json::{json, Value};
use tempfile::TempDir;

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn small() -> Value {
    serde_json::from_str(&fs::read_to_string(preset("small.json")).unwrap()).unwrap()
}

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, value: &Value) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
        path
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_nfisac"))
            .args(args)
            .env("NFISAC_CACHE_DIR", self.path("cache"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_and_sense_the_small_preset() {
    let sb = Sandbox::new();
    let out = sb.path("out");
    let cfg = preset("small.json");
    sb.ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let report = read_json(&out.join("training_report.json"));
    assert_eq!(report["report"]["beams_swept"], 64);
    assert_eq!(report["report"]["candidate_angles"].as_array().unwrap().len(), 4);
    for name in ["dft_codebook.json", "spread_table.json", "provenance.json"] {
        assert!(out.join(name).exists(), "{name}");
    }

    sb.ok(&["sense", "--config", s(&cfg), "--out", s(&out)]);
    let det = read_json(&out.join("detections.json"));
    let list = det["detections"].as_array().unwrap();
    assert_eq!(list.len(), 2, "{det}");
    for (range, velocity) in [(1.125, 5.0), (1.5, -5.0)] {
        assert!(list.iter().any(|d| {
            (d["range_m"].as_f64().unwrap() - range).abs() <= 0.375
                && (d["velocity_mps"].as_f64().unwrap() - velocity).abs() <= 1.0
        }));
    }
    let map = fs::read_to_string(out.join("detection_map.csv")).unwrap();
    let mut lines = map.lines();
    assert!(lines.next().unwrap().starts_with("# nfisac "));
    assert!(lines.next().unwrap().starts_with("range_bin,"));
    assert!(fs::read_to_string(out.join("complexity.csv")).unwrap().starts_with("# nfisac "));
    for name in ["range_doppler.ppm", "angle_doppler.ppm"] {
        assert!(fs::read(out.join(name)).unwrap().starts_with(b"P6\n# nfisac "));
    }
    let prov = read_json(&out.join("provenance.json"));
    assert_eq!(prov["command"], "sense");
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(prov["config"]["geometry"]["n_elements"], 64);
}

#[test]
fn noiseless_grid_point_user_refines_to_itself() {
    let sb = Sandbox::new();
    let first = sb.path("first");
    let cfg = preset("small.json");
    sb.ok(&["train", "--config", s(&cfg), "--out", s(&first), "--noiseless"]);
    let table = AngularSpreadTable::from_json(&fs::read_to_string(first.join("spread_table.json")).unwrap()).unwrap();
    let point = table.grid()[table.len() / 3];

    let mut value = small();
    value["user"] = json!({ "range_m": point.range(), "angle_deg": point.angle_deg() });
    let cfg = sb.config("grid_user.json", &value);
    let out = sb.path("out");
    sb.ok(&["train", "--config", s(&cfg), "--out", s(&out), "--noiseless"]);
    let report = read_json(&out.join("training_report.json"));
    for key in ["coarse", "refined"] {
        let est = &report["report"][key];
        assert!((est["range"].as_f64().unwrap() - point.range()).abs() < 1e-9, "{key}: {est}");
        assert!((est["angle"].as_f64().unwrap() - point.angle()).abs() < 1e-9, "{key}: {est}");
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let sb = Sandbox::new();
    let out = sb.path("out");
    let missing = sb.path("missing.json");
    assert_eq!(code(&sb.run(&["train", "--config", s(&missing), "--out", s(&out)])), 2);

    let mut value = small();
    value["geometry"]["elements"] = json!(64);
    let bad = sb.config("bad.json", &value);
    let run = sb.run(&["train", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("elements"));

    let cfg = preset("small.json");
    assert_eq!(code(&sb.run(&["evaluate", "--config", s(&cfg), "--out", s(&out), "--panel", "nope"])), 2);
    assert_eq!(code(&sb.run(&["sense", "--config", s(&cfg), "--out", s(&out)])), 2);
    assert_eq!(code(&sb.run(&["frobnicate"])), 2);
}

#[test]
fn window_without_targets_exits_with_four() {
    let sb = Sandbox::new();
    let mut value = small();
    value["user"] = json!({ "range_m": 4.0, "angle_deg": 10.0 });
    let cfg = sb.config("far_user.json", &value);
    let out = sb.path("out");
    sb.ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let run = sb.run(&["sense", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&run), 4, "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let sb = Sandbox::new();
    let cfg = preset("small.json");
    let (a, b) = (sb.path("a"), sb.path("b"));
    for out in [&a, &b] {
        sb.ok(&["train", "--config", s(&cfg), "--out", s(out), "--seed", "5"]);
        sb.ok(&["sense", "--config", s(&cfg), "--out", s(out), "--seed", "5"]);
    }
    for name in ["training_report.json", "detection_map.csv", "detections.json", "range_doppler.ppm"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = sb.path("c");
    sb.ok(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "6"]);
    sb.ok(&["sense", "--config", s(&cfg), "--out", s(&c), "--seed", "6"]);
    assert_ne!(fs::read(a.join("detection_map.csv")).unwrap(), fs::read(c.join("detection_map.csv")).unwrap());
}

#[test]
fn empty_scene_has_no_detections() {
    let sb = Sandbox::new();
    let mut value = small();
    value["targets"] = json!([]);
    value["user"] = json!({ "range_m": 1.3, "angle_deg": 10.0 });
    let cfg = sb.config("empty.json", &value);
    let out = sb.path("out");
    sb.ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    for seed in ["1", "2", "3"] {
        sb.ok(&["sense", "--config", s(&cfg), "--out", s(&out), "--seed", seed]);
        let det = read_json(&out.join("detections.json"));
        assert_eq!(det["detections"].as_array().unwrap().len(), 0, "seed {seed}: {det}");
    }
}

#[test]
fn empty_case_study_scene_has_no_detections() {
    let sb = Sandbox::new();
    let mut value: Value = serde_json::from_str(&fs::read_to_string(preset("case_study.json")).unwrap()).unwrap();
    value["targets"] = json!([]);
    let cfg = sb.config("empty.json", &value);
    let out = sb.path("out");
    sb.ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    sb.ok(&["sense", "--config", s(&cfg), "--out", s(&out)]);
    let det = read_json(&out.join("detections.json"));
    assert_eq!(det["detections"].as_array().unwrap().len(), 0, "{det}");
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# nfisac "));
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn evaluation_panels_write_csv() {
    let sb = Sandbox::new();
    let cfg = preset("small.json");
    let out = sb.path("out");
    for panel in ["complexity", "rate", "sinr", "transverse"] {
        sb.ok(&["evaluate", "--config", s(&cfg), "--out", s(&out), "--panel", panel]);
    }

    let (header, rows) = csv_rows(&out.join("complexity.csv"));
    assert_eq!(header.last().unwrap(), "reduction_factor");
    // 40000 * 64^3 / (4 * 4^3)
    assert_eq!(*rows[0].last().unwrap(), 40_960_000.0);

    let (header, rows) = csv_rows(&out.join("rate.csv"));
    assert_eq!(header.len(), 5);
    assert_eq!(rows.len(), 16);

    let (header, rows) = csv_rows(&out.join("sinr.csv"));
    assert_eq!(header[0], "velocity_mps");
    assert_eq!(rows.len(), 41);
    for r in &rows {
        assert!(r[1] + 1e-9 >= r[2] && r[1] + 1e-9 >= r[3], "{r:?}");
    }

    let (_, rows) = csv_rows(&out.join("transverse.csv"));
    assert_eq!(rows.len(), 11);
    assert!(rows.last().unwrap()[1].is_infinite());
}

#[test]
fn cube_dump_round_trips_and_respects_the_cap() {
    let sb = Sandbox::new();
    let tiny = json!({
        "geometry": { "n_elements": 8 },
        "waveform": { "prf_hz": 6.25e6, "m_pulses": 8 },
        "targets": [{ "range_m": 5.0, "angle_deg": 0.0, "v_radial_mps": 0.0 }],
        "clutter": null,
    });
    let cfg = sb.config("tiny.json", &tiny);
    let out = sb.path("out");
    sb.ok(&["cube-dump", "--config", s(&cfg), "--out", s(&out), "--noiseless"]);
    let cube = RadarCube::read_from(fs::File::open(out.join("cube.bin")).unwrap()).unwrap();
    assert_eq!(cube.dims(), (64, 8, 8));
    // Noiseless: only the target bin is lit.
    let energy = |l: usize| (0..8).flat_map(|m| (0..8).map(move |n| (m, n))).map(|(m, n)| cube.at(l, m, n).norm_sqr()).sum::<f64>();
    let lit: Vec<usize> = (0..64).filter(|&l| energy(l) > 0.0).collect();
    assert_eq!(lit.len(), 1);

    let run = sb.run(&["cube-dump", "--config", s(&preset("case_study.json")), "--out", s(&out)]);
    assert_eq!(code(&run), 2);
}

#[test]
fn threads_flag_is_accepted() {
    let sb = Sandbox::new();
    let out = sb.path("out");
    sb.ok(&["--threads", "1", "evaluate", "--config", s(&preset("small.json")), "--out", s(&out), "--panel", "complexity"]);
    assert!(out.join("complexity.csv").exists());
}
