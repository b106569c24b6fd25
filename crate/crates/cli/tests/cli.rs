use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array3;
use serde_json::Value;

use nfsar::config::RunConfig;
use nfsar::io::{self, Container};
use nfsar::metrics::psf_report;
use nfsar::pipeline;
use nfsar::recon::{ImageMeta, ImageVolume};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn nfsar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfsar")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = nfsar(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

const LINEAR_PSF: &str = r#"{
    "version": 1,
    "waveform": {"f0_Hz": 77e9, "K_Hz_per_s": 62.5e12, "Nk": 64, "fS_Hz": 1e6, "fC_Hz": 79e9},
    "pattern": {"mode": "irregular", "extent_y_m": 0.063, "dz_max_m": 0.02, "count": 64, "seed": 1},
    "scene": {"source": "points", "points": [{"position_m": [0, 0, 0.3]}]},
    "reconstruct": {"algorithm": "empm", "grid": {
        "x": {"min_m": 0, "max_m": 0, "count": 1},
        "y": {"min_m": -0.02, "max_m": 0.02, "count": 41},
        "z": {"min_m": 0.2, "max_m": 0.4, "count": 81}}}
}"#;

#[test]
fn single_point_simulate_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = configs().join("single_point.json");
    let sim = ok_json(&["simulate", "--config", config.to_str().unwrap(), "--out", out]);
    assert_eq!(sim["poses"], 1024);
    let cube = dir.path().join("cube.nfsr");
    assert_eq!(Container::read(&cube).unwrap().kind(), Some("beat_cube"));
    ok_json(&["reconstruct", "--config", config.to_str().unwrap(), "--out", out, "--algo", "bpa", "--cube", cube.to_str().unwrap()]);
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let peak: Vec<f64> = serde_json::from_value(metrics["peak_m"].clone()).unwrap();
    let step = [0.005, 0.005, 0.01];
    for ((got, want), s) in peak.iter().zip([0.0, 0.0, 0.5]).zip(step) {
        assert!((got - want).abs() <= s + 1e-12, "{peak:?}");
    }
    assert_eq!(metrics["algorithm"], "bpa");
    let img = io::load_image(dir.path().join("image.nfsr")).unwrap();
    assert_eq!(img.shape(), (21, 21, 21));
    let slice = std::fs::read_to_string(dir.path().join("slice.csv")).unwrap();
    assert_eq!(slice.lines().next(), Some("x_m,y_m,z_m,magnitude,dB"));
    assert_eq!(slice.lines().count(), 21 * 21 + 1);
}

#[test]
fn psf_without_offsets_equals_planar_rma() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("psf.json");
    std::fs::write(&config, LINEAR_PSF).unwrap();
    let report = ok_json(&["psf", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--dzmax", "0,1cm"]);
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("psf.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let mut planar = RunConfig::from_json(LINEAR_PSF).unwrap();
    planar.pattern = serde_json::from_str(r#"{"mode": "linear", "dy_m": 0.001, "ny": 64}"#).unwrap();
    planar.reconstruct.as_mut().unwrap().algorithm = nfsar::config::Algorithm::RmaLinear2d;
    let img = pipeline::reconstruct_config(&planar, &pipeline::simulate_config(&planar, &pipeline::prepare(&planar).unwrap()).unwrap()).unwrap();
    let want = psf_report(&img).unwrap();
    let row = &report["rows"][0];
    assert_eq!(row["dz_max_m"], 0.0);
    for axis in [1, 2] {
        let got = row["mainlobeWidth3dB_m"][axis].as_f64().unwrap();
        let want = want.width_3db_m[axis].unwrap();
        assert!((got - want).abs() <= 1e-9 * want, "{got} {want}");
    }
}

#[test]
fn multiband_resolution_and_fusion() {
    let report = ok_json(&["multiband", "resolve", "--dz", "7.1mm"]);
    assert_eq!(report["fullband"]["resolved"], true);
    assert_eq!(report["subband1"]["resolved"], false);

    let dir = tempfile::tempdir().unwrap();
    let signal = dir.path().join("signal.nfsr");
    let gen = ok_json(&["multiband", "gen", "--target", "0.3", "--target", "45cm:0.5:-0.5", "--out", signal.to_str().unwrap()]);
    assert_eq!(gen["N"], 336);
    assert_eq!(gen["occupied"], 128);
    let csv = dir.path().join("range.csv");
    ok_json(&["multiband", "fuse", "--input", signal.to_str().unwrap(), "--nfft", "1024", "--out", csv.to_str().unwrap()]);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1025);

    let data = dir.path().join("data.nfsr");
    ok_json(&["multiband", "dataset", "--count", "5", "--nt-range", "1,3", "--snr-range-db", "-5,5", "--seed", "2", "--out", data.to_str().unwrap()]);
    let (spec, samples) = io::decode_dataset(&Container::read(&data).unwrap()).unwrap();
    assert_eq!(samples.len(), 5);
    assert_eq!(spec.nt_range, [1, 3]);
}

#[test]
fn evaluate_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let values = Array3::from_shape_fn((4, 3, 2), |(i, j, k)| (i + 2 * j + 3 * k) as f64);
    let img = ImageVolume::new(vec![0., 1., 2., 3.], vec![0., 1., 2.], vec![0., 1.], values, ImageMeta { algorithm: "bpa".into(), time_s: 0.5 }).unwrap();
    let a = dir.path().join("a.nfsr");
    io::save_image(&img, &a, false).unwrap();
    let out = dir.path().join("m.json");
    let m = ok_json(&["evaluate", "--image", a.to_str().unwrap(), "--reference", a.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(m["ssim"], 1.0);
    assert_eq!(m["nrmse"], 0.0);
    assert!(m["psnr_dB"].is_null());
    assert!(out.exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, LINEAR_PSF.replace("\"Nk\": 64", "\"Nk\": \"many\"")).unwrap();
    let out = nfsar(&["simulate", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("waveform.Nk"));

    let cfg = configs().join("single_point.json");
    let out = nfsar(&["reconstruct", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--algo", "pfa_circular_2d"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = nfsar(&["multiband", "resolve", "--dz", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let zeros = ImageVolume::new(vec![0., 1.], vec![0.], vec![0.], Array3::zeros((2, 1, 1)), ImageMeta { algorithm: "bpa".into(), time_s: 1.0 }).unwrap();
    let z = dir.path().join("zeros.nfsr");
    io::save_image(&zeros, &z, false).unwrap();
    let out = nfsar(&["evaluate", "--image", z.to_str().unwrap(), "--reference", z.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
