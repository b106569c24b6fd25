use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use nfsar::config::{parse_json, ConfigError, RunConfig};
use nfsar::io;
use nfsar::metrics::{efficiency_score, evaluate, psf_report};
use nfsar::multiband::{self, DatasetSpec, RangeTarget, Subband, SubbandSpec};
use nfsar::pipeline::{self, output_path};
use nfsar::{Complex64, Error};

use crate::{Command, JobArgs, MultibandCommand, SpecArgs};

/// A failed command and its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_validation() { EXIT_VALIDATION } else { EXIT_NUMERIC }, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: EXIT_VALIDATION, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: EXIT_VALIDATION, message: e.to_string() }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> Failure {
    ConfigError::at(path, message).into()
}

type CmdResult<T = ()> = Result<T, Failure>;

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Simulate(job) => simulate(&job),
        Command::Reconstruct { job, algo, cube, db_min } => reconstruct(&job, algo, cube.as_deref(), db_min),
        Command::Psf { job, dzmax } => psf(&job, &dzmax),
        Command::Multiband { command } => multiband(command),
        Command::Evaluate { image, reference, out } => evaluate_cmd(&image, &reference, out.as_deref()),
        Command::Serve { port, host } => serve(&host, port),
    }
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON value serializes"));
}

fn load(job: &JobArgs) -> CmdResult<RunConfig> {
    let mut cfg = RunConfig::load(&job.config)?;
    if let Some(s) = job.seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(&job.out)?;
    Ok(cfg)
}

fn out_file(job: &JobArgs, configured: &Option<PathBuf>, default: &str) -> PathBuf {
    output_path(&job.out, configured.as_deref().unwrap_or(Path::new(default)))
}

fn simulate(job: &JobArgs) -> CmdResult {
    let cfg = load(job)?;
    let start = std::time::Instant::now();
    let prep = pipeline::prepare(&cfg)?;
    let cube = pipeline::simulate_config(&cfg, &prep)?;
    let time_s = start.elapsed().as_secs_f64();
    let path = out_file(job, &cfg.outputs.cube, "cube.nfsr");
    io::save_cube(&cube, &path)?;
    print(&json!({
        "cube": path,
        "poses": cube.num_poses(),
        "Nk": cube.waveform.nk(),
        "scatterers": prep.scene.len(),
        "time_s": time_s,
    }));
    Ok(())
}

fn reconstruct(job: &JobArgs, algo: Option<nfsar::config::Algorithm>, cube_path: Option<&Path>, db_min: f64) -> CmdResult {
    if !(db_min.is_finite() && db_min <= 0.0) {
        return Err(invalid("db-min", "must be a nonpositive number of dB"));
    }
    let mut cfg = load(job)?;
    if let Some(a) = algo {
        let rc = cfg.reconstruct.as_mut().ok_or_else(|| invalid("reconstruct", "the configuration has no reconstruction grid"))?;
        rc.algorithm = a;
        cfg.validate()?;
    }
    let cube = match cube_path {
        Some(p) => io::load_cube(p)?,
        None => pipeline::simulate_config(&cfg, &pipeline::prepare(&cfg)?)?,
    };
    let img = pipeline::reconstruct_config(&cfg, &cube)?;
    let image_path = out_file(job, &cfg.outputs.image, "image.nfsr");
    io::save_image(&img, &image_path, cfg.outputs.complex_image)?;
    let peak = img.argmax();
    let slice_path = out_file(job, &cfg.outputs.slice_csv, "slice.csv");
    io::write_slice_csv(&img, peak[2], db_min, std::fs::File::create(&slice_path)?)?;
    let psf = psf_report(&img).ok();
    let metrics = json!({
        "algorithm": img.meta.algorithm,
        "time_s": img.meta.time_s,
        "shape": img.shape(),
        "peak_m": img.position(peak),
        "peakIndex": peak,
        "psf": psf,
    });
    let metrics_path = out_file(job, &cfg.outputs.metrics, "metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&metrics).expect("JSON value serializes"))?;
    print(&json!({"image": image_path, "slice": slice_path, "metrics": metrics}));
    Ok(())
}

fn psf(job: &JobArgs, dzmax: &[f64]) -> CmdResult {
    let cfg = load(job)?;
    let list = if dzmax.is_empty() {
        cfg.psf.as_ref().map(|p| p.dz_max_m.clone()).ok_or_else(|| invalid("psf.dz_max_m", "give --dzmax or a psf section"))?
    } else {
        dzmax.to_vec()
    };
    if list.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(invalid("dzmax", "offsets must be nonnegative"));
    }
    let rows = pipeline::psf_sweep(&cfg, &list)?;
    let path = out_file(job, &cfg.outputs.psf_csv, "psf.csv");
    pipeline::write_psf_csv(&rows, std::fs::File::create(&path)?)?;
    print(&json!({"psf": path, "rows": rows}));
    Ok(())
}

fn subband_spec(a: &SpecArgs) -> CmdResult<SubbandSpec> {
    let mut spec = match &a.spec {
        Some(p) => parse_json::<SubbandSpec>(&std::fs::read_to_string(p)?)?,
        None => SubbandSpec::default(),
    };
    if !a.subbands.is_empty() {
        spec.subbands = a
            .subbands
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (f, n) = s.split_once(':').ok_or_else(|| invalid(&format!("subbands[{i}]"), "expected f_start_Hz:Nk"))?;
                let f_start = f.trim().parse().map_err(|_| invalid(&format!("subbands[{i}].f_start_Hz"), "not a number"))?;
                let nk = n.trim().parse().map_err(|_| invalid(&format!("subbands[{i}].Nk"), "not a count"))?;
                Ok(Subband { f_start, nk })
            })
            .collect::<CmdResult<_>>()?;
    }
    if let Some(df) = a.df_hz {
        spec.df = df;
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_target(s: &str) -> CmdResult<RangeTarget> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |i: usize, default: f64| -> CmdResult<f64> {
        parts.get(i).map_or(Ok(default), |p| p.trim().parse().map_err(|_| invalid("target", format!("`{s}` is not range[:re[:im]]"))))
    };
    if parts.len() > 3 {
        return Err(invalid("target", format!("`{s}` is not range[:re[:im]]")));
    }
    let range = crate::parse_length(parts[0]).map_err(|e| invalid("target", e))?;
    Ok(RangeTarget { range_m: range, reflectivity: Complex64::new(num(1, 1.0)?, num(2, 0.0)?) })
}

fn multiband(cmd: MultibandCommand) -> CmdResult {
    match cmd {
        MultibandCommand::Gen { spec, targets, out } => {
            let spec = subband_spec(&spec)?;
            let targets = targets.iter().map(|t| parse_target(t)).collect::<CmdResult<Vec<_>>>()?;
            let fullband = multiband::gen_fullband(&targets, &spec)?;
            let signal = multiband::apply_band_mask(&fullband, &spec)?;
            let occupied = signal.mask.iter().filter(|m| **m).count();
            io::encode_multiband(&io::MultibandFile { spec: spec.clone(), targets, fullband, signal })?.write(&out)?;
            print(&json!({"out": out, "N": spec.total_len(), "offsets": spec.offsets(), "occupied": occupied}));
        }
        MultibandCommand::Fuse { input, nfft, out } => {
            let m = io::decode_multiband(&io::Container::read(&input)?)?;
            let spectrum = multiband::mft_fuse(&m.signal, &m.spec, nfft)?;
            let mut w = std::fs::File::create(&out)?;
            use std::io::Write;
            writeln!(w, "range_m,magnitude,re,im")?;
            for (r, v) in spectrum.range_m.iter().zip(&spectrum.values) {
                writeln!(w, "{r},{},{},{}", v.norm(), v.re, v.im)?;
            }
            print(&json!({"out": out, "nfft": nfft, "sidelobe_dB": multiband::sidelobe_level_db(&spectrum)?}));
        }
        MultibandCommand::Resolve { spec, dz, snr_db, seed, out } => {
            if !(dz > 0.0 && dz.is_finite()) {
                return Err(invalid("dz", "must be positive"));
            }
            let spec = subband_spec(&spec)?;
            let report = multiband::two_peak_resolution_test(dz, &spec, snr_db, seed)?;
            let v = serde_json::to_value(&report).expect("report serializes");
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_string_pretty(&v).expect("JSON value serializes"))?;
            }
            print(&v);
        }
        MultibandCommand::Dataset { spec, count, nt_range, snr_range_db, seed, out } => {
            if count == 0 {
                return Err(invalid("count", "must be at least 1"));
            }
            if nt_range.len() != 2 || snr_range_db.len() != 2 {
                return Err(invalid("dataset", "ranges take exactly two values `min,max`"));
            }
            if nt_range[0] == 0 || nt_range[0] > nt_range[1] {
                return Err(invalid("nt_range", "needs 1 <= min <= max"));
            }
            if !(snr_range_db[0].is_finite() && snr_range_db[1].is_finite() && snr_range_db[0] <= snr_range_db[1]) {
                return Err(invalid("snr_range_dB", "needs finite min <= max"));
            }
            let ds = DatasetSpec {
                count,
                nt_range: [nt_range[0], nt_range[1]],
                snr_range_db: [snr_range_db[0], snr_range_db[1]],
                spec: subband_spec(&spec)?,
                seed,
            };
            let samples = multiband::dataset_gen(&ds)?;
            io::encode_dataset(&ds, &samples)?.write(&out)?;
            print(&json!({"out": out, "count": samples.len(), "N": ds.spec.total_len()}));
        }
    }
    Ok(())
}

fn evaluate_cmd(image: &Path, reference: &Path, out: Option<&Path>) -> CmdResult {
    let img = io::load_image(image)?;
    let reference = io::load_image(reference)?;
    let report = evaluate(&img, &reference)?;
    let mut v = serde_json::to_value(report).expect("report serializes");
    let efficiency = if report.ssim > 0.0 && report.ssim <= 1.0 { efficiency_score(report.ssim, report.time_s).ok() } else { None };
    v["efficiency_dB"] = json!(efficiency);
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_string_pretty(&v).expect("JSON value serializes"))?;
    }
    print(&v);
    Ok(())
}

fn serve(host: &str, port: u16) -> CmdResult {
    let addr: std::net::SocketAddr = format!("{host}:{port}").parse().map_err(|e| invalid("host", format!("{e}")))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(nfsar_server::serve(addr))?;
    Ok(())
}
