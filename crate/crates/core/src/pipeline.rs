//! End-to-end jobs shared by the command line and the HTTP API so that both
//! produce identical results from the same description.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, PatternConfig, ReconConfig, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::{synthesize_aperture, AntennaArray, ScanPattern};
use crate::metrics::{psf_report, PsfReport};
use crate::recon::{self, ImageVolume};
use crate::scene::Scene;
use crate::simulate::{add_awgn, beat_signal, mult_to_mono, BeatCube};
use crate::waveform::{derive_waveform, WaveformParams};

/// Inputs of a beat-signal simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationInputs<'a> {
    pub waveform: &'a WaveformParams,
    pub array: &'a AntennaArray,
    pub pattern: &'a ScanPattern,
    pub aperture_z_m: f64,
    pub scene: &'a Scene,
    pub pathloss: bool,
    /// SNR (dB) and noise seed.
    pub noise: Option<(f64, u64)>,
    pub mult_to_mono_zref_m: Option<f64>,
}

/// Builds the aperture, simulates the beat cube, then applies noise and the
/// multistatic conversion when requested.
pub fn simulate(inp: &SimulationInputs) -> Result<BeatCube> {
    let wf = derive_waveform(inp.waveform)?;
    let poses = synthesize_aperture(inp.array, inp.pattern, inp.aperture_z_m)?;
    let mut cube = beat_signal(inp.scene, &poses, &wf, inp.pathloss)?;
    if let Some((snr, seed)) = inp.noise {
        cube = add_awgn(&cube, snr, seed);
    }
    if let Some(z) = inp.mult_to_mono_zref_m {
        cube = mult_to_mono(&cube, z)?;
    }
    Ok(cube)
}

/// Aperture facts a reconstruction needs beyond the cube itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureInfo {
    pub mode: crate::geometry::ScanMode,
    pub aperture_z_m: f64,
    pub ring_radius_m: Option<f64>,
}

impl ApertureInfo {
    pub fn of(pattern: &PatternConfig, aperture_z_m: f64) -> Self {
        ApertureInfo { mode: pattern.mode(), aperture_z_m, ring_radius_m: pattern.ring_radius_m() }
    }
}

/// Runs the selected algorithm and records its wall time in the image.
pub fn reconstruct(cube: &BeatCube, rc: &ReconConfig, ap: &ApertureInfo) -> Result<ImageVolume> {
    if !rc.algorithm.accepts(ap.mode) {
        return Err(Error::GeometryMismatch(format!("{} cannot reconstruct a {:?} aperture", rc.algorithm, ap.mode)));
    }
    let grid = &rc.grid;
    grid.validate()?;
    let opts = &rc.options;
    let focus = rc.focus_z_m.unwrap_or_else(|| grid.z.center());
    let ring = || ap.ring_radius_m.ok_or_else(|| Error::GeometryMismatch("aperture has no ring radius".into()));
    let start = Instant::now();
    let mut img = match rc.algorithm {
        Algorithm::Bpa => recon::bpa_with(cube, grid, opts)?,
        Algorithm::FftLinear1d => recon::fft_linear_1d(cube, focus, grid, opts)?,
        Algorithm::RmaLinear2d => recon::rma_linear_2d(cube, grid, opts)?,
        Algorithm::FftRectilinear2d => recon::fft_rectilinear_2d(cube, focus, grid, opts)?,
        Algorithm::RmaRectilinear3d => recon::rma_rectilinear_3d(cube, grid, opts)?,
        Algorithm::PfaCircular2d => recon::pfa_circular_2d(cube, ring()?, grid, opts)?,
        Algorithm::PfaCylindrical3d => recon::pfa_cylindrical_3d(cube, ring()?, grid, opts)?,
        Algorithm::Empm => recon::empm_reconstruct(cube, ap.aperture_z_m, grid, opts)?,
    };
    img.meta.time_s = start.elapsed().as_secs_f64();
    Ok(img)
}

/// Resolved scene and pattern of a run configuration.
pub struct Prepared {
    pub pattern: ScanPattern,
    pub scene: Scene,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    Ok(Prepared { pattern: cfg.pattern.build()?, scene: cfg.scene.build(&cfg.base_dir, cfg.seed)? })
}

/// Simulates the cube described by a run configuration.
pub fn simulate_config(cfg: &RunConfig, prep: &Prepared) -> Result<BeatCube> {
    simulate(&SimulationInputs {
        waveform: &cfg.waveform,
        array: &cfg.array,
        pattern: &prep.pattern,
        aperture_z_m: cfg.aperture_z_m,
        scene: &prep.scene,
        pathloss: cfg.pathloss,
        noise: cfg.noise.map(|n| (n.snr_db, n.seed.unwrap_or(cfg.seed))),
        mult_to_mono_zref_m: cfg.mult_to_mono_zref_m,
    })
}

pub fn reconstruct_config(cfg: &RunConfig, cube: &BeatCube) -> Result<ImageVolume> {
    let rc = cfg.reconstruct.as_ref().ok_or_else(|| Error::invalid("reconstruct", "missing reconstruction section"))?;
    reconstruct(cube, rc, &ApertureInfo::of(&cfg.pattern, cfg.aperture_z_m))
}

/// One row of a PSF sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfRow {
    pub dz_max_m: f64,
    #[serde(flatten)]
    pub report: PsfReport,
    pub time_s: f64,
}

/// Reconstructs the configured scene from irregular tracks with each maximum
/// plane offset and reports the PSF of every image.
pub fn psf_sweep(cfg: &RunConfig, dz_max_m: &[f64]) -> Result<Vec<PsfRow>> {
    let base = match &cfg.pattern {
        PatternConfig::Irregular(s) => *s,
        _ => return Err(Error::invalid("pattern.mode", "a PSF sweep needs an irregular pattern")),
    };
    let scene = cfg.scene.build(&cfg.base_dir, cfg.seed)?;
    dz_max_m
        .iter()
        .map(|&dz| {
            let mut run = cfg.clone();
            run.pattern = PatternConfig::Irregular(crate::geometry::IrregularSpec { dz_max_m: dz, ..base });
            let prep = Prepared { pattern: run.pattern.build()?, scene: scene.clone() };
            let cube = simulate_config(&run, &prep)?;
            let img = reconstruct_config(&run, &cube)?;
            Ok(PsfRow { dz_max_m: dz, report: psf_report(&img)?, time_s: img.meta.time_s })
        })
        .collect()
}

/// PSF rows as CSV.
pub fn write_psf_csv<W: std::io::Write>(rows: &[PsfRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record([
        "dz_max_m",
        "peak_x_m",
        "peak_y_m",
        "peak_z_m",
        "width3dB_x_m",
        "width3dB_y_m",
        "width3dB_z_m",
        "pslr_dB",
        "time_s",
    ])
    .map_err(err)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let p = &r.report;
        out.write_record([
            r.dz_max_m.to_string(),
            p.peak_m[0].to_string(),
            p.peak_m[1].to_string(),
            p.peak_m[2].to_string(),
            opt(p.width_3db_m[0]),
            opt(p.width_3db_m[1]),
            opt(p.width_3db_m[2]),
            opt(p.pslr_db),
            r.time_s.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// Resolves an output path against a directory.
pub fn output_path(dir: &Path, p: &Path) -> std::path::PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
