//! Declarative job descriptions shared by the command line and the HTTP API.
//!
//! All physical quantities use unit-suffixed keys. Validation errors carry
//! the JSON path of the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gen_irregular, gen_pattern, AntennaArray, IrregularSpec, PatternSpec, ScanMode, ScanPattern};
use crate::recon::{ImageGrid, ReconOptions};
use crate::scene::{from_raster, random_points, Amplitude, Bounds, PointScatterer, Raster, Scene};
use crate::waveform::WaveformParams;
use crate::Complex64;

pub const CONFIG_VERSION: u32 = 1;

/// A configuration problem located by its JSON path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }

    /// Attaches a prefix to the field named by a library validation error.
    pub fn from_error(prefix: &str, e: &Error) -> Self {
        match e {
            Error::InvalidParameter { field, reason } => ConfigError::at(join(prefix, field), reason.clone()),
            other => ConfigError::at(prefix, other.to_string()),
        }
    }
}

fn join(prefix: &str, field: &str) -> String {
    match (prefix.is_empty(), field.is_empty()) {
        (true, _) => field.to_string(),
        (_, true) => prefix.to_string(),
        _ => format!("{prefix}.{field}"),
    }
}

/// Deserializes JSON, reporting the path of the first offending field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> std::result::Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        ConfigError::at(path, e.into_inner().to_string())
    })
}

/// Scan pattern description: a regular mode with its step sizes and counts,
/// or an irregular multi-planar track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PatternConfig {
    Linear(PatternSpec),
    Rectilinear(PatternSpec),
    Circular(PatternSpec),
    Cylindrical(PatternSpec),
    Irregular(IrregularSpec),
}

impl PatternConfig {
    pub fn mode(&self) -> ScanMode {
        match self {
            PatternConfig::Linear(_) => ScanMode::Linear,
            PatternConfig::Rectilinear(_) => ScanMode::Rectilinear,
            PatternConfig::Circular(_) => ScanMode::Circular,
            PatternConfig::Cylindrical(_) => ScanMode::Cylindrical,
            PatternConfig::Irregular(_) => ScanMode::Irregular,
        }
    }

    pub fn build(&self) -> Result<ScanPattern> {
        match self {
            PatternConfig::Irregular(spec) => gen_irregular(spec),
            PatternConfig::Linear(s) | PatternConfig::Rectilinear(s) | PatternConfig::Circular(s) | PatternConfig::Cylindrical(s) => {
                gen_pattern(self.mode(), s)
            }
        }
    }

    pub fn ring_radius_m(&self) -> Option<f64> {
        match self {
            PatternConfig::Circular(s) | PatternConfig::Cylindrical(s) => Some(s.ring_radius_m),
            _ => None,
        }
    }
}

/// One scatterer in an inline scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub position_m: [f64; 3],
    #[serde(default = "one")]
    pub refl_re: f64,
    #[serde(default)]
    pub refl_im: f64,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

/// Source of the target scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SceneConfig {
    Points {
        points: Vec<PointConfig>,
    },
    /// Scene CSV with columns `x_m,y_m,z_m,refl_re,refl_im`.
    Csv {
        path: PathBuf,
    },
    Random {
        n: usize,
        bounds: Bounds,
        #[serde(default = "unit_amplitude")]
        amplitude: Amplitude,
        /// Falls back to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Image raster (`.pgm` or CSV) placed on a z-plane.
    Raster {
        path: PathBuf,
        origin_m: [f64; 3],
        pixel_pitch_m: f64,
        #[serde(default = "one")]
        reflect_scale: f64,
        #[serde(default = "one_usize")]
        downsample: usize,
    },
    /// The bundled 21-point letter scene shifted by `offset_m`.
    Utd {
        #[serde(default)]
        offset_m: [f64; 3],
    },
}

fn unit_amplitude() -> Amplitude {
    Amplitude::Unit
}

impl SceneConfig {
    /// Builds the scene; relative paths resolve against `base`.
    pub fn build(&self, base: &Path, seed: u64) -> Result<Scene> {
        let scene = match self {
            SceneConfig::Points { points } => Scene::new(
                points.iter().map(|p| PointScatterer { position: p.position_m, reflectivity: Complex64::new(p.refl_re, p.refl_im) }).collect(),
                "points",
            ),
            SceneConfig::Csv { path } => Scene::load_csv(base.join(path))?,
            SceneConfig::Random { n, bounds, amplitude, seed: s } => random_points(*n, bounds, *amplitude, s.unwrap_or(seed))?,
            SceneConfig::Raster { path, origin_m, pixel_pitch_m, reflect_scale, downsample } => {
                let full = base.join(path);
                let bytes = std::fs::read(&full)?;
                let raster = match full.extension().and_then(|e| e.to_str()) {
                    Some(e) if e.eq_ignore_ascii_case("pgm") => Raster::from_pgm(&bytes)?,
                    _ => Raster::from_csv(&String::from_utf8_lossy(&bytes))?,
                };
                from_raster(&raster, *origin_m, *pixel_pitch_m, *reflect_scale, *downsample)?
            }
            SceneConfig::Utd { offset_m } => {
                let mut s = Scene::utd_letters();
                for p in &mut s.scatterers {
                    for (c, o) in p.position.iter_mut().zip(offset_m) {
                        *c += o;
                    }
                }
                s
            }
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(rename = "snr_dB")]
    pub snr_db: f64,
    /// Falls back to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bpa,
    #[serde(rename = "fft_linear_1d")]
    FftLinear1d,
    #[serde(rename = "rma_linear_2d")]
    RmaLinear2d,
    #[serde(rename = "fft_rectilinear_2d")]
    FftRectilinear2d,
    #[serde(rename = "rma_rectilinear_3d")]
    RmaRectilinear3d,
    #[serde(rename = "pfa_circular_2d")]
    PfaCircular2d,
    #[serde(rename = "pfa_cylindrical_3d")]
    PfaCylindrical3d,
    Empm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Bpa,
        Algorithm::FftLinear1d,
        Algorithm::RmaLinear2d,
        Algorithm::FftRectilinear2d,
        Algorithm::RmaRectilinear3d,
        Algorithm::PfaCircular2d,
        Algorithm::PfaCylindrical3d,
        Algorithm::Empm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bpa => "bpa",
            Algorithm::FftLinear1d => "fft_linear_1d",
            Algorithm::RmaLinear2d => "rma_linear_2d",
            Algorithm::FftRectilinear2d => "fft_rectilinear_2d",
            Algorithm::RmaRectilinear3d => "rma_rectilinear_3d",
            Algorithm::PfaCircular2d => "pfa_circular_2d",
            Algorithm::PfaCylindrical3d => "pfa_cylindrical_3d",
            Algorithm::Empm => "empm",
        }
    }

    /// Scan modes whose apertures the algorithm accepts.
    pub fn accepts(self, mode: ScanMode) -> bool {
        use ScanMode::*;
        match self {
            Algorithm::Bpa => true,
            Algorithm::FftLinear1d | Algorithm::RmaLinear2d => matches!(mode, Linear),
            Algorithm::FftRectilinear2d | Algorithm::RmaRectilinear3d => matches!(mode, Rectilinear | Linear),
            Algorithm::PfaCircular2d => matches!(mode, Circular),
            Algorithm::PfaCylindrical3d => matches!(mode, Cylindrical),
            Algorithm::Empm => matches!(mode, Linear | Rectilinear | Irregular),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> std::result::Result<Self, ConfigError> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ConfigError::at("algorithm", format!("unknown algorithm `{s}`")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    pub algorithm: Algorithm,
    pub grid: ImageGrid,
    /// Focus plane of the single-plane FFT algorithms (defaults to the grid z center).
    #[serde(default)]
    pub focus_z_m: Option<f64>,
    #[serde(default)]
    pub options: ReconOptions,
}

/// Sweep of the multi-planar PSF over maximum plane offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfConfig {
    pub dz_max_m: Vec<f64>,
}

/// Output files; relative paths resolve against the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub cube: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub slice_csv: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub psf_csv: Option<PathBuf>,
    /// Store complex image values instead of magnitudes.
    pub complex_image: bool,
}

/// A complete job description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub waveform: WaveformParams,
    #[serde(default = "AntennaArray::monostatic")]
    pub array: AntennaArray,
    pub pattern: PatternConfig,
    /// Height of the nominal aperture plane (m).
    #[serde(default)]
    pub aperture_z_m: f64,
    pub scene: SceneConfig,
    #[serde(default)]
    pub pathloss: bool,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    /// Reference range for multistatic-to-monostatic conversion.
    #[serde(default)]
    pub mult_to_mono_zref_m: Option<f64>,
    #[serde(default)]
    pub reconstruct: Option<ReconConfig>,
    #[serde(default)]
    pub psf: Option<PsfConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative scene paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: RunConfig = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Checks the references and parameter ranges that deserialization cannot.
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::at("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        self.waveform.validate().map_err(|e| ConfigError::from_error("waveform", &e))?;
        self.array.validate().map_err(|e| ConfigError::from_error("array", &e))?;
        self.pattern.build().map_err(|e| ConfigError::from_error("pattern", &e))?;
        if !self.aperture_z_m.is_finite() {
            return Err(ConfigError::at("aperture_z_m", "must be finite"));
        }
        if let Some(n) = &self.noise {
            if n.snr_db.is_nan() {
                return Err(ConfigError::at("noise.snr_dB", "must be a number"));
            }
        }
        if let Some(z) = self.mult_to_mono_zref_m {
            if !(z > 0.0 && z.is_finite()) {
                return Err(ConfigError::at("mult_to_mono_zref_m", "must be positive"));
            }
        }
        if let Some(r) = &self.reconstruct {
            r.grid.validate().map_err(|e| ConfigError::from_error("reconstruct", &e))?;
            if !r.algorithm.accepts(self.pattern.mode()) {
                return Err(ConfigError::at(
                    "reconstruct.algorithm",
                    format!("{} does not accept {:?} apertures", r.algorithm, self.pattern.mode()),
                ));
            }
        }
        if let Some(p) = &self.psf {
            if p.dz_max_m.is_empty() || p.dz_max_m.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(ConfigError::at("psf.dz_max_m", "needs nonnegative finite offsets"));
            }
            if !matches!(self.pattern, PatternConfig::Irregular(_)) {
                return Err(ConfigError::at("pattern.mode", "a PSF sweep needs an irregular pattern"));
            }
        }
        Ok(())
    }
}
