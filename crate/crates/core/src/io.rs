//! Binary artifact files: a JSON header followed by a little-endian payload.
//!
//! Layout: `b"NFSR"`, `u32` format version, `u64` header length, UTF-8 JSON
//! header, payload. Headers may carry timings; payloads depend only on the
//! computed data.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::doppler::FrameStack;
use crate::error::{Error, Result};
use crate::geometry::{AperturePose, IrregularSpec, PatternSpec, ScanMode, ScanPattern};
use crate::multiband::{DatasetSample, DatasetSpec, MultibandSignal, RangeTarget, SubbandSpec};
use crate::recon::{ImageMeta, ImageVolume};
use crate::simulate::{BeatCube, CubeMeta};
use crate::waveform::DerivedWaveform;

pub const MAGIC: &[u8; 4] = b"NFSR";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;
const POSE_FIELDS: usize = 12;

/// A decoded container: parsed header and raw payload bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub version: u32,
    pub header: serde_json::Value,
    pub payload: Vec<u8>,
}

impl Container {
    pub fn new<H: Serialize>(header: &H, payload: Vec<u8>) -> Result<Self> {
        Ok(Container { version: FORMAT_VERSION, header: serde_json::to_value(header)?, payload })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing NFSR signature".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = PREAMBLE.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Format("truncated header".into()))?;
        let header = serde_json::from_slice(&bytes[PREAMBLE..end])?;
        Ok(Container { version, header, payload: bytes[end..].to_vec() })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Container::from_bytes(&std::fs::read(path)?)
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(|k| k.as_str())
    }

    fn typed<H: DeserializeOwned>(&self, kind: &str) -> Result<H> {
        match self.kind() {
            Some(k) if k == kind => Ok(serde_json::from_value(self.header.clone())?),
            other => Err(Error::Format(format!("expected a {kind} file, found {}", other.unwrap_or("an untyped file")))),
        }
    }
}

fn put_f64s(out: &mut Vec<u8>, v: impl IntoIterator<Item = f64>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_c128(out: &mut Vec<u8>, v: impl IntoIterator<Item = Complex64>) {
    put_f64s(out, v.into_iter().flat_map(|c| [c.re, c.im]));
}

fn put_c64(out: &mut Vec<u8>, v: impl IntoIterator<Item = Complex64>) {
    for c in v {
        out.extend_from_slice(&(c.re as f32).to_le_bytes());
        out.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
}

fn get_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
}

fn get_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()
}

fn get_c128(bytes: &[u8]) -> Vec<Complex64> {
    get_f64s(bytes).chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn get_c64(bytes: &[u8]) -> Vec<Complex64> {
    get_f32s(bytes).chunks_exact(2).map(|c| Complex64::new(c[0] as f64, c[1] as f64)).collect()
}

fn need_len(payload: &[u8], expected: usize, what: &str) -> Result<()> {
    if payload.len() != expected {
        return Err(Error::Format(format!("{what} payload has {} bytes, expected {expected}", payload.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Float64,
    Complex64,
    Complex128,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 | Dtype::Complex64 => 8,
            Dtype::Complex128 => 16,
        }
    }
}

// ---------------------------------------------------------------------------
// Aperture poses

#[derive(Debug, Serialize, Deserialize)]
struct PoseHeader {
    kind: String,
    dtype: Dtype,
    shape: [usize; 2],
    fields: Vec<String>,
}

const POSES_KIND: &str = "aperture_poses";

fn pose_field_names() -> Vec<String> {
    ["tx_x", "tx_y", "tx_z", "rx_x", "rx_y", "rx_z", "virt_x", "virt_y", "virt_z", "dx", "dy", "dz"].map(|s| format!("{s}_m")).to_vec()
}

pub fn encode_poses(poses: &[AperturePose]) -> Result<Container> {
    let mut payload = Vec::with_capacity(poses.len() * POSE_FIELDS * 8);
    put_f64s(&mut payload, poses.iter().flat_map(|p| p.to_array()));
    Container::new(
        &PoseHeader { kind: POSES_KIND.into(), dtype: Dtype::Float64, shape: [poses.len(), POSE_FIELDS], fields: pose_field_names() },
        payload,
    )
}

pub fn decode_poses(c: &Container) -> Result<Vec<AperturePose>> {
    let h: PoseHeader = c.typed(POSES_KIND)?;
    if h.shape[1] != POSE_FIELDS || h.dtype != Dtype::Float64 {
        return Err(Error::Format("pose records must be 12 float64 values".into()));
    }
    need_len(&c.payload, h.shape[0] * POSE_FIELDS * 8, "pose")?;
    Ok(get_f64s(&c.payload).chunks_exact(POSE_FIELDS).map(AperturePose::from_array).collect())
}

// ---------------------------------------------------------------------------
// Beat cubes and frame stacks

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    kind: String,
    dtype: Dtype,
    /// `[poses, Nk]`, row-major.
    shape: [usize; 2],
    waveform: DerivedWaveform,
    #[serde(flatten)]
    meta: CubeMeta,
    /// Sidecar pose file relative to the cube; poses follow the samples when absent.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pose_file: Option<String>,
}

const CUBE_KIND: &str = "beat_cube";

/// Cube container with the poses appended to the payload.
pub fn encode_cube(cube: &BeatCube) -> Result<Container> {
    let mut c = encode_cube_samples(cube, None)?;
    c.payload.extend(encode_poses(&cube.poses)?.payload);
    Ok(c)
}

fn encode_cube_samples(cube: &BeatCube, pose_file: Option<String>) -> Result<Container> {
    let mut payload = Vec::with_capacity(cube.samples.len() * 16);
    put_c128(&mut payload, cube.samples.iter().copied());
    let (n, k) = cube.samples.dim();
    let h = CubeHeader { kind: CUBE_KIND.into(), dtype: Dtype::Complex128, shape: [n, k], waveform: cube.waveform, meta: cube.meta.clone(), pose_file };
    Container::new(&h, payload)
}

/// Decodes a cube whose poses are inline or supplied by `sidecar`.
pub fn decode_cube(c: &Container, sidecar: Option<&Container>) -> Result<BeatCube> {
    let h: CubeHeader = c.typed(CUBE_KIND)?;
    if !matches!(h.dtype, Dtype::Complex64 | Dtype::Complex128) {
        return Err(Error::Format("beat cube samples must be complex".into()));
    }
    let [n, k] = h.shape;
    let sample_bytes = n * k * h.dtype.size();
    if c.payload.len() < sample_bytes {
        return Err(Error::Format("truncated beat cube payload".into()));
    }
    let (head, tail) = c.payload.split_at(sample_bytes);
    let values = if h.dtype == Dtype::Complex128 { get_c128(head) } else { get_c64(head) };
    let samples = Array2::from_shape_vec((n, k), values).map_err(|e| Error::Format(e.to_string()))?;
    let poses = match (h.pose_file.is_some(), sidecar) {
        (_, Some(s)) => decode_poses(s)?,
        (false, None) => {
            need_len(tail, n * POSE_FIELDS * 8, "inline pose")?;
            get_f64s(tail).chunks_exact(POSE_FIELDS).map(AperturePose::from_array).collect()
        }
        (true, None) => return Err(Error::Format("beat cube references a pose file that was not supplied".into())),
    };
    BeatCube::new(samples, poses, h.waveform, h.meta)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".poses");
    PathBuf::from(s)
}

/// Writes the cube to `path` and its poses to `<path>.poses`.
pub fn save_cube(cube: &BeatCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let name = side.file_name().map(|n| n.to_string_lossy().into_owned()).ok_or_else(|| Error::invalid("out", "not a file path"))?;
    encode_poses(&cube.poses)?.write(&side)?;
    encode_cube_samples(cube, Some(name))?.write(path)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<BeatCube> {
    let path = path.as_ref();
    let c = Container::read(path)?;
    let h: CubeHeader = c.typed(CUBE_KIND)?;
    let side = match h.pose_file {
        Some(name) => Some(Container::read(path.parent().unwrap_or(Path::new(".")).join(name))?),
        None => None,
    };
    decode_cube(&c, side.as_ref())
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameHeader {
    kind: String,
    dtype: Dtype,
    /// `[Nc, Nk]`, row-major.
    shape: [usize; 2],
    #[serde(rename = "Nc")]
    nc: usize,
    #[serde(rename = "tPRI_s")]
    t_pri: f64,
    waveform: DerivedWaveform,
}

const FRAMES_KIND: &str = "frame_stack";

pub fn encode_frames(f: &FrameStack) -> Result<Container> {
    let mut payload = Vec::with_capacity(f.frames.len() * 16);
    put_c128(&mut payload, f.frames.iter().copied());
    let (nc, nk) = f.frames.dim();
    Container::new(&FrameHeader { kind: FRAMES_KIND.into(), dtype: Dtype::Complex128, shape: [nc, nk], nc, t_pri: f.t_pri, waveform: f.waveform }, payload)
}

pub fn decode_frames(c: &Container) -> Result<FrameStack> {
    let h: FrameHeader = c.typed(FRAMES_KIND)?;
    let [nc, nk] = h.shape;
    if nc != h.nc {
        return Err(Error::Format("Nc disagrees with shape".into()));
    }
    let values = match h.dtype {
        Dtype::Complex128 => {
            need_len(&c.payload, nc * nk * 16, "frame stack")?;
            get_c128(&c.payload)
        }
        Dtype::Complex64 => {
            need_len(&c.payload, nc * nk * 8, "frame stack")?;
            get_c64(&c.payload)
        }
        _ => return Err(Error::Format("frame samples must be complex".into())),
    };
    let frames = Array2::from_shape_vec((nc, nk), values).map_err(|e| Error::Format(e.to_string()))?;
    FrameStack::new(frames, h.t_pri, h.waveform)
}

// ---------------------------------------------------------------------------
// Images

#[derive(Debug, Serialize, Deserialize)]
struct ImageHeader {
    kind: String,
    /// `float32` magnitudes or `complex64` values.
    dtype: Dtype,
    /// `[nx, ny, nz]`, row-major with z fastest.
    shape: [usize; 3],
    x_m: Vec<f64>,
    y_m: Vec<f64>,
    z_m: Vec<f64>,
    algorithm: String,
    time_s: f64,
}

const IMAGE_KIND: &str = "image_volume";

/// Image container; stores complex values when `complex` is set and available.
pub fn encode_image(img: &ImageVolume, complex: bool) -> Result<Container> {
    let (nx, ny, nz) = img.shape();
    let mut payload = Vec::new();
    let dtype = match (&img.complex, complex) {
        (Some(c), true) => {
            put_c64(&mut payload, c.iter().copied());
            Dtype::Complex64
        }
        _ => {
            payload.reserve(img.values.len() * 4);
            for v in img.values.iter() {
                payload.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            Dtype::Float32
        }
    };
    let h = ImageHeader {
        kind: IMAGE_KIND.into(),
        dtype,
        shape: [nx, ny, nz],
        x_m: img.x.clone(),
        y_m: img.y.clone(),
        z_m: img.z.clone(),
        algorithm: img.meta.algorithm.clone(),
        time_s: img.meta.time_s,
    };
    Container::new(&h, payload)
}

pub fn decode_image(c: &Container) -> Result<ImageVolume> {
    let h: ImageHeader = c.typed(IMAGE_KIND)?;
    let [nx, ny, nz] = h.shape;
    let n = nx * ny * nz;
    let shape = (nx, ny, nz);
    let bad = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let (values, complex) = match h.dtype {
        Dtype::Float32 => {
            need_len(&c.payload, n * 4, "image")?;
            (Array3::from_shape_vec(shape, get_f32s(&c.payload).into_iter().map(f64::from).collect()).map_err(bad)?, None)
        }
        Dtype::Complex64 => {
            need_len(&c.payload, n * 8, "image")?;
            let z = Array3::from_shape_vec(shape, get_c64(&c.payload)).map_err(bad)?;
            (z.mapv(|v| v.norm()), Some(z))
        }
        _ => return Err(Error::Format("image payload must be float32 or complex64".into())),
    };
    let mut img = ImageVolume::new(h.x_m, h.y_m, h.z_m, values, ImageMeta { algorithm: h.algorithm, time_s: h.time_s })?;
    img.complex = complex;
    Ok(img)
}

pub fn save_image(img: &ImageVolume, path: impl AsRef<Path>, complex: bool) -> Result<()> {
    encode_image(img, complex)?.write(path)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageVolume> {
    decode_image(&Container::read(path)?)
}

/// z-plane of an image as CSV rows `x_m,y_m,z_m,magnitude,dB`; the dB
/// column is relative to the volume peak and floored at `db_min`.
pub fn write_slice_csv<W: Write>(img: &ImageVolume, iz: usize, db_min: f64, w: W) -> Result<()> {
    if iz >= img.z.len() {
        return Err(Error::invalid("z", format!("slice index {iz} outside {} planes", img.z.len())));
    }
    let db = img.slice_db(iz, db_min);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x_m", "y_m", "z_m", "magnitude", "dB"]).map_err(csv_err)?;
    for (i, x) in img.x.iter().enumerate() {
        for (j, y) in img.y.iter().enumerate() {
            out.serialize((x, y, img.z[iz], img.values[[i, j, iz]], db[i][j])).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

// ---------------------------------------------------------------------------
// Scan patterns

#[derive(Debug, Serialize, Deserialize)]
struct PatternHeader {
    kind: String,
    dtype: Dtype,
    shape: [usize; 2],
    mode: ScanMode,
    spec: PatternSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    irregular: Option<IrregularSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    seed: Option<u64>,
    /// Names of the triple components.
    columns: [String; 3],
}

const PATTERN_KIND: &str = "scan_pattern";

fn pattern_columns(mode: ScanMode) -> [&'static str; 3] {
    if mode.is_angular() {
        ["theta_rad", "y_m", "dz_m"]
    } else {
        ["x_m", "y_m", "dz_m"]
    }
}

pub fn encode_pattern(p: &ScanPattern) -> Result<Container> {
    let t = p.triples();
    let mut payload = Vec::with_capacity(t.len() * 24);
    put_f64s(&mut payload, t.iter().flatten().copied());
    let h = PatternHeader {
        kind: PATTERN_KIND.into(),
        dtype: Dtype::Float64,
        shape: [t.len(), 3],
        mode: p.mode,
        spec: p.spec,
        irregular: p.irregular,
        seed: p.irregular.map(|i| i.seed),
        columns: pattern_columns(p.mode).map(String::from),
    };
    Container::new(&h, payload)
}

pub fn decode_pattern(c: &Container) -> Result<ScanPattern> {
    let h: PatternHeader = c.typed(PATTERN_KIND)?;
    if h.shape[1] != 3 || h.dtype != Dtype::Float64 {
        return Err(Error::Format("pattern records must be float64 triples".into()));
    }
    need_len(&c.payload, h.shape[0] * 24, "pattern")?;
    let t: Vec<[f64; 3]> = get_f64s(&c.payload).chunks_exact(3).map(|v| [v[0], v[1], v[2]]).collect();
    Ok(ScanPattern::from_triples(h.mode, h.spec, h.irregular, &t))
}

/// Pattern poses as CSV with columns `x_m` (or `theta_rad`), `y_m`, `dz_m`.
pub fn write_pattern_csv<W: Write>(p: &ScanPattern, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(pattern_columns(p.mode)).map_err(csv_err)?;
    for t in p.triples() {
        out.serialize(t).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Multiband datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecordInfo {
    pub nt: usize,
    #[serde(rename = "snr_dB")]
    pub snr_db: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    kind: String,
    dtype: Dtype,
    /// `[count, 2, N]`: per record the input then the label.
    shape: [usize; 3],
    count: usize,
    seed: u64,
    #[serde(rename = "N")]
    n: usize,
    dataset: DatasetSpec,
    records: Vec<DatasetRecordInfo>,
}

const DATASET_KIND: &str = "multiband_dataset";

pub fn encode_dataset(ds: &DatasetSpec, samples: &[DatasetSample]) -> Result<Container> {
    let n = ds.spec.total_len();
    let mut payload = Vec::with_capacity(samples.len() * 2 * n * 8);
    for s in samples {
        if s.input.len() != n || s.label.len() != n {
            return Err(Error::ShapeMismatch(format!("dataset record length differs from N = {n}")));
        }
        put_c64(&mut payload, s.input.iter().chain(&s.label).copied());
    }
    let h = DatasetHeader {
        kind: DATASET_KIND.into(),
        dtype: Dtype::Complex64,
        shape: [samples.len(), 2, n],
        count: samples.len(),
        seed: ds.seed,
        n,
        dataset: ds.clone(),
        records: samples.iter().map(|s| DatasetRecordInfo { nt: s.nt, snr_db: s.snr_db }).collect(),
    };
    Container::new(&h, payload)
}

pub fn decode_dataset(c: &Container) -> Result<(DatasetSpec, Vec<DatasetSample>)> {
    let h: DatasetHeader = c.typed(DATASET_KIND)?;
    if h.records.len() != h.count || h.dtype != Dtype::Complex64 {
        return Err(Error::Format("dataset header is inconsistent".into()));
    }
    need_len(&c.payload, h.count * 2 * h.n * 8, "dataset")?;
    let values = get_c64(&c.payload);
    let samples = values
        .chunks_exact(2 * h.n)
        .zip(h.records)
        .map(|(rec, info)| DatasetSample { nt: info.nt, snr_db: info.snr_db, input: rec[..h.n].to_vec(), label: rec[h.n..].to_vec() })
        .collect();
    Ok((h.dataset, samples))
}

// ---------------------------------------------------------------------------
// Multiband signals

#[derive(Debug, Serialize, Deserialize)]
struct MultibandHeader {
    kind: String,
    dtype: Dtype,
    /// `[2, N]`: the full band, then the masked signal.
    shape: [usize; 2],
    spec: SubbandSpec,
    targets: Vec<RangeTarget>,
    mask: Vec<bool>,
}

const MULTIBAND_KIND: &str = "multiband_signal";

/// Full-band reference and masked multiband signal of the same targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandFile {
    pub spec: SubbandSpec,
    pub targets: Vec<RangeTarget>,
    pub fullband: Vec<Complex64>,
    pub signal: MultibandSignal,
}

pub fn encode_multiband(m: &MultibandFile) -> Result<Container> {
    let n = m.fullband.len();
    if m.signal.samples.len() != n || m.signal.mask.len() != n {
        return Err(Error::ShapeMismatch("multiband signal and full band differ in length".into()));
    }
    let mut payload = Vec::with_capacity(2 * n * 16);
    put_c128(&mut payload, m.fullband.iter().chain(&m.signal.samples).copied());
    let h = MultibandHeader {
        kind: MULTIBAND_KIND.into(),
        dtype: Dtype::Complex128,
        shape: [2, n],
        spec: m.spec.clone(),
        targets: m.targets.clone(),
        mask: m.signal.mask.clone(),
    };
    Container::new(&h, payload)
}

pub fn decode_multiband(c: &Container) -> Result<MultibandFile> {
    let h: MultibandHeader = c.typed(MULTIBAND_KIND)?;
    let n = h.shape[1];
    if h.shape[0] != 2 || h.mask.len() != n || h.dtype != Dtype::Complex128 {
        return Err(Error::Format("multiband header is inconsistent".into()));
    }
    need_len(&c.payload, 2 * n * 16, "multiband")?;
    let v = get_c128(&c.payload);
    Ok(MultibandFile {
        spec: h.spec,
        targets: h.targets,
        fullband: v[..n].to_vec(),
        signal: MultibandSignal { samples: v[n..].to_vec(), mask: h.mask },
    })
}
