//! Point-scatterer scenes.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const UTD_LETTERS: &str = include_str!("../data/utd_letters.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScatterer {
    pub position: Vec3,
    pub reflectivity: Complex64,
}

impl PointScatterer {
    pub fn unit(position: Vec3) -> Self {
        PointScatterer { position, reflectivity: Complex64::new(1.0, 0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<PointScatterer>,
    #[serde(default)]
    pub label: String,
}

/// Reflectivity law for random scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amplitude {
    Unit,
    ComplexNormal,
}

/// Axis-aligned box, one `[lo, hi]` interval per axis (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_m: [f64; 2],
    pub y_m: [f64; 2],
    pub z_m: [f64; 2],
}

impl Bounds {
    pub fn center(&self) -> Vec3 {
        [
            (self.x_m[0] + self.x_m[1]) / 2.0,
            (self.y_m[0] + self.y_m[1]) / 2.0,
            (self.z_m[0] + self.z_m[1]) / 2.0,
        ]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    x_m: f64,
    y_m: f64,
    z_m: f64,
    refl_re: f64,
    refl_im: f64,
}

impl Scene {
    pub fn new(scatterers: Vec<PointScatterer>, label: impl Into<String>) -> Self {
        Scene { scatterers, label: label.into() }
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    /// The 21-point "UTD" letter scene in the y–z plane.
    pub fn utd_letters() -> Self {
        let mut s = Scene::read_csv(UTD_LETTERS.as_bytes()).expect("bundled scene parses");
        s.label = "utd".into();
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyScene);
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if !s.position.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("scatterers[{i}].position"), "not finite"));
            }
            if !(s.reflectivity.re.is_finite() && s.reflectivity.im.is_finite()) {
                return Err(Error::invalid(format!("scatterers[{i}].reflectivity"), "not finite"));
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut scatterers = Vec::new();
        for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
                message: e.to_string(),
            })?;
            scatterers.push(PointScatterer {
                position: [row.x_m, row.y_m, row.z_m],
                reflectivity: Complex64::new(row.refl_re, row.refl_im),
            });
        }
        Ok(Scene { scatterers, label: String::new() })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.scatterers {
            w.serialize(CsvRow {
                x_m: s.position[0],
                y_m: s.position[1],
                z_m: s.position[2],
                refl_re: s.reflectivity.re,
                refl_im: s.reflectivity.im,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut s = Scene::read_csv(std::fs::File::open(path)?)?;
        s.label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(s)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// A dense 2-D grid of nonnegative pixel values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{rows}x{cols} raster with {} values", values.len())));
        }
        Ok(Raster { rows, cols, values })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Parses a grayscale PGM (`P2` or `P5`); values are scaled to [0, 1].
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut token = |bytes: &[u8]| -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token(bytes)?;
        let num = |s: String| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM number `{s}`")));
        let cols = num(token(bytes)?)?;
        let rows = num(token(bytes)?)?;
        let maxval = num(token(bytes)?)?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format("PGM maxval out of range".into()));
        }
        let n = rows * cols;
        let values = match magic.as_str() {
            "P2" => (0..n).map(|_| token(bytes).and_then(num).map(|v| v as f64 / maxval as f64)).collect::<Result<Vec<_>>>()?,
            "P5" => {
                let data = &bytes[(pos + 1).min(bytes.len())..];
                let width = if maxval < 256 { 1 } else { 2 };
                if data.len() < n * width {
                    return Err(Error::Format("truncated PGM raster".into()));
                }
                (0..n)
                    .map(|i| {
                        let v = if width == 1 { data[i] as usize } else { (data[2 * i] as usize) << 8 | data[2 * i + 1] as usize };
                        v as f64 / maxval as f64
                    })
                    .collect()
            }
            other => return Err(Error::Format(format!("unsupported PGM magic `{other}`"))),
        };
        Raster::new(rows, cols, values)
    }

    /// Parses a headerless CSV grid of numbers, one raster row per line.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut rows = 0;
        let mut cols = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            if rows == 0 {
                cols = row.len();
            } else if row.len() != cols {
                return Err(Error::Parse { line: i + 1, message: format!("expected {cols} columns, found {}", row.len()) });
            }
            values.extend(row);
            rows += 1;
        }
        Raster::new(rows, cols, values)
    }
}

/// One scatterer per nonzero pixel retained after keeping every
/// `downsample`-th row and column. Columns map to x and rows to y.
pub fn from_raster(grid: &Raster, origin: Vec3, pitch: f64, reflect_scale: f64, downsample: usize) -> Result<Scene> {
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(Error::invalid("pixel_pitch_m", "must be positive"));
    }
    if downsample == 0 {
        return Err(Error::invalid("downsample", "must be at least 1"));
    }
    let mut scatterers = Vec::new();
    for r in (0..grid.rows).step_by(downsample) {
        for c in (0..grid.cols).step_by(downsample) {
            let v = grid.get(r, c);
            if v != 0.0 {
                scatterers.push(PointScatterer {
                    position: [
                        origin[0] + pitch * (c / downsample) as f64,
                        origin[1] + pitch * (r / downsample) as f64,
                        origin[2],
                    ],
                    reflectivity: Complex64::new(v * reflect_scale, 0.0),
                });
            }
        }
    }
    if scatterers.is_empty() {
        return Err(Error::EmptyScene);
    }
    Ok(Scene::new(scatterers, "raster"))
}

pub fn random_points(n: usize, bounds: &Bounds, amp: Amplitude, seed: u64) -> Result<Scene> {
    if n == 0 {
        return Err(Error::invalid("n", "at least one point is required"));
    }
    for (name, b) in [("x_m", bounds.x_m), ("y_m", bounds.y_m), ("z_m", bounds.z_m)] {
        if !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1]) {
            return Err(Error::invalid(format!("bounds.{name}"), "empty or non-finite interval"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |b: [f64; 2]| if b[0] == b[1] { b[0] } else { rng.gen_range(b[0]..b[1]) };
    let positions: Vec<Vec3> = (0..n).map(|_| [uniform(bounds.x_m), uniform(bounds.y_m), uniform(bounds.z_m)]).collect();
    let scatterers = positions
        .into_iter()
        .map(|position| {
            let reflectivity = match amp {
                Amplitude::Unit => Complex64::new(1.0, 0.0),
                Amplitude::ComplexNormal => complex_normal(&mut rng),
            };
            PointScatterer { position, reflectivity }
        })
        .collect();
    Ok(Scene::new(scatterers, "random"))
}

/// Circular complex Gaussian sample with unit variance.
pub fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pixel() {
        let s = from_raster(&Raster::new(1, 1, vec![1.0]).unwrap(), [0.1, 0.2, 0.3], 0.01, 1.0, 1).unwrap();
        assert_eq!(s.scatterers, vec![PointScatterer::unit([0.1, 0.2, 0.3])]);
    }

    #[test]
    fn identity_raster_diagonal() {
        let s = from_raster(&Raster::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(), [0.0; 3], 0.01, 1.0, 1).unwrap();
        assert_eq!(s.len(), 2);
        let d = crate::geometry::dist(&s.scatterers[0].position, &s.scatterers[1].position);
        assert!((d - 0.01 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn downsampled_raster() {
        let s = from_raster(&Raster::new(4, 4, vec![1.0; 16]).unwrap(), [0.0; 3], 0.01, 1.0, 2).unwrap();
        assert_eq!(s.len(), 4);
        assert!(matches!(from_raster(&Raster::new(2, 2, vec![0.0; 4]).unwrap(), [0.0; 3], 0.01, 1.0, 1), Err(Error::EmptyScene)));
    }

    #[test]
    fn pgm_ascii_and_binary() {
        let a = Raster::from_pgm(b"P2\n# c\n2 2\n255\n0 255\n255 0\n").unwrap();
        assert_eq!(a.values, vec![0.0, 1.0, 1.0, 0.0]);
        let mut b = b"P5 2 2 255\n".to_vec();
        b.extend([0u8, 255, 255, 0]);
        assert_eq!(Raster::from_pgm(&b).unwrap(), a);
        assert!(Raster::from_pgm(b"P6 1 1 255\n\0\0\0").is_err());
    }

    #[test]
    fn csv_grid() {
        let r = Raster::from_csv("0,1\n1,0\n").unwrap();
        assert_eq!((r.rows, r.cols), (2, 2));
        assert!(matches!(Raster::from_csv("0,1\n1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn coincident_random_points() {
        let b = Bounds { x_m: [0.1; 2], y_m: [0.2; 2], z_m: [0.3; 2] };
        let s = random_points(3, &b, Amplitude::Unit, 1).unwrap();
        assert!(s.scatterers.iter().all(|p| p.position == [0.1, 0.2, 0.3]));
        let bad = Bounds { x_m: [1.0, 0.0], ..b };
        assert!(random_points(3, &bad, Amplitude::Unit, 1).is_err());
    }

    #[test]
    fn random_points_reproducible_and_bounded() {
        let b = Bounds { x_m: [-0.1, 0.1], y_m: [-0.2, 0.0], z_m: [0.3, 0.5] };
        let s = random_points(200, &b, Amplitude::ComplexNormal, 42).unwrap();
        assert_eq!(s, random_points(200, &b, Amplitude::ComplexNormal, 42).unwrap());
        for p in &s.scatterers {
            assert!((-0.1..=0.1).contains(&p.position[0]));
            assert!((-0.2..=0.0).contains(&p.position[1]));
            assert!((0.3..=0.5).contains(&p.position[2]));
        }
    }

    #[test]
    fn random_points_uniform_moments() {
        // For U[-a, a], E|u| = a/2 with variance a²/12.
        let b = Bounds { x_m: [-1.0, 1.0], y_m: [-1.0, 1.0], z_m: [-1.0, 1.0] };
        let n = 100_000;
        let s = random_points(n, &b, Amplitude::Unit, 7).unwrap();
        for axis in 0..3 {
            let mean = s.scatterers.iter().map(|p| p.position[axis].abs()).sum::<f64>() / n as f64;
            let sigma = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
            assert!((mean - 0.5).abs() < 3.0 * sigma, "axis {axis}: {mean}");
        }
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "x_m,y_m,z_m,refl_re,refl_im\n0,0,0.5,1,0\n0,zero,0.5,1,0\n";
        match Scene::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bundled_letters() {
        assert_eq!(Scene::utd_letters().len(), 21);
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/utd_letters.csv");
        assert_eq!(Scene::load_csv(path).unwrap().scatterers, Scene::utd_letters().scatterers);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(pts in prop::collection::vec(prop::array::uniform5(-1e3..1e3f64), 1..20)) {
            let scene = Scene::new(
                pts.iter().map(|p| PointScatterer { position: [p[0], p[1], p[2] / 7.0], reflectivity: Complex64::new(p[3], p[4] * 1e-9) }).collect(),
                "",
            );
            let mut buf = Vec::new();
            scene.write_csv(&mut buf).unwrap();
            prop_assert_eq!(Scene::read_csv(&buf[..]).unwrap(), scene);
        }

        #[test]
        fn raster_count_matches_nonzero(vals in prop::collection::vec(0u8..3, 36), ds in 1usize..4) {
            let r = Raster::new(6, 6, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let want = (0..6).step_by(ds).flat_map(|i| (0..6).step_by(ds).map(move |j| (i, j))).filter(|&(i, j)| r.get(i, j) != 0.0).count();
            match from_raster(&r, [0.0; 3], 0.01, 1.0, ds) {
                Ok(s) => prop_assert_eq!(s.len(), want),
                Err(_) => prop_assert_eq!(want, 0),
            }
        }
    }
}
