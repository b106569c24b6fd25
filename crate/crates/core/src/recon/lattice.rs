use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::simulate::BeatCube;

/// Beat samples on a uniform planar lattice of virtual positions, indexed `[ix, iy, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarLattice {
    pub x0: f64,
    pub dx: f64,
    pub y0: f64,
    pub dy: f64,
    /// Plane of the lattice (m).
    pub z: f64,
    pub data: Array3<Complex64>,
}

impl PlanarLattice {
    pub fn nx(&self) -> usize {
        self.data.dim().0
    }

    pub fn ny(&self) -> usize {
        self.data.dim().1
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + self.dx * i as f64
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y0 + self.dy * i as f64
    }
}

const MERGE_TOL: f64 = 1e-7;

/// Distinct coordinate values, merging values closer than the tolerance.
fn distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for x in v {
        match out.last() {
            Some(&l) if x - l <= MERGE_TOL => {}
            _ => out.push(x),
        }
    }
    out
}

pub(crate) fn regular_axis(values: Vec<f64>, name: &str) -> Result<(f64, f64, usize)> {
    let u = distinct(values);
    if u.len() == 1 {
        return Ok((u[0], 1.0, 1));
    }
    let n = u.len();
    let step = (u[n - 1] - u[0]) / (n - 1) as f64;
    for (i, v) in u.iter().enumerate() {
        if (v - (u[0] + step * i as f64)).abs() > 1e-3 * step {
            return Err(Error::NonUniformAperture(format!("{name} positions are not evenly spaced")));
        }
    }
    Ok((u[0], step, n))
}

/// Nominal plane of a cube: the virtual height with plane offsets removed.
fn nominal_plane(cube: &BeatCube) -> f64 {
    cube.poses.iter().map(|p| p.virt[2] - p.dz).sum::<f64>() / cube.poses.len() as f64
}

/// Arranges the cube on the lattice formed by its virtual positions. Every
/// lattice cell must be populated; repeated positions are averaged.
pub fn uniform_lattice(cube: &BeatCube) -> Result<PlanarLattice> {
    if cube.poses.is_empty() {
        return Err(Error::NonUniformAperture("no poses".into()));
    }
    let (x0, dx, nx) = regular_axis(cube.poses.iter().map(|p| p.virt[0]).collect(), "x")?;
    let (y0, dy, ny) = regular_axis(cube.poses.iter().map(|p| p.virt[1]).collect(), "y")?;
    let nk = cube.waveform.nk();
    let lattice = accumulate(cube, x0, dx, nx, y0, dy, ny)?;
    if let Some(((ix, iy), _)) = lattice.1.indexed_iter().find(|(_, &c)| c == 0) {
        return Err(Error::NonUniformAperture(format!("lattice cell ({ix}, {iy}) has no sample")));
    }
    debug_assert_eq!(lattice.0.dim().2, nk);
    Ok(PlanarLattice { x0, dx, y0, dy, z: nominal_plane(cube), data: lattice.0 })
}

/// Nearest-lattice-point gridding of arbitrary virtual positions onto a
/// lattice of the given spacing anchored at the smallest coordinates.
/// Collisions are averaged and empty cells stay zero.
pub fn grid_to_lattice(cube: &BeatCube, spacing: f64) -> Result<PlanarLattice> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid("lattice_spacing_m", "must be positive"));
    }
    if cube.poses.is_empty() {
        return Err(Error::NonUniformAperture("no poses".into()));
    }
    let axis = |i: usize| {
        let lo = cube.poses.iter().map(|p| p.virt[i]).fold(f64::INFINITY, f64::min);
        let hi = cube.poses.iter().map(|p| p.virt[i]).fold(f64::NEG_INFINITY, f64::max);
        (lo, ((hi - lo) / spacing).round() as usize + 1)
    };
    let (x0, nx) = axis(0);
    let (y0, ny) = axis(1);
    let (data, _) = accumulate(cube, x0, spacing, nx, y0, spacing, ny)?;
    Ok(PlanarLattice { x0, dx: spacing, y0, dy: spacing, z: nominal_plane(cube), data })
}

fn accumulate(
    cube: &BeatCube,
    x0: f64,
    dx: f64,
    nx: usize,
    y0: f64,
    dy: f64,
    ny: usize,
) -> Result<(Array3<Complex64>, ndarray::Array2<usize>)> {
    let index = |v: f64, o: f64, d: f64, n: usize| -> Result<usize> {
        let f = if n == 1 { 0.0 } else { ((v - o) / d).round() };
        if f < 0.0 || f >= n as f64 {
            return Err(Error::NonUniformAperture("position outside lattice".into()));
        }
        Ok(f as usize)
    };
    accumulate_by(cube, (nx, ny), |p| Ok((index(p.virt[0], x0, dx, nx)?, index(p.virt[1], y0, dy, ny)?)))
}

/// Sums cube rows into cells chosen by `cell`, averaging repeated cells.
pub(crate) fn accumulate_by(
    cube: &BeatCube,
    shape: (usize, usize),
    cell: impl Fn(&crate::geometry::AperturePose) -> Result<(usize, usize)>,
) -> Result<(Array3<Complex64>, ndarray::Array2<usize>)> {
    let nk = cube.waveform.nk();
    let mut data = Array3::<Complex64>::zeros((shape.0, shape.1, nk));
    let mut count = ndarray::Array2::<usize>::zeros(shape);
    for (s, p) in cube.poses.iter().enumerate() {
        let (ix, iy) = cell(p)?;
        let mut dst = data.slice_mut(ndarray::s![ix, iy, ..]);
        dst += &cube.samples.row(s);
        count[[ix, iy]] += 1;
    }
    for ((ix, iy), &c) in count.indexed_iter() {
        if c > 1 {
            data.slice_mut(ndarray::s![ix, iy, ..]).mapv_inplace(|v| v / c as f64);
        }
    }
    Ok((data, count))
}
