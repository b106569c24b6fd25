use std::time::Instant;

use super::lattice::{grid_to_lattice, uniform_lattice};
use super::rma::rma_planar;
use super::{AxisSpec, ImageGrid, ImageVolume, ReconOptions};
use crate::error::{Error, Result};
use crate::simulate::{empm_compensate_with, BeatCube, EmpmReference};

/// Multi-planar multistatic reconstruction: phase compensation onto the
/// plane `z0`, gridding of the virtual positions onto a uniform lattice and
/// range migration.
///
/// The compensation distance is measured to `opts.scene_z_m`, or to the
/// grid center when unset. Virtual positions that already form a complete
/// lattice are used as is; otherwise they are gridded at
/// `opts.lattice_spacing_m` (λc/4 by default).
pub fn empm_reconstruct(cube: &BeatCube, z0: f64, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    grid.validate()?;
    if !z0.is_finite() {
        return Err(Error::invalid("Z0_m", "must be finite"));
    }
    let start = Instant::now();
    let scene_z = opts.scene_z_m.unwrap_or_else(|| grid.z.center());
    let compensated = empm_compensate_with(cube, EmpmReference { plane_z_m: z0, scene_z_m: scene_z })?;
    let lattice = match uniform_lattice(&compensated) {
        Ok(l) => l,
        Err(Error::NonUniformAperture(_)) => {
            let spacing = opts.lattice_spacing_m.unwrap_or(cube.waveform.lambda_c / 4.0);
            grid_to_lattice(&compensated, spacing)?
        }
        Err(e) => return Err(e),
    };
    let mut g = *grid;
    if lattice.nx() == 1 {
        g.x = AxisSpec::single(lattice.x0);
    }
    if lattice.ny() == 1 {
        g.y = AxisSpec::single(lattice.y0);
    }
    let mut img = rma_planar(&lattice, &cube.waveform, &g, opts, "empm")?;
    img.meta.time_s = start.elapsed().as_secs_f64();
    Ok(img)
}
