use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MapLabel, Raster, RefMap25D, RefMapError};
use crate::imgproc::GrayF32;

/// Parameters emulating a lower-quality (satellite-like) reference map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeParams {
    /// Orthophoto ground sampling distance to simulate, m/px.
    pub target_gsd: f64,
    /// DSM block size to simulate, meters.
    pub dsm_gsd: f64,
    /// Photometric change magnitude in [0, 1]; zero leaves colours untouched.
    pub photometric_shift: f64,
    pub seed: u64,
}

/// Resample the orthophoto through `target_gsd`, block-average the DSM to
/// `dsm_gsd`, apply a seeded per-channel gain/offset plus low-frequency
/// brightness noise, and relabel the map as satellite.
pub fn degrade_map(map: &RefMap25D, params: &DegradeParams) -> Result<RefMap25D, RefMapError> {
    let gsd = map.gsd();
    if !(params.target_gsd >= gsd * (1.0 - 1e-9)) || !(params.dsm_gsd > 0.0) {
        return Err(RefMapError::InvalidParams(format!(
            "target gsd {} below map gsd {gsd} or non-positive dsm gsd {}",
            params.target_gsd, params.dsm_gsd
        )));
    }
    let og = *map.ortho().geot();
    let (cols, rows) = (og.cols, og.rows);

    let mut channels: Vec<GrayF32> = (0..3)
        .map(|k| GrayF32::from_vec(cols, rows, map.ortho().data().iter().map(|p| p[k] as f32).collect()))
        .collect();

    let factor = params.target_gsd / gsd;
    if factor > 1.0 + 1e-9 {
        let dw = ((cols as f64 / factor).round() as usize).max(1);
        let dh = ((rows as f64 / factor).round() as usize).max(1);
        for ch in channels.iter_mut() {
            *ch = ch.resize(dw, dh).resize(cols, rows);
        }
    }

    let shift = params.photometric_shift.clamp(0.0, 1.0);
    if shift > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let gains: Vec<f32> = (0..3).map(|_| 1.0 + shift as f32 * rng.random_range(-0.3..0.3)).collect();
        let offsets: Vec<f32> = (0..3).map(|_| shift as f32 * rng.random_range(-30.0..30.0)).collect();
        // 9x9 control lattice, bilinearly interpolated
        const N: usize = 9;
        let lattice: Vec<f32> = (0..N * N).map(|_| shift as f32 * rng.random_range(-25.0..25.0)).collect();
        let field = GrayF32::from_vec(N, N, lattice);
        for r in 0..rows {
            let fy = r as f64 / (rows.max(2) - 1) as f64 * (N - 1) as f64;
            for c in 0..cols {
                let fx = c as f64 / (cols.max(2) - 1) as f64 * (N - 1) as f64;
                let n = field.sample(fx, fy).unwrap_or(0.0);
                for (k, ch) in channels.iter_mut().enumerate() {
                    let v = ch.get(c, r) * gains[k] + offsets[k] + n;
                    ch.set(c, r, v);
                }
            }
        }
    }

    let ortho_data: Vec<[u8; 3]> = (0..rows * cols)
        .map(|i| {
            let px = |k: usize| channels[k].data()[i].round().clamp(0.0, 255.0) as u8;
            [px(0), px(1), px(2)]
        })
        .collect();
    let ortho = Raster::new(og, ortho_data, None)?;

    let dsm = block_average(map.dsm(), params.dsm_gsd);
    RefMap25D::new(ortho, dsm, MapLabel::Satellite)
}

fn block_average(dsm: &Raster<f32>, block_m: f64) -> Raster<f32> {
    let g = *dsm.geot();
    let b = ((block_m / g.pixel_size).round() as usize).max(1);
    if b == 1 {
        return dsm.clone();
    }
    let nodata = dsm.nodata();
    let void = |h: f32| !h.is_finite() || nodata.is_some_and(|nd| h == nd);
    let mut out = dsm.data().to_vec();
    for by in (0..g.rows).step_by(b) {
        for bx in (0..g.cols).step_by(b) {
            let ys = by..(by + b).min(g.rows);
            let xs = bx..(bx + b).min(g.cols);
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for y in ys.clone() {
                for x in xs.clone() {
                    let h = dsm.get(x, y);
                    if !void(h) {
                        sum += h as f64;
                        n += 1;
                    }
                }
            }
            let fill = if n > 0 { (sum / n as f64) as f32 } else { nodata.unwrap_or(f32::NAN) };
            for y in ys.clone() {
                for x in xs.clone() {
                    out[y * g.cols + x] = fill;
                }
            }
        }
    }
    Raster::new(g, out, nodata).expect("same geometry")
}
