use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rayon::prelude::*;

use super::SimError;
use crate::geo::{CameraIntrinsics, CameraPose, UtmCoord};
use crate::refmap::RefMap25D;

const BLOCK: usize = 16;
const SKY: [u8; 3] = [190, 200, 215];

/// Per-block height maxima of a DSM, used to skip empty space when marching
/// rays.
#[derive(Debug, Clone)]
pub struct HeightField {
    bmax: Vec<f64>,
    bcols: usize,
    brows: usize,
    hmin: f64,
    hmax: f64,
    /// Upper bound on the surface gradient norm, m/m.
    slope: f64,
}

impl HeightField {
    pub fn new(map: &RefMap25D) -> Self {
        let dsm = map.dsm();
        let (cols, rows) = (dsm.cols(), dsm.rows());
        let bcols = cols.div_ceil(BLOCK);
        let brows = rows.div_ceil(BLOCK);
        let mut bmax = vec![f64::NEG_INFINITY; bcols * brows];
        for by in 0..brows {
            for bx in 0..bcols {
                let mut m = f64::NEG_INFINITY;
                // include the next row/column: bilinear cells straddle blocks
                for r in by * BLOCK..((by + 1) * BLOCK + 1).min(rows) {
                    for c in bx * BLOCK..((bx + 1) * BLOCK + 1).min(cols) {
                        let h = dsm.get(c, r);
                        if h.is_finite() {
                            m = m.max(h as f64);
                        }
                    }
                }
                bmax[by * bcols + bx] = m;
            }
        }
        let (lo, hi) = dsm.min_max();
        let mut dmax: f64 = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                let h = dsm.get(c, r) as f64;
                if c + 1 < cols {
                    dmax = dmax.max((dsm.get(c + 1, r) as f64 - h).abs());
                }
                if r + 1 < rows {
                    dmax = dmax.max((dsm.get(c, r + 1) as f64 - h).abs());
                }
            }
        }
        // each bilinear gradient component is bounded by the largest step
        let slope = std::f64::consts::SQRT_2 * dmax / map.gsd();
        Self { bmax, bcols, brows, hmin: lo as f64, hmax: hi as f64, slope }
    }
}

/// Intersection of a viewing ray with the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Orthophoto pixel coordinates.
    pub u: f64,
    pub v: f64,
    pub elevation: f64,
    /// Distance along the ray, meters.
    pub range: f64,
}

struct Ray {
    // position in map pixels (x, y) and meters (z); direction per meter of range
    px: f64,
    py: f64,
    pz: f64,
    dx: f64,
    dy: f64,
    dz: f64,
}

impl Ray {
    fn at(&self, t: f64) -> (f64, f64, f64) {
        (self.px + self.dx * t, self.py + self.dy * t, self.pz + self.dz * t)
    }
}

fn clip_axis(p: f64, d: f64, hi: f64, lo_t: &mut f64, hi_t: &mut f64) {
    if d.abs() < 1e-15 {
        if p < 0.0 || p > hi {
            *lo_t = f64::INFINITY;
        }
        return;
    }
    let (a, b) = ((0.0 - p) / d, (hi - p) / d);
    *lo_t = lo_t.max(a.min(b));
    *hi_t = hi_t.min(a.max(b));
}

/// March a ray from `origin` (UTM, elevation) along the unit ENU direction
/// `dir` until it meets the DSM surface. Returns `None` when the ray leaves
/// the map or points above every surface.
pub fn cast_ray(
    map: &RefMap25D,
    field: &HeightField,
    origin: (&UtmCoord, f64),
    dir: &Vector3<f64>,
) -> Option<RayHit> {
    let g = map.geot();
    let ps = g.pixel_size;
    let d = origin.0.delta(&g.origin).ok()?;
    let ray = Ray { px: d.x / ps, py: -d.y / ps, pz: origin.1, dx: dir.x / ps, dy: -dir.y / ps, dz: dir.z };
    let (umax, vmax) = ((g.cols - 1) as f64, (g.rows - 1) as f64);

    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    if ray.dz < 0.0 {
        t0 = t0.max((ray.pz - field.hmax) / -ray.dz);
        t1 = t1.min((ray.pz - field.hmin) / -ray.dz);
    } else if ray.pz > field.hmax {
        return None;
    }
    let t_top = t0;
    clip_axis(ray.px, ray.dx, umax, &mut t0, &mut t1);
    clip_axis(ray.py, ray.dy, vmax, &mut t0, &mut t1);
    if !(t0 <= t1) || !t1.is_finite() {
        return None;
    }

    let dsm = map.dsm();
    let height = |t: f64| -> Option<(f64, f64, f64)> {
        let (x, y, z) = ray.at(t);
        let h = dsm.sample_pixel(x.clamp(0.0, umax), y.clamp(0.0, vmax)).ok()?;
        Some((z - h, x, y))
    };
    let hit = |t: f64| {
        let (x, y, z) = ray.at(t);
        RayHit { u: x.clamp(0.0, umax), v: y.clamp(0.0, vmax), elevation: z, range: t }
    };
    // Illinois false position on a bracket with f(a) > 0 >= f(b)
    let refine = |mut a: f64, mut fa: f64, mut b: f64, mut fb: f64| {
        let mut side = 0;
        for _ in 0..60 {
            if b - a <= 1e-10 * b.max(1.0) || fb == 0.0 {
                break;
            }
            let m = b - fb * (b - a) / (fb - fa);
            let m = if m > a && m < b { m } else { 0.5 * (a + b) };
            let fm = match height(m) {
                Some((f, _, _)) => f,
                None => break,
            };
            if fm > 0.0 {
                a = m;
                fa = fm;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = m;
                fb = fm;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
                if fm.abs() < 1e-9 {
                    break;
                }
            }
        }
        hit(b)
    };

    if height(t0)?.0 <= 0.0 {
        // entering through the side of the map below the surface: the map
        // edge is not a physical wall
        return if t0 > t_top { None } else { Some(hit(t0)) };
    }
    let hxy = ray.dx.hypot(ray.dy);
    let fine = if hxy > 0.0 { 0.5 / hxy } else { f64::INFINITY };
    // clearance shrinks by at most this much per meter of range
    let closing = field.slope * hxy * ps + (-ray.dz).max(0.0);
    let bs = BLOCK as f64;
    let mut t = t0;
    while t < t1 {
        let (x, y, _) = ray.at(t);
        let bx = ((x + ray.dx.signum() * 1e-9) / bs).floor().clamp(0.0, (field.bcols - 1) as f64);
        let by = ((y + ray.dy.signum() * 1e-9) / bs).floor().clamp(0.0, (field.brows - 1) as f64);
        let exit_axis = |p: f64, dp: f64, b: f64| {
            if dp > 0.0 {
                ((b + 1.0) * bs - p) / dp
            } else if dp < 0.0 {
                (b * bs - p) / dp
            } else {
                f64::INFINITY
            }
        };
        let mut te = (t + exit_axis(x, ray.dx, bx).min(exit_axis(y, ray.dy, by))).min(t1);
        if te <= t {
            te = (t + 1e-9).min(t1);
        }
        let zlow = if ray.dz < 0.0 { ray.at(te).2 } else { ray.at(t).2 };
        let bmax = field.bmax[by as usize * field.bcols + bx as usize];
        if zlow > bmax {
            t = te;
            continue;
        }
        let mut f = height(t)?.0;
        while t < te {
            let safe = if closing > 0.0 { f / closing } else { f64::INFINITY };
            let tn = (t + fine.max(safe)).min(te);
            let fnext = height(tn)?.0;
            if fnext <= 0.0 {
                return Some(refine(t, f, tn, fnext));
            }
            t = tn;
            f = fnext;
        }
        if te >= t1 {
            break;
        }
    }
    None
}

/// Surface point seen along the principal ray.
pub fn footprint_center(
    map: &RefMap25D,
    field: &HeightField,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Option<RayHit> {
    let dir = pose.ray(intr, intr.principal_x, intr.principal_y);
    cast_ray(map, field, (&pose.center, pose.altitude), &dir)
}

fn dsm_slope(map: &RefMap25D, u: f64, v: f64) -> f64 {
    let dsm = map.dsm();
    let (umax, vmax) = ((dsm.cols() - 1) as f64, (dsm.rows() - 1) as f64);
    let s = |a: f64, b: f64| dsm.sample_pixel(a.clamp(0.0, umax), b.clamp(0.0, vmax)).unwrap_or(0.0);
    let gx = (s(u + 0.5, v) - s(u - 0.5, v)) / map.gsd();
    let gy = (s(u, v + 0.5) - s(u, v - 0.5)) / map.gsd();
    gx.hypot(gy)
}

/// Ray-cast a pinhole view of the textured surface. Pixels whose rays miss
/// the map are filled with a constant sky colour; steep DSM walls are
/// darkened.
pub fn render_view(
    map: &RefMap25D,
    field: &HeightField,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Result<RgbImage, SimError> {
    if let Ok(ground) = map.sample_dsm(&pose.center) {
        if ground >= pose.altitude {
            return Err(SimError::CameraBelowTerrain { camera: pose.altitude, ground });
        }
    }
    if footprint_center(map, field, pose, intr).is_none() {
        return Err(SimError::FootprintOutside);
    }
    let (w, h) = (intr.width as usize, intr.height as usize);
    let rows: Vec<Vec<[u8; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let dir = pose.ray(intr, x as f64, y as f64);
                    match cast_ray(map, field, (&pose.center, pose.altitude), &dir) {
                        Some(hit) => {
                            let mut rgb = map.sample_ortho(hit.u, hit.v).unwrap_or([0.0; 3]);
                            if dsm_slope(map, hit.u, hit.v) > 2.0 {
                                rgb.iter_mut().for_each(|c| *c *= 0.6);
                            }
                            rgb.map(|c| c.round().clamp(0.0, 255.0) as u8)
                        }
                        None => SKY,
                    }
                })
                .collect()
        })
        .collect();
    let mut img = RgbImage::new(intr.width, intr.height);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, p) in row.into_iter().enumerate() {
            img.put_pixel(x as u32, y as u32, Rgb(p));
        }
    }
    Ok(img)
}
