//! Synthetic 2.5D worlds and ground-truth UAV views rendered from them.

mod flight;
mod oracle;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoTransform, UtmCoord, UtmZone};
use crate::refmap::{MapLabel, Raster, RefMap25D, RefMapError};

pub use flight::{
    generate_flight, load_manifest, write_manifest, Dataset, FlightSpec, FrameTruth, Manifest,
};
pub use oracle::{
    export_oracle_matches, oracle_correspondences, oracle_embeddings, EmbeddingSpec, OracleMatcher,
    OracleMatchSpec,
};
pub use render::{cast_ray, footprint_center, render_view, HeightField, RayHit};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("camera below terrain ({camera:.2} m vs ground {ground:.2} m)")]
    CameraBelowTerrain { camera: f64, ground: f64 },
    #[error("view footprint outside the map")]
    FootprintOutside,
    #[error(transparent)]
    RefMap(#[from] RefMapError),
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Terrain {
    Flat,
    Hills { amplitude: f64, wavelength: f64 },
    Urban { density: f64, min_height: f64, max_height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureSpec {
    /// Size of the coarsest texture cell, meters.
    pub cell_m: f64,
    pub octaves: usize,
    /// Gray-level amplitude of the coarsest octave.
    pub contrast: f64,
    /// When set the pattern repeats with this period in both axes, meters.
    pub repeat_m: Option<f64>,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self { cell_m: 24.0, octaves: 4, contrast: 60.0, repeat_m: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub extent_m: f64,
    pub gsd: f64,
    pub terrain: Terrain,
    pub texture: TextureSpec,
    pub base_elevation: f64,
    pub origin_easting: f64,
    pub origin_northing: f64,
    pub utm_zone: u8,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_m: 400.0,
            gsd: 0.5,
            terrain: Terrain::Flat,
            texture: TextureSpec::default(),
            base_elevation: 50.0,
            origin_easting: 400_000.0,
            origin_northing: 3_500_000.0,
            utm_zone: 50,
        }
    }
}

impl SceneSpec {
    /// Raster side length in pixels.
    pub fn size_px(&self) -> Result<usize, SimError> {
        if !(self.gsd > 0.0 && self.extent_m > 0.0 && self.gsd.is_finite() && self.extent_m.is_finite()) {
            return Err(SimError::InvalidSpec(format!("extent {} / gsd {}", self.extent_m, self.gsd)));
        }
        let n = self.extent_m / self.gsd;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) || n.round() < 16.0 {
            return Err(SimError::InvalidSpec(format!(
                "extent {} m is not a whole number (>= 16) of {} m pixels",
                self.extent_m, self.gsd
            )));
        }
        Ok(n.round() as usize)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.size_px()?;
        match self.terrain {
            Terrain::Flat => {}
            Terrain::Hills { amplitude, wavelength } => {
                if !(amplitude >= 0.0 && wavelength > 0.0) {
                    return Err(SimError::InvalidSpec("hills need amplitude >= 0 and wavelength > 0".into()));
                }
            }
            Terrain::Urban { density, min_height, max_height } => {
                if !((0.0..=1.0).contains(&density) && min_height >= 0.0 && max_height >= min_height) {
                    return Err(SimError::InvalidSpec("urban needs density in [0, 1] and 0 <= min <= max".into()));
                }
            }
        }
        let t = &self.texture;
        if !(t.cell_m > 0.0 && t.octaves >= 1 && t.contrast >= 0.0) || t.repeat_m.is_some_and(|r| !(r > 0.0)) {
            return Err(SimError::InvalidSpec("texture cell, octaves and repeat must be positive".into()));
        }
        UtmZone::new(self.utm_zone, crate::geo::Hemisphere::North).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        Ok(())
    }
}

fn hash3(a: i64, b: i64, c: u64) -> u64 {
    let mut z = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ c.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic value in [-1, 1) for an integer lattice cell.
fn cell_value(a: i64, b: i64, salt: u64) -> f64 {
    (hash3(a, b, salt) >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Bilinearly interpolated lattice noise in [-1, 1].
fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = cell_value(ix, iy, salt) * (1.0 - sx) + cell_value(ix + 1, iy, salt) * sx;
    let b = cell_value(ix, iy + 1, salt) * (1.0 - sx) + cell_value(ix + 1, iy + 1, salt) * sx;
    a * (1.0 - sy) + b * sy
}

/// Multi-octave blocky pattern: each octave is a rotated grid of cells with
/// random gray offsets, so corners appear at every scale.
struct Texture {
    spec: TextureSpec,
    seed: u64,
    // per octave: cos, sin, cell size, amplitude, salt
    octaves: Vec<(f64, f64, f64, f64, u64)>,
}

impl Texture {
    fn new(spec: &TextureSpec, seed: u64) -> Self {
        let mut cell = spec.cell_m;
        let mut amp = spec.contrast;
        let octaves = (0..spec.octaves)
            .map(|o| {
                let ang = 0.37 + 1.13 * o as f64 + (seed % 97) as f64 * 0.01;
                let (s, c) = ang.sin_cos();
                let out = (c, s, cell, amp, seed ^ ((o as u64 + 1) * 0x51));
                cell /= 2.6;
                amp *= 0.65;
                out
            })
            .collect();
        Self { spec: *spec, seed, octaves }
    }

    fn rgb(&self, x: f64, y: f64) -> [f32; 3] {
        let t = &self.spec;
        let (x, y) = match t.repeat_m {
            Some(p) => (x.rem_euclid(p), y.rem_euclid(p)),
            None => (x, y),
        };
        let mut v = 128.0;
        for &(c, s, cell, amp, salt) in &self.octaves {
            let (rx, ry) = (c * x - s * y, s * x + c * y);
            v += amp * cell_value((rx / cell).floor() as i64, (ry / cell).floor() as i64, salt);
        }
        let region = t.cell_m * 12.0;
        v += 25.0 * value_noise(x / region, y / region, self.seed ^ 0xAB);
        let hue = value_noise(x / (t.cell_m * 6.0), y / (t.cell_m * 6.0), self.seed ^ 0xCD);
        let v = v.clamp(0.0, 255.0);
        [
            (v * (1.0 + 0.12 * hue)).clamp(0.0, 255.0) as f32,
            (v * (1.0 + 0.05 * hue)).clamp(0.0, 255.0) as f32,
            (v * (1.0 - 0.12 * hue)).clamp(0.0, 255.0) as f32,
        ]
    }
}

/// Axis-aligned building footprint in map meters (x east, y south).
#[derive(Debug, Clone, Copy)]
struct Building {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    height: f64,
    shade: f32,
}

fn buildings(spec: &SceneSpec) -> Vec<Building> {
    let Terrain::Urban { density, min_height, max_height } = spec.terrain else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xB111D);
    let cell = 40.0;
    let n = (spec.extent_m / cell).floor() as usize;
    let mut out = Vec::new();
    for cy in 0..n {
        for cx in 0..n {
            let place = rng.random::<f64>() < density;
            let (w, h): (f64, f64) = (rng.random_range(8.0..25.0), rng.random_range(8.0..25.0));
            let (ox, oy): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let height = if max_height > min_height { rng.random_range(min_height..max_height) } else { min_height };
            let shade = rng.random_range(-50.0..50.0f32);
            if !place {
                continue;
            }
            let x0 = cx as f64 * cell + ox * (cell - w - 2.0) + 1.0;
            let y0 = cy as f64 * cell + oy * (cell - h - 2.0) + 1.0;
            out.push(Building { x0, y0, x1: x0 + w, y1: y0 + h, height, shade });
        }
    }
    out
}

/// Bare-ground elevation model.
struct Relief {
    base: f64,
    kind: Terrain,
    seed: u64,
    // hills: (weight, frequency * cos, frequency * sin, phase), weights sum to one
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Relief {
    fn new(spec: &SceneSpec) -> Self {
        let mut waves = Vec::new();
        if let Terrain::Hills { wavelength, .. } = spec.terrain {
            let comps = [(1.0, 0.3, 0.0), (0.5, 1.9, 1.3), (0.25, 4.1, 2.9)];
            let wsum: f64 = comps.iter().map(|c| c.0).sum();
            for (k, &(w, ang, ph)) in comps.iter().enumerate() {
                let f = std::f64::consts::TAU / (wavelength / (1 << k) as f64);
                let (s, c) = (ang + (spec.seed % 31) as f64 * 0.1).sin_cos();
                waves.push((w / wsum, f * c, f * s, ph));
            }
        }
        Self { base: spec.base_elevation, kind: spec.terrain, seed: spec.seed, waves }
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            // |h - base| <= amplitude since the weights sum to one
            Terrain::Hills { amplitude, .. } => {
                self.base + amplitude * self.waves.iter().map(|&(w, fx, fy, ph)| w * (fx * x + fy * y + ph).sin()).sum::<f64>()
            }
            Terrain::Urban { .. } => self.base + 2.0 * value_noise(x / 150.0, y / 150.0, self.seed ^ 0x77),
            Terrain::Flat => self.base,
        }
    }
}

/// Build the orthophoto and DSM of a procedural scene. Pure in `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<RefMap25D, SimError> {
    spec.validate()?;
    let n = spec.size_px()?;
    let zone = UtmZone::north(spec.utm_zone);
    let origin = UtmCoord::new(spec.origin_easting, spec.origin_northing, zone)
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let g = GeoTransform::new(origin, spec.gsd, n, n).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let blds = buildings(spec);
    let texture = Texture::new(&spec.texture, spec.seed);
    let relief = Relief::new(spec);

    // bucket buildings by 40 m cell for lookup
    let cell = 40.0;
    let nc = (spec.extent_m / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); nc * nc];
    for (i, b) in blds.iter().enumerate() {
        let cx = ((b.x0 + b.x1) / 2.0 / cell) as usize;
        let cy = ((b.y0 + b.y1) / 2.0 / cell) as usize;
        grid[cy.min(nc - 1) * nc + cx.min(nc - 1)].push(i);
    }
    let find = |x: f64, y: f64| -> Option<&Building> {
        let cx = (x / cell) as usize;
        let cy = (y / cell) as usize;
        grid.get(cy.min(nc - 1) * nc + cx.min(nc - 1))?
            .iter()
            .map(|&i| &blds[i])
            .find(|b| x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1)
    };

    let rows: Vec<(Vec<[u8; 3]>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut ortho = Vec::with_capacity(n);
            let mut dsm = Vec::with_capacity(n);
            let y = r as f64 * spec.gsd;
            for c in 0..n {
                let x = c as f64 * spec.gsd;
                let ground = relief.height(x, y);
                let (rgb, h) = match find(x, y) {
                    Some(b) => {
                        let stripe = if ((x - b.x0) / 3.0).floor() as i64 % 2 == 0 { 8.0 } else { -8.0 };
                        let v = (110.0 + b.shade + stripe).clamp(0.0, 255.0);
                        ([v, v * 0.92, v * 0.85], ground + b.height)
                    }
                    None => (texture.rgb(x, y), ground),
                };
                ortho.push(rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
                dsm.push(h as f32);
            }
            (ortho, dsm)
        })
        .collect();
    let mut ortho = Vec::with_capacity(n * n);
    let mut dsm = Vec::with_capacity(n * n);
    for (o, d) in rows {
        ortho.extend(o);
        dsm.extend(d);
    }
    let ortho = Raster::new(g, ortho, None)?;
    let dsm = Raster::new(g, dsm, None)?;
    Ok(RefMap25D::new(ortho, dsm, MapLabel::Aerial)?)
}
