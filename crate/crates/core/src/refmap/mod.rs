//! 2.5D reference maps: a geo-referenced orthophoto paired with a digital
//! surface model (DSM) in the same UTM zone.

mod degrade;
mod gallery;
mod io;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoTransform, UtmCoord};
use crate::imgproc::{luma, GrayF32};

pub use degrade::{degrade_map, DegradeParams};
pub use gallery::{build_gallery, GalleryTile, PixelWindow};
pub use io::{load_refmap, save_refmap, RasterHeader, Sidecar};

#[derive(Debug, Error)]
pub enum RefMapError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: String, source: image::ImageError },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("extent mismatch: {0}")]
    Extent(String),
    #[error("zone mismatch: {0}")]
    Zone(String),
    #[error("point outside DSM extent")]
    OutsideExtent,
    #[error("all DSM neighbours are nodata")]
    NoData,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Row-major raster with a geo-transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    geot: GeoTransform,
    data: Vec<T>,
    nodata: Option<f32>,
}

impl<T: Copy> Raster<T> {
    pub fn new(geot: GeoTransform, data: Vec<T>, nodata: Option<f32>) -> Result<Self, RefMapError> {
        if data.len() != geot.rows * geot.cols {
            return Err(RefMapError::Header(format!(
                "raster holds {} samples, geo-transform declares {}x{}",
                data.len(),
                geot.rows,
                geot.cols
            )));
        }
        Ok(Self { geot, data, nodata })
    }

    pub fn from_fn(geot: GeoTransform, nodata: Option<f32>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(geot.rows * geot.cols);
        for r in 0..geot.rows {
            for c in 0..geot.cols {
                data.push(f(c, r));
            }
        }
        Self { geot, data, nodata }
    }

    pub fn geot(&self) -> &GeoTransform {
        &self.geot
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn nodata(&self) -> Option<f32> {
        self.nodata
    }

    pub fn rows(&self) -> usize {
        self.geot.rows
    }

    pub fn cols(&self) -> usize {
        self.geot.cols
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.data[row * self.geot.cols + col]
    }
}

pub type OrthoRaster = Raster<[u8; 3]>;
pub type DsmRaster = Raster<f32>;

impl DsmRaster {
    fn is_void(&self, v: f32) -> bool {
        !v.is_finite() || self.nodata.is_some_and(|nd| v == nd)
    }

    /// Bilinear elevation at fractional pixel `(u, v)`; void neighbours are
    /// dropped and the remaining weights renormalized.
    pub fn sample_pixel(&self, u: f64, v: f64) -> Result<f64, RefMapError> {
        if !self.geot.contains_pixel(u, v) {
            return Err(RefMapError::OutsideExtent);
        }
        let cols = self.geot.cols;
        let rows = self.geot.rows;
        let c0 = (u.floor() as usize).min(cols.saturating_sub(2));
        let r0 = (v.floor() as usize).min(rows.saturating_sub(2));
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let c1 = (c0 + 1).min(cols - 1);
        let r1 = (r0 + 1).min(rows - 1);
        let taps = [
            (c0, r0, (1.0 - fu) * (1.0 - fv)),
            (c1, r0, fu * (1.0 - fv)),
            (c0, r1, (1.0 - fu) * fv),
            (c1, r1, fu * fv),
        ];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut any = false;
        for (c, r, w) in taps {
            let h = self.get(c, r);
            if self.is_void(h) {
                continue;
            }
            any = true;
            acc += w * h as f64;
            wsum += w;
        }
        if !any {
            return Err(RefMapError::NoData);
        }
        if wsum <= 1e-12 {
            // query sits exactly on valid cells with zero weight; use their mean
            let valid: Vec<f64> = taps
                .iter()
                .map(|&(c, r, _)| self.get(c, r))
                .filter(|&h| !self.is_void(h))
                .map(|h| h as f64)
                .collect();
            return Ok(valid.iter().sum::<f64>() / valid.len() as f64);
        }
        Ok(acc / wsum)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .filter(|&&h| !self.is_void(h))
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapLabel {
    Aerial,
    Satellite,
}

impl std::fmt::Display for MapLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapLabel::Aerial => "aerial",
            MapLabel::Satellite => "satellite",
        })
    }
}

#[derive(Debug)]
pub struct RefMap25D {
    ortho: OrthoRaster,
    dsm: DsmRaster,
    label: MapLabel,
    gray: OnceLock<GrayF32>,
}

impl Clone for RefMap25D {
    fn clone(&self) -> Self {
        Self { ortho: self.ortho.clone(), dsm: self.dsm.clone(), label: self.label, gray: OnceLock::new() }
    }
}

impl RefMap25D {
    /// Validates that both rasters share a zone and that the DSM covers the
    /// orthophoto's pixel-centre hull.
    pub fn new(ortho: OrthoRaster, dsm: DsmRaster, label: MapLabel) -> Result<Self, RefMapError> {
        let og = ortho.geot();
        let dg = dsm.geot();
        if og.zone() != dg.zone() {
            return Err(RefMapError::Zone(format!("ortho {} vs dsm {}", og.zone(), dg.zone())));
        }
        let corners = [
            (0.0, 0.0),
            ((og.cols - 1) as f64, 0.0),
            (0.0, (og.rows - 1) as f64),
            ((og.cols - 1) as f64, (og.rows - 1) as f64),
        ];
        let tol = 1e-6;
        for (u, v) in corners {
            let (du, dv) = dg.world_to_pixel(&og.pixel_to_world(u, v))?;
            let inside = du >= -tol
                && dv >= -tol
                && du <= (dg.cols - 1) as f64 + tol
                && dv <= (dg.rows - 1) as f64 + tol;
            if !inside {
                return Err(RefMapError::Extent(format!(
                    "ortho corner pixel ({u}, {v}) falls outside the DSM"
                )));
            }
        }
        Ok(Self { ortho, dsm, label, gray: OnceLock::new() })
    }

    pub fn ortho(&self) -> &OrthoRaster {
        &self.ortho
    }

    pub fn dsm(&self) -> &DsmRaster {
        &self.dsm
    }

    pub fn label(&self) -> MapLabel {
        self.label
    }

    pub fn geot(&self) -> &GeoTransform {
        self.ortho.geot()
    }

    pub fn gsd(&self) -> f64 {
        self.ortho.geot().pixel_size
    }

    /// Grayscale copy of the orthophoto, computed once.
    pub fn gray(&self) -> &GrayF32 {
        self.gray.get_or_init(|| {
            GrayF32::from_vec(
                self.ortho.cols(),
                self.ortho.rows(),
                self.ortho.data().iter().map(|&p| luma(p)).collect(),
            )
        })
    }

    /// Bilinear elevation at a UTM coordinate.
    pub fn sample_dsm(&self, c: &UtmCoord) -> Result<f64, RefMapError> {
        let (u, v) = self.dsm.geot().world_to_pixel(c)?;
        // snap tiny round-off at the hull boundary
        let snap = |x: f64, hi: usize| {
            if x < 0.0 && x > -1e-9 {
                0.0
            } else if x > (hi - 1) as f64 && x < (hi - 1) as f64 + 1e-9 {
                (hi - 1) as f64
            } else {
                x
            }
        };
        self.dsm.sample_pixel(snap(u, self.dsm.cols()), snap(v, self.dsm.rows()))
    }

    /// World position and elevation of an orthophoto pixel.
    pub fn lift_to_3d(&self, u: f64, v: f64) -> Result<(UtmCoord, f64), RefMapError> {
        if !self.geot().contains_pixel(u, v) {
            return Err(RefMapError::OutsideExtent);
        }
        let c = self.geot().pixel_to_world(u, v);
        Ok((c, self.sample_dsm(&c)?))
    }

    /// Bilinear RGB sample of the orthophoto at a fractional pixel.
    pub fn sample_ortho(&self, u: f64, v: f64) -> Option<[f32; 3]> {
        let g = self.geot();
        if !g.contains_pixel(u, v) {
            return None;
        }
        let c0 = (u.floor() as usize).min(g.cols.saturating_sub(2));
        let r0 = (v.floor() as usize).min(g.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(g.cols - 1);
        let r1 = (r0 + 1).min(g.rows - 1);
        let fu = (u - c0 as f64) as f32;
        let fv = (v - r0 as f64) as f32;
        let p00 = self.ortho.get(c0, r0);
        let p10 = self.ortho.get(c1, r0);
        let p01 = self.ortho.get(c0, r1);
        let p11 = self.ortho.get(c1, r1);
        let mut out = [0.0f32; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let a = p00[k] as f32 * (1.0 - fu) + p10[k] as f32 * fu;
            let b = p01[k] as f32 * (1.0 - fu) + p11[k] as f32 * fu;
            *o = a * (1.0 - fv) + b * fv;
        }
        Some(out)
    }
}

/// Free-function form of [`RefMap25D::sample_dsm`].
pub fn sample_dsm(map: &RefMap25D, c: &UtmCoord) -> Result<f64, RefMapError> {
    map.sample_dsm(c)
}

/// Free-function form of [`RefMap25D::lift_to_3d`].
pub fn lift_to_3d(map: &RefMap25D, u: f64, v: f64) -> Result<(UtmCoord, f64), RefMapError> {
    map.lift_to_3d(u, v)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::geo::UtmZone;

    pub fn origin() -> UtmCoord {
        UtmCoord::new(500_000.0, 4_000_000.0, UtmZone::north(50)).unwrap()
    }

    pub fn map_with(
        cols: usize,
        rows: usize,
        ps: f64,
        ortho: impl FnMut(usize, usize) -> [u8; 3],
        dsm: impl FnMut(usize, usize) -> f32,
    ) -> RefMap25D {
        let g = GeoTransform::new(origin(), ps, rows, cols).unwrap();
        RefMap25D::new(Raster::from_fn(g, None, ortho), Raster::from_fn(g, None, dsm), MapLabel::Aerial).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::geo::UtmZone;
    use proptest::prelude::*;

    #[test]
    fn constant_dsm() {
        let m = map_with(50, 40, 0.5, |_, _| [9, 9, 9], |_, _| 10.0);
        let c = m.geot().pixel_to_world(12.3, 17.8);
        assert_eq!(m.sample_dsm(&c).unwrap(), 10.0);
    }

    #[test]
    fn bilinear_cell_midpoint() {
        let m = map_with(2, 2, 1.0, |_, _| [0; 3], |_, r| r as f32);
        let c = m.geot().pixel_to_world(0.5, 0.5);
        assert!((m.sample_dsm(&c).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn planar_ramp_matches_plane() {
        let ps = 0.7;
        let m = map_with(64, 64, ps, |_, _| [0; 3], |c, _| (c as f64 * ps) as f32);
        let e0 = m.geot().origin.easting;
        for &(u, v) in &[(0.0, 0.0), (3.3, 7.1), (62.9, 40.0), (63.0, 63.0)] {
            let c = m.geot().pixel_to_world(u, v);
            let h = m.sample_dsm(&c).unwrap();
            assert!((h - (c.easting - e0)).abs() < 1e-4, "{h} vs {}", c.easting - e0);
        }
    }

    #[test]
    fn nodata_is_renormalized() {
        let g = GeoTransform::new(origin(), 1.0, 2, 2).unwrap();
        let dsm = Raster::new(g, vec![-9999.0, 4.0, 4.0, 4.0], Some(-9999.0)).unwrap();
        let ortho = Raster::from_fn(g, None, |_, _| [0u8; 3]);
        let m = RefMap25D::new(ortho, dsm, MapLabel::Satellite).unwrap();
        assert_eq!(m.sample_dsm(&g.pixel_to_world(0.2, 0.3)).unwrap(), 4.0);

        let void = Raster::new(g, vec![-9999.0; 4], Some(-9999.0)).unwrap();
        let ortho = Raster::from_fn(g, None, |_, _| [0u8; 3]);
        let m = RefMap25D::new(ortho, void, MapLabel::Satellite).unwrap();
        assert!(matches!(m.sample_dsm(&g.pixel_to_world(0.5, 0.5)), Err(RefMapError::NoData)));
    }

    #[test]
    fn outside_extent() {
        let m = map_with(10, 10, 1.0, |_, _| [0; 3], |_, _| 0.0);
        assert!(matches!(m.sample_dsm(&m.geot().pixel_to_world(-1.0, 2.0)), Err(RefMapError::OutsideExtent)));
        assert!(matches!(m.lift_to_3d(10.5, 2.0), Err(RefMapError::OutsideExtent)));
    }

    #[test]
    fn lift_identity_map() {
        let m = map_with(100, 100, 0.1, |_, _| [0; 3], |_, _| 10.0);
        let (c, h) = m.lift_to_3d(10.0, 20.0).unwrap();
        assert!((c.easting - 500_001.0).abs() < 1e-9);
        assert!((c.northing - 3_999_998.0).abs() < 1e-9);
        assert_eq!(h, 10.0);
    }

    #[test]
    fn dsm_must_cover_ortho() {
        let og = GeoTransform::new(origin(), 1.0, 100, 100).unwrap();
        let dg = GeoTransform::new(origin(), 1.0, 50, 100).unwrap();
        let r = RefMap25D::new(
            Raster::from_fn(og, None, |_, _| [0; 3]),
            Raster::from_fn(dg, None, |_, _| 0.0),
            MapLabel::Aerial,
        );
        assert!(matches!(r, Err(RefMapError::Extent(_))));

        let other = UtmCoord::new(500_000.0, 4_000_000.0, UtmZone::north(51)).unwrap();
        let dg = GeoTransform::new(other, 1.0, 100, 100).unwrap();
        let r = RefMap25D::new(
            Raster::from_fn(og, None, |_, _| [0; 3]),
            Raster::from_fn(dg, None, |_, _| 0.0),
            MapLabel::Aerial,
        );
        assert!(matches!(r, Err(RefMapError::Zone(_))));
    }

    #[test]
    fn coarser_dsm_grid_is_accepted() {
        let og = GeoTransform::new(origin(), 0.5, 101, 101).unwrap();
        let dg = GeoTransform::new(origin(), 5.0, 11, 11).unwrap();
        let m = RefMap25D::new(
            Raster::from_fn(og, None, |_, _| [0; 3]),
            Raster::from_fn(dg, None, |c, r| (c + r) as f32),
            MapLabel::Satellite,
        )
        .unwrap();
        let (_, h) = m.lift_to_3d(50.0, 50.0).unwrap();
        assert!((h - 10.0).abs() < 1e-9);
    }

    proptest! {
        // a bilinear surface a + b*u + c*v + d*u*v is reproduced exactly inside each cell
        #[test]
        fn bilinear_surface_exactness(
            a in -50.0f64..50.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -0.05f64..0.05,
            u in 0.0f64..15.0, v in 0.0f64..15.0,
        ) {
            let m = map_with(16, 16, 1.0, |_, _| [0; 3], |x, y| {
                let (x, y) = (x as f64, y as f64);
                (a + b * x + c * y + d * x * y) as f32
            });
            // piecewise-bilinear interpolation of a globally bilinear function is exact
            let expect = a + b * u + c * v + d * u * v;
            let got = m.sample_dsm(&m.geot().pixel_to_world(u, v)).unwrap();
            prop_assert!((got - expect).abs() < 1e-3 * (1.0 + expect.abs()) );
        }
    }
}
