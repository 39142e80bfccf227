use serde::{Deserialize, Serialize};

use super::{RefMap25D, RefMapError};
use crate::geo::UtmCoord;
use crate::imgproc::GrayF32;

/// Axis-aligned pixel window `[x0, x0 + width) x [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelWindow {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 as f64
            && v >= self.y0 as f64
            && u <= (self.x0 + self.width - 1) as f64
            && v <= (self.y0 + self.height - 1) as f64
    }
}

/// A square window of the reference map used as a retrieval candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryTile {
    pub id: u32,
    pub window: PixelWindow,
    pub center: UtmCoord,
    /// Tile width in pixels.
    pub width_px: usize,
    /// Map resolution in meters per pixel.
    pub resolution: f64,
}

impl GalleryTile {
    /// Identifier used in embedding and correspondence files.
    pub fn key(&self) -> String {
        tile_key(self.id)
    }

    pub fn footprint_m(&self) -> f64 {
        self.width_px as f64 * self.resolution
    }

    pub fn image(&self, map: &RefMap25D) -> GrayF32 {
        let w = self.window;
        map.gray().crop(w.x0, w.y0, w.width, w.height)
    }
}

pub fn tile_key(id: u32) -> String {
    format!("tile_{id}")
}

fn axis_starts(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + size < len {
        starts.push(s);
        s += stride;
    }
    let last = len - size;
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// Tile the orthophoto with square windows of side `footprint` meters and a
/// stride of `footprint * (1 - overlap_fraction)`. The last tile on each axis
/// is clamped against the map edge so every pixel is covered. Ids are
/// assigned row-major.
pub fn build_gallery(
    map: &RefMap25D,
    footprint: f64,
    overlap_fraction: f64,
) -> Result<Vec<GalleryTile>, RefMapError> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(RefMapError::InvalidParams(format!("overlap fraction {overlap_fraction} outside [0, 1)")));
    }
    let g = map.geot();
    if !(footprint > 0.0 && footprint.is_finite()) {
        return Err(RefMapError::InvalidParams(format!("footprint {footprint}")));
    }
    let size = (footprint / g.pixel_size).round() as usize;
    if size == 0 || size > g.cols || size > g.rows {
        let (ew, eh) = g.extent_m();
        return Err(RefMapError::InvalidParams(format!(
            "footprint {footprint} m exceeds map extent {ew} x {eh} m"
        )));
    }
    let stride = ((size as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let xs = axis_starts(g.cols, size, stride);
    let ys = axis_starts(g.rows, size, stride);
    let half = (size as f64 - 1.0) / 2.0;
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            tiles.push(GalleryTile {
                id: tiles.len() as u32,
                window: PixelWindow { x0, y0, width: size, height: size },
                center: g.pixel_to_world(x0 as f64 + half, y0 as f64 + half),
                width_px: size,
                resolution: g.pixel_size,
            });
        }
    }
    Ok(tiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmap::test_support::map_with;

    fn flat(cols: usize, rows: usize, ps: f64) -> RefMap25D {
        map_with(cols, rows, ps, |_, _| [0; 3], |_, _| 0.0)
    }

    #[test]
    fn three_by_three_at_half_overlap() {
        let m = flat(100, 100, 1.0);
        let tiles = build_gallery(&m, 50.0, 0.5).unwrap();
        assert_eq!(tiles.len(), 9);
        let xs: Vec<usize> = tiles[..3].iter().map(|t| t.window.x0).collect();
        assert_eq!(xs, vec![0, 25, 50]);
        assert_eq!(tiles[4].window, PixelWindow { x0: 25, y0: 25, width: 50, height: 50 });
        assert!(tiles.iter().enumerate().all(|(i, t)| t.id == i as u32));
    }

    #[test]
    fn zero_overlap_partitions() {
        let m = flat(100, 100, 1.0);
        let tiles = build_gallery(&m, 25.0, 0.0).unwrap();
        assert_eq!(tiles.len(), 16);
        let mut count = vec![0u32; 100 * 100];
        for t in &tiles {
            for y in t.window.y0..t.window.y0 + 25 {
                for x in t.window.x0..t.window.x0 + 25 {
                    count[y * 100 + x] += 1;
                }
            }
        }
        assert!(count.iter().all(|&c| c == 1));
    }

    #[test]
    fn oversized_footprint_is_rejected() {
        let m = flat(100, 100, 1.0);
        assert!(matches!(build_gallery(&m, 200.0, 0.5), Err(RefMapError::InvalidParams(_))));
        assert!(build_gallery(&m, 50.0, 1.0).is_err());
    }

    #[test]
    fn coverage_and_centres() {
        for &(cols, rows, fp, ov) in &[(97usize, 61usize, 20.0, 0.5), (64, 64, 64.0, 0.3), (53, 80, 17.0, 0.25)] {
            let m = flat(cols, rows, 1.0);
            let tiles = build_gallery(&m, fp, ov).unwrap();
            let mut count = vec![0u32; cols * rows];
            for t in &tiles {
                let w = t.window;
                assert!(w.x0 + w.width <= cols && w.y0 + w.height <= rows);
                for y in w.y0..w.y0 + w.height {
                    for x in w.x0..w.x0 + w.width {
                        count[y * cols + x] += 1;
                    }
                }
                let (u, v) = m.geot().world_to_pixel(&t.center).unwrap();
                assert!(m.geot().contains_pixel(u, v));
            }
            assert!(count.iter().all(|&c| c >= 1), "uncovered pixel for {cols}x{rows}");
        }
    }
}
