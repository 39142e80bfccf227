use std::fs;
use std::path::Path;

use image::{ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

use super::{MapLabel, Raster, RefMap25D, RefMapError};
use crate::geo::{GeoTransform, Hemisphere, UtmCoord, UtmZone};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub origin_e: f64,
    pub origin_n: f64,
    pub pixel_size: f64,
    pub rows: usize,
    pub cols: usize,
}

impl RasterHeader {
    fn to_geot(self, zone: UtmZone) -> Result<GeoTransform, RefMapError> {
        let origin = UtmCoord::new(self.origin_e, self.origin_n, zone)
            .map_err(|e| RefMapError::Header(e.to_string()))?;
        GeoTransform::new(origin, self.pixel_size, self.rows, self.cols)
            .map_err(|e| RefMapError::Header(e.to_string()))
    }

    pub fn from_geot(g: &GeoTransform) -> Self {
        Self {
            origin_e: g.origin.easting,
            origin_n: g.origin.northing,
            pixel_size: g.pixel_size,
            rows: g.rows,
            cols: g.cols,
        }
    }
}

/// JSON sidecar describing both rasters of a reference map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub utm_zone: u8,
    pub hemisphere: Hemisphere,
    pub ortho: RasterHeader,
    pub dsm: RasterHeader,
    #[serde(default)]
    pub nodata: Option<f32>,
    #[serde(default = "default_label")]
    pub label: MapLabel,
}

fn default_label() -> MapLabel {
    MapLabel::Aerial
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RefMapError + '_ {
    move |source| RefMapError::Io { path: path.display().to_string(), source }
}

/// Load an orthophoto PNG, a little-endian `f32` DSM and their JSON sidecar.
pub fn load_refmap(
    ortho_path: impl AsRef<Path>,
    dsm_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<RefMap25D, RefMapError> {
    let (ortho_path, dsm_path, sidecar_path) = (ortho_path.as_ref(), dsm_path.as_ref(), sidecar_path.as_ref());
    let text = fs::read_to_string(sidecar_path).map_err(io_err(sidecar_path))?;
    let sc: Sidecar = serde_json::from_str(&text).map_err(|e| RefMapError::Header(e.to_string()))?;
    let zone = UtmZone::new(sc.utm_zone, sc.hemisphere).map_err(|e| RefMapError::Header(e.to_string()))?;
    let og = sc.ortho.to_geot(zone)?;
    let dg = sc.dsm.to_geot(zone)?;

    let img = ImageReader::open(ortho_path)
        .map_err(io_err(ortho_path))?
        .decode()
        .map_err(|source| RefMapError::Image { path: ortho_path.display().to_string(), source })?
        .to_rgb8();
    if img.width() as usize != og.cols || img.height() as usize != og.rows {
        return Err(RefMapError::Header(format!(
            "orthophoto is {}x{}, sidecar declares {}x{}",
            img.width(),
            img.height(),
            og.cols,
            og.rows
        )));
    }
    let ortho = Raster::new(og, img.pixels().map(|p| p.0).collect(), None)?;

    let bytes = fs::read(dsm_path).map_err(io_err(dsm_path))?;
    if bytes.len() != dg.rows * dg.cols * 4 {
        return Err(RefMapError::Header(format!(
            "DSM file holds {} bytes, sidecar declares {}x{} f32",
            bytes.len(),
            dg.cols,
            dg.rows
        )));
    }
    let heights = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let dsm = Raster::new(dg, heights, sc.nodata)?;
    RefMap25D::new(ortho, dsm, sc.label)
}

/// Write the three files read by [`load_refmap`].
pub fn save_refmap(
    map: &RefMap25D,
    ortho_path: impl AsRef<Path>,
    dsm_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<(), RefMapError> {
    let (ortho_path, dsm_path, sidecar_path) = (ortho_path.as_ref(), dsm_path.as_ref(), sidecar_path.as_ref());
    let og = map.ortho().geot();
    let raw: Vec<u8> = map.ortho().data().iter().flat_map(|p| p.iter().copied()).collect();
    let img = RgbImage::from_raw(og.cols as u32, og.rows as u32, raw).expect("raster size matches header");
    img.save(ortho_path)
        .map_err(|source| RefMapError::Image { path: ortho_path.display().to_string(), source })?;

    let bytes: Vec<u8> = map.dsm().data().iter().flat_map(|h| h.to_le_bytes()).collect();
    fs::write(dsm_path, bytes).map_err(io_err(dsm_path))?;

    let zone = og.zone();
    let sc = Sidecar {
        utm_zone: zone.number,
        hemisphere: zone.hemisphere,
        ortho: RasterHeader::from_geot(og),
        dsm: RasterHeader::from_geot(map.dsm().geot()),
        nodata: map.dsm().nodata(),
        label: map.label(),
    };
    let json = serde_json::to_string_pretty(&sc).expect("sidecar serializes");
    fs::write(sidecar_path, json).map_err(io_err(sidecar_path))
}
