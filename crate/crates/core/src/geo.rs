//! Coordinate frames, camera model and pose types.
//!
//! World coordinates are UTM easting/northing plus an elevation above the map
//! datum (a local east-north-up frame). Camera axes follow the computer-vision
//! convention: `x` right, `y` down, `z` along the optical axis.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("UTM zone mismatch: {left} vs {right}")]
    ZoneMismatch { left: UtmZone, right: UtmZone },
    #[error("invalid UTM coordinate: {0}")]
    InvalidCoord(String),
    #[error("invalid geo-transform: {0}")]
    InvalidTransform(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid prior state: {0}")]
    InvalidPrior(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    North,
    South,
}

/// A UTM zone number together with its hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UtmZone {
    pub number: u8,
    pub hemisphere: Hemisphere,
}

impl UtmZone {
    pub fn new(number: u8, hemisphere: Hemisphere) -> Result<Self, GeoError> {
        if !(1..=60).contains(&number) {
            return Err(GeoError::InvalidCoord(format!("zone {number} outside 1..=60")));
        }
        Ok(Self { number, hemisphere })
    }

    pub fn north(number: u8) -> Self {
        Self::new(number, Hemisphere::North).expect("valid zone number")
    }

    fn ensure_same(self, other: UtmZone) -> Result<(), GeoError> {
        if self == other {
            Ok(())
        } else {
            Err(GeoError::ZoneMismatch { left: self, right: other })
        }
    }
}

impl std::fmt::Display for UtmZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let h = match self.hemisphere {
            Hemisphere::North => 'N',
            Hemisphere::South => 'S',
        };
        write!(f, "{}{}", self.number, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmCoord {
    pub easting: f64,
    pub northing: f64,
    pub zone: UtmZone,
}

impl UtmCoord {
    pub fn new(easting: f64, northing: f64, zone: UtmZone) -> Result<Self, GeoError> {
        if !(100_000.0..900_000.0).contains(&easting) || !northing.is_finite() {
            return Err(GeoError::InvalidCoord(format!("easting {easting}, northing {northing}")));
        }
        Ok(Self { easting, northing, zone })
    }

    /// Offset by a planar displacement in meters; no range validation.
    pub fn offset(&self, de: f64, dn: f64) -> Self {
        Self { easting: self.easting + de, northing: self.northing + dn, zone: self.zone }
    }

    /// Planar displacement `self - other` in meters.
    pub fn delta(&self, other: &UtmCoord) -> Result<Vector2<f64>, GeoError> {
        self.zone.ensure_same(other.zone)?;
        Ok(Vector2::new(self.easting - other.easting, self.northing - other.northing))
    }
}

/// Planar localization error: Euclidean distance between easting/northing
/// pairs. Elevation plays no part.
pub fn planar_error(pred: &UtmCoord, gt: &UtmCoord) -> Result<f64, GeoError> {
    Ok(pred.delta(gt)?.norm())
}

/// Affine mapping between raster pixels and UTM. Pixel `(0, 0)` is centred on
/// `origin`; columns grow eastward and rows grow southward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin: UtmCoord,
    pub pixel_size: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GeoTransform {
    pub fn new(origin: UtmCoord, pixel_size: f64, rows: usize, cols: usize) -> Result<Self, GeoError> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(GeoError::InvalidTransform(format!("pixel size {pixel_size}")));
        }
        if rows == 0 || cols == 0 {
            return Err(GeoError::InvalidTransform(format!("empty raster {rows}x{cols}")));
        }
        Ok(Self { origin, pixel_size, rows, cols })
    }

    pub fn zone(&self) -> UtmZone {
        self.origin.zone
    }

    pub fn pixel_to_world(&self, u: f64, v: f64) -> UtmCoord {
        self.origin.offset(u * self.pixel_size, -v * self.pixel_size)
    }

    pub fn world_to_pixel(&self, c: &UtmCoord) -> Result<(f64, f64), GeoError> {
        let d = c.delta(&self.origin)?;
        Ok((d.x / self.pixel_size, -d.y / self.pixel_size))
    }

    /// Whether a fractional pixel lies within the pixel-centre hull
    /// `[0, cols-1] x [0, rows-1]`.
    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.cols - 1) as f64 && v <= (self.rows - 1) as f64
    }

    pub fn contains(&self, c: &UtmCoord) -> bool {
        match self.world_to_pixel(c) {
            Ok((u, v)) => self.contains_pixel(u, v),
            Err(_) => false,
        }
    }

    /// Width and height of the raster footprint in meters.
    pub fn extent_m(&self) -> (f64, f64) {
        (self.cols as f64 * self.pixel_size, self.rows as f64 * self.pixel_size)
    }

    pub fn center(&self) -> UtmCoord {
        self.pixel_to_world((self.cols as f64 - 1.0) / 2.0, (self.rows as f64 - 1.0) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeoError> {
        let intr = Self { focal_x, focal_y, principal_x, principal_y, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// Pinhole camera with the principal point at the image centre and a
    /// horizontal field of view in degrees.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Result<Self, GeoError> {
        let f = width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) {
            return Err(GeoError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        let inside = self.principal_x > 0.0
            && self.principal_y > 0.0
            && self.principal_x < self.width as f64
            && self.principal_y < self.height as f64;
        if !inside {
            return Err(GeoError::InvalidIntrinsics("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.focal_x + self.focal_y)
    }

    pub fn diagonal_px(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    /// Diagonal field of view in degrees, using the mean focal length.
    pub fn diagonal_fov(&self) -> f64 {
        2.0 * (self.diagonal_px() / (self.focal_x + self.focal_y)).atan().to_degrees()
    }

    /// Unit viewing ray of a pixel in camera axes.
    pub fn bearing(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.principal_x) / self.focal_x, (v - self.principal_y) / self.focal_y, 1.0)
            .normalize()
    }

    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.focal_x * p.x / p.z + self.principal_x,
            self.focal_y * p.y / p.z + self.principal_y,
        ))
    }

    /// Intrinsics for the same camera imaged at a different resolution.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            focal_x: self.focal_x * factor,
            focal_y: self.focal_y * factor,
            principal_x: (self.principal_x + 0.5) * factor - 0.5,
            principal_y: (self.principal_y + 0.5) * factor - 0.5,
            width: (self.width as f64 * factor).round() as u32,
            height: (self.height as f64 * factor).round() as u32,
        }
    }
}

/// Diagonal field of view of a camera, degrees.
pub fn diagonal_fov(intr: &CameraIntrinsics) -> f64 {
    intr.diagonal_fov()
}

/// Camera position and attitude. `rotation` maps world (east, north, up)
/// vectors into camera axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub center: UtmCoord,
    pub altitude: f64,
    pub rotation: Rotation3<f64>,
}

impl CameraPose {
    /// Roll-free attitude from a heading (degrees clockwise from north) and a
    /// pitch (degrees of the optical axis below the horizon, 90 = nadir).
    pub fn from_attitude(center: UtmCoord, altitude: f64, yaw_deg: f64, pitch_deg: f64) -> Self {
        Self { center, altitude, rotation: attitude_rotation(yaw_deg, pitch_deg) }
    }

    /// World point relative to the camera centre, in the local ENU frame.
    pub fn local(&self, p: &UtmCoord, elevation: f64) -> Vector3<f64> {
        Vector3::new(
            p.easting - self.center.easting,
            p.northing - self.center.northing,
            elevation - self.altitude,
        )
    }

    pub fn world_to_camera(&self, p: &UtmCoord, elevation: f64) -> Vector3<f64> {
        self.rotation * self.local(p, elevation)
    }

    pub fn project(&self, intr: &CameraIntrinsics, p: &UtmCoord, elevation: f64) -> Option<Vector2<f64>> {
        intr.project_camera(&self.world_to_camera(p, elevation))
    }

    /// Viewing ray of an image pixel in the ENU frame (unit length).
    pub fn ray(&self, intr: &CameraIntrinsics, u: f64, v: f64) -> Vector3<f64> {
        self.rotation.inverse() * intr.bearing(u, v)
    }

    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    /// Pitch of the optical axis below the horizon, degrees.
    pub fn pitch_deg(&self) -> f64 {
        let a = self.optical_axis();
        (-a.z).clamp(-1.0, 1.0).asin().to_degrees()
    }

    /// Heading of the image "up" direction, degrees clockwise from north.
    pub fn yaw_deg(&self) -> f64 {
        let up = self.rotation.inverse() * -Vector3::y();
        let a = self.optical_axis();
        // near nadir the optical axis has no horizontal component; image-up does
        let dir = if a.xy().norm() > 1e-6 { a.xy() } else { up.xy() };
        dir.x.atan2(dir.y).to_degrees().rem_euclid(360.0)
    }
}

pub fn attitude_rotation(yaw_deg: f64, pitch_deg: f64) -> Rotation3<f64> {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let forward = Vector3::new(sy * cp, cy * cp, -sp);
    let right = Vector3::new(cy, -sy, 0.0);
    let down = forward.cross(&right);
    Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]))
}

/// Prior attitude and height from on-board sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorState {
    /// Meters above the observed ground.
    pub altitude: f64,
    /// Degrees below the horizon, in (0, 90].
    pub pitch: f64,
    /// Degrees clockwise from north, in [0, 360).
    pub yaw: f64,
}

impl PriorState {
    pub fn new(altitude: f64, pitch: f64, yaw: f64) -> Result<Self, GeoError> {
        if !(altitude > 0.0 && altitude.is_finite()) {
            return Err(GeoError::InvalidPrior(format!("altitude {altitude}")));
        }
        if !(pitch > 0.0 && pitch <= 90.0) {
            return Err(GeoError::InvalidPrior(format!("pitch {pitch}")));
        }
        if !yaw.is_finite() {
            return Err(GeoError::InvalidPrior(format!("yaw {yaw}")));
        }
        Ok(Self { altitude, pitch, yaw: yaw.rem_euclid(360.0) })
    }
}
