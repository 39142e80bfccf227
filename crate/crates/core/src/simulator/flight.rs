use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{footprint_center, render_view, HeightField};
use super::SimError;
use crate::geo::{CameraIntrinsics, CameraPose, PriorState, UtmCoord};
use crate::imgproc::GrayF32;
use crate::prior::frame_seed;
use crate::refmap::RefMap25D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlightSpec {
    pub seed: u64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    /// Height above the ground at the footprint centre, meters.
    pub altitude: (f64, f64),
    pub pitch: (f64, f64),
    pub yaw: (f64, f64),
    /// Footprint centres stay this far from the map border, meters.
    pub margin_m: f64,
}

impl Default for FlightSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 20,
            width: 640,
            height: 480,
            hfov_deg: 60.0,
            altitude: (30.0, 300.0),
            pitch: (20.0, 90.0),
            yaw: (0.0, 360.0),
            margin_m: 100.0,
        }
    }
}

impl FlightSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, SimError> {
        CameraIntrinsics::from_hfov(self.width, self.height, self.hfov_deg)
            .map_err(|e| SimError::InvalidSpec(e.to_string()))
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = self.altitude.0 > 0.0
            && self.altitude.0 <= self.altitude.1
            && self.pitch.0 > 0.0
            && self.pitch.0 <= self.pitch.1
            && self.pitch.1 <= 90.0
            && self.yaw.0 <= self.yaw.1
            && self.margin_m >= 0.0
            && self.hfov_deg > 0.0
            && self.hfov_deg < 180.0;
        if !ok {
            return Err(SimError::InvalidSpec(format!("flight ranges {self:?}")));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..=r.1)
    } else {
        r.0
    }
}

/// Ground truth and sensor prior for one synthetic frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub id: String,
    pub index: u64,
    /// Image path relative to the manifest, when written to disk.
    #[serde(default)]
    pub image: Option<String>,
    pub intrinsics: CameraIntrinsics,
    pub camera: UtmCoord,
    /// Absolute camera elevation, meters.
    pub camera_elevation: f64,
    pub yaw: f64,
    pub pitch: f64,
    /// Height above the ground at the footprint centre, meters.
    pub altitude: f64,
    pub footprint: UtmCoord,
}

impl FrameTruth {
    pub fn pose(&self) -> CameraPose {
        CameraPose::from_attitude(self.camera, self.camera_elevation, self.yaw, self.pitch)
    }

    /// Noise-free prior.
    pub fn prior(&self) -> PriorState {
        PriorState { altitude: self.altitude, pitch: self.pitch, yaw: self.yaw.rem_euclid(360.0) }
    }
}

/// Sample camera poses over the map. A pose is drawn by choosing the
/// footprint centre first and backing the camera off along the heading.
pub fn generate_flight(map: &RefMap25D, field: &HeightField, spec: &FlightSpec) -> Result<Vec<FrameTruth>, SimError> {
    spec.validate()?;
    let intr = spec.intrinsics()?;
    let (ew, eh) = map.geot().extent_m();
    if 2.0 * spec.margin_m >= ew.min(eh) {
        return Err(SimError::InvalidSpec(format!("margin {} m leaves no room in the map", spec.margin_m)));
    }
    let g = map.geot();
    let inner = |c: &UtmCoord| match g.world_to_pixel(c) {
        Ok((u, v)) => {
            let m = spec.margin_m / g.pixel_size;
            u >= m && v >= m && u <= g.cols as f64 - 1.0 - m && v <= g.rows as f64 - 1.0 - m
        }
        Err(_) => false,
    };
    (0..spec.frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(spec.seed, i as u64));
            for _ in 0..200 {
                let pitch = draw(&mut rng, spec.pitch);
                let yaw = draw(&mut rng, spec.yaw).rem_euclid(360.0);
                let altitude = draw(&mut rng, spec.altitude);
                let fu = rng.random_range(spec.margin_m..=ew - spec.margin_m) / g.pixel_size;
                let fv = rng.random_range(spec.margin_m..=eh - spec.margin_m) / g.pixel_size;
                let (target, ground) = map.lift_to_3d(fu.min((g.cols - 1) as f64), fv.min((g.rows - 1) as f64))?;
                let back = altitude * pitch.to_radians().cos() / pitch.to_radians().sin();
                let (sy, cy) = yaw.to_radians().sin_cos();
                let camera = target.offset(-sy * back, -cy * back);
                let pose = CameraPose::from_attitude(camera, ground + altitude, yaw, pitch);
                if map.sample_dsm(&camera).is_ok_and(|h| h >= pose.altitude - 1.0) {
                    continue;
                }
                let Some(hit) = footprint_center(map, field, &pose, &intr) else { continue };
                let footprint = g.pixel_to_world(hit.u, hit.v);
                if !inner(&footprint) {
                    continue;
                }
                return Ok(FrameTruth {
                    id: format!("frame_{i:05}"),
                    index: i as u64,
                    image: None,
                    intrinsics: intr,
                    camera,
                    camera_elevation: pose.altitude,
                    yaw,
                    pitch,
                    altitude,
                    footprint,
                });
            }
            Err(SimError::InvalidSpec(format!("no valid pose found for frame {i}")))
        })
        .collect()
}

/// Frames and their rendered grayscale images, in frame order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<FrameTruth>,
    pub images: Vec<GrayF32>,
}

impl Dataset {
    pub fn render(map: &RefMap25D, field: &HeightField, frames: Vec<FrameTruth>) -> Result<Self, SimError> {
        let images = frames
            .iter()
            .map(|f| render_view(map, field, &f.pose(), &f.intrinsics).map(|img| GrayF32::from_rgb8(&img)))
            .collect::<Result<_, _>>()?;
        Ok(Self { frames, images })
    }

    /// Read a manifest and the images it references.
    pub fn load(manifest_path: &Path) -> Result<Self, SimError> {
        let m = load_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let images = m
            .frames
            .iter()
            .map(|f| {
                let rel = f
                    .image
                    .as_ref()
                    .ok_or_else(|| SimError::InvalidSpec(format!("frame {} has no image", f.id)))?;
                let p = base.join(rel);
                let img = image::open(&p).map_err(|e| SimError::Io { path: p.display().to_string(), msg: e.to_string() })?;
                let g = GrayF32::from_rgb8(&img.to_rgb8());
                if g.width() != f.intrinsics.width as usize || g.height() != f.intrinsics.height as usize {
                    return Err(SimError::InvalidSpec(format!("{}: image size differs from intrinsics", f.id)));
                }
                Ok(g)
            })
            .collect::<Result<_, SimError>>()?;
        Ok(Self { frames: m.frames, images })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: Vec<FrameTruth>,
}

/// Render every frame to `dir/images/<id>.png` and write `dir/manifest.json`.
pub fn write_manifest(
    dir: &Path,
    map: &RefMap25D,
    field: &HeightField,
    frames: &[FrameTruth],
) -> Result<Manifest, SimError> {
    let io = |p: &Path, e: &dyn std::fmt::Display| SimError::Io { path: p.display().to_string(), msg: e.to_string() };
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| io(&img_dir, &e))?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let img: RgbImage = render_view(map, field, &f.pose(), &f.intrinsics)?;
        let rel = format!("images/{}.png", f.id);
        let path = dir.join(&rel);
        img.save(&path).map_err(|e| io(&path, &e))?;
        out.push(FrameTruth { image: Some(rel), ..f.clone() });
    }
    let manifest = Manifest { frames: out };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io(&path, &e))?;
    std::fs::write(&path, text).map_err(|e| io(&path, &e))?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, SimError> {
    let io = |e: &dyn std::fmt::Display| SimError::Io { path: path.display().to_string(), msg: e.to_string() };
    let text = std::fs::read_to_string(path).map_err(|e| io(&e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| io(&e))?;
    for f in &m.frames {
        f.intrinsics.validate().map_err(|e| SimError::InvalidSpec(format!("{}: {e}", f.id)))?;
        PriorState::new(f.altitude, f.pitch, f.yaw).map_err(|e| SimError::InvalidSpec(format!("{}: {e}", f.id)))?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_scene, SceneSpec, Terrain};

    fn scene() -> RefMap25D {
        let spec = SceneSpec {
            extent_m: 600.0,
            gsd: 1.0,
            terrain: Terrain::Hills { amplitude: 10.0, wavelength: 300.0 },
            ..Default::default()
        };
        generate_scene(&spec).unwrap()
    }

    #[test]
    fn poses_look_at_their_footprint() {
        let m = scene();
        let f = HeightField::new(&m);
        let spec = FlightSpec { frames: 12, width: 160, height: 120, margin_m: 80.0, ..Default::default() };
        let frames = generate_flight(&m, &f, &spec).unwrap();
        assert_eq!(frames.len(), 12);
        for fr in &frames {
            assert!((spec.pitch.0..=spec.pitch.1).contains(&fr.pitch));
            assert!((spec.altitude.0..=spec.altitude.1).contains(&fr.altitude));
            let pose = fr.pose();
            assert!((pose.pitch_deg() - fr.pitch).abs() < 1e-6);
            let px = pose.project(&fr.intrinsics, &fr.footprint, m.sample_dsm(&fr.footprint).unwrap()).unwrap();
            assert!((px.x - fr.intrinsics.principal_x).abs() < 0.05 && (px.y - fr.intrinsics.principal_y).abs() < 0.05);
            let (u, v) = m.geot().world_to_pixel(&fr.footprint).unwrap();
            assert!(u >= 80.0 && v >= 80.0 && u <= 519.0 && v <= 519.0);
        }
        assert_eq!(frames, generate_flight(&m, &f, &spec).unwrap());
    }

    #[test]
    fn manifest_roundtrip() {
        let m = scene();
        let f = HeightField::new(&m);
        let spec = FlightSpec { frames: 2, width: 64, height: 48, ..Default::default() };
        let frames = generate_flight(&m, &f, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let man = write_manifest(dir.path(), &m, &f, &frames).unwrap();
        let back = load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, man);
        assert!(dir.path().join(man.frames[1].image.as_ref().unwrap()).exists());
        let data = Dataset::load(&dir.path().join("manifest.json")).unwrap();
        let direct = Dataset::render(&m, &f, frames).unwrap();
        assert_eq!(data.images, direct.images);
    }

    #[test]
    fn oblique_flat_view_is_a_homography_of_the_ortho() {
        // on a plane, image and orthophoto are related by a homography; check
        // rendered pixels against direct projection of ortho samples
        let spec = SceneSpec { extent_m: 400.0, gsd: 0.5, terrain: Terrain::Flat, seed: 4, ..Default::default() };
        let m = generate_scene(&spec).unwrap();
        let f = HeightField::new(&m);
        let intr = CameraIntrinsics::from_hfov(120, 90, 50.0).unwrap();
        let target = m.geot().center();
        let back = 80.0 / 30f64.to_radians().tan();
        let pose = CameraPose::from_attitude(target.offset(0.0, -back), 50.0 + 80.0, 0.0, 30.0);
        let img = GrayF32::from_rgb8(&render_view(&m, &f, &pose, &intr).unwrap());
        let mut worst: f64 = 0.0;
        for &(x, y) in &[(10.0, 10.0), (60.0, 45.0), (100.0, 80.0), (33.0, 70.0)] {
            let d = pose.ray(&intr, x, y);
            let t = (50.0 - 130.0) / d.z;
            let p = pose.center.offset(d.x * t, d.y * t);
            let back_px = pose.project(&intr, &p, 50.0).unwrap();
            worst = worst.max((back_px.x - x).abs()).max((back_px.y - y).abs());
            let (u, v) = m.geot().world_to_pixel(&p).unwrap();
            let o = m.sample_ortho(u, v).unwrap();
            let l = 0.299 * o[0] + 0.587 * o[1] + 0.114 * o[2];
            assert!((img.get(x as usize, y as usize) - l).abs() <= 1.5, "pixel ({x},{y})");
        }
        assert!(worst < 0.5);
    }
}
