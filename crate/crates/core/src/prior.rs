//! Use of on-board prior information: ground-sampling-distance estimation,
//! scale/rotation alignment of the query image, and prior-noise injection.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{CameraIntrinsics, PriorState};
use crate::imgproc::{GrayF32, MaskedImage};

/// Pitch below which the GSD estimate is clamped, degrees.
pub const PITCH_FLOOR_DEG: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("invalid GSD inputs: {0}")]
    InvalidInput(String),
    #[error("degenerate alignment scale {0}")]
    DegenerateScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsdEstimate {
    /// Meters per pixel.
    pub gsd: f64,
    /// Set when the pitch was raised to [`PITCH_FLOOR_DEG`].
    pub pitch_clamped: bool,
}

/// `altitude / sin(pitch) * tan(fov / 2) / sqrt(width^2 + height^2)`, with
/// `fov` the diagonal field of view in degrees.
pub fn estimate_gsd(
    altitude: f64,
    pitch: f64,
    fov: f64,
    width: u32,
    height: u32,
) -> Result<GsdEstimate, PriorError> {
    if !(altitude > 0.0 && altitude.is_finite()) {
        return Err(PriorError::InvalidInput(format!("altitude {altitude}")));
    }
    if !(fov > 0.0 && fov < 180.0) {
        return Err(PriorError::InvalidInput(format!("fov {fov}")));
    }
    if !(pitch > 0.0 && pitch <= 90.0) {
        return Err(PriorError::InvalidInput(format!("pitch {pitch}")));
    }
    if width == 0 || height == 0 {
        return Err(PriorError::InvalidInput("empty image".into()));
    }
    let pitch_clamped = pitch < PITCH_FLOOR_DEG;
    let p = pitch.max(PITCH_FLOOR_DEG);
    let slant = altitude / p.to_radians().sin();
    let gsd = slant * (fov.to_radians() / 2.0).tan() / (width as f64).hypot(height as f64);
    Ok(GsdEstimate { gsd, pitch_clamped })
}

/// Ground sampling distance of a query at its footprint centre.
///
/// The slant range times `tan(fov / 2)` is the ground half-diagonal, which
/// spans half of the pixel diagonal, hence twice [`estimate_gsd`].
pub fn query_gsd(prior: &PriorState, intr: &CameraIntrinsics) -> Result<GsdEstimate, PriorError> {
    let e = estimate_gsd(prior.altitude, prior.pitch, intr.diagonal_fov(), intr.width, intr.height)?;
    Ok(GsdEstimate { gsd: 2.0 * e.gsd, ..e })
}

/// Similarity transform taking original query pixels to the aligned
/// (north-up, map-resolution) image:
/// `p_out = c_out + scale * R(rotation) * (p_in - c_in)`.
///
/// `rotation_deg` is counter-clockwise as seen on screen (y axis down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentWarp {
    pub rotation_deg: f64,
    pub scale: f64,
    pub input_size: (usize, usize),
    pub output_size: (usize, usize),
}

impl AlignmentWarp {
    pub fn new(rotation_deg: f64, scale: f64, input_size: (usize, usize)) -> Result<Self, PriorError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(PriorError::DegenerateScale(scale));
        }
        let (c, s) = cos_sin_deg(rotation_deg);
        let (w, h) = (input_size.0 as f64, input_size.1 as f64);
        let ow = (scale * (w * c.abs() + h * s.abs()) - 1e-6).ceil().max(1.0) as usize;
        let oh = (scale * (w * s.abs() + h * c.abs()) - 1e-6).ceil().max(1.0) as usize;
        Ok(Self { rotation_deg, scale, input_size, output_size: (ow, oh) })
    }

    pub fn identity(input_size: (usize, usize)) -> Self {
        Self { rotation_deg: 0.0, scale: 1.0, input_size, output_size: input_size }
    }

    fn linear(&self) -> Matrix2<f64> {
        let (c, s) = cos_sin_deg(self.rotation_deg);
        Matrix2::new(c, s, -s, c) * self.scale
    }

    fn centers(&self) -> (Vector2<f64>, Vector2<f64>) {
        let ci = Vector2::new((self.input_size.0 as f64 - 1.0) / 2.0, (self.input_size.1 as f64 - 1.0) / 2.0);
        let co = Vector2::new((self.output_size.0 as f64 - 1.0) / 2.0, (self.output_size.1 as f64 - 1.0) / 2.0);
        (ci, co)
    }

    pub fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        let (ci, co) = self.centers();
        let q = co + self.linear() * (Vector2::new(p.0, p.1) - ci);
        (q.x, q.y)
    }

    pub fn inverse(&self, p: (f64, f64)) -> (f64, f64) {
        let (ci, co) = self.centers();
        let (c, s) = cos_sin_deg(self.rotation_deg);
        let inv = Matrix2::new(c, -s, s, c) / self.scale;
        let q = ci + inv * (Vector2::new(p.0, p.1) - co);
        (q.x, q.y)
    }
}

/// Exact values at multiples of 90 degrees.
fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    for (k, (c, s)) in [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)].into_iter().enumerate() {
        if (r - 90.0 * k as f64).abs() < 1e-12 {
            return (c, s);
        }
    }
    let (s, c) = deg.to_radians().sin_cos();
    (c, s)
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-7 {
        r
    } else {
        x
    }
}

/// Resample `image` through `warp` with bilinear interpolation; output
/// pixels without a source are zero and marked invalid.
pub fn apply_warp(image: &GrayF32, warp: &AlignmentWarp) -> MaskedImage {
    let (ow, oh) = warp.output_size;
    let mut out = GrayF32::new(ow, oh);
    let mut valid = vec![false; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let (u, v) = warp.inverse((x as f64, y as f64));
            if let Some(val) = image.sample(snap(u), snap(v)) {
                out.set(x, y, val);
                valid[y * ow + x] = true;
            }
        }
    }
    MaskedImage { image: out, valid }
}

/// Rotate the query north-up and rescale it to the map resolution using the
/// prior heading and the estimated ground sampling distance.
pub fn align_query(
    image: &GrayF32,
    prior: &PriorState,
    intr: &CameraIntrinsics,
    map_gsd: f64,
) -> Result<(MaskedImage, AlignmentWarp), PriorError> {
    if !(map_gsd > 0.0 && map_gsd.is_finite()) {
        return Err(PriorError::InvalidInput(format!("map gsd {map_gsd}")));
    }
    let q = query_gsd(prior, intr)?;
    let warp = AlignmentWarp::new(-prior.yaw, q.gsd / map_gsd, (image.width(), image.height()))?;
    Ok((apply_warp(image, &warp), warp))
}

/// Map points from the aligned image back to original query pixels.
pub fn unwarp_points(warp: &AlignmentWarp, points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    points.iter().map(|&p| warp.inverse(p)).collect()
}

/// Zero-mean Gaussian perturbation levels for the prior.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub yaw_std: f64,
    #[serde(default)]
    pub pitch_std: f64,
    #[serde(default)]
    pub altitude_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), PriorError> {
        for (name, v) in [("yaw", self.yaw_std), ("pitch", self.pitch_std), ("altitude", self.altitude_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PriorError::InvalidInput(format!("{name} std {v}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.yaw_std == 0.0 && self.pitch_std == 0.0 && self.altitude_std == 0.0
    }
}

/// Mix a global seed with a frame id (splitmix64 finalizer).
pub fn frame_seed(seed: u64, frame_id: u64) -> u64 {
    let mut z = seed ^ frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw `(yaw, pitch, altitude)` perturbations for one frame, before any
/// clamping or wrapping.
pub fn sample_perturbation(spec: &NoiseSpec, frame_id: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(spec.seed, frame_id));
    let mut draw = |std: f64| {
        let z: f64 = StandardNormal.sample(&mut rng);
        std * z
    };
    let dy = draw(spec.yaw_std);
    let dp = draw(spec.pitch_std);
    let da = draw(spec.altitude_std);
    (dy, dp, da)
}

/// Perturb a prior; pitch is clamped to `[PITCH_FLOOR_DEG, 90]`, yaw wrapped
/// to `[0, 360)` and altitude kept positive.
pub fn inject_noise(prior: &PriorState, spec: &NoiseSpec, frame_id: u64) -> PriorState {
    if spec.is_zero() {
        return *prior;
    }
    let (dy, dp, da) = sample_perturbation(spec, frame_id);
    PriorState {
        yaw: (prior.yaw + dy).rem_euclid(360.0),
        pitch: (prior.pitch + dp).clamp(PITCH_FLOOR_DEG, 90.0),
        altitude: (prior.altitude + da).max(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gsd_examples() {
        let e = estimate_gsd(100.0, 90.0, 90.0, 4000, 3000).unwrap();
        assert_abs_diff_eq!(e.gsd, 0.02, epsilon = 1e-12);
        assert!(!e.pitch_clamped);
        let e = estimate_gsd(100.0, 30.0, 90.0, 4000, 3000).unwrap();
        assert_abs_diff_eq!(e.gsd, 0.04, epsilon = 1e-12);
        assert!(estimate_gsd(0.0, 45.0, 90.0, 4000, 3000).is_err());
        let low = estimate_gsd(100.0, 2.0, 90.0, 4000, 3000).unwrap();
        assert!(low.pitch_clamped);
        assert_abs_diff_eq!(low.gsd, estimate_gsd(100.0, 5.0, 90.0, 4000, 3000).unwrap().gsd);
    }

    #[test]
    fn query_gsd_is_focal_ratio_at_nadir() {
        let intr = CameraIntrinsics::from_hfov(640, 480, 60.0).unwrap();
        let p = PriorState::new(100.0, 90.0, 0.0).unwrap();
        assert_abs_diff_eq!(query_gsd(&p, &intr).unwrap().gsd, 100.0 / intr.focal_x, epsilon = 1e-12);
    }

    #[test]
    fn gsd_monotonicity() {
        let mut last = f64::INFINITY;
        for i in 0..=85 {
            let pitch = 5.0 + i as f64;
            let g = estimate_gsd(100.0, pitch, 80.0, 640, 480).unwrap().gsd;
            assert!(g < last);
            last = g;
        }
        let mut last = 0.0;
        for i in 1..100 {
            let g = estimate_gsd(i as f64 * 3.0, 40.0, 80.0, 640, 480).unwrap().gsd;
            assert!(g > last);
            last = g;
        }
    }

    fn pattern(w: usize, h: usize) -> GrayF32 {
        GrayF32::from_fn(w, h, |x, y| ((x * 31 + y * 17) % 251) as f32)
    }

    #[test]
    fn identity_alignment() {
        let intr = CameraIntrinsics::from_hfov(64, 48, 60.0).unwrap();
        let img = pattern(64, 48);
        let alt = 0.5 * intr.focal_x;
        let prior = PriorState::new(alt, 90.0, 0.0).unwrap();
        let (out, warp) = align_query(&img, &prior, &intr, 0.5).unwrap();
        assert_abs_diff_eq!(warp.scale, 1.0, epsilon = 1e-12);
        assert_eq!(warp.output_size, (64, 48));
        assert_eq!(out.image, img);
        assert!(out.valid.iter().all(|&v| v));
    }

    #[test]
    fn quarter_turn_moves_impulses_exactly() {
        let (w, h) = (40usize, 30usize);
        let intr = CameraIntrinsics::from_hfov(w as u32, h as u32, 60.0).unwrap();
        let prior = PriorState::new(intr.focal_x * 0.5, 90.0, 90.0).unwrap();
        for &(ix, iy) in &[(3usize, 5usize), (39, 0), (0, 29), (20, 14)] {
            let mut img = GrayF32::new(w, h);
            img.set(ix, iy, 200.0);
            let (out, warp) = align_query(&img, &prior, &intr, 0.5).unwrap();
            assert_eq!(warp.output_size, (h, w));
            // heading east: image-up points east, so the top edge becomes the right edge
            let (ex, ey) = (h - 1 - iy, ix);
            for y in 0..w {
                for x in 0..h {
                    let expect = if (x, y) == (ex, ey) { 200.0 } else { 0.0 };
                    assert_eq!(out.image.get(x, y), expect, "impulse ({ix},{iy}) at ({x},{y})");
                }
            }
            assert!(out.valid.iter().all(|&v| v));
        }
    }

    #[test]
    fn scale_ratio_recorded() {
        let intr = CameraIntrinsics::from_hfov(64, 48, 60.0).unwrap();
        let img = pattern(64, 48);
        // query gsd 0.04 against a 0.02 map
        let prior = PriorState::new(0.04 * intr.focal_x, 90.0, 0.0).unwrap();
        let (out, warp) = align_query(&img, &prior, &intr, 0.02).unwrap();
        assert_abs_diff_eq!(warp.scale, 2.0, epsilon = 1e-12);
        assert_eq!((out.image.width(), out.image.height()), (128, 96));
        assert!(align_query(&img, &prior, &intr, 0.0).is_err());
        assert!(AlignmentWarp::new(0.0, f64::NAN, (4, 4)).is_err());
    }

    #[test]
    fn scale_two_about_origin_centred_frame() {
        let warp = AlignmentWarp { rotation_deg: 0.0, scale: 2.0, input_size: (1, 1), output_size: (1, 1) };
        assert_eq!(warp.forward((10.0, 10.0)), (20.0, 20.0));
        assert_eq!(unwarp_points(&warp, &[(20.0, 20.0)]), vec![(10.0, 10.0)]);
        let id = AlignmentWarp::identity((10, 10));
        assert_eq!(unwarp_points(&id, &[(1.5, 2.5)]), vec![(1.5, 2.5)]);
    }

    #[test]
    fn zero_noise_is_identity_and_seeded() {
        let p = PriorState::new(120.0, 45.0, 350.0).unwrap();
        assert_eq!(inject_noise(&p, &NoiseSpec { seed: 9, ..Default::default() }, 3), p);
        let spec = NoiseSpec { yaw_std: 30.0, pitch_std: 10.0, altitude_std: 5.0, seed: 7 };
        assert_eq!(inject_noise(&p, &spec, 3), inject_noise(&p, &spec, 3));
        assert_ne!(inject_noise(&p, &spec, 3), inject_noise(&p, &spec, 4));
    }

    #[test]
    fn yaw_sampler_std() {
        let spec = NoiseSpec { yaw_std: 60.0, pitch_std: 0.0, altitude_std: 0.0, seed: 2024 };
        let n = 10_000;
        let samples: Vec<f64> = (0..n).map(|i| sample_perturbation(&spec, i).0).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((std - 60.0).abs() / 60.0 < 0.03, "std {std}");
    }

    proptest! {
        #[test]
        fn unwarp_inverts_warp(
            rot in -360.0f64..360.0, scale in 0.05f64..8.0,
            w in 1usize..2000, h in 1usize..2000,
            px in -3000.0f64..3000.0, py in -3000.0f64..3000.0,
        ) {
            let warp = AlignmentWarp::new(rot, scale, (w, h)).unwrap();
            let back = unwarp_points(&warp, &[warp.forward((px, py))])[0];
            prop_assert!((back.0 - px).abs() < 1e-9 && (back.1 - py).abs() < 1e-9);
        }

        #[test]
        fn noisy_prior_respects_domains(
            yaw in 0.0f64..360.0, pitch in 5.0f64..=90.0, alt in 1.0f64..400.0,
            ys in 0.0f64..90.0, ps in 0.0f64..40.0, as_ in 0.0f64..100.0, id in 0u64..1000,
        ) {
            let p = PriorState::new(alt, pitch, yaw).unwrap();
            let n = inject_noise(&p, &NoiseSpec { yaw_std: ys, pitch_std: ps, altitude_std: as_, seed: 1 }, id);
            prop_assert!(n.yaw >= 0.0 && n.yaw < 360.0);
            prop_assert!(n.pitch >= PITCH_FLOOR_DEG && n.pitch <= 90.0);
            prop_assert!(n.altitude > 0.0);
        }
    }
}
