//! Camera pose from 2D-3D correspondences: a three-point solver inside a
//! seeded RANSAC loop, followed by Levenberg-Marquardt refinement.

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{CameraIntrinsics, CameraPose, UtmCoord};

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid ransac parameters: {0}")]
    InvalidParams(String),
}

/// Query pixel paired with the world point it observes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corr2D3D {
    pub pixel: (f64, f64),
    pub world: UtmCoord,
    pub elevation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseStatus {
    Ok,
    Degenerate,
    Insufficient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Option<CameraPose>,
    pub inlier_count: usize,
    pub inlier_ids: Vec<usize>,
    pub reproj_rmse: f64,
    pub status: PoseStatus,
}

impl PoseEstimate {
    fn failed(status: PoseStatus) -> Self {
        Self { pose: None, inlier_count: 0, inlier_ids: Vec::new(), reproj_rmse: 0.0, status }
    }

    pub fn is_ok(&self) -> bool {
        self.status == PoseStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub reproj_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
    pub min_inliers: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { reproj_threshold: 3.0, max_iterations: 2000, confidence: 0.999, seed: 0, min_inliers: 6 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.reproj_threshold > 0.0) {
            return Err(PoseError::InvalidParams(format!("threshold {}", self.reproj_threshold)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PoseError::InvalidParams(format!("confidence {}", self.confidence)));
        }
        if self.min_inliers < 4 {
            return Err(PoseError::InvalidParams(format!("min_inliers {}", self.min_inliers)));
        }
        Ok(())
    }
}

/// Rigid transform from the local world frame to camera axes:
/// `x_cam = r * x + t`.
#[derive(Debug, Clone, Copy)]
struct Rt {
    r: Rotation3<f64>,
    t: Vector3<f64>,
}

impl Rt {
    fn center(&self) -> Vector3<f64> {
        -(self.r.inverse() * self.t)
    }
}

/// Correspondences expressed relative to a local anchor to keep UTM
/// magnitudes out of the numerics.
struct Local {
    anchor: UtmCoord,
    pixels: Vec<Vector2<f64>>,
    points: Vec<Vector3<f64>>,
}

impl Local {
    fn new(corrs: &[Corr2D3D]) -> Self {
        let anchor = corrs.first().map(|c| c.world).unwrap_or(UtmCoord {
            easting: 500_000.0,
            northing: 0.0,
            zone: crate::geo::UtmZone::north(1),
        });
        Self {
            anchor,
            pixels: corrs.iter().map(|c| Vector2::new(c.pixel.0, c.pixel.1)).collect(),
            points: corrs
                .iter()
                .map(|c| {
                    Vector3::new(c.world.easting - anchor.easting, c.world.northing - anchor.northing, c.elevation)
                })
                .collect(),
        }
    }

    fn to_pose(&self, rt: &Rt) -> CameraPose {
        let c = rt.center();
        CameraPose { center: self.anchor.offset(c.x, c.y), altitude: c.z, rotation: rt.r }
    }

    fn from_pose(&self, pose: &CameraPose) -> Rt {
        let c = Vector3::new(
            pose.center.easting - self.anchor.easting,
            pose.center.northing - self.anchor.northing,
            pose.altitude,
        );
        Rt { r: pose.rotation, t: -(pose.rotation * c) }
    }
}

fn reproj(rt: &Rt, intr: &CameraIntrinsics, x: &Vector3<f64>, px: &Vector2<f64>) -> f64 {
    match intr.project_camera(&(rt.r * x + rt.t)) {
        Some(p) => (p - px).norm(),
        None => f64::INFINITY,
    }
}

/// Pixel distance between the projection of `corr` under `pose` and its
/// observed image point; `+inf` when the point is behind the camera.
pub fn reprojection_error(pose: &CameraPose, corr: &Corr2D3D, intr: &CameraIntrinsics) -> f64 {
    match pose.project(intr, &corr.world, corr.elevation) {
        Some(p) => (p.x - corr.pixel.0).hypot(p.y - corr.pixel.1),
        None => f64::INFINITY,
    }
}

/// Real roots of `c[0] x^n + ... + c[n]` from companion-matrix eigenvalues,
/// each polished by Newton steps.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let first = coeffs.iter().position(|c| c.abs() > 1e-12 * scale).unwrap_or(coeffs.len());
    let c = &coeffs[first..];
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    let eval = |x: f64| c.iter().fold(0.0, |acc, &k| acc * x + k);
    let deriv = |x: f64| {
        c[..n].iter().enumerate().fold(0.0, |acc, (i, &k)| acc * x + k * (n - i) as f64)
    };
    let magnitude = |x: f64| c.iter().fold(0.0, |acc, &k| acc * x.abs() + k.abs());
    // Double roots come back as conjugate pairs with imaginary parts near
    // sqrt(eps); accept loosely, polish, then keep only genuine roots.
    comp.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < 1e-8 || z.im.abs() < 1e-4 * z.re.abs().max(1.0))
        .filter_map(|z| {
            let mut x = z.re;
            for _ in 0..4 {
                let d = deriv(x);
                if d.abs() < 1e-300 {
                    break;
                }
                let step = eval(x) / d;
                if !step.is_finite() {
                    break;
                }
                let next = x - step;
                if eval(next).abs() > eval(x).abs() {
                    break;
                }
                x = next;
            }
            (eval(x).abs() <= 1e-8 * magnitude(x)).then_some(x)
        })
        .collect()
}

/// Rotation and translation taking `p` onto `q` in the least-squares sense.
fn absolute_orientation(p: &[Vector3<f64>; 3], q: &[Vector3<f64>; 3]) -> Option<Rt> {
    let pc = (p[0] + p[1] + p[2]) / 3.0;
    let qc = (q[0] + q[1] + q[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (p[i] - pc) * (q[i] - qc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let r = Rotation3::from_matrix_unchecked(r);
    Some(Rt { r, t: qc - r * pc })
}

/// Product of polynomials with ascending coefficients.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Projection onto the normalized image plane.
const UNIT_CAMERA: CameraIntrinsics =
    CameraIntrinsics { focal_x: 1.0, focal_y: 1.0, principal_x: 0.0, principal_y: 0.0, width: 1, height: 1 };

/// Newton iterations on the three law-of-cosines equations. Roots taken
/// from the quartic lose precision near double roots; the original system
/// is usually well conditioned there.
fn polish_depths(mut s: Vector3<f64>, sides: [f64; 3], cos: [f64; 3]) -> Vector3<f64> {
    let [a2, b2, c2] = sides;
    let [ca, cb, cg] = cos;
    let resid = |s: &Vector3<f64>| {
        Vector3::new(
            s.y * s.y + s.z * s.z - 2.0 * s.y * s.z * ca - a2,
            s.x * s.x + s.z * s.z - 2.0 * s.x * s.z * cb - b2,
            s.x * s.x + s.y * s.y - 2.0 * s.x * s.y * cg - c2,
        )
    };
    let mut r = resid(&s);
    for _ in 0..5 {
        let j = Matrix3::new(
            0.0,
            2.0 * (s.y - s.z * ca),
            2.0 * (s.z - s.y * ca),
            2.0 * (s.x - s.z * cb),
            0.0,
            2.0 * (s.z - s.x * cb),
            2.0 * (s.x - s.y * cg),
            2.0 * (s.y - s.x * cg),
            0.0,
        );
        let Some(step) = j.lu().solve(&r) else { break };
        let next = s - step;
        let rn = resid(&next);
        if !(rn.norm() < r.norm()) {
            break;
        }
        s = next;
        r = rn;
    }
    s
}

/// Three-point solver on unit bearings `f` and local points `x`.
fn p3p_local(f: &[Vector3<f64>; 3], x: &[Vector3<f64>; 3]) -> Result<Vec<Rt>, PoseError> {
    let a2 = (x[1] - x[2]).norm_squared();
    let b2 = (x[0] - x[2]).norm_squared();
    let c2 = (x[0] - x[1]).norm_squared();
    let area = (x[1] - x[0]).cross(&(x[2] - x[0])).norm() / 2.0;
    let scale2 = a2.max(b2).max(c2);
    if !(area > 1e-9 * scale2) || scale2 == 0.0 {
        return Err(PoseError::Degenerate("collinear world points".into()));
    }
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);

    // With s2 = u s1 and s3 = v s1 the law of cosines gives u as a rational
    // function of v; substituting back leaves a quartic in v.
    let k = (a2 - c2) / b2;
    let cr = c2 / b2;
    let num = [1.0 + k, -2.0 * k * cb, k - 1.0];
    let den = [2.0 * cg, -2.0 * ca];
    let rest = [1.0 - cr, 2.0 * cr * cb, -cr];
    let nn = poly_mul(&num, &num);
    let nd = poly_mul(&num, &den);
    let rdd = poly_mul(&rest, &poly_mul(&den, &den));
    let mut quartic = [0.0; 5];
    for (i, q) in quartic.iter_mut().enumerate() {
        let at = |p: &[f64]| p.get(i).copied().unwrap_or(0.0);
        *q = at(&nn) - 2.0 * cg * at(&nd) + at(&rdd);
    }
    quartic.reverse();

    let normalized = Local {
        anchor: UtmCoord { easting: 500_000.0, northing: 0.0, zone: crate::geo::UtmZone::north(1) },
        pixels: f.iter().map(|b| Vector2::new(b.x / b.z, b.y / b.z)).collect(),
        points: x.to_vec(),
    };
    let mut vs = real_roots(&quartic);
    vs.sort_by(f64::total_cmp);
    vs.dedup_by(|a, b| (*a - *b).abs() < 1e-10 * b.abs().max(1.0));

    let mut out: Vec<Rt> = Vec::new();
    for v in vs {
        if v <= 0.0 {
            continue;
        }
        let s1sq = b2 / (1.0 + v * v - 2.0 * v * cb);
        if !(s1sq > 0.0 && s1sq.is_finite()) {
            continue;
        }
        let den = 2.0 * (cg - v * ca);
        let us: Vec<f64> = if den.abs() > 1e-7 {
            vec![((k - 1.0) * v * v - 2.0 * k * cb * v + 1.0 + k) / den]
        } else {
            // u is indeterminate in the rational form; take both roots of
            // u^2 - 2 cg u + 1 - cr (1 + v^2 - 2 v cb) = 0
            let c0 = 1.0 - cr * (1.0 + v * v - 2.0 * v * cb);
            let disc = (cg * cg - c0).max(0.0).sqrt();
            vec![cg - disc, cg + disc]
        };
        let s1 = s1sq.sqrt();
        for u in us {
            if u <= 0.0 {
                continue;
            }
            let d = polish_depths(Vector3::new(s1, u * s1, v * s1), [a2, b2, c2], [ca, cb, cg]);
            let q = [f[0] * d.x, f[1] * d.y, f[2] * d.z];
            // reject spurious roots: the camera-side triangle must match
            let err = ((q[1] - q[2]).norm_squared() - a2).abs()
                + ((q[0] - q[2]).norm_squared() - b2).abs()
                + ((q[0] - q[1]).norm_squared() - c2).abs();
            if err > 1e-6 * scale2 {
                continue;
            }
            let Some(rt) = absolute_orientation(x, &q) else { continue };
            // a few Gauss-Newton steps on the image residuals recover digits
            // lost in ill-conditioned configurations
            let rt = refine(rt, &UNIT_CAMERA, &normalized, &[0, 1, 2], 5);
            let finite = rt.r.matrix().iter().all(|v| v.is_finite()) && rt.t.iter().all(|v| v.is_finite());
            let dup = out.iter().any(|o| {
                (o.center() - rt.center()).norm() < 1e-7 * (1.0 + rt.t.norm()) && o.r.angle_to(&rt.r) < 1e-7
            });
            if finite && !dup {
                out.push(rt);
            }
        }
    }
    Ok(out)
}

/// All real camera poses consistent with three correspondences.
pub fn p3p_solve(corrs: &[Corr2D3D; 3], intr: &CameraIntrinsics) -> Result<Vec<CameraPose>, PoseError> {
    let local = Local::new(corrs);
    let f = [0, 1, 2].map(|i| intr.bearing(local.pixels[i].x, local.pixels[i].y));
    let x = [0, 1, 2].map(|i| local.points[i]);
    Ok(p3p_local(&f, &x)?.iter().map(|rt| local.to_pose(rt)).collect())
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn sq_cost(rt: &Rt, intr: &CameraIntrinsics, local: &Local, ids: &[usize]) -> f64 {
    ids.iter().map(|&i| reproj(rt, intr, &local.points[i], &local.pixels[i]).powi(2)).sum()
}

/// Levenberg-Marquardt on the summed squared reprojection error of `ids`.
/// Steps that do not lower the cost are rejected, so the result is never
/// worse than the start.
fn refine(start: Rt, intr: &CameraIntrinsics, local: &Local, ids: &[usize], max_iter: usize) -> Rt {
    let mut rt = start;
    let mut cost = sq_cost(&rt, intr, local, ids);
    if !cost.is_finite() || ids.len() < 3 {
        return rt;
    }
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for &i in ids {
            let rx = rt.r * local.points[i];
            let xc = rx + rt.t;
            let z = xc.z;
            let du = nalgebra::RowVector3::new(intr.focal_x / z, 0.0, -intr.focal_x * xc.x / (z * z));
            let dv = nalgebra::RowVector3::new(0.0, intr.focal_y / z, -intr.focal_y * xc.y / (z * z));
            let dw = -skew(&rx);
            let res = Vector2::new(
                intr.focal_x * xc.x / z + intr.principal_x - local.pixels[i].x,
                intr.focal_y * xc.y / z + intr.principal_y - local.pixels[i].y,
            );
            for (row, r) in [(du, res.x), (dv, res.y)] {
                let jw = row * dw;
                let j = Vector6::new(jw[0], jw[1], jw[2], row[0], row[1], row[2]);
                jtj += j * j.transpose();
                jtr += j * r;
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vector3::new(step[0], step[1], step[2]);
            let cand = Rt { r: Rotation3::new(w) * rt.r, t: rt.t + Vector3::new(step[3], step[4], step[5]) };
            let c = sq_cost(&cand, intr, local, ids);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                rt = cand;
                cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    rt
}

fn inliers(rt: &Rt, intr: &CameraIntrinsics, local: &Local, thr: f64) -> (Vec<usize>, f64) {
    let mut ids = Vec::new();
    let mut sq = 0.0;
    for i in 0..local.points.len() {
        let e = reproj(rt, intr, &local.points[i], &local.pixels[i]);
        if e <= thr {
            ids.push(i);
            sq += e * e;
        }
    }
    (ids, sq)
}

fn needed_iterations(conf: f64, inlier_ratio: f64) -> f64 {
    let w3 = inlier_ratio.powi(3);
    if w3 >= 1.0 {
        return 1.0;
    }
    if w3 <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - conf).ln() / (1.0 - w3).ln()
}

/// Robust pose from correspondences. Each iteration solves a seeded random
/// triple, keeps the candidate that best explains the lowest-index
/// correspondence outside the triple, and scores it by inlier count (ties
/// go to the lower inlier error). The winner is refined on its inliers.
pub fn ransac_pnp(corrs: &[Corr2D3D], intr: &CameraIntrinsics, params: &RansacParams) -> PoseEstimate {
    if corrs.len() < 4 {
        return PoseEstimate::failed(PoseStatus::Insufficient);
    }
    let local = Local::new(corrs);
    let n = corrs.len();
    let bearings: Vec<Vector3<f64>> = local.pixels.iter().map(|p| intr.bearing(p.x, p.y)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let thr = params.reproj_threshold;

    let mut best: Option<(Rt, Vec<usize>, f64)> = None;
    let mut iter = 0usize;
    while iter < params.max_iterations {
        iter += 1;
        let mut idx = rand::seq::index::sample(&mut rng, n, 3).into_vec();
        idx.sort_unstable();
        let f = [bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]];
        let x = [local.points[idx[0]], local.points[idx[1]], local.points[idx[2]]];
        let Ok(cands) = p3p_local(&f, &x) else { continue };
        let probe = (0..n).find(|i| !idx.contains(i)).expect("n >= 4");
        let chosen = cands.into_iter().min_by(|a, b| {
            let ea = reproj(a, intr, &local.points[probe], &local.pixels[probe]);
            let eb = reproj(b, intr, &local.points[probe], &local.pixels[probe]);
            ea.total_cmp(&eb)
        });
        let Some(rt) = chosen else { continue };
        let (ids, sq) = inliers(&rt, intr, &local, thr);
        let better = match &best {
            None => true,
            Some((_, b, bsq)) => ids.len() > b.len() || (ids.len() == b.len() && sq < *bsq),
        };
        if better {
            best = Some((rt, ids, sq));
        }
        let count = best.as_ref().map_or(0, |b| b.1.len());
        if (iter as f64) >= needed_iterations(params.confidence, count as f64 / n as f64) {
            break;
        }
    }

    let Some((mut rt, mut ids, _)) = best else {
        return PoseEstimate::failed(PoseStatus::Degenerate);
    };
    if ids.len() >= 3 {
        for _ in 0..2 {
            let refined = refine(rt, intr, &local, &ids, 50);
            let (new_ids, _) = inliers(&refined, intr, &local, thr);
            if new_ids.len() < ids.len() {
                break;
            }
            rt = refined;
            let done = new_ids == ids;
            ids = new_ids;
            if done {
                break;
            }
        }
    }
    let sq = sq_cost(&rt, intr, &local, &ids);
    let rmse = if ids.is_empty() { 0.0 } else { (sq / ids.len() as f64).sqrt() };
    let status = if ids.len() >= params.min_inliers { PoseStatus::Ok } else { PoseStatus::Insufficient };
    PoseEstimate { pose: Some(local.to_pose(&rt)), inlier_count: ids.len(), inlier_ids: ids, reproj_rmse: rmse, status }
}

/// Refine a pose on the given correspondence subset and return the total
/// squared reprojection error before and after.
pub fn refine_pose(
    pose: &CameraPose,
    corrs: &[Corr2D3D],
    ids: &[usize],
    intr: &CameraIntrinsics,
) -> (CameraPose, f64, f64) {
    let local = Local::new(corrs);
    let start = local.from_pose(pose);
    let before = sq_cost(&start, intr, &local, ids);
    let rt = refine(start, intr, &local, ids, 50);
    (local.to_pose(&rt), before, sq_cost(&rt, intr, &local, ids))
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use rand::Rng;

    #[test]
    fn nadir_square() {
        let intr = intr();
        let pose = CameraPose::from_attitude(origin(), 100.0, 0.0, 90.0);
        let pts = [(10.0, 10.0), (-10.0, 10.0), (-10.0, -10.0)];
        let corrs = pts.map(|(e, n)| {
            let w = origin().offset(e, n);
            let p = pose.project(&intr, &w, 0.0).unwrap();
            Corr2D3D { pixel: (p.x, p.y), world: w, elevation: 0.0 }
        });
        let cands = p3p_solve(&corrs, &intr).unwrap();
        assert!(!cands.is_empty() && cands.len() <= 4);
        assert!(cands.iter().any(|c| center_error(c, &pose) < 1e-6), "{cands:?}");
        for c in &cands {
            for k in &corrs {
                assert!(reprojection_error(c, k, &intr) < 1e-6);
            }
        }
    }

    #[test]
    fn collinear_is_degenerate() {
        let intr = intr();
        let corrs = [0.0, 5.0, 10.0]
            .map(|e| Corr2D3D { pixel: (100.0 + e, 200.0), world: origin().offset(e, 0.0), elevation: 0.0 });
        assert!(matches!(p3p_solve(&corrs, &intr), Err(PoseError::Degenerate(_))));
    }

    #[test]
    fn random_triples_recover_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let intr = intr();
        for trial in 0..1000 {
            let (pose, corrs) = triple(&mut rng);
            let cands = p3p_solve(&corrs, &intr).unwrap();
            let best = cands.iter().map(|c| center_error(c, &pose)).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "trial {trial}: {best}");
        }
    }

    #[test]
    fn reprojection_kernel() {
        let intr = intr();
        let pose = CameraPose::from_attitude(origin(), 100.0, 30.0, 60.0);
        let w = origin().offset(3.0, 40.0);
        let p = pose.project(&intr, &w, 2.0).unwrap();
        let c = Corr2D3D { pixel: (p.x, p.y), world: w, elevation: 2.0 };
        assert!(reprojection_error(&pose, &c, &intr) < 1e-9);
        let off = Corr2D3D { pixel: (p.x + 3.0, p.y + 4.0), ..c };
        assert!((reprojection_error(&pose, &off, &intr) - 5.0).abs() < 1e-9);
        let behind = Corr2D3D { world: origin().offset(0.0, -500.0), elevation: 0.0, ..c };
        let pose_level = CameraPose::from_attitude(origin(), 100.0, 0.0, 5.0);
        assert_eq!(reprojection_error(&pose_level, &behind, &intr), f64::INFINITY);
    }

    #[test]
    fn exact_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let intr = intr();
        for _ in 0..10 {
            let (pose, corrs) = scene(&mut rng, 100);
            let est = ransac_pnp(&corrs, &intr, &RansacParams::default());
            assert_eq!(est.status, PoseStatus::Ok);
            assert_eq!(est.inlier_count, 100);
            assert!(center_error(est.pose.as_ref().unwrap(), &pose) < 1e-3);
        }
    }

    #[test]
    fn too_few_is_insufficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, corrs) = scene(&mut rng, 3);
        assert_eq!(ransac_pnp(&corrs, &intr(), &RansacParams::default()).status, PoseStatus::Insufficient);
    }

    #[test]
    fn outliers_and_noise() {
        let intr = intr();
        let mut ok = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (pose, mut corrs) = scene(&mut rng, 100);
            for (i, c) in corrs.iter_mut().enumerate() {
                if i % 10 < 3 {
                    c.pixel = (rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                } else {
                    c.pixel.0 += rng.random_range(-1.0..1.0);
                    c.pixel.1 += rng.random_range(-1.0..1.0);
                }
            }
            let est = ransac_pnp(&corrs, &intr, &RansacParams { seed, ..Default::default() });
            let gsd = pose.altitude / intr.focal_x;
            if est.is_ok() && center_error(est.pose.as_ref().unwrap(), &pose) < 3.0 * gsd.max(0.0) + 1e-9 {
                ok += 1;
            }
        }
        assert!(ok >= 36, "{ok}/40");
    }

    #[test]
    fn deterministic_and_refinement_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let intr = intr();
        let (_, mut corrs) = scene(&mut rng, 60);
        for c in corrs.iter_mut() {
            c.pixel.0 += rng.random_range(-2.0..2.0);
        }
        let p = RansacParams { seed: 3, ..Default::default() };
        let a = ransac_pnp(&corrs, &intr, &p);
        assert_eq!(a, ransac_pnp(&corrs, &intr, &p));
        let perturbed = CameraPose::from_attitude(
            a.pose.unwrap().center.offset(0.5, -0.3),
            a.pose.unwrap().altitude + 0.4,
            a.pose.unwrap().yaw_deg() + 0.2,
            a.pose.unwrap().pitch_deg(),
        );
        let (_, before, after) = refine_pose(&perturbed, &corrs, &a.inlier_ids, &intr);
        assert!(after <= before);
    }

    #[test]
    fn adding_exact_points_keeps_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let intr = intr();
        let (_, corrs) = scene(&mut rng, 80);
        let p = RansacParams::default();
        let small = ransac_pnp(&corrs[..50], &intr, &p);
        let big = ransac_pnp(&corrs, &intr, &p);
        assert!(big.inlier_count >= small.inlier_count);
    }

    #[test]
    fn companion_roots() {
        // (x - 1)(x - 2)(x + 3)(x^2 + 1)
        let mut r = real_roots(&[1.0, 0.0, -6.0, 6.0, -7.0, 6.0]);
        r.sort_by(f64::total_cmp);
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
