//! Ground-truth correspondences and retrieval embeddings derived from the
//! simulator, standing in for learned matchers and descriptors.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::flight::FrameTruth;
use super::render::{cast_ray, HeightField};
use super::SimError;
use crate::geo::UtmCoord;
use crate::matching::{
    restrict_to_window, write_match_csv, Match, MatchSet, MatchSource, Matcher, QueryView, MAP_TILE_ID,
};
use crate::prior::frame_seed;
use crate::refmap::{GalleryTile, RefMap25D};
use crate::retrieval::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleMatchSpec {
    /// Query pixels sampled per frame.
    pub points: usize,
    /// Gaussian noise on query pixel coordinates, pixels.
    pub noise_px: f64,
    /// Fraction of pairs whose map point is replaced by a random one.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for OracleMatchSpec {
    fn default() -> Self {
        Self { points: 300, noise_px: 1.0, outlier_fraction: 0.3, seed: 0 }
    }
}

/// Query-pixel to map-pixel pairs obtained by casting rays from the true
/// camera. Outliers point somewhere inside the bounding box of the true map
/// points, expanded by half its size.
pub fn oracle_correspondences(
    map: &RefMap25D,
    field: &HeightField,
    frame: &FrameTruth,
    spec: &OracleMatchSpec,
) -> Result<MatchSet, SimError> {
    if !(spec.noise_px >= 0.0 && (0.0..=1.0).contains(&spec.outlier_fraction)) {
        return Err(SimError::InvalidSpec(format!("oracle spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(spec.seed, frame.index));
    let intr = &frame.intrinsics;
    let pose = frame.pose();
    let mut pairs = Vec::with_capacity(spec.points);
    let mut tries = 0;
    while pairs.len() < spec.points && tries < spec.points * 20 {
        tries += 1;
        let u = rng.random_range(0.0..intr.width as f64 - 1.0);
        let v = rng.random_range(0.0..intr.height as f64 - 1.0);
        let dir = pose.ray(intr, u, v);
        let Some(hit) = cast_ray(map, field, (&pose.center, pose.altitude), &dir) else { continue };
        let nu: f64 = StandardNormal.sample(&mut rng);
        let nv: f64 = StandardNormal.sample(&mut rng);
        pairs.push(Match { query: (u + spec.noise_px * nu, v + spec.noise_px * nv), reference: (hit.u, hit.v) });
    }
    if pairs.is_empty() {
        return Ok(MatchSet::empty(MatchSource::Imported));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for m in &pairs {
        x0 = x0.min(m.reference.0);
        y0 = y0.min(m.reference.1);
        x1 = x1.max(m.reference.0);
        y1 = y1.max(m.reference.1);
    }
    let (mx, my) = ((x1 - x0) * 0.25, (y1 - y0) * 0.25);
    let g = map.geot();
    let (x0, x1) = ((x0 - mx).max(0.0), (x1 + mx).min((g.cols - 1) as f64));
    let (y0, y1) = ((y0 - my).max(0.0), (y1 + my).min((g.rows - 1) as f64));
    let n_out = (spec.outlier_fraction * pairs.len() as f64).round() as usize;
    for idx in rand::seq::index::sample(&mut rng, pairs.len(), n_out) {
        let rx = if x1 > x0 { rng.random_range(x0..=x1) } else { x0 };
        let ry = if y1 > y0 { rng.random_range(y0..=y1) } else { y0 };
        pairs[idx].reference = (rx, ry);
    }
    Ok(MatchSet { pairs, source: MatchSource::Imported })
}

/// In-memory matcher serving whole-map oracle correspondences per query id.
#[derive(Debug, Clone, Default)]
pub struct OracleMatcher {
    pub sets: HashMap<String, MatchSet>,
}

impl OracleMatcher {
    pub fn build(
        map: &RefMap25D,
        field: &HeightField,
        frames: &[FrameTruth],
        spec: &OracleMatchSpec,
    ) -> Result<Self, SimError> {
        let sets = frames
            .iter()
            .map(|f| Ok((f.id.clone(), oracle_correspondences(map, field, f, spec)?)))
            .collect::<Result<_, SimError>>()?;
        Ok(Self { sets })
    }
}

impl Matcher for OracleMatcher {
    fn match_tile(&self, query: &QueryView<'_>, tile: &GalleryTile, _map: &RefMap25D) -> MatchSet {
        match self.sets.get(query.id) {
            Some(set) => restrict_to_window(set, &tile.window),
            None => MatchSet::empty(MatchSource::Imported),
        }
    }
}

/// Write each set to `dir/<id>.csv` plus an `index.csv` that lists them
/// as whole-map entries.
pub fn export_oracle_matches(dir: &Path, matcher: &OracleMatcher) -> Result<(), SimError> {
    let io = |p: &Path, e: &dyn std::fmt::Display| SimError::Io { path: p.display().to_string(), msg: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let mut ids: Vec<&String> = matcher.sets.keys().collect();
    ids.sort();
    let mut index = String::from("query_id,tile_id,path\n");
    for id in ids {
        let name = format!("{id}.csv");
        let p = dir.join(&name);
        write_match_csv(&p, &matcher.sets[id]).map_err(|e| io(&p, &e))?;
        index.push_str(&format!("{id},{MAP_TILE_ID},{name}\n"));
    }
    let p = dir.join("index.csv");
    std::fs::write(&p, index).map_err(|e| io(&p, &e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSpec {
    pub dim: usize,
    /// Kernel length scale, meters: cosine similarity of two noise-free
    /// embeddings is about `exp(-d^2 / (2 l^2))`.
    pub length_m: f64,
    /// Norm of the noise added to each query embedding (unit-norm signal).
    pub noise: f64,
    pub seed: u64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self { dim: 128, length_m: 50.0, noise: 0.0, seed: 0 }
    }
}

/// Random Fourier features of position: tiles are embedded at their centre
/// and queries at their footprint centre, with optional query noise.
pub fn oracle_embeddings(
    map: &RefMap25D,
    frames: &[FrameTruth],
    tiles: &[GalleryTile],
    spec: &EmbeddingSpec,
) -> Result<EmbeddingTable, SimError> {
    if spec.dim == 0 || !(spec.length_m > 0.0) || !(spec.noise >= 0.0) {
        return Err(SimError::InvalidSpec(format!("embedding spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xE3B);
    let feats: Vec<(f64, f64, f64)> = (0..spec.dim)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (a / spec.length_m, b / spec.length_m, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let origin = map.geot().origin;
    let scale = (2.0 / spec.dim as f64).sqrt();
    let embed = |c: &UtmCoord| -> Vec<f64> {
        let d = c.delta(&origin).unwrap_or_default();
        feats.iter().map(|&(wx, wy, b)| scale * (wx * d.x + wy * d.y + b).cos()).collect()
    };
    let mut table = EmbeddingTable::new();
    let err = |e: String| SimError::InvalidSpec(e);
    for t in tiles {
        table.insert(t.key(), embed(&t.center).into_iter().map(|x| x as f32).collect()).map_err(err)?;
    }
    let sigma = spec.noise / (spec.dim as f64).sqrt();
    for f in frames {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(spec.seed ^ 0x5EED, f.index));
        let v = embed(&f.footprint)
            .into_iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (x + sigma * z) as f32
            })
            .collect();
        table.insert(f.id.clone(), v).map_err(err)?;
    }
    Ok(table)
}
