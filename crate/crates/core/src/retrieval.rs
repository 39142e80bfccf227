//! Image-level retrieval: rank gallery tiles against an aligned query with
//! template similarity (NCC, mutual information) or imported embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{GrayF32, MaskedImage};
use crate::refmap::{GalleryTile, RefMap25D};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("zero variance over the valid mask")]
    ZeroVariance,
    #[error("no valid pixels")]
    EmptyMask,
    #[error("vector dimensions differ: {0} vs {1}")]
    VectorDimension(usize, usize),
    #[error("bins must be at least 2, got {0}")]
    Bins(usize),
    #[error("no embedding for id {0}")]
    MissingEmbedding(String),
    #[error("empty gallery")]
    EmptyGallery,
    #[error("embedding file {path} line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn check_dims(a: &MaskedImage, b: &MaskedImage) -> Result<(), RetrievalError> {
    let da = (a.image.width(), a.image.height());
    let db = (b.image.width(), b.image.height());
    if da != db {
        return Err(RetrievalError::DimensionMismatch(da, db));
    }
    Ok(())
}

fn joint_valid<'a>(a: &'a MaskedImage, b: &'a MaskedImage) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.image
        .data()
        .iter()
        .zip(b.image.data())
        .zip(a.valid.iter().zip(&b.valid))
        .filter(|(_, (&va, &vb))| va && vb)
        .map(|((&x, &y), _)| (x as f64, y as f64))
}

/// Zero-mean normalized cross-correlation over pixels valid in both images.
pub fn ncc_score(a: &MaskedImage, b: &MaskedImage) -> Result<f64, RetrievalError> {
    check_dims(a, b)?;
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for (x, y) in joint_valid(a, b) {
        n += 1;
        sa += x;
        sb += y;
    }
    if n == 0 {
        return Err(RetrievalError::EmptyMask);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in joint_valid(a, b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    // relative floor: constant images leave only rounding noise
    let floor = 1e-12 * n as f64 * (1.0 + ma * ma + mb * mb);
    if va <= floor || vb <= floor {
        return Err(RetrievalError::ZeroVariance);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Mutual information in bits from the joint histogram of 8-bit
/// intensities quantized into `bins` levels.
pub fn mi_score(a: &MaskedImage, b: &MaskedImage, bins: usize) -> Result<f64, RetrievalError> {
    check_dims(a, b)?;
    if bins < 2 {
        return Err(RetrievalError::Bins(bins));
    }
    let quant = |v: f64| ((v.clamp(0.0, 255.999) * bins as f64 / 256.0) as usize).min(bins - 1);
    let mut joint = vec![0u64; bins * bins];
    let mut n = 0u64;
    for (x, y) in joint_valid(a, b) {
        joint[quant(x) * bins + quant(y)] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(RetrievalError::EmptyMask);
    }
    let mut pa = vec![0u64; bins];
    let mut pb = vec![0u64; bins];
    for i in 0..bins {
        for j in 0..bins {
            pa[i] += joint[i * bins + j];
            pb[j] += joint[i * bins + j];
        }
    }
    let nf = n as f64;
    let entropy = |counts: &[u64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.log2()
            })
            .sum()
    };
    Ok((entropy(&pa) + entropy(&pb) - entropy(&joint)).max(0.0))
}

/// Dot product of two unit vectors.
pub fn cosine_score(q: &[f32], t: &[f32]) -> Result<f64, RetrievalError> {
    if q.len() != t.len() {
        return Err(RetrievalError::VectorDimension(q.len(), t.len()));
    }
    Ok(q.iter().zip(t).map(|(&a, &b)| a as f64 * b as f64).sum())
}

/// Unit-normalized embeddings keyed by query or tile id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vec: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Insert a vector, normalizing it to unit length.
    pub fn insert(&mut self, id: impl Into<String>, mut v: Vec<f32>) -> Result<(), String> {
        if self.vectors.is_empty() {
            self.dim = v.len();
        } else if v.len() != self.dim {
            return Err(format!("dimension {} differs from table dimension {}", v.len(), self.dim));
        }
        let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err("vector has zero or non-finite norm".into());
        }
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Parse a JSON-lines file of `{"id": ..., "vec": [...]}` records.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let p = path.display().to_string();
        let file = fs::File::open(path).map_err(|source| RetrievalError::Io { path: p.clone(), source })?;
        let mut table = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| RetrievalError::Io { path: p.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| RetrievalError::Parse { path: p.clone(), line: i + 1, msg };
            let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
            table.insert(rec.id, rec.vec).map_err(perr)?;
        }
        Ok(table)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        let p = path.display().to_string();
        let mut out = Vec::new();
        for (id, vec) in &self.vectors {
            let rec = EmbeddingRecord { id: id.clone(), vec: vec.clone() };
            serde_json::to_writer(&mut out, &rec).expect("record serializes");
            out.push(b'\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|source| RetrievalError::Io { path: p, source })
    }
}

/// Default histogram resolution for mutual information.
pub const DEFAULT_MI_BINS: usize = 32;
/// Template scorers compare images downsampled to at most this many pixels
/// along the longer side.
pub const DEFAULT_TEMPLATE_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Ncc,
    Mi,
    Embedding,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ncc" => Ok(Self::Ncc),
            "mi" => Ok(Self::Mi),
            "embedding" => Ok(Self::Embedding),
            other => Err(format!("unknown scorer {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Ncc { template_dim: usize },
    Mi { bins: usize, template_dim: usize },
    Embedding(&'a EmbeddingTable),
}

impl Scorer<'_> {
    pub fn ncc() -> Self {
        Scorer::Ncc { template_dim: DEFAULT_TEMPLATE_DIM }
    }

    pub fn mi() -> Self {
        Scorer::Mi { bins: DEFAULT_MI_BINS, template_dim: DEFAULT_TEMPLATE_DIM }
    }
}

/// Query side of a retrieval request.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalQuery<'a> {
    pub id: &'a str,
    /// Query aligned north-up at map resolution.
    pub aligned: &'a MaskedImage,
}

/// Tiles in descending score order; ties broken by ascending tile id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<(u32, f64)>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<u32> {
        self.ranked.iter().map(|&(id, _)| id).collect()
    }

    pub fn score_of(&self, id: u32) -> Option<f64> {
        self.ranked.iter().find(|&&(t, _)| t == id).map(|&(_, s)| s)
    }
}

/// Map window centred on `center_px` with the given size; pixels outside the
/// raster are invalid.
fn map_window(map: &RefMap25D, center_px: (f64, f64), w: usize, h: usize) -> MaskedImage {
    let gray = map.gray();
    let x0 = (center_px.0 - (w as f64 - 1.0) / 2.0).round() as i64;
    let y0 = (center_px.1 - (h as f64 - 1.0) / 2.0).round() as i64;
    let mut img = GrayF32::new(w, h);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        let sy = y0 + y as i64;
        if sy < 0 || sy >= gray.height() as i64 {
            continue;
        }
        for x in 0..w {
            let sx = x0 + x as i64;
            if sx < 0 || sx >= gray.width() as i64 {
                continue;
            }
            img.set(x, y, gray.get(sx as usize, sy as usize));
            valid[y * w + x] = true;
        }
    }
    MaskedImage { image: img, valid }
}

fn template_size(w: usize, h: usize, max_dim: usize) -> (usize, usize) {
    let m = w.max(h);
    if m <= max_dim {
        return (w, h);
    }
    let f = max_dim as f64 / m as f64;
    (((w as f64 * f).round() as usize).max(1), ((h as f64 * f).round() as usize).max(1))
}

/// Score every tile and keep the best `k` (clamped to the gallery size).
///
/// Template scorers compare the aligned query against the map window of the
/// same size centred on each tile, both reduced to the template size.
/// Tiles whose score is undefined rank after every scored tile.
pub fn rank_gallery(
    query: &RetrievalQuery<'_>,
    tiles: &[GalleryTile],
    map: &RefMap25D,
    scorer: &Scorer<'_>,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if tiles.is_empty() {
        return Err(RetrievalError::EmptyGallery);
    }
    let k = k.max(1).min(tiles.len());
    let mut scored: Vec<(u32, f64)> = match scorer {
        Scorer::Embedding(table) => {
            let q = table.get(query.id).ok_or_else(|| RetrievalError::MissingEmbedding(query.id.to_string()))?;
            tiles
                .iter()
                .map(|t| {
                    let v = table.get(&t.key()).ok_or_else(|| RetrievalError::MissingEmbedding(t.key()))?;
                    Ok((t.id, cosine_score(q, v).unwrap_or(f64::NEG_INFINITY)))
                })
                .collect::<Result<_, RetrievalError>>()?
        }
        Scorer::Ncc { template_dim } | Scorer::Mi { template_dim, .. } => {
            let (qw, qh) = (query.aligned.image.width(), query.aligned.image.height());
            let (tw, th) = template_size(qw, qh, *template_dim);
            let q_small = query.aligned.resize(tw, th);
            tiles
                .par_iter()
                .map(|t| {
                    let c = map.geot().world_to_pixel(&t.center).unwrap_or((f64::NAN, f64::NAN));
                    let win = map_window(map, c, qw, qh).resize(tw, th);
                    let s = match scorer {
                        Scorer::Ncc { .. } => ncc_score(&q_small, &win),
                        Scorer::Mi { bins, .. } => mi_score(&q_small, &win, *bins),
                        Scorer::Embedding(_) => unreachable!(),
                    };
                    (t.id, s.unwrap_or(f64::NEG_INFINITY))
                })
                .collect()
        }
    };
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(RetrievalResult { ranked: scored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmap::build_gallery;
    use crate::refmap::test_support::map_with;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(w: usize, h: usize, f: impl FnMut(usize, usize) -> f32) -> MaskedImage {
        MaskedImage::full(GrayF32::from_fn(w, h, f))
    }

    fn textured(seed: u64) -> MaskedImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        img(32, 24, |_, _| rng.random_range(0.0..255.0f32).floor())
    }

    #[test]
    fn ncc_examples() {
        let a = textured(1);
        assert!((ncc_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = img(32, 24, |x, y| 255.0 - a.image.get(x, y));
        assert!((ncc_score(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let flat = img(32, 24, |_, _| 7.0);
        assert!(matches!(ncc_score(&flat, &a), Err(RetrievalError::ZeroVariance)));
        let small = img(8, 8, |x, _| x as f32);
        assert!(matches!(ncc_score(&small, &a), Err(RetrievalError::DimensionMismatch(..))));
    }

    #[test]
    fn ncc_ignores_invalid_pixels() {
        let a = textured(2);
        let mut b = a.clone();
        for i in 0..100 {
            b.image.set(i % 32, i / 32, 0.0);
            b.valid[i] = false;
        }
        assert!((ncc_score(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_examples() {
        // four equally frequent levels, one per bin
        let a = img(16, 16, |x, _| [10.0, 80.0, 150.0, 220.0][x % 4]);
        assert!((mi_score(&a, &a, 4).unwrap() - 2.0).abs() < 1e-12);
        let c = img(16, 16, |_, _| 100.0);
        assert_eq!(mi_score(&a, &c, 4).unwrap(), 0.0);
        assert!(matches!(mi_score(&a, &a, 1), Err(RetrievalError::Bins(1))));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f32> = (0..10_000).map(|_| rng.random_range(0.0..256.0f32).floor()).collect();
        let mut shuffled = vals.clone();
        shuffled.shuffle(&mut rng);
        let a = MaskedImage::full(GrayF32::from_vec(100, 100, vals));
        let b = MaskedImage::full(GrayF32::from_vec(100, 100, shuffled));
        // a 4x4 histogram keeps the plug-in estimator's bias well below the bound
        assert!(mi_score(&a, &b, 4).unwrap() < 0.1);
        let mut none = a.clone();
        none.valid.iter_mut().for_each(|v| *v = false);
        assert!(matches!(mi_score(&none, &b, 4), Err(RetrievalError::EmptyMask)));
    }

    #[test]
    fn cosine_examples() {
        let v = [0.6f32, 0.8];
        assert!((cosine_score(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_score(&v, &[-0.6, -0.8]).unwrap() + 1.0).abs() < 1e-6);
        assert!(matches!(cosine_score(&v, &[1.0]), Err(RetrievalError::VectorDimension(2, 1))));
    }

    #[test]
    fn embedding_table_normalizes_and_roundtrips() {
        let mut t = EmbeddingTable::new();
        t.insert("q", vec![3.0, 4.0]).unwrap();
        assert_eq!(t.get("q").unwrap(), &[0.6, 0.8]);
        assert!(t.insert("bad", vec![1.0, 2.0, 3.0]).is_err());
        assert!(t.insert("zero", vec![0.0, 0.0]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.jsonl");
        t.write_jsonl(&p).unwrap();
        assert_eq!(EmbeddingTable::load_jsonl(&p).unwrap(), t);
        fs::write(&p, "{\"id\": \"a\", \"vec\": [1, 2]}\n{\"id\": \"b\"}\n").unwrap();
        assert!(matches!(EmbeddingTable::load_jsonl(&p), Err(RetrievalError::Parse { line: 2, .. })));
    }

    fn noise_map() -> RefMap25D {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise: Vec<u8> = (0..120 * 120).map(|_| rng.random()).collect();
        map_with(120, 120, 1.0, |c, r| { let v = noise[r * 120 + c]; [v, v, v] }, |_, _| 0.0)
    }

    #[test]
    fn exact_tile_content_ranks_first() {
        let map = noise_map();
        let tiles = build_gallery(&map, 40.0, 0.5).unwrap();
        let target = &tiles[7];
        let q = MaskedImage::full(target.image(&map));
        let query = RetrievalQuery { id: "q", aligned: &q };
        let r = rank_gallery(&query, &tiles, &map, &Scorer::Ncc { template_dim: 1000 }, 3).unwrap();
        assert_eq!(r.ranked[0].0, 7);
        assert!((r.ranked[0].1 - 1.0).abs() < 1e-9);
        assert_eq!(r.ranked.len(), 3);

        let r = rank_gallery(&query, &tiles, &map, &Scorer::mi(), 100).unwrap();
        assert_eq!(r.ranked.len(), tiles.len());
        assert_eq!(r.ranked[0].0, 7);
        assert!(r.ranked.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(rank_gallery(&query, &[], &map, &Scorer::ncc(), 1).is_err());
    }

    #[test]
    fn embedding_ranking_and_missing_ids() {
        let map = noise_map();
        let tiles = build_gallery(&map, 60.0, 0.5).unwrap();
        let mut table = EmbeddingTable::new();
        for t in &tiles {
            let mut v = vec![0.1f32; tiles.len()];
            v[t.id as usize] = 1.0;
            table.insert(t.key(), v).unwrap();
        }
        let mut q = vec![0.1f32; tiles.len()];
        q[5] = 1.0;
        table.insert("frame_0", q).unwrap();
        let blank = MaskedImage::full(GrayF32::new(4, 4));
        let query = RetrievalQuery { id: "frame_0", aligned: &blank };
        let r = rank_gallery(&query, &tiles, &map, &Scorer::Embedding(&table), 1).unwrap();
        assert_eq!(r.ids(), vec![5]);
        assert!((r.ranked[0].1 - 1.0).abs() < 1e-6);
        let missing = RetrievalQuery { id: "frame_9", aligned: &blank };
        assert!(matches!(
            rank_gallery(&missing, &tiles, &map, &Scorer::Embedding(&table), 1),
            Err(RetrievalError::MissingEmbedding(_))
        ));
    }

    #[test]
    fn flat_tiles_rank_last_by_id() {
        let map = map_with(80, 80, 1.0, |c, r| if c < 40 && r < 40 { [(c * r % 200) as u8; 3] } else { [9; 3] }, |_, _| 0.0);
        let tiles = build_gallery(&map, 40.0, 0.0).unwrap();
        let q = MaskedImage::full(tiles[0].image(&map));
        let query = RetrievalQuery { id: "q", aligned: &q };
        let r = rank_gallery(&query, &tiles, &map, &Scorer::ncc(), 4).unwrap();
        assert_eq!(r.ids(), vec![0, 1, 2, 3]);
        assert!(r.ranked[1..].iter().all(|&(_, s)| s == f64::NEG_INFINITY));
    }

    proptest! {
        #[test]
        fn ncc_affine_invariance(seed in 0u64..1000, gain in 0.1f64..10.0, offset in -100.0f64..100.0) {
            let a = textured(seed);
            let b = img(32, 24, |x, y| (a.image.get(x, y) as f64 * gain + offset) as f32);
            let base = ncc_score(&a, &textured(seed + 1)).unwrap();
            let moved = ncc_score(&b, &textured(seed + 1)).unwrap();
            // f32 storage of the transformed image bounds the agreement
            prop_assert!((base - moved).abs() < 1e-5);
        }

        #[test]
        fn mi_symmetric_and_self_is_entropy(seed in 0u64..1000, bins in 2usize..40) {
            let a = textured(seed);
            let b = textured(seed + 7);
            let ab = mi_score(&a, &b, bins).unwrap();
            let ba = mi_score(&b, &a, bins).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            let h = {
                let quant = |v: f32| ((v as f64 * bins as f64 / 256.0) as usize).min(bins - 1);
                let mut c = vec![0usize; bins];
                a.image.data().iter().for_each(|&v| c[quant(v)] += 1);
                let n = a.image.data().len() as f64;
                c.iter().filter(|&&k| k > 0).map(|&k| { let p = k as f64 / n; -p * p.log2() }).sum::<f64>()
            };
            prop_assert!((mi_score(&a, &a, bins).unwrap() - h).abs() < 1e-9);
        }
    }
}
