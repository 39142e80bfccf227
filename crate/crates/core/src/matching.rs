//! Pixel-level matching between an aligned query and a reference window.
//!
//! The built-in matcher is a Harris-style corner detector with normalized
//! patch descriptors and mutual-nearest-neighbour matching. External
//! matchers plug in through CSV correspondence files.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{GrayF32, MaskedImage};
use crate::prior::{unwarp_points, AlignmentWarp};
use crate::refmap::{GalleryTile, PixelWindow, RefMap25D};

/// Fewer matches than this cannot support a pose.
pub const MIN_MATCHES: usize = 4;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} row {row}: {msg}")]
    Parse { path: String, row: usize, msg: String },
    #[error("no correspondence file for query {query} / tile {tile}")]
    UnknownPair { query: String, tile: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub response: f32,
    pub descriptor: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchSource {
    Builtin,
    Imported,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Query pixel in the original camera frame.
    pub query: (f64, f64),
    /// Reference pixel in tile coordinates.
    pub reference: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    pub source: MatchSource,
}

impl MatchSet {
    pub fn empty(source: MatchSource) -> Self {
        Self { pairs: Vec::new(), source }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn insufficient(&self) -> bool {
        self.pairs.len() < MIN_MATCHES
    }

    /// Drop pairs whose query point repeats an earlier one.
    fn dedup_query(mut self) -> Self {
        let mut seen = HashSet::new();
        self.pairs.retain(|m| seen.insert((m.query.0.to_bits(), m.query.1.to_bits())));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub max_keypoints: usize,
    /// Keypoint budget for the reference side when it is a whole map.
    pub max_keypoints_map: usize,
    pub patch_size: usize,
    pub nms_radius: f64,
    pub ratio: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { max_keypoints: 500, max_keypoints_map: 6000, patch_size: 16, nms_radius: 8.0, ratio: 0.85 }
    }
}

const HARRIS_K: f32 = 0.04;
const RELATIVE_THRESHOLD: f32 = 1e-3;
const ABSOLUTE_THRESHOLD: f32 = 1.0;

fn harris_response(img: &GrayF32) -> GrayF32 {
    let (w, h) = (img.width(), img.height());
    let mut ixx = GrayF32::new(w, h);
    let mut iyy = GrayF32::new(w, h);
    let mut ixy = GrayF32::new(w, h);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = 0.5 * (img.get(x + 1, y) - img.get(x - 1, y));
            let gy = 0.5 * (img.get(x, y + 1) - img.get(x, y - 1));
            ixx.set(x, y, gx * gx);
            iyy.set(x, y, gy * gy);
            ixy.set(x, y, gx * gy);
        }
    }
    let (sxx, syy, sxy) = (ixx.box_blur(2), iyy.box_blur(2), ixy.box_blur(2));
    GrayF32::from_fn(w, h, |x, y| {
        let (a, b, c) = (sxx.get(x, y), syy.get(x, y), sxy.get(x, y));
        a * b - c * c - HARRIS_K * (a + b) * (a + b)
    })
}

/// Pixels whose full `(2r+1)^2` neighbourhood is valid.
fn eroded_mask(img: &MaskedImage, r: usize) -> Vec<bool> {
    let (w, h) = (img.image.width(), img.image.height());
    // summed-area table of invalid pixels
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += (!img.is_valid(x, y)) as u32;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![false; w * h];
    if w <= 2 * r || h <= 2 * r {
        return out;
    }
    for y in r..h - r {
        for x in r..w - r {
            let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
            let bad = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0];
            out[y * w + x] = bad == 0;
        }
    }
    out
}

fn describe(img: &GrayF32, u: f64, v: f64, size: usize) -> Option<Vec<f32>> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut d = Vec::with_capacity(size * size);
    for j in 0..size {
        for i in 0..size {
            d.push(img.sample(u - half + i as f64, v - half + j as f64)?);
        }
    }
    let n = d.len() as f32;
    let mean = d.iter().sum::<f32>() / n;
    let std = (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n).sqrt();
    if std < 1e-3 {
        return None;
    }
    d.iter_mut().for_each(|x| *x = (*x - mean) / std);
    let norm = d.iter().map(|x| x * x).sum::<f32>().sqrt();
    d.iter_mut().for_each(|x| *x /= norm);
    Some(d)
}

/// Detect corners on the valid part of `img` and describe each with a
/// normalized intensity patch.
pub fn detect_and_describe_masked(img: &MaskedImage, max_kp: usize, cfg: &MatcherConfig) -> Vec<Keypoint> {
    let (w, h) = (img.image.width(), img.image.height());
    if w < 8 || h < 8 || max_kp == 0 {
        return Vec::new();
    }
    let resp = harris_response(&img.image);
    let margin = cfg.patch_size / 2 + 3;
    let usable = eroded_mask(img, margin);
    let peak = resp.data().iter().cloned().fold(0.0f32, f32::max);
    let thresh = (peak * RELATIVE_THRESHOLD).max(ABSOLUTE_THRESHOLD);

    let mut cands: Vec<(f32, usize, usize)> = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = resp.get(x, y);
            if r <= thresh || !usable[y * w + x] {
                continue;
            }
            let is_max = (-1i64..=1).all(|dy| {
                (-1i64..=1).all(|dx| {
                    (dx == 0 && dy == 0) || resp.get((x as i64 + dx) as usize, (y as i64 + dy) as usize) < r
                })
            });
            if is_max {
                cands.push((r, x, y));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));

    // greedy suppression on a bucket grid
    let rad = cfg.nms_radius.max(0.0);
    let cell = rad.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    let smooth = img.image.box_blur(1);
    let mut out = Vec::new();
    for (r, x, y) in cands {
        if out.len() >= max_kp {
            break;
        }
        let sub = |a: f32, b: f32, c: f32| {
            let den = a - 2.0 * b + c;
            if den.abs() > 1e-12 {
                (0.5 * (a - c) / den).clamp(-0.5, 0.5) as f64
            } else {
                0.0
            }
        };
        let u = x as f64 + sub(resp.get(x - 1, y), r, resp.get(x + 1, y));
        let v = y as f64 + sub(resp.get(x, y - 1), r, resp.get(x, y + 1));
        let (cx, cy) = ((u / cell) as usize, (v / cell) as usize);
        let mut suppressed = false;
        'scan: for gy in cy.saturating_sub(1)..=(cy + 1).min(gh - 1) {
            for gx in cx.saturating_sub(1)..=(cx + 1).min(gw - 1) {
                if grid[gy * gw + gx].iter().any(|&(pu, pv)| (pu - u).hypot(pv - v) < rad) {
                    suppressed = true;
                    break 'scan;
                }
            }
        }
        if suppressed {
            continue;
        }
        if let Some(descriptor) = describe(&smooth, u, v, cfg.patch_size) {
            grid[cy * gw + cx].push((u, v));
            out.push(Keypoint { u, v, response: r, descriptor });
        }
    }
    out
}

/// Corner detection plus patch description on a fully valid image.
pub fn detect_and_describe(image: &GrayF32, max_kp: usize) -> Vec<Keypoint> {
    detect_and_describe_masked(&MaskedImage::full(image.clone()), max_kp, &MatcherConfig::default())
}

/// `(best index, best distance, second-best distance)` per row.
fn nearest(a: &[Keypoint], b: &[Keypoint]) -> Vec<(usize, f32, f32)> {
    a.iter()
        .map(|ka| {
            let (mut bi, mut d1, mut d2) = (usize::MAX, f32::INFINITY, f32::INFINITY);
            for (j, kb) in b.iter().enumerate() {
                let dot: f32 = ka.descriptor.iter().zip(&kb.descriptor).map(|(x, y)| x * y).sum();
                let d = (2.0 - 2.0 * dot).max(0.0);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    bi = j;
                } else if d < d2 {
                    d2 = d;
                }
            }
            (bi, d1.sqrt(), d2.sqrt())
        })
        .collect()
}

/// Mutual nearest neighbours whose distance ratio to the runner-up is below
/// `ratio` in both directions.
pub fn match_descriptors(q: &[Keypoint], r: &[Keypoint], ratio: f64) -> MatchSet {
    let ratio = ratio as f32;
    let fwd = nearest(q, r);
    let bwd = nearest(r, q);
    let mut pairs = Vec::new();
    for (i, &(j, d1, d2)) in fwd.iter().enumerate() {
        if j == usize::MAX {
            continue;
        }
        let (back, e1, e2) = bwd[j];
        if back != i || !(d1 < ratio * d2) || !(e1 < ratio * e2) {
            continue;
        }
        pairs.push(Match { query: (q[i].u, q[i].v), reference: (r[j].u, r[j].v) });
    }
    MatchSet { pairs, source: MatchSource::Builtin }
}

/// The query side of a matching request: the aligned query image and the
/// warp relating it to the original frame. Keypoints are detected once.
pub struct QueryView<'a> {
    pub id: &'a str,
    pub frame_index: u64,
    pub aligned: &'a MaskedImage,
    pub warp: &'a AlignmentWarp,
    keypoints: OnceLock<Vec<Keypoint>>,
}

impl<'a> QueryView<'a> {
    pub fn new(id: &'a str, frame_index: u64, aligned: &'a MaskedImage, warp: &'a AlignmentWarp) -> Self {
        Self { id, frame_index, aligned, warp, keypoints: OnceLock::new() }
    }

    pub fn keypoints(&self, cfg: &MatcherConfig) -> &[Keypoint] {
        self.keypoints.get_or_init(|| detect_and_describe_masked(self.aligned, cfg.max_keypoints, cfg))
    }
}

/// Match the aligned query against a reference image and return pairs in
/// (original query pixel, reference pixel) coordinates.
pub fn match_against(query: &QueryView<'_>, reference: &MaskedImage, max_ref_kp: usize, cfg: &MatcherConfig) -> MatchSet {
    let qk = query.keypoints(cfg);
    if qk.is_empty() {
        return MatchSet::empty(MatchSource::Builtin);
    }
    let rk = detect_and_describe_masked(reference, max_ref_kp, cfg);
    let mut set = match_descriptors(qk, &rk, cfg.ratio);
    let warped: Vec<(f64, f64)> = set.pairs.iter().map(|m| m.query).collect();
    for (m, q) in set.pairs.iter_mut().zip(unwarp_points(query.warp, &warped)) {
        m.query = q;
    }
    set
}

/// Built-in matching of a query against one gallery tile.
pub fn match_pair(query: &QueryView<'_>, tile: &GalleryTile, map: &RefMap25D, cfg: &MatcherConfig) -> MatchSet {
    let reference = MaskedImage::full(tile.image(map));
    match_against(query, &reference, cfg.max_keypoints, cfg)
}

/// Source of 2D-2D correspondences between a query and a gallery tile.
pub trait Matcher: Sync {
    fn match_tile(&self, query: &QueryView<'_>, tile: &GalleryTile, map: &RefMap25D) -> MatchSet;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinMatcher {
    pub config: MatcherConfig,
}

impl Matcher for BuiltinMatcher {
    fn match_tile(&self, query: &QueryView<'_>, tile: &GalleryTile, map: &RefMap25D) -> MatchSet {
        match_pair(query, tile, map, &self.config)
    }
}

/// Coordinate frame of the query column in an imported file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuerySpace {
    #[default]
    Original,
    Warped,
}

#[derive(Debug, Deserialize)]
struct IndexRow {
    query_id: String,
    tile_id: String,
    path: String,
    #[serde(default)]
    query_space: QuerySpace,
}

/// Maps `(query id, tile id)` to a correspondence CSV.
#[derive(Debug, Clone, Default)]
pub struct MatchIndex {
    entries: HashMap<(String, String), (PathBuf, QuerySpace)>,
}

impl MatchIndex {
    /// Read an index CSV with header `query_id,tile_id,path[,query_space]`.
    /// Relative paths resolve against the index file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MatchError> {
        let path = path.as_ref();
        let p = path.display().to_string();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| MatchError::Parse { path: p.clone(), row: 0, msg: e.to_string() })?;
        let mut entries = HashMap::new();
        for (i, row) in rdr.deserialize::<IndexRow>().enumerate() {
            let row = row.map_err(|e| MatchError::Parse { path: p.clone(), row: i + 1, msg: e.to_string() })?;
            let csv_path = base.join(&row.path);
            entries.insert((row.query_id, row.tile_id), (csv_path, row.query_space));
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, query: &str, tile: &str, path: PathBuf, space: QuerySpace) {
        self.entries.insert((query.to_string(), tile.to_string()), (path, space));
    }

    pub fn lookup(&self, query: &str, tile: &str) -> Option<&(PathBuf, QuerySpace)> {
        self.entries.get(&(query.to_string(), tile.to_string()))
    }
}

/// Read a correspondence CSV with header `qx,qy,rx,ry[,score]`.
pub fn read_match_csv(path: impl AsRef<Path>) -> Result<MatchSet, MatchError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| MatchError::Io { path: p.clone(), source })?;
    if text.trim().is_empty() {
        return Ok(MatchSet::empty(MatchSource::Imported));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| MatchError::Parse { path: p.clone(), row: 0, msg: e.to_string() })?;
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 4 || cols[..4] != ["qx", "qy", "rx", "ry"] {
        return Err(MatchError::Parse { path: p, row: 0, msg: format!("unexpected header {cols:?}") });
    }
    let mut pairs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| MatchError::Parse { path: p.clone(), row, msg: e.to_string() })?;
        if rec.len() < 4 || rec.len() > 5 {
            return Err(MatchError::Parse { path: p.clone(), row, msg: format!("{} fields", rec.len()) });
        }
        let mut vals = [0.0f64; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = rec[k]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| MatchError::Parse { path: p.clone(), row, msg: format!("bad value {:?}", &rec[k]) })?;
        }
        pairs.push(Match { query: (vals[0], vals[1]), reference: (vals[2], vals[3]) });
    }
    Ok(MatchSet { pairs, source: MatchSource::Imported }.dedup_query())
}

/// Write a correspondence CSV readable by [`read_match_csv`].
pub fn write_match_csv(path: impl AsRef<Path>, set: &MatchSet) -> Result<(), MatchError> {
    let path = path.as_ref();
    let mut out = String::from("qx,qy,rx,ry\n");
    for m in &set.pairs {
        out.push_str(&format!("{},{},{},{}\n", m.query.0, m.query.1, m.reference.0, m.reference.1));
    }
    std::fs::write(path, out).map_err(|source| MatchError::Io { path: path.display().to_string(), source })
}

/// Correspondences for one (query, tile) pair from an index. Query points
/// declared in warped space are mapped back through `warp`.
pub fn import_matches(
    index: &MatchIndex,
    query_id: &str,
    tile_id: &str,
    warp: Option<&AlignmentWarp>,
) -> Result<MatchSet, MatchError> {
    let (path, space) = index
        .lookup(query_id, tile_id)
        .ok_or_else(|| MatchError::UnknownPair { query: query_id.into(), tile: tile_id.into() })?;
    let mut set = read_match_csv(path)?;
    if let (QuerySpace::Warped, Some(w)) = (space, warp) {
        let pts: Vec<(f64, f64)> = set.pairs.iter().map(|m| m.query).collect();
        for (m, q) in set.pairs.iter_mut().zip(unwarp_points(w, &pts)) {
            m.query = q;
        }
    }
    Ok(set)
}

/// Tile id under which an index may list correspondences expressed in
/// whole-map pixel coordinates.
pub const MAP_TILE_ID: &str = "map";

/// Keep the pairs whose reference point falls inside `window` (given in map
/// pixels) and express them in tile coordinates.
pub fn restrict_to_window(set: &MatchSet, window: &PixelWindow) -> MatchSet {
    let pairs = set
        .pairs
        .iter()
        .filter(|m| window.contains(m.reference.0, m.reference.1))
        .map(|m| Match {
            query: m.query,
            reference: (m.reference.0 - window.x0 as f64, m.reference.1 - window.y0 as f64),
        })
        .collect();
    MatchSet { pairs, source: set.source }
}

/// Matcher backed by correspondence files from an external tool. A pair
/// listed for the tile itself wins; otherwise a whole-map entry is cut to
/// the tile window. Missing or unreadable pairs yield an empty set.
#[derive(Debug, Clone, Default)]
pub struct ImportedMatcher {
    pub index: MatchIndex,
}

impl Matcher for ImportedMatcher {
    fn match_tile(&self, query: &QueryView<'_>, tile: &GalleryTile, _map: &RefMap25D) -> MatchSet {
        let key = tile.key();
        let res = if self.index.lookup(query.id, &key).is_some() {
            import_matches(&self.index, query.id, &key, Some(query.warp))
        } else {
            import_matches(&self.index, query.id, MAP_TILE_ID, Some(query.warp)).map(|s| restrict_to_window(&s, &tile.window))
        };
        match res {
            Ok(set) => set,
            Err(e) => {
                log::debug!("{e}");
                MatchSet::empty(MatchSource::Imported)
            }
        }
    }
}
