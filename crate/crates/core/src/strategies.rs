//! Localization strategies: how retrieval candidates are turned into a
//! single position estimate.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{planar_error, CameraIntrinsics, PriorState, UtmCoord};
use crate::imgproc::{GrayF32, MaskedImage};
use crate::matching::{match_against, MatchSet, Matcher, MatcherConfig, QueryView};
use crate::metrics::ground_truth_tile;
use crate::pose::{ransac_pnp, Corr2D3D, PoseEstimate, PoseStatus, RansacParams};
use crate::prior::{align_query, apply_warp, frame_seed, query_gsd, AlignmentWarp, PriorError};
use crate::record::{LocalizationRecord, StageTimings};
use crate::refmap::{GalleryTile, RefMap25D};
use crate::retrieval::{rank_gallery, RetrievalError, RetrievalQuery, RetrievalResult, Scorer};

/// Longest side of the map image used by the direct strategy.
pub const DIRECT_MAX_DIM: usize = 4096;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Top1,
    #[serde(rename = "topn")]
    TopN,
    MostInliers,
    Direct,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Top1 => "top1",
            Self::TopN => "topn",
            Self::MostInliers => "most_inliers",
            Self::Direct => "direct",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top1" => Ok(Self::Top1),
            "topn" | "topn_rerank" => Ok(Self::TopN),
            "most_inliers" => Ok(Self::MostInliers),
            "direct" => Ok(Self::Direct),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Candidates re-ranked by the top-N strategy.
    pub top_n: usize,
    /// Retrieval ranks kept in each record for the retrieval metrics.
    pub record_k: usize,
    pub ransac: RansacParams,
    pub matcher: MatcherConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::TopN,
            top_n: 5,
            record_k: 5,
            ransac: RansacParams::default(),
            matcher: MatcherConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.top_n == 0 {
            return Err(StrategyError::Config("top_n must be at least 1".into()));
        }
        self.ransac.validate().map_err(|e| StrategyError::Config(e.to_string()))
    }
}

/// One query frame with its prior and, when known, its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub id: &'a str,
    pub index: u64,
    pub image: &'a GrayF32,
    pub intrinsics: &'a CameraIntrinsics,
    pub prior: PriorState,
    pub ground_truth: Option<UtmCoord>,
    pub footprint: Option<UtmCoord>,
    /// True pitch for breakdowns; falls back to the prior pitch.
    pub pitch_deg: f64,
    pub altitude_m: f64,
}

/// Shared, read-only state for localizing frames.
pub struct LocalizeContext<'a> {
    pub map: &'a RefMap25D,
    pub tiles: &'a [GalleryTile],
    pub scorer: Scorer<'a>,
    pub matcher: &'a dyn Matcher,
    pub config: StrategyConfig,
    pub label: String,
    pub noise: String,
}

/// Per-tile outcome of matching and pose estimation.
#[derive(Debug, Clone)]
pub struct TileAttempt {
    pub tile: u32,
    pub matches: usize,
    pub estimate: PoseEstimate,
}

/// RANSAC seed for one (frame, tile) pair, so a given pair gives the same
/// pose whichever strategy asks for it.
pub fn pair_seed(seed: u64, frame: u64, tile: u32) -> u64 {
    frame_seed(frame_seed(seed, frame), tile as u64 + 1)
}

/// Lift matches (reference in `tile` pixels) to 2D-3D correspondences.
pub fn lift_matches(map: &RefMap25D, tile: &GalleryTile, set: &MatchSet) -> Vec<Corr2D3D> {
    lift_scaled(map, set, (tile.window.x0 as f64, tile.window.y0 as f64), 1.0)
}

fn lift_scaled(map: &RefMap25D, set: &MatchSet, offset: (f64, f64), scale: f64) -> Vec<Corr2D3D> {
    set.pairs
        .iter()
        .filter_map(|m| {
            let (u, v) = (offset.0 + m.reference.0 * scale, offset.1 + m.reference.1 * scale);
            let (world, elevation) = map.lift_to_3d(u, v).ok()?;
            Some(Corr2D3D { pixel: m.query, world, elevation })
        })
        .collect()
}

fn attempt(ctx: &LocalizeContext<'_>, view: &QueryView<'_>, tile: &GalleryTile, intr: &CameraIntrinsics) -> TileAttempt {
    let set = ctx.matcher.match_tile(view, tile, ctx.map);
    let corrs = lift_matches(ctx.map, tile, &set);
    let params = RansacParams { seed: pair_seed(ctx.config.ransac.seed, view.frame_index, tile.id), ..ctx.config.ransac };
    let estimate = if set.insufficient() || corrs.len() < 4 {
        PoseEstimate { pose: None, inlier_count: 0, inlier_ids: Vec::new(), reproj_rmse: 0.0, status: PoseStatus::Insufficient }
    } else {
        ransac_pnp(&corrs, intr, &params)
    };
    TileAttempt { tile: tile.id, matches: set.len(), estimate }
}

/// Pick the attempt with the most inliers; ties go to the higher retrieval
/// score, then to the lower tile id. Attempts without a valid pose are
/// ignored.
pub fn select_best<'b>(attempts: &'b [TileAttempt], retrieval: &RetrievalResult) -> Option<&'b TileAttempt> {
    let score = |a: &TileAttempt| retrieval.score_of(a.tile).unwrap_or(f64::NEG_INFINITY);
    attempts.iter().filter(|a| a.estimate.is_ok()).min_by(|a, b| {
        b.estimate
            .inlier_count
            .cmp(&a.estimate.inlier_count)
            .then(score(b).total_cmp(&score(a)))
            .then(a.tile.cmp(&b.tile))
    })
}

struct Outcome {
    predicted: UtmCoord,
    chosen: Option<u32>,
    inliers: usize,
    fallback: bool,
    status: String,
}

fn fallback_to(c: UtmCoord, tile: Option<u32>, why: &str) -> Outcome {
    Outcome { predicted: c, chosen: tile, inliers: 0, fallback: true, status: format!("fallback:{why}") }
}

fn outcome_from(best: Option<&TileAttempt>, retrieval: &RetrievalResult, tiles: &[GalleryTile]) -> Outcome {
    match best.and_then(|a| a.estimate.pose.map(|p| (a, p))) {
        Some((a, pose)) => Outcome {
            predicted: pose.center,
            chosen: Some(a.tile),
            inliers: a.estimate.inlier_count,
            fallback: false,
            status: "ok".into(),
        },
        None => {
            let top = retrieval.ranked[0].0;
            fallback_to(tiles[top as usize].center, Some(top), "no_pose")
        }
    }
}

fn tile_by_id(tiles: &[GalleryTile], id: u32) -> &GalleryTile {
    // galleries built here are id-indexed; fall back to a search otherwise
    match tiles.get(id as usize) {
        Some(t) if t.id == id => t,
        _ => tiles.iter().find(|t| t.id == id).expect("retrieved id belongs to the gallery"),
    }
}

fn direct(
    ctx: &LocalizeContext<'_>,
    frame: &FrameInput<'_>,
    timings: &mut StageTimings,
) -> Result<Outcome, StrategyError> {
    let map = ctx.map;
    let gray = map.gray();
    let longest = gray.width().max(gray.height());
    let factor = (longest as f64 / DIRECT_MAX_DIM as f64).max(1.0);
    timings.direct_downsample = factor;

    let t = Instant::now();
    let q = query_gsd(&frame.prior, frame.intrinsics)?;
    let warp = AlignmentWarp::new(-frame.prior.yaw, q.gsd / (map.gsd() * factor), (frame.image.width(), frame.image.height()))?;
    let aligned = apply_warp(frame.image, &warp);
    timings.align_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let reference = if factor > 1.0 {
        let w = ((gray.width() as f64 / factor).round() as usize).max(1);
        let h = ((gray.height() as f64 / factor).round() as usize).max(1);
        gray.resize(w, h)
    } else {
        gray.clone()
    };
    let sx = gray.width() as f64 / reference.width() as f64;
    let view = QueryView::new(frame.id, frame.index, &aligned, &warp);
    let cfg = &ctx.config.matcher;
    let set = match_against(&view, &MaskedImage::full(reference), cfg.max_keypoints_map, cfg);
    timings.matching_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    // resized pixel centres: x_full = (x + 0.5) * s - 0.5
    let corrs = lift_scaled(map, &set, (0.5 * sx - 0.5, 0.5 * sx - 0.5), sx);
    let params = RansacParams { seed: pair_seed(ctx.config.ransac.seed, frame.index, u32::MAX), ..ctx.config.ransac };
    let est = if corrs.len() < 4 {
        None
    } else {
        Some(ransac_pnp(&corrs, frame.intrinsics, &params))
    };
    timings.pose_s = t.elapsed().as_secs_f64();
    timings.tiles_matched = 1;
    Ok(match est {
        Some(e) if e.is_ok() => Outcome {
            predicted: e.pose.expect("ok pose").center,
            chosen: None,
            inliers: e.inlier_count,
            fallback: false,
            status: "ok".into(),
        },
        _ => fallback_to(map.geot().center(), None, "no_pose"),
    })
}

/// Localize one frame with the configured strategy.
pub fn localize_frame(
    ctx: &LocalizeContext<'_>,
    frame: &FrameInput<'_>,
) -> Result<(LocalizationRecord, StageTimings), StrategyError> {
    let cfg = &ctx.config;
    let mut timings = StageTimings { frame_id: frame.id.to_string(), label: ctx.label.clone(), ..Default::default() };
    let mut retrieved = Vec::new();

    let outcome = if cfg.kind == StrategyKind::Direct {
        direct(ctx, frame, &mut timings)?
    } else {
        if ctx.tiles.is_empty() {
            return Err(RetrievalError::EmptyGallery.into());
        }
        let t = Instant::now();
        let (aligned, warp) = align_query(frame.image, &frame.prior, frame.intrinsics, ctx.map.gsd())?;
        timings.align_s = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let k = match cfg.kind {
            StrategyKind::Top1 => 1,
            StrategyKind::TopN => cfg.top_n,
            _ => ctx.tiles.len(),
        };
        let query = RetrievalQuery { id: frame.id, aligned: &aligned };
        let ranking = rank_gallery(&query, ctx.tiles, ctx.map, &ctx.scorer, k.max(cfg.record_k))?;
        timings.retrieval_s = t.elapsed().as_secs_f64();
        retrieved = ranking.ids().into_iter().take(cfg.record_k).collect::<Vec<_>>();

        let t = Instant::now();
        let view = QueryView::new(frame.id, frame.index, &aligned, &warp);
        let candidates: Vec<&GalleryTile> = match cfg.kind {
            StrategyKind::MostInliers => ctx.tiles.iter().collect(),
            _ => ranking.ranked.iter().take(k).map(|&(id, _)| tile_by_id(ctx.tiles, id)).collect(),
        };
        let attempts: Vec<TileAttempt> =
            candidates.iter().map(|t| attempt(ctx, &view, t, frame.intrinsics)).collect();
        let elapsed = t.elapsed().as_secs_f64();
        timings.matching_s = elapsed;
        timings.tiles_matched = attempts.len();
        let best = match cfg.kind {
            StrategyKind::Top1 => attempts.first().filter(|a| a.estimate.is_ok()),
            _ => select_best(&attempts, &ranking),
        };
        outcome_from(best, &ranking, ctx.tiles)
    };

    let gt = frame.ground_truth;
    let error_m = match gt {
        Some(g) => planar_error(&outcome.predicted, &g).map_err(|e| StrategyError::Config(e.to_string()))?,
        None => f64::NAN,
    };
    let retrieved_dist_m = match frame.footprint {
        Some(fp) => retrieved
            .iter()
            .map(|&id| {
                let c = tile_by_id(ctx.tiles, id).center;
                (c.easting - fp.easting).hypot(c.northing - fp.northing)
            })
            .collect(),
        None => Vec::new(),
    };
    let (tile_width_px, gt_tile) = match ctx.tiles.first() {
        Some(t) => (t.width_px, frame.footprint.and_then(|fp| ground_truth_tile(ctx.tiles, &fp))),
        None => (0, None),
    };
    let record = LocalizationRecord {
        frame_id: frame.id.to_string(),
        frame_index: frame.index,
        label: ctx.label.clone(),
        strategy: cfg.kind.name().to_string(),
        predicted: outcome.predicted,
        ground_truth: gt.unwrap_or(outcome.predicted),
        error_m,
        chosen_tile: outcome.chosen,
        inlier_count: outcome.inliers,
        fallback: outcome.fallback,
        status: outcome.status,
        pitch_deg: frame.pitch_deg,
        altitude_m: frame.altitude_m,
        map_label: ctx.map.label().to_string(),
        noise: ctx.noise.clone(),
        retrieved,
        retrieved_dist_m,
        tile_width_px,
        map_gsd: ctx.map.gsd(),
        gt_tile,
    };
    Ok((record, timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmap::build_gallery;
    use crate::retrieval::EmbeddingTable;
    use crate::simulator::{
        generate_flight, generate_scene, oracle_embeddings, Dataset, EmbeddingSpec, FlightSpec, HeightField,
        OracleMatchSpec, OracleMatcher, SceneSpec, Terrain,
    };

    struct World {
        map: RefMap25D,
        tiles: Vec<GalleryTile>,
        data: Dataset,
        oracle: OracleMatcher,
        table: EmbeddingTable,
    }

    fn world() -> World {
        let spec = SceneSpec {
            extent_m: 600.0,
            gsd: 1.0,
            terrain: Terrain::Hills { amplitude: 10.0, wavelength: 300.0 },
            seed: 5,
            ..Default::default()
        };
        let map = generate_scene(&spec).unwrap();
        let field = HeightField::new(&map);
        let fl = FlightSpec {
            frames: 8,
            width: 320,
            height: 240,
            altitude: (80.0, 150.0),
            pitch: (50.0, 90.0),
            margin_m: 120.0,
            ..Default::default()
        };
        let frames = generate_flight(&map, &field, &fl).unwrap();
        let tiles = build_gallery(&map, 100.0, 0.5).unwrap();
        let oracle = OracleMatcher::build(&map, &field, &frames, &OracleMatchSpec::default()).unwrap();
        let table = oracle_embeddings(&map, &frames, &tiles, &EmbeddingSpec { length_m: 60.0, ..Default::default() })
            .unwrap();
        let data = Dataset::render(&map, &field, frames).unwrap();
        World { map, tiles, data, oracle, table }
    }

    fn run(w: &World, kind: StrategyKind, n: usize) -> Vec<LocalizationRecord> {
        let ctx = LocalizeContext {
            map: &w.map,
            tiles: &w.tiles,
            scorer: Scorer::Embedding(&w.table),
            matcher: &w.oracle,
            config: StrategyConfig { kind, top_n: n, ..Default::default() },
            label: String::new(),
            noise: "none".into(),
        };
        w.data
            .frames
            .iter()
            .zip(&w.data.images)
            .map(|(f, img)| {
                let input = FrameInput {
                    id: &f.id,
                    index: f.index,
                    image: img,
                    intrinsics: &f.intrinsics,
                    prior: f.prior(),
                    ground_truth: Some(f.camera),
                    footprint: Some(f.footprint),
                    pitch_deg: f.pitch,
                    altitude_m: f.altitude,
                };
                localize_frame(&ctx, &input).unwrap().0
            })
            .collect()
    }

    #[test]
    fn oracle_matches_localize_within_a_few_meters() {
        let w = world();
        let recs = run(&w, StrategyKind::TopN, 5);
        let mut close = 0;
        for (r, f) in recs.iter().zip(&w.data.frames) {
            assert!(!r.fallback, "{}: {}", r.frame_id, r.status);
            // one pixel at the nadir-equivalent ground resolution
            let px_m = f.altitude / f.intrinsics.focal_x;
            assert!(r.error_m < 10.0 * px_m, "{}: {} m", r.frame_id, r.error_m);
            close += (r.error_m < 3.0 * px_m) as usize;
            assert_eq!(r.retrieved.len(), 5);
        }
        assert!(close >= recs.len() - 1, "{close} of {}", recs.len());
    }

    #[test]
    fn reductions_hold_bitwise() {
        let w = world();
        let strip = |mut v: Vec<LocalizationRecord>| {
            v.iter_mut().for_each(|r| r.strategy.clear());
            v
        };
        assert_eq!(strip(run(&w, StrategyKind::TopN, 1)), strip(run(&w, StrategyKind::Top1, 1)));
        let all = w.tiles.len();
        let a = strip(run(&w, StrategyKind::TopN, all));
        let b = strip(run(&w, StrategyKind::MostInliers, 5));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.predicted, x.chosen_tile, x.inlier_count), (y.predicted, y.chosen_tile, y.inlier_count));
        }
    }

    #[test]
    fn selection_breaks_ties_by_score_then_id() {
        let est = |n| PoseEstimate {
            pose: None,
            inlier_count: n,
            inlier_ids: vec![],
            reproj_rmse: 0.0,
            status: PoseStatus::Ok,
        };
        let attempts = vec![
            TileAttempt { tile: 4, matches: 10, estimate: est(10) },
            TileAttempt { tile: 2, matches: 10, estimate: est(10) },
            TileAttempt { tile: 7, matches: 9, estimate: est(9) },
        ];
        let r = RetrievalResult { ranked: vec![(7, 0.9), (4, 0.5), (2, 0.5)] };
        assert_eq!(select_best(&attempts, &r).unwrap().tile, 2);
        let r = RetrievalResult { ranked: vec![(4, 0.6), (2, 0.5), (7, 0.9)] };
        assert_eq!(select_best(&attempts, &r).unwrap().tile, 4);
    }

    #[test]
    fn failure_falls_back_to_top_tile_centre() {
        let w = world();
        let empty = OracleMatcher::default();
        let ctx = LocalizeContext {
            map: &w.map,
            tiles: &w.tiles,
            scorer: Scorer::Embedding(&w.table),
            matcher: &empty,
            config: StrategyConfig::default(),
            label: String::new(),
            noise: String::new(),
        };
        let f = &w.data.frames[0];
        let input = FrameInput {
            id: &f.id,
            index: f.index,
            image: &w.data.images[0],
            intrinsics: &f.intrinsics,
            prior: f.prior(),
            ground_truth: Some(f.camera),
            footprint: Some(f.footprint),
            pitch_deg: f.pitch,
            altitude_m: f.altitude,
        };
        let (r, _) = localize_frame(&ctx, &input).unwrap();
        assert!(r.fallback);
        assert_eq!(r.predicted, w.tiles[r.retrieved[0] as usize].center);
    }

    #[test]
    fn strategy_names_parse() {
        for k in [StrategyKind::Top1, StrategyKind::TopN, StrategyKind::MostInliers, StrategyKind::Direct] {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("best".parse::<StrategyKind>().is_err());
    }
}
