//! Retrieval and localization metrics: Recall@K, SDM@K, PDM@K and A@T,
//! with breakdowns by pitch, noise level and map type.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::UtmCoord;
use crate::record::LocalizationRecord;
use crate::refmap::GalleryTile;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("expected {expected} observations, got {got}")]
    Count { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("no records")]
    Empty,
}

pub const DEFAULT_THRESHOLDS: [f64; 5] = [5.0, 7.0, 10.0, 15.0, 20.0];
pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];
pub const DEFAULT_SDM_S: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdmParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for PdmParams {
    fn default() -> Self {
        Self { lambda: 6.0, alpha: 0.9 }
    }
}

impl PdmParams {
    /// Rejects lambda outside [1, 20] and non-positive alpha; warns when
    /// lambda leaves the recommended [4, 8] band.
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(1.0..=20.0).contains(&self.lambda) {
            return Err(MetricsError::InvalidParams(format!("lambda {} outside [1, 20]", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(MetricsError::InvalidParams(format!("alpha {}", self.alpha)));
        }
        if !(4.0..=8.0).contains(&self.lambda) {
            log::warn!("lambda {} outside the recommended range [4, 8]", self.lambda);
        }
        Ok(())
    }
}

/// One retrieved tile as seen by the overlap metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapObservation {
    /// Tile centre to ground-truth footprint centre, meters.
    pub distance_m: f64,
    pub width_px: f64,
    /// Map resolution, m/px.
    pub resolution: f64,
}

impl OverlapObservation {
    pub fn ratio(&self) -> f64 {
        self.distance_m / (self.width_px * self.resolution)
    }
}

/// Reversed sigmoid of the overlap ratio: 1 at perfect overlap, 0.5 at
/// `R = alpha`, tending to 0 as the ratio grows.
pub fn pdm_score(r: f64, params: &PdmParams) -> f64 {
    1.0 / (1.0 + (params.lambda * (r - params.alpha)).exp())
}

fn rank_weighted(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let k = values.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in values.enumerate() {
        let w = (k - i) as f64;
        num += w * v;
        den += w;
    }
    num / den
}

pub fn pdm_at_k(obs: &[OverlapObservation], params: &PdmParams, k: usize) -> Result<f64, MetricsError> {
    if obs.len() != k || k == 0 {
        return Err(MetricsError::Count { expected: k, got: obs.len() });
    }
    Ok(rank_weighted(obs.iter().map(|o| pdm_score(o.ratio(), params))))
}

pub fn sdm_at_k(distances: &[f64], s: f64, k: usize) -> Result<f64, MetricsError> {
    if !(s > 0.0) {
        return Err(MetricsError::InvalidParams(format!("decay {s}")));
    }
    if distances.len() != k || k == 0 {
        return Err(MetricsError::Count { expected: k, got: distances.len() });
    }
    Ok(rank_weighted(distances.iter().map(|d| (-s * d).exp())))
}

pub fn recall_at_k(ranked: &[u32], gt: u32, k: usize) -> bool {
    ranked.iter().take(k).any(|&id| id == gt)
}

/// Percentage of errors at most `t` meters.
pub fn accuracy_at_t(errors: &[f64], t: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = errors.iter().filter(|&&e| e <= t).count();
    Ok(100.0 * hits as f64 / errors.len() as f64)
}

/// Tile whose centre is nearest `footprint`; ties go to the lower id.
pub fn ground_truth_tile(tiles: &[GalleryTile], footprint: &UtmCoord) -> Option<u32> {
    tiles
        .iter()
        .map(|t| {
            let d = (t.center.easting - footprint.easting).hypot(t.center.northing - footprint.northing);
            (d, t.id)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

pub fn default_pitch_bins() -> Vec<(f64, f64)> {
    vec![(20.0, 30.0), (30.0, 45.0), (45.0, 60.0), (60.0, 75.0), (75.0, 90.0)]
}

/// Index of the bin holding `pitch`; bins are half-open except the last.
pub fn pitch_bin(bins: &[(f64, f64)], pitch: f64) -> Option<usize> {
    let last = bins.len().checked_sub(1)?;
    bins.iter().position(|&(lo, hi)| pitch >= lo && pitch < hi).or_else(|| {
        let (lo, hi) = bins[last];
        (pitch >= lo && pitch <= hi).then_some(last)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub pdm: PdmParams,
    pub sdm_s: f64,
    pub thresholds: Vec<f64>,
    pub ks: Vec<usize>,
    pub pitch_bins: Vec<(f64, f64)>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pdm: PdmParams::default(),
            sdm_s: DEFAULT_SDM_S,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
            pitch_bins: default_pitch_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub group: String,
    pub frames: usize,
    pub accuracy: Vec<Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub fallbacks: usize,
    pub accuracy: Vec<Rate>,
    pub recall: Vec<Rate>,
    pub sdm: Vec<Rate>,
    pub pdm: Vec<Rate>,
    pub by_pitch: Vec<BreakdownRow>,
    pub by_noise: Vec<BreakdownRow>,
    pub by_map: Vec<BreakdownRow>,
    pub by_label: Vec<BreakdownRow>,
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn accuracy_rates(errors: &[f64], thresholds: &[f64]) -> Vec<Rate> {
    thresholds
        .iter()
        .map(|&t| Rate { key: format!("A@{}m", fmt_num(t)), value: accuracy_at_t(errors, t).unwrap_or(0.0) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakdownAxis {
    Pitch,
    Noise,
    MapLabel,
    Label,
}

/// Accuracy per group along `axis`; empty groups are omitted.
pub fn breakdown(
    records: &[LocalizationRecord],
    axis: BreakdownAxis,
    thresholds: &[f64],
    pitch_bins: &[(f64, f64)],
) -> Vec<BreakdownRow> {
    // keep first-seen order for labels, bin order for pitch
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    if axis == BreakdownAxis::Pitch {
        groups = pitch_bins.iter().map(|(lo, hi)| (format!("[{},{})", fmt_num(*lo), fmt_num(*hi)), Vec::new())).collect();
        if let Some(last) = groups.last_mut() {
            last.0.replace_range(last.0.len() - 1.., "]");
        }
    }
    for r in records {
        let key = match axis {
            BreakdownAxis::Pitch => match pitch_bin(pitch_bins, r.pitch_deg) {
                Some(i) => {
                    groups[i].1.push(r.error_m);
                    continue;
                }
                None => continue,
            },
            BreakdownAxis::Noise => r.noise.clone(),
            BreakdownAxis::MapLabel => r.map_label.clone(),
            BreakdownAxis::Label => r.label.clone(),
        };
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(r.error_m),
            None => groups.push((key, vec![r.error_m])),
        }
    }
    groups
        .into_iter()
        .filter(|g| !g.1.is_empty())
        .map(|(group, errs)| BreakdownRow { group, frames: errs.len(), accuracy: accuracy_rates(&errs, thresholds) })
        .collect()
}

/// Mean retrieval metrics over frames that carry retrieval results. When a
/// gallery is smaller than K the available ranks are used.
fn retrieval_rates(records: &[LocalizationRecord], cfg: &MetricsConfig) -> (Vec<Rate>, Vec<Rate>, Vec<Rate>) {
    let with: Vec<&LocalizationRecord> = records.iter().filter(|r| !r.retrieved.is_empty()).collect();
    let mut recall = Vec::new();
    let mut sdm = Vec::new();
    let mut pdm = Vec::new();
    if with.is_empty() {
        return (recall, sdm, pdm);
    }
    let n = with.len() as f64;
    for &k in &cfg.ks {
        let mut rc = 0.0;
        let mut sd = 0.0;
        let mut pd = 0.0;
        for r in &with {
            let kk = k.min(r.retrieved.len()).min(r.retrieved_dist_m.len());
            if let Some(gt) = r.gt_tile {
                rc += recall_at_k(&r.retrieved, gt, k) as u8 as f64;
            }
            let d = &r.retrieved_dist_m[..kk];
            sd += sdm_at_k(d, cfg.sdm_s, kk).unwrap_or(0.0);
            let obs: Vec<OverlapObservation> = d
                .iter()
                .map(|&distance_m| OverlapObservation {
                    distance_m,
                    width_px: r.tile_width_px as f64,
                    resolution: r.map_gsd,
                })
                .collect();
            pd += pdm_at_k(&obs, &cfg.pdm, kk).unwrap_or(0.0);
        }
        recall.push(Rate { key: format!("R@{k}"), value: 100.0 * rc / n });
        sdm.push(Rate { key: format!("SDM@{k}"), value: sd / n });
        pdm.push(Rate { key: format!("PDM@{k}"), value: pd / n });
    }
    (recall, sdm, pdm)
}

pub fn build_report(records: &[LocalizationRecord], cfg: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    cfg.pdm.validate()?;
    let errors: Vec<f64> = records.iter().map(|r| r.error_m).collect();
    let (recall, sdm, pdm) = retrieval_rates(records, cfg);
    let bd = |axis| breakdown(records, axis, &cfg.thresholds, &cfg.pitch_bins);
    Ok(MetricsReport {
        frames: records.len(),
        fallbacks: records.iter().filter(|r| r.fallback).count(),
        accuracy: accuracy_rates(&errors, &cfg.thresholds),
        recall,
        sdm,
        pdm,
        by_pitch: bd(BreakdownAxis::Pitch),
        by_noise: bd(BreakdownAxis::Noise),
        by_map: bd(BreakdownAxis::MapLabel),
        by_label: bd(BreakdownAxis::Label),
    })
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948"];

/// Grouped bar chart of accuracy per breakdown row.
pub fn bar_chart_svg(title: &str, rows: &[BreakdownRow]) -> String {
    let (w, h, left, bottom, top) = (720.0, 360.0, 50.0, 50.0, 40.0);
    let keys: Vec<&str> = rows.first().map(|r| r.accuracy.iter().map(|a| a.key.as_str()).collect()).unwrap_or_default();
    let plot_h = h - bottom - top;
    let group_w = (w - left - 20.0) / rows.len().max(1) as f64;
    let bar_w = group_w * 0.8 / keys.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    axes(&mut s, w, h, left, bottom, top);
    for (gi, row) in rows.iter().enumerate() {
        let gx = left + gi as f64 * group_w + group_w * 0.1;
        for (ki, a) in row.accuracy.iter().enumerate() {
            let bh = plot_h * a.value / 100.0;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                gx + ki as f64 * bar_w,
                h - bottom - bh,
                bar_w,
                bh,
                PALETTE[ki % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{} (n={})</text>"#,
            left + (gi as f64 + 0.5) * group_w,
            h - bottom + 16.0,
            escape(&row.group),
            row.frames
        );
    }
    legend(&mut s, &keys, w);
    s.push_str("</svg>\n");
    s
}

/// One line per threshold across breakdown rows (e.g. noise levels).
pub fn line_chart_svg(title: &str, rows: &[BreakdownRow]) -> String {
    let (w, h, left, bottom, top) = (720.0, 360.0, 50.0, 50.0, 40.0);
    let keys: Vec<&str> = rows.first().map(|r| r.accuracy.iter().map(|a| a.key.as_str()).collect()).unwrap_or_default();
    let plot_h = h - bottom - top;
    let step = (w - left - 40.0) / (rows.len().max(2) - 1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    axes(&mut s, w, h, left, bottom, top);
    for (ki, _) in keys.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                r.accuracy.get(ki).map(|a| format!("{:.1},{:.1}", left + 20.0 + i as f64 * step, h - bottom - plot_h * a.value / 100.0))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            PALETTE[ki % PALETTE.len()]
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            left + 20.0 + i as f64 * step,
            h - bottom + 16.0,
            escape(&r.group)
        );
    }
    legend(&mut s, &keys, w);
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, w: f64, h: f64, left: f64, bottom: f64, top: f64) {
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - bottom, w - 10.0, h - bottom);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom);
    for p in [0, 25, 50, 75, 100] {
        let y = h - bottom - (h - bottom - top) * p as f64 / 100.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{p}%</text>"#, left - 4.0, y + 4.0);
    }
}

fn legend(s: &mut String, keys: &[&str], w: f64) {
    for (i, k) in keys.iter().enumerate() {
        let x = w - 110.0;
        let y = 40.0 + i as f64 * 16.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(k));
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy table keyed by group then threshold, convenient for tests.
pub fn rows_to_map(rows: &[BreakdownRow]) -> BTreeMap<String, BTreeMap<String, f64>> {
    rows.iter()
        .map(|r| (r.group.clone(), r.accuracy.iter().map(|a| (a.key.clone(), a.value)).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::test_support::record;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p() -> PdmParams {
        PdmParams::default()
    }

    #[test]
    fn pdm_reference_values() {
        assert_eq!(pdm_score(0.9, &p()), 0.5);
        let x: f64 = -5.4;
        let expect = (-x).exp() / (1.0 + (-x).exp());
        assert_relative_eq!(pdm_score(0.0, &p()), expect, epsilon = 1e-12);
        assert_relative_eq!(pdm_score(0.0, &p()), 0.9955037268, epsilon = 1e-9);
        assert!(pdm_score(1e6, &p()) < 1e-300);
    }

    #[test]
    fn pdm_at_k_examples() {
        let o = |d: f64| OverlapObservation { distance_m: d, width_px: 100.0, resolution: 1.0 };
        let v = pdm_at_k(&[o(0.0), o(1e9)], &p(), 2).unwrap();
        assert_relative_eq!(v, 2.0 * pdm_score(0.0, &p()) / 3.0, epsilon = 1e-15);
        assert_relative_eq!(v, 0.6636691512, epsilon = 1e-9);
        assert_eq!(pdm_at_k(&[o(50.0)], &p(), 1).unwrap(), pdm_score(0.5, &p()));
        assert!(matches!(pdm_at_k(&[o(1.0)], &p(), 2), Err(MetricsError::Count { .. })));
    }

    #[test]
    fn zero_overlap_bound() {
        // diagonal of a 4:3 frame normalized by its short side
        let l = (1.0f64 + (4.0f64 / 3.0).powi(2)).sqrt();
        assert!((l - 1.67).abs() < 0.01);
        assert!(pdm_score(l, &p()) < 0.01);
        assert!(pdm_score(1.67, &p()) < 0.01);
    }

    #[test]
    fn sdm_examples() {
        assert_eq!(sdm_at_k(&[0.0, 0.0, 0.0], 0.01, 3).unwrap(), 1.0);
        assert_relative_eq!(sdm_at_k(&[2f64.ln() / 0.01], 0.01, 1).unwrap(), 0.5, epsilon = 1e-15);
        assert!(sdm_at_k(&[1e9], 0.01, 1).unwrap() < 1e-300);
        assert!(sdm_at_k(&[1.0], 0.01, 2).is_err());
        assert!(sdm_at_k(&[1.0], 0.0, 1).is_err());
    }

    #[test]
    fn recall_examples() {
        let ranked = [7, 2, 9, 4, 1];
        assert!(recall_at_k(&ranked, 7, 1));
        assert!(!recall_at_k(&ranked, 4, 3));
        assert!(recall_at_k(&ranked, 4, 5));
    }

    #[test]
    fn accuracy_examples() {
        let e = [1.0, 6.0, 15.0];
        assert_relative_eq!(accuracy_at_t(&e, 5.0).unwrap(), 100.0 / 3.0);
        assert_eq!(accuracy_at_t(&e, 20.0).unwrap(), 100.0);
        assert_eq!(accuracy_at_t(&[1e6, 2e6], 5.0).unwrap(), 0.0);
        assert_eq!(accuracy_at_t(&[], 5.0), Err(MetricsError::Empty));
    }

    #[test]
    fn lambda_band() {
        assert!(PdmParams { lambda: 0.5, alpha: 0.9 }.validate().is_err());
        assert!(PdmParams { lambda: 21.0, alpha: 0.9 }.validate().is_err());
        assert!(PdmParams { lambda: 2.0, alpha: 0.9 }.validate().is_ok());
        assert!(PdmParams { lambda: 6.0, alpha: 0.0 }.validate().is_err());
    }

    #[test]
    fn pitch_binning() {
        let bins = default_pitch_bins();
        assert_eq!(pitch_bin(&bins, 20.0), Some(0));
        assert_eq!(pitch_bin(&bins, 30.0), Some(1));
        assert_eq!(pitch_bin(&bins, 90.0), Some(4));
        assert_eq!(pitch_bin(&bins, 19.9), None);
        let recs: Vec<_> = (0..4).map(|i| record(i, i as f64, 90.0)).collect();
        let rows = breakdown(&recs, BreakdownAxis::Pitch, &[5.0, 10.0, 20.0], &bins);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group, "[75,90]");
        assert_eq!(rows[0].frames, 4);
    }

    #[test]
    fn identical_noise_rows() {
        let mut recs: Vec<_> = (0..6).map(|i| record(i, i as f64 * 3.0, 50.0)).collect();
        for (i, r) in recs.iter_mut().enumerate() {
            r.noise = if i < 3 { "yaw=0".into() } else { "yaw=30".into() };
        }
        for i in 3..6 {
            recs[i].error_m = recs[i - 3].error_m;
        }
        let rows = breakdown(&recs, BreakdownAxis::Noise, &[5.0, 10.0], &default_pitch_bins());
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].accuracy, rows[1].accuracy);
    }

    #[test]
    fn report_shape() {
        let recs: Vec<_> = (0..10).map(|i| record(i, i as f64 * 2.5, 25.0 + 6.0 * i as f64)).collect();
        let rep = build_report(&recs, &MetricsConfig::default()).unwrap();
        let keys: Vec<&str> = rep.accuracy.iter().map(|a| a.key.as_str()).collect();
        assert_eq!(keys, ["A@5m", "A@7m", "A@10m", "A@15m", "A@20m"]);
        assert_eq!(rep.recall.len(), 3);
        assert!(rep.pdm.iter().chain(&rep.sdm).all(|r| (0.0..=1.0).contains(&r.value)));
        assert!(build_report(&[], &MetricsConfig::default()).is_err());
        let svg = bar_chart_svg("A@T by pitch", &rep.by_pitch);
        assert!(svg.starts_with("<svg") && svg.contains("[75,90]"));
        assert!(line_chart_svg("noise", &rep.by_noise).contains("polyline"));
    }

    proptest! {
        #[test]
        fn pdm_decreasing(r in 0.0f64..5.0, dr in 1e-6f64..1.0) {
            prop_assert!(pdm_score(r + dr, &p()) < pdm_score(r, &p()));
            let s = pdm_score(r, &p());
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn pdm_resolution_invariant(d in proptest::collection::vec(0.0f64..300.0, 1..6), c in 0.1f64..10.0) {
            let k = d.len();
            let a: Vec<_> = d.iter().map(|&d| OverlapObservation { distance_m: d, width_px: 400.0, resolution: 0.25 }).collect();
            let b: Vec<_> = d.iter().map(|&d| OverlapObservation { distance_m: d, width_px: 400.0 * c, resolution: 0.25 / c }).collect();
            let (x, y) = (pdm_at_k(&a, &p(), k).unwrap(), pdm_at_k(&b, &p(), k).unwrap());
            prop_assert!((x - y).abs() <= 1e-12);
        }

        #[test]
        fn constant_ratio_is_weighted_mean(r in 0.0f64..4.0, k in 1usize..8) {
            let o = OverlapObservation { distance_m: r * 100.0, width_px: 100.0, resolution: 1.0 };
            let v = pdm_at_k(&vec![o; k], &p(), k).unwrap();
            prop_assert!((v - pdm_score(o.ratio(), &p())).abs() < 1e-12);
        }

        #[test]
        fn accuracy_monotone(e in proptest::collection::vec(0.0f64..50.0, 1..30), t in 0.0f64..40.0, dt in 0.0f64..10.0) {
            prop_assert!(accuracy_at_t(&e, t + dt).unwrap() >= accuracy_at_t(&e, t).unwrap());
        }

        #[test]
        fn recall_monotone(gt in 0u32..10, k in 1usize..9) {
            let ranked: Vec<u32> = (0..10).rev().collect();
            prop_assert!(recall_at_k(&ranked, gt, k + 1) >= recall_at_k(&ranked, gt, k));
        }
    }
}
