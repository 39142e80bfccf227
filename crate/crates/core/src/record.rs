//! Per-frame localization records and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::UtmCoord;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Csv { path: String, msg: String },
}

/// Outcome of localizing one frame. `error_m` always equals the planar
/// distance between `predicted` and `ground_truth`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationRecord {
    pub frame_id: String,
    pub frame_index: u64,
    /// Sweep cell or run label; empty for single runs.
    pub label: String,
    pub strategy: String,
    pub predicted: UtmCoord,
    pub ground_truth: UtmCoord,
    pub error_m: f64,
    pub chosen_tile: Option<u32>,
    pub inlier_count: usize,
    pub fallback: bool,
    pub status: String,
    pub pitch_deg: f64,
    pub altitude_m: f64,
    pub map_label: String,
    /// Noise level of the prior used for this frame, e.g. `yaw=30`.
    pub noise: String,
    /// Top-ranked retrieval ids, best first; empty without retrieval.
    pub retrieved: Vec<u32>,
    /// Distance from each retrieved tile centre to the footprint centre, m.
    pub retrieved_dist_m: Vec<f64>,
    pub tile_width_px: usize,
    pub map_gsd: f64,
    pub gt_tile: Option<u32>,
}

/// Wall-clock seconds per stage. Kept out of the records so that record
/// files are reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub frame_id: String,
    pub label: String,
    pub align_s: f64,
    pub retrieval_s: f64,
    pub matching_s: f64,
    pub pose_s: f64,
    pub tiles_matched: usize,
    /// Downsampling factor applied to the map by the direct strategy.
    pub direct_downsample: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    frame_id: String,
    frame_index: u64,
    label: String,
    strategy: String,
    zone: String,
    pred_easting: f64,
    pred_northing: f64,
    gt_easting: f64,
    gt_northing: f64,
    error_m: f64,
    chosen_tile: Option<u32>,
    inlier_count: usize,
    fallback: bool,
    status: String,
    pitch_deg: f64,
    altitude_m: f64,
    map_label: String,
    noise: String,
    retrieved: String,
    retrieved_dist_m: String,
    tile_width_px: usize,
    map_gsd: f64,
    gt_tile: Option<u32>,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|x| x.parse::<T>().map_err(|_| format!("bad list element {x:?}"))).collect()
}

fn parse_zone(s: &str) -> Result<crate::geo::UtmZone, String> {
    let (num, hemi) = s.split_at(s.len().saturating_sub(1));
    let n: u8 = num.parse().map_err(|_| format!("bad zone {s:?}"))?;
    let h = match hemi {
        "N" => crate::geo::Hemisphere::North,
        "S" => crate::geo::Hemisphere::South,
        _ => return Err(format!("bad zone {s:?}")),
    };
    crate::geo::UtmZone::new(n, h).map_err(|e| e.to_string())
}

impl From<&LocalizationRecord> for Row {
    fn from(r: &LocalizationRecord) -> Self {
        Row {
            frame_id: r.frame_id.clone(),
            frame_index: r.frame_index,
            label: r.label.clone(),
            strategy: r.strategy.clone(),
            zone: r.ground_truth.zone.to_string(),
            pred_easting: r.predicted.easting,
            pred_northing: r.predicted.northing,
            gt_easting: r.ground_truth.easting,
            gt_northing: r.ground_truth.northing,
            error_m: r.error_m,
            chosen_tile: r.chosen_tile,
            inlier_count: r.inlier_count,
            fallback: r.fallback,
            status: r.status.clone(),
            pitch_deg: r.pitch_deg,
            altitude_m: r.altitude_m,
            map_label: r.map_label.clone(),
            noise: r.noise.clone(),
            retrieved: join(&r.retrieved),
            retrieved_dist_m: join(&r.retrieved_dist_m),
            tile_width_px: r.tile_width_px,
            map_gsd: r.map_gsd,
            gt_tile: r.gt_tile,
        }
    }
}

impl TryFrom<Row> for LocalizationRecord {
    type Error = String;

    fn try_from(r: Row) -> Result<Self, String> {
        let zone = parse_zone(&r.zone)?;
        let coord = |e: f64, n: f64| UtmCoord { easting: e, northing: n, zone };
        Ok(LocalizationRecord {
            frame_id: r.frame_id,
            frame_index: r.frame_index,
            label: r.label,
            strategy: r.strategy,
            predicted: coord(r.pred_easting, r.pred_northing),
            ground_truth: coord(r.gt_easting, r.gt_northing),
            error_m: r.error_m,
            chosen_tile: r.chosen_tile,
            inlier_count: r.inlier_count,
            fallback: r.fallback,
            status: r.status,
            pitch_deg: r.pitch_deg,
            altitude_m: r.altitude_m,
            map_label: r.map_label,
            noise: r.noise,
            retrieved: split(&r.retrieved)?,
            retrieved_dist_m: split(&r.retrieved_dist_m)?,
            tile_width_px: r.tile_width_px,
            map_gsd: r.map_gsd,
            gt_tile: r.gt_tile,
        })
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[LocalizationRecord]) -> Result<(), RecordError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| RecordError::Csv { path: p.clone(), msg: e.to_string() })?;
    for r in records {
        w.serialize(Row::from(r)).map_err(|e| RecordError::Csv { path: p.clone(), msg: e.to_string() })?;
    }
    w.flush().map_err(|source| RecordError::Io { path: p, source })
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<LocalizationRecord>, RecordError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| RecordError::Csv { path: p.clone(), msg: e.to_string() })?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| RecordError::Csv { path: p.clone(), msg: format!("row {}: {e}", i + 1) })?;
        out.push(
            LocalizationRecord::try_from(row)
                .map_err(|msg| RecordError::Csv { path: p.clone(), msg: format!("row {}: {msg}", i + 1) })?,
        );
    }
    Ok(out)
}

pub fn write_timings(path: impl AsRef<Path>, timings: &[StageTimings]) -> Result<(), RecordError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| RecordError::Csv { path: p.clone(), msg: e.to_string() })?;
    for t in timings {
        w.serialize(t).map_err(|e| RecordError::Csv { path: p.clone(), msg: e.to_string() })?;
    }
    w.flush().map_err(|source| RecordError::Io { path: p, source })
}


#[cfg(test)]
mod tests {
    use super::test_support::record;
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut recs = vec![record(0, 1.25, 90.0), record(1, 0.1 + 0.2, 33.3)];
        recs[1].retrieved.clear();
        recs[1].retrieved_dist_m.clear();
        recs[1].chosen_tile = None;
        write_records(&p, &recs).unwrap();
        assert_eq!(read_records(&p).unwrap(), recs);
    }

    #[test]
    fn bad_rows_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "frame_id,oops\nx,1\n").unwrap();
        assert!(read_records(&p).is_err());
    }
}
