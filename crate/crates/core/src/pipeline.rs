//! Batch localization over a dataset with a fixed-size worker pool.
//! Output order and content do not depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::{inject_noise, NoiseSpec};
use crate::record::{LocalizationRecord, StageTimings};
use crate::simulator::Dataset;
use crate::strategies::{localize_frame, FrameInput, LocalizeContext, StrategyConfig, StrategyError, StrategyKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("invalid sweep: {0}")]
    Sweep(String),
}

/// Short label for a noise level, e.g. `yaw=30,pitch=0,alt=0`.
pub fn noise_label(n: &NoiseSpec) -> String {
    if n.is_zero() {
        return "none".into();
    }
    format!("yaw={},pitch={},alt={}", n.yaw_std, n.pitch_std, n.altitude_std)
}

/// Localize every frame of `data`, perturbing priors with `noise`.
/// Records come back in frame order.
pub fn run_dataset(
    ctx: &LocalizeContext<'_>,
    data: &Dataset,
    noise: &NoiseSpec,
    workers: usize,
) -> Result<(Vec<LocalizationRecord>, Vec<StageTimings>), PipelineError> {
    noise.validate().map_err(|e| PipelineError::Sweep(e.to_string()))?;
    ctx.config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let out: Vec<_> = pool.install(|| {
        data.frames
            .par_iter()
            .zip(data.images.par_iter())
            .map(|(f, img)| {
                let input = FrameInput {
                    id: &f.id,
                    index: f.index,
                    image: img,
                    intrinsics: &f.intrinsics,
                    prior: inject_noise(&f.prior(), noise, f.index),
                    ground_truth: Some(f.camera),
                    footprint: Some(f.footprint),
                    pitch_deg: f.pitch,
                    altitude_m: f.altitude,
                };
                localize_frame(ctx, &input)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(out.into_iter().unzip())
}

/// Grid of strategy settings and prior-noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub strategies: Vec<StrategyKind>,
    pub top_n: Vec<usize>,
    pub noise: Vec<NoiseSpec>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { strategies: vec![StrategyKind::TopN], top_n: vec![5], noise: vec![NoiseSpec::default()] }
    }
}

/// One sweep cell: a strategy configuration and a noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub config: StrategyConfig,
    pub noise: NoiseSpec,
}

impl SweepSpec {
    /// Expand the grid; `top_n` only multiplies the top-N strategy.
    pub fn cells(&self, base: &StrategyConfig) -> Result<Vec<SweepCell>, PipelineError> {
        if self.strategies.is_empty() || self.noise.is_empty() {
            return Err(PipelineError::Sweep("strategies and noise levels must be non-empty".into()));
        }
        let mut out = Vec::new();
        for n in &self.noise {
            for &kind in &self.strategies {
                let ns: Vec<usize> = if kind == StrategyKind::TopN && !self.top_n.is_empty() {
                    self.top_n.clone()
                } else {
                    vec![base.top_n]
                };
                for top_n in ns {
                    let config = StrategyConfig { kind, top_n, ..*base };
                    let mut label = kind.name().to_string();
                    if kind == StrategyKind::TopN {
                        label.push_str(&format!("/n={top_n}"));
                    }
                    label.push_str(&format!("/{}", noise_label(n)));
                    out.push(SweepCell { label, config, noise: *n });
                }
            }
        }
        Ok(out)
    }
}

/// Run every sweep cell in order and concatenate the records.
pub fn run_sweep(
    base: &LocalizeContext<'_>,
    data: &Dataset,
    sweep: &SweepSpec,
    workers: usize,
) -> Result<(Vec<LocalizationRecord>, Vec<StageTimings>), PipelineError> {
    let mut records = Vec::new();
    let mut timings = Vec::new();
    for cell in sweep.cells(&base.config)? {
        let ctx = LocalizeContext {
            map: base.map,
            tiles: base.tiles,
            scorer: base.scorer,
            matcher: base.matcher,
            config: cell.config,
            label: cell.label.clone(),
            noise: noise_label(&cell.noise),
        };
        log::info!("sweep cell {}", cell.label);
        let (r, t) = run_dataset(&ctx, data, &cell.noise, workers)?;
        records.extend(r);
        timings.extend(t);
    }
    Ok((records, timings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expansion() {
        let s = SweepSpec {
            strategies: vec![StrategyKind::Top1, StrategyKind::TopN],
            top_n: vec![3, 5],
            noise: vec![NoiseSpec::default(), NoiseSpec { yaw_std: 30.0, ..Default::default() }],
        };
        let cells = s.cells(&StrategyConfig::default()).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].label, "top1/none");
        assert_eq!(cells[2].label, "topn/n=5/none");
        assert_eq!(cells[5].label, "topn/n=5/yaw=30,pitch=0,alt=0");
        assert!(SweepSpec { strategies: vec![], ..s }.cells(&StrategyConfig::default()).is_err());
    }
}
