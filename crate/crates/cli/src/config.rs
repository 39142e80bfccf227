//! Run configuration: one TOML or JSON file, with command-line flags taking
//! precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use avl_core::metrics::MetricsConfig;
use avl_core::pipeline::SweepSpec;
use avl_core::prior::NoiseSpec;
use avl_core::refmap::DegradeParams;
use avl_core::retrieval::ScorerKind;
use avl_core::simulator::{EmbeddingSpec, FlightSpec, OracleMatchSpec, SceneSpec};
use avl_core::strategies::StrategyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    #[default]
    Builtin,
    Imported,
}

impl std::str::FromStr for MatcherKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "builtin" => Ok(Self::Builtin),
            "imported" => Ok(Self::Imported),
            other => Err(format!("unknown matcher {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GalleryConfig {
    pub footprint_m: f64,
    pub overlap: f64,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        Self { footprint_m: 200.0, overlap: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OracleConfig {
    pub matches: OracleMatchSpec,
    pub embeddings: EmbeddingSpec,
}

/// Reference map files; `dir` implies `ortho.png`, `dsm.f32` and `map.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MapPaths {
    pub dir: Option<PathBuf>,
    pub ortho: Option<PathBuf>,
    pub dsm: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub map: MapPaths,
    pub scene: Option<SceneSpec>,
    /// When set, `gen-scene` also writes a degraded, satellite-labelled copy.
    pub degrade: Option<DegradeParams>,
    pub flight: FlightSpec,
    pub oracle: OracleConfig,
    pub gallery: GalleryConfig,
    /// Frame manifest written by `render-flight`.
    pub manifest: Option<PathBuf>,
    /// Gallery JSON written by `build-gallery`; rebuilt from `gallery` when absent.
    pub gallery_file: Option<PathBuf>,
    pub scorer: ScorerKind,
    pub embeddings: Option<PathBuf>,
    pub matcher: MatcherKind,
    /// Correspondence index for the imported matcher.
    pub matches: Option<PathBuf>,
    pub strategy: StrategyConfig,
    pub noise: NoiseSpec,
    pub sweep: SweepSpec,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            workers: 1,
            map: MapPaths::default(),
            scene: None,
            degrade: None,
            flight: FlightSpec::default(),
            oracle: OracleConfig::default(),
            gallery: GalleryConfig::default(),
            manifest: None,
            gallery_file: None,
            scorer: ScorerKind::Ncc,
            embeddings: None,
            matcher: MatcherKind::Builtin,
            matches: None,
            strategy: StrategyConfig::default(),
            noise: NoiseSpec::default(),
            sweep: SweepSpec::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(x) = p.as_mut() {
        if x.is_relative() {
            *x = base.join(&*x);
        }
    }
}

impl RunConfig {
    /// Parse a `.toml` or `.json` file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.out,
            &mut cfg.map.dir,
            &mut cfg.map.ortho,
            &mut cfg.map.dsm,
            &mut cfg.map.sidecar,
            &mut cfg.manifest,
            &mut cfg.gallery_file,
            &mut cfg.embeddings,
            &mut cfg.matches,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    /// Push the global seed into every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        if let Some(s) = self.scene.as_mut() {
            s.seed = seed;
        }
        if let Some(d) = self.degrade.as_mut() {
            d.seed = seed;
        }
        self.flight.seed = seed;
        self.oracle.matches.seed = seed;
        self.oracle.embeddings.seed = seed;
        self.strategy.ransac.seed = seed;
        self.noise.seed = seed;
        for n in &mut self.sweep.noise {
            n.seed = seed;
        }
    }

    /// Orthophoto, DSM and sidecar paths.
    pub fn map_files(&self) -> Result<(PathBuf, PathBuf, PathBuf)> {
        let m = &self.map;
        let pick = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
            explicit.clone().or_else(|| m.dir.as_ref().map(|d| d.join(name)))
        };
        match (pick(&m.ortho, "ortho.png"), pick(&m.dsm, "dsm.f32"), pick(&m.sidecar, "map.json")) {
            (Some(o), Some(d), Some(s)) => {
                for p in [&o, &d, &s] {
                    if !p.exists() {
                        bail!("map file {} does not exist", p.display());
                    }
                }
                Ok((o, d, s))
            }
            _ => bail!("no reference map given: set --map or [map] in the config"),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out.clone().context("no output location: pass --out or set `out` in the config")
    }
}
