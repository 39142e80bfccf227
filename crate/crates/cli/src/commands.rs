use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use avl_core::matching::{BuiltinMatcher, ImportedMatcher, MatchIndex, Matcher};
use avl_core::metrics::{bar_chart_svg, build_report, line_chart_svg, MetricsReport};
use avl_core::pipeline::{noise_label, run_dataset, run_sweep};
use avl_core::record::{read_records, write_records, write_timings, LocalizationRecord, StageTimings};
use avl_core::refmap::{build_gallery as tile_map, degrade_map, load_refmap, save_refmap, GalleryTile, RefMap25D};
use avl_core::retrieval::{EmbeddingTable, Scorer, ScorerKind};
use avl_core::simulator::{
    export_oracle_matches, generate_flight, generate_scene, oracle_embeddings, write_manifest, Dataset, HeightField,
    OracleMatcher,
};
use avl_core::strategies::LocalizeContext;

use crate::config::{MatcherKind, RunConfig};

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_map(cfg: &RunConfig) -> Result<RefMap25D> {
    let (o, d, s) = cfg.map_files()?;
    Ok(load_refmap(o, d, s)?)
}

fn gallery(cfg: &RunConfig, map: &RefMap25D) -> Result<Vec<GalleryTile>> {
    match &cfg.gallery_file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let tiles: Vec<GalleryTile> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if tiles.is_empty() {
                bail!("gallery {} is empty", p.display());
            }
            Ok(tiles)
        }
        None => Ok(tile_map(map, cfg.gallery.footprint_m, cfg.gallery.overlap)?),
    }
}

pub fn gen_scene(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    let spec = cfg.scene.clone().unwrap_or_default();
    let map = generate_scene(&spec)?;
    create_dir(&out)?;
    save_refmap(&map, out.join("ortho.png"), out.join("dsm.f32"), out.join("map.json"))?;
    if let Some(d) = &cfg.degrade {
        let sat = degrade_map(&map, d)?;
        let dir = out.join("satellite");
        create_dir(&dir)?;
        save_refmap(&sat, dir.join("ortho.png"), dir.join("dsm.f32"), dir.join("map.json"))?;
    }
    println!("scene {0}x{0} px written to {1}", map.geot().cols, out.display());
    Ok(())
}

pub fn render_flight(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    let map = load_map(cfg)?;
    let field = HeightField::new(&map);
    let frames = generate_flight(&map, &field, &cfg.flight)?;
    create_dir(&out)?;
    let manifest = write_manifest(&out, &map, &field, &frames)?;
    let oracle = OracleMatcher::build(&map, &field, &frames, &cfg.oracle.matches)?;
    export_oracle_matches(&out.join("matches"), &oracle)?;
    let tiles = tile_map(&map, cfg.gallery.footprint_m, cfg.gallery.overlap)?;
    write_json(&out.join("gallery.json"), &tiles)?;
    oracle_embeddings(&map, &frames, &tiles, &cfg.oracle.embeddings)?
        .write_jsonl(out.join("embeddings.jsonl"))?;
    println!("{} frames written to {}", manifest.frames.len(), out.display());
    Ok(())
}

pub fn build_gallery(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    let map = load_map(cfg)?;
    let tiles = tile_map(&map, cfg.gallery.footprint_m, cfg.gallery.overlap)?;
    let path = if out.extension().is_some_and(|e| e == "json") {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        out
    } else {
        create_dir(&out)?;
        out.join("gallery.json")
    };
    write_json(&path, &tiles)?;
    println!("{} tiles written to {}", tiles.len(), path.display());
    Ok(())
}

/// Write `summary.json` and the accuracy charts for `records` into `out`.
fn write_summary(out: &Path, records: &[LocalizationRecord], cfg: &RunConfig) -> Result<MetricsReport> {
    let report = build_report(records, &cfg.metrics)?;
    write_json(&out.join("summary.json"), &report)?;
    let charts = [
        ("accuracy_by_pitch.svg", bar_chart_svg("Accuracy by pitch", &report.by_pitch)),
        ("accuracy_by_label.svg", bar_chart_svg("Accuracy by run", &report.by_label)),
        ("accuracy_by_noise.svg", line_chart_svg("Accuracy by prior noise", &report.by_noise)),
    ];
    for (name, svg) in charts {
        let p = out.join(name);
        fs::write(&p, svg).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(report)
}

fn print_report(report: &MetricsReport) {
    let rates: Vec<String> = report.accuracy.iter().map(|r| format!("{}={:.3}", r.key, r.value)).collect();
    println!("{} frames, {} fallbacks, {}", report.frames, report.fallbacks, rates.join(" "));
}

fn outputs(out: &Path, records: &[LocalizationRecord], timings: &[StageTimings], cfg: &RunConfig) -> Result<()> {
    create_dir(out)?;
    write_records(out.join("records.csv"), records)?;
    write_timings(out.join("timings.csv"), timings)?;
    let report = write_summary(out, records, cfg)?;
    print_report(&report);
    Ok(())
}

fn require(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match p {
        Some(p) if p.exists() => Ok(p.clone()),
        Some(p) => bail!("{what} {} does not exist", p.display()),
        None => bail!("no {what} given"),
    }
}

pub fn localize(cfg: &RunConfig, sweep: bool) -> Result<()> {
    let out = cfg.out_dir()?;
    cfg.strategy.validate()?;
    cfg.metrics.pdm.validate()?;
    if !(cfg.metrics.sdm_s > 0.0 && cfg.metrics.sdm_s.is_finite()) {
        bail!("sdm_s must be positive, got {}", cfg.metrics.sdm_s);
    }
    if cfg.workers == 0 {
        bail!("workers must be at least 1");
    }
    let embeddings = match cfg.scorer {
        ScorerKind::Embedding => {
            let p = require(&cfg.embeddings, "embeddings file (required by the embedding scorer)")?;
            Some(EmbeddingTable::load_jsonl(&p)?)
        }
        _ => None,
    };
    let matcher: Box<dyn Matcher> = match cfg.matcher {
        MatcherKind::Builtin => Box::new(BuiltinMatcher { config: cfg.strategy.matcher }),
        MatcherKind::Imported => {
            let p = require(&cfg.matches, "match index (required by the imported matcher)")?;
            Box::new(ImportedMatcher { index: MatchIndex::load(&p)? })
        }
    };
    let manifest = require(&cfg.manifest, "frame manifest")?;
    let map = load_map(cfg)?;
    let tiles = gallery(cfg, &map)?;
    let data = Dataset::load(&manifest)?;
    let scorer = match (cfg.scorer, &embeddings) {
        (ScorerKind::Ncc, _) => Scorer::ncc(),
        (ScorerKind::Mi, _) => Scorer::mi(),
        (ScorerKind::Embedding, Some(t)) => Scorer::Embedding(t),
        (ScorerKind::Embedding, None) => unreachable!("embeddings loaded above"),
    };
    let ctx = LocalizeContext {
        map: &map,
        tiles: &tiles,
        scorer,
        matcher: matcher.as_ref(),
        config: cfg.strategy,
        label: String::new(),
        noise: noise_label(&cfg.noise),
    };
    let (records, timings) = if sweep {
        run_sweep(&ctx, &data, &cfg.sweep, cfg.workers)?
    } else {
        run_dataset(&ctx, &data, &cfg.noise, cfg.workers)?
    };
    outputs(&out, &records, &timings, cfg)
}

pub fn report(cfg: &RunConfig, records_path: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    let records = read_records(records_path)?;
    if records.is_empty() {
        bail!("{} holds no records", records_path.display());
    }
    create_dir(&out)?;
    let report = write_summary(&out, &records, cfg)?;
    print_report(&report);
    Ok(())
}
