use avl_core::matching::BuiltinMatcher;
use avl_core::metrics::{build_report, MetricsConfig};
use avl_core::pipeline::{run_dataset, run_sweep, SweepSpec};
use avl_core::prior::NoiseSpec;
use avl_core::record::{read_records, write_records};
use avl_core::refmap::{build_gallery, load_refmap, save_refmap};
use avl_core::retrieval::Scorer;
use avl_core::simulator::{
    generate_flight, generate_scene, oracle_embeddings, Dataset, EmbeddingSpec, FlightSpec, HeightField,
    OracleMatchSpec, OracleMatcher, SceneSpec, Terrain,
};
use avl_core::strategies::{LocalizeContext, StrategyConfig, StrategyKind};

fn scene() -> SceneSpec {
    SceneSpec {
        seed: 21,
        extent_m: 400.0,
        gsd: 0.5,
        terrain: Terrain::Urban { density: 0.3, min_height: 5.0, max_height: 25.0 },
        ..Default::default()
    }
}

#[test]
fn saved_map_reloads_identically() {
    let map = generate_scene(&scene()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    save_refmap(&map, p("o.png"), p("d.f32"), p("m.json")).unwrap();
    let back = load_refmap(p("o.png"), p("d.f32"), p("m.json")).unwrap();
    assert_eq!(back.ortho().data(), map.ortho().data());
    assert_eq!(back.dsm().data(), map.dsm().data());
    assert_eq!(back.geot(), map.geot());
}

#[test]
fn urban_flight_localizes_and_is_worker_independent() {
    let map = generate_scene(&scene()).unwrap();
    let field = HeightField::new(&map);
    let flight = FlightSpec {
        seed: 21,
        frames: 6,
        width: 320,
        height: 240,
        altitude: (80.0, 150.0),
        pitch: (60.0, 90.0),
        margin_m: 100.0,
        ..Default::default()
    };
    let frames = generate_flight(&map, &field, &flight).unwrap();
    let tiles = build_gallery(&map, 100.0, 0.5).unwrap();
    let oracle = OracleMatcher::build(&map, &field, &frames, &OracleMatchSpec::default()).unwrap();
    let table = oracle_embeddings(&map, &frames, &tiles, &EmbeddingSpec { length_m: 60.0, ..Default::default() }).unwrap();
    let data = Dataset::render(&map, &field, frames).unwrap();
    let ctx = LocalizeContext {
        map: &map,
        tiles: &tiles,
        scorer: Scorer::Embedding(&table),
        matcher: &oracle,
        config: StrategyConfig::default(),
        label: String::new(),
        noise: String::new(),
    };
    let (one, _) = run_dataset(&ctx, &data, &NoiseSpec::default(), 1).unwrap();
    let (three, _) = run_dataset(&ctx, &data, &NoiseSpec::default(), 3).unwrap();
    assert_eq!(one, three);
    let report = build_report(&one, &MetricsConfig::default()).unwrap();
    assert!(report.accuracy[0].value >= 80.0, "{report:?}");

    // records survive a CSV round trip
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_records(&path, &one).unwrap();
    assert_eq!(read_records(&path).unwrap(), one);

    // the built-in matcher path runs through a sweep with one cell per strategy
    let builtin = BuiltinMatcher::default();
    let ctx = LocalizeContext { matcher: &builtin, ..ctx };
    let sweep = SweepSpec {
        strategies: vec![StrategyKind::Top1, StrategyKind::TopN],
        top_n: vec![3],
        noise: vec![NoiseSpec::default()],
    };
    let (records, timings) = run_sweep(&ctx, &data, &sweep, 2).unwrap();
    assert_eq!(records.len(), 12);
    assert_eq!(timings.len(), 12);
    assert_eq!(records[0].label, "top1/none");
    assert_eq!(records[6].label, "topn/n=3/none");
}
