use tristream_core::dataio::pipeline::{evaluate, pseudo_label, train, MaskSource};
use tristream_core::dataio::{generate_synthetic, load_manifest, RunConfig, Split};
use tristream_core::model::{BackboneConfig, ModelConfig};
use tristream_core::semisup::SegmenterConfig;
use tristream_core::trainer::Stage;

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model = ModelConfig {
        backbone: BackboneConfig {
            stage_channels: vec![4],
            blocks_per_stage: 1,
            final_channels: 4,
            input_size: 32,
        },
        infected_size: 16,
        ..Default::default()
    };
    c.trainer.epochs = 2;
    c.trainer.batch_size = 8;
    c.semisup.k = 8;
    c.semisup.epochs_per_round = 1;
    c.semisup.segmenter = SegmenterConfig {
        channels: [2, 2, 2],
        input_size: 16,
        ..Default::default()
    };
    c.with_seed(5)
}

fn run_once(root: &std::path::Path) -> (Vec<u8>, String) {
    generate_synthetic(24, 32, 3, &root.join("data")).unwrap();
    let m = load_manifest(&root.join("data/manifest.csv")).unwrap();
    let cfg = tiny_config();
    let seg = pseudo_label(&m, &cfg.semisup, 32).unwrap().segmenter;
    let out = train(&m, &cfg, &Stage::PROTOCOL, MaskSource::Segmenter(seg), None, |_| {}).unwrap();
    let ck = out.checkpoint();
    (ck.to_bytes().unwrap(), evaluate(&ck, &m, Split::Test).unwrap().render())
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ck_a, rep_a) = run_once(a.path());
    let (ck_b, rep_b) = run_once(b.path());
    assert!(ck_a == ck_b, "checkpoint bytes differ");
    assert_eq!(rep_a, rep_b);
}

#[test]
fn seed_changes_the_weights() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(24, 32, 3, &dir.path().join("data")).unwrap();
    let m = load_manifest(&dir.path().join("data/manifest.csv")).unwrap();
    let seg = pseudo_label(&m, &tiny_config().semisup, 32).unwrap().segmenter;
    let bytes = |seed| {
        let cfg = tiny_config().with_seed(seed);
        let out = train(&m, &cfg, &[Stage::PROTOCOL[0]], MaskSource::Segmenter(seg.clone()), None, |_| {}).unwrap();
        out.checkpoint().to_bytes().unwrap()
    };
    assert!(bytes(1) != bytes(2));
}
