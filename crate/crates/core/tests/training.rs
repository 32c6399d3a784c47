use std::time::Instant;

use autous_core::ctu_net::{checkpoint, ModelConfig};
use autous_core::train_eval::{evaluate, evaluate_samples, run_ablations, train, train_samples, TrainSpec};
use autous_core::video_data::{split_train_test, synth_video, write_synthetic_corpus, Split, VideoSample};

/// 40 clips per class, 8 frames of 32x32; every fifth clip held out.
fn desk_fixture() -> (Vec<VideoSample>, Vec<VideoSample>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..5 {
        for k in 0..40 {
            let s = synth_video(c, 10_000 + (c * 40 + k) as u64, (8, 32, 32)).unwrap();
            if k % 5 == 4 {
                test.push(s)
            } else {
                train.push(s)
            }
        }
    }
    (train, test)
}

fn desk_spec() -> TrainSpec {
    TrainSpec {
        learning_rate: 1e-3,
        epochs: 10,
        input_size: (32, 32),
        seed: 7,
        ..TrainSpec::default()
    }
}

#[test]
fn desk_training_generalizes() {
    let (train, test) = desk_fixture();
    let start = Instant::now();
    let out = train_samples(&ModelConfig::desk().with_seed(7), &train, &desk_spec()).unwrap();
    let m = evaluate_samples(&out.model, &test).unwrap();
    assert!(m.accuracy >= 0.8, "test accuracy {}", m.accuracy);
    assert!(start.elapsed().as_secs() < 600);
    assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
}

#[test]
fn two_samples_are_memorized() {
    // Training needs every class represented, so the head has two classes.
    let mut config = ModelConfig::tiny().with_seed(1);
    config.num_classes = 2;
    let data = vec![
        VideoSample { class_id: 0, ..synth_video(0, 5, (8, 16, 16)).unwrap() },
        VideoSample { class_id: 1, ..synth_video(3, 6, (8, 16, 16)).unwrap() },
    ];
    let spec = TrainSpec {
        learning_rate: 1e-3,
        batch_size: 2,
        epochs: 200,
        input_size: (16, 16),
        ..TrainSpec::default()
    };
    let start = Instant::now();
    let out = train_samples(&config, &data, &spec).unwrap();
    let m = evaluate_samples(&out.model, &data).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(out.loss_curve.len(), 200);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn ablations_do_not_beat_full_model() {
    let (train, test) = desk_fixture();
    let table = run_ablations(&ModelConfig::desk().with_seed(7), &train, &test, &desk_spec());
    assert_eq!(table.rows.len(), 4);
    let acc: Vec<f64> = table.rows.iter().map(|r| r.result.as_ref().unwrap().accuracy).collect();
    for (row, a) in table.rows.iter().zip(&acc) {
        assert_eq!(row.seed, 7);
        assert!(*a <= acc[0] + 0.05, "{:?} accuracy {a} exceeds full {}", row.variant, acc[0]);
    }
}

#[test]
fn manifest_pipeline_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_corpus(dir.path(), 4, (8, 16, 16), 2).unwrap();
    let manifest = split_train_test(&manifest, 0.5, 3).unwrap();
    let config = ModelConfig::tiny();
    let spec = TrainSpec {
        epochs: 1,
        input_size: (16, 16),
        ..TrainSpec::default()
    };
    let out = train(&config, &manifest, dir.path(), &spec).unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&out.model, &path).unwrap();
    let model = checkpoint::load(&path).unwrap();
    let a = evaluate(&model, &manifest, dir.path(), Split::Test).unwrap();
    let b = evaluate(&out.model, &manifest, dir.path(), Split::Test).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.total(), 10);
}
