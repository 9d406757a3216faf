//! Train, save, reload and score through the public API.

use statetrack_core::corpus::synth_corpus;
use statetrack_core::pipeline::{predict_corpus, read_predictions_str, write_predictions};
use statetrack_core::{count_violations, score_task1, train, Model, ModelConfig, ResolvedGrid, TrainConfig};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 4,
        model: ModelConfig {
            embed_dim: 12,
            hidden: 8,
            node_dim: 8,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn trained_model_survives_a_checkpoint_round_trip() {
    let corpus = synth_corpus(21, 6);
    let config = small_config();
    let model = Model::for_corpus(config.model.clone(), &corpus, config.seed).unwrap();
    let mut seen = Vec::new();
    let outcome = train(&corpus, &corpus, &config, model, |m, _| seen.push(m.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    assert!(outcome.metrics.iter().all(|m| m.loss.is_finite() && m.loss >= 0.0));
    let best = &outcome.metrics[outcome.best_epoch - 1];
    assert!(outcome.metrics.iter().all(|m| m.micro <= best.micro));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    outcome.best.save(&path, &config).unwrap();
    let (loaded, stored) = Model::load(&path).unwrap();
    assert_eq!(stored.model, config.model);
    assert_eq!(loaded.checkpoint_bytes().unwrap(), outcome.best.checkpoint_bytes().unwrap());

    let before = predict_corpus(&outcome.best, &corpus).unwrap();
    let after = predict_corpus(&loaded, &corpus).unwrap();
    assert_eq!(before, after);

    // the dev score recorded during training is what the saved model gets
    let preds: Vec<ResolvedGrid> = after.iter().map(|g| g.resolved()).collect();
    let golds: Vec<ResolvedGrid> = corpus.iter().map(ResolvedGrid::gold).collect();
    let report = score_task1(&preds, &golds).unwrap();
    assert!((report.micro - best.micro).abs() < 1e-9, "{} vs {}", report.micro, best.micro);

    // the TSV dump reads back to the same grids
    let mut buf = Vec::new();
    write_predictions(&mut buf, &preds).unwrap();
    let back = read_predictions_str(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back, preds);
    let v = count_violations(&back, &corpus).unwrap();
    assert!(v.violations <= v.predictions);
}
