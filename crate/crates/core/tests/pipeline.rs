use std::fs;
use std::path::Path;

use kgalign::features::EmbeddingFile;
use kgalign::pipeline::{
    align_stage, build_features, eval_stage, export_walks, generate_synthetic, load_inputs, load_reconstructed,
    reconstruct_stage, run_pipeline, sweep, train_stage, ContextMode, Paths, PipelineConfig, SweepKnob, SyntheticSpec,
};
use kgalign::Error;

fn dataset(dir: &Path, n: usize, seed: u64) {
    let spec = SyntheticSpec { n_entities: n, feature_dim: 12, seed, ..Default::default() };
    generate_synthetic(&spec).unwrap().write(dir).unwrap();
}

fn config(dir: &Path, out: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig { paths: Paths::for_dataset(dir, &dir.join(out)), seed: 4, ..Default::default() };
    cfg.train.epochs = 6;
    cfg.encoder.d_model = 24;
    cfg.encoder.d_out = 24;
    cfg
}

#[test]
fn stages_from_files_match_the_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 40, 1);
    let whole = config(tmp.path(), "whole");
    let outcome = run_pipeline(&whole).unwrap();

    let staged = config(tmp.path(), "staged");
    let inputs = load_inputs(&staged).unwrap();
    reconstruct_stage(&staged, &inputs).unwrap();
    let graph = load_reconstructed(&staged, &inputs.primal).unwrap();
    train_stage(&staged, &inputs, &graph).unwrap();
    align_stage(&staged, &inputs, &graph).unwrap();
    let report = eval_stage(&staged, &inputs.primal, None).unwrap();
    assert_eq!(report, outcome.report);

    for f in ["metrics.json", "predictions.tsv", "reconstructed_triples_1", "reconstruction_stats.json", "final_embeddings_2.tsv"] {
        assert_eq!(fs::read(whole.paths.output_dir.join(f)).unwrap(), fs::read(staged.paths.output_dir.join(f)).unwrap(), "{f}");
    }
    let echoed = PipelineConfig::load(whole.paths.output_dir.join("config.json")).unwrap();
    assert_eq!(echoed, whole);
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(whole.paths.output_dir.join("train_log.json")).unwrap()).unwrap();
    assert_eq!(log.as_array().unwrap().len(), 6);
}

#[test]
fn final_embeddings_cover_every_entity() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 30, 2);
    let cfg = config(tmp.path(), "out");
    let outcome = run_pipeline(&cfg).unwrap();
    let f1 = EmbeddingFile::read(cfg.paths.output_dir.join("final_embeddings_1.tsv")).unwrap();
    assert_eq!(f1.len(), outcome.inputs.primal.n1());
    assert_eq!(f1.dim, 24);
    for name in outcome.inputs.primal.kg1.entities().names() {
        let v = f1.get(name).unwrap();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
    let predictions = fs::read_to_string(cfg.paths.output_dir.join("predictions.tsv")).unwrap();
    assert_eq!(predictions.lines().count(), outcome.inputs.primal.n1().min(outcome.inputs.primal.n2()));
}

#[test]
fn missing_embedding_rows_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 20, 3);
    let path = tmp.path().join("embeddings.tsv");
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.contains("kg1.example.org/entity/E3\t")).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let err = run_pipeline(&config(tmp.path(), "out")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("E3"), "{err}");
}

#[test]
fn malformed_triples_report_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 20, 3);
    let path = tmp.path().join("rel_triples_2");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("only\ttwo\n");
    fs::write(&path, text).unwrap();
    let err = run_pipeline(&config(tmp.path(), "out")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    match err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "ingest");
            assert!(matches!(*source, Error::Parse { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), "out");
    cfg.eval_fraction = 0.0;
    assert_eq!(run_pipeline(&cfg).unwrap_err().exit_code(), 1);
    cfg.eval_fraction = 0.7;
    cfg.context_mode = ContextMode::Exact;
    assert_eq!(run_pipeline(&cfg).unwrap_err().exit_code(), 1);
}

#[test]
fn exact_context_reads_encoded_walk_sentences() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 25, 5);
    let mut cfg = config(tmp.path(), "out");
    let walks = tmp.path().join("walks.tsv");
    let count = export_walks(&cfg, &walks).unwrap();
    let lines = fs::read_to_string(&walks).unwrap();
    assert_eq!(lines.lines().count(), count);
    assert_eq!(count, 50 * cfg.walks.t);

    // stand-in encoder: a fixed vector per sentence length
    let mut sentences = EmbeddingFile::new(12);
    for line in lines.lines() {
        let mut parts = line.split('\t');
        let (uri, idx, text) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
        let mut v = vec![0.0; 12];
        v[text.split_whitespace().count() % 12] = 1.0;
        sentences.insert(&format!("{uri}#{idx}"), v);
    }
    let sent_path = tmp.path().join("sentences.tsv");
    sentences.write(&sent_path).unwrap();
    cfg.context_mode = ContextMode::Exact;
    cfg.paths.sentence_embeddings = Some(sent_path);
    let inputs = load_inputs(&cfg).unwrap();
    assert_eq!(inputs.features.combined.ncols(), 24);
    let features = build_features(&cfg, &inputs.primal).unwrap();
    assert_eq!(features.context_part, inputs.features.context_part);
    run_pipeline(&cfg).unwrap();
}

#[test]
fn sweep_writes_one_run_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 20, 6);
    let mut cfg = config(tmp.path(), "sweep");
    cfg.train.epochs = 2;
    let rows = sweep(&cfg, SweepKnob::Tau, &[0.05, 0.5]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.report.is_some()));
    assert!(cfg.paths.output_dir.join("tau=0.05/metrics.json").exists());
    let csv = fs::read_to_string(cfg.paths.output_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(matches!(sweep(&cfg, SweepKnob::Perturb1, &[0.6]), Err(Error::Config(_))));
}

#[test]
fn untrained_encoder_still_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 30, 7);
    let mut cfg = config(tmp.path(), "out");
    cfg.train.epochs = 0;
    let outcome = run_pipeline(&cfg).unwrap();
    assert!(outcome.train_log.is_empty());
    assert_eq!(outcome.report.n_eval, 21);
    assert!(cfg.paths.output_dir.join("checkpoint.json").exists());
}

#[test]
fn unreachable_name_threshold_falls_back_and_completes() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), 30, 8);
    let mut cfg = config(tmp.path(), "out");
    cfg.reconstruction.gamma_sim = 1.1;
    let outcome = run_pipeline(&cfg).unwrap();
    assert!(outcome.reconstruction.pseudo_labels.is_empty());
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.paths.output_dir.join("reconstruction_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["fallback_1"], true);
    assert_eq!(stats["triples_kept_1"], outcome.inputs.primal.kg1.num_triples());
}
