//! End-to-end orchestration, configuration and the synthetic benchmark.
//!
//! Stages communicate through files in the output directory so each one can
//! be rerun on its own:
//!
//! | stage        | reads                                   | writes |
//! |--------------|-----------------------------------------|--------|
//! | reconstruct  | triples, embeddings                     | `reconstructed_triples_{1,2}`, `reconstruction_stats.json` |
//! | train        | reconstructed triples, embeddings       | `checkpoint.json`, `train_log.json` |
//! | align        | checkpoint, reconstructed triples       | `final_embeddings_{1,2}.tsv` |
//! | eval         | final embeddings, gold links            | `metrics.json`, `predictions.tsv` |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::align::{evaluate, predict_one_to_one, AlignmentReport, CandidateSpace, Evaluation, RankMode};
use crate::error::{Error, Result};
use crate::features::{
    context_embedding, multiview_concat, walk_sentences, write_walk_sentences, ContextSource,
    EmbeddingFile, EmbeddingKind, EmbeddingTable, MultiViewFeatures, WalkParams,
};
use crate::kg::{parse_links, GraphTag, KnowledgeGraph, PrimalGraph, RelationTriple};
use crate::lcat::{Checkpoint, Lcat, LcatDims, Neighborhoods};
use crate::reconstruct::{run_reconstruction, Reconstruction, ReconstructionConfig};
use crate::rng::{stream, Stream};
use crate::train::{EpochLog, TrainConfig, TrainState, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Average element vectors along each walk.
    #[default]
    Compositional,
    /// Use externally encoded walk sentences.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub triples_1: PathBuf,
    pub triples_2: PathBuf,
    pub embeddings: PathBuf,
    pub ent_links: PathBuf,
    pub output_dir: PathBuf,
    /// Walk-sentence embeddings, required in exact context mode.
    pub sentence_embeddings: Option<PathBuf>,
}

impl Paths {
    /// Standard file names inside one dataset directory.
    pub fn for_dataset(dir: &Path, output_dir: &Path) -> Self {
        Self {
            triples_1: dir.join("rel_triples_1"),
            triples_2: dir.join("rel_triples_2"),
            embeddings: dir.join("embeddings.tsv"),
            ent_links: dir.join("ent_links"),
            output_dir: output_dir.to_path_buf(),
            sentence_embeddings: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_out: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_model: 256, d_out: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub reconstruction: ReconstructionConfig,
    pub walks: WalkParams,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub context_mode: ContextMode,
    pub rank_mode: RankMode,
    pub candidate_space: CandidateSpace,
    /// Trailing fraction of the gold link file used for evaluation.
    pub eval_fraction: f64,
    /// Source rows per similarity block.
    pub similarity_block: usize,
    pub normalize_embeddings: bool,
    /// Replace `_` with spaces in exported walk sentences.
    pub name_underscores: bool,
    pub write_predictions: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            reconstruction: ReconstructionConfig::default(),
            walks: WalkParams::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            context_mode: ContextMode::default(),
            rank_mode: RankMode::default(),
            candidate_space: CandidateSpace::default(),
            eval_fraction: 0.7,
            similarity_block: 1024,
            normalize_embeddings: true,
            name_underscores: true,
            write_predictions: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.reconstruction;
        for (name, v) in [("gamma_sim", r.gamma_sim), ("tau_sim", r.tau_sim)] {
            if !v.is_finite() || v < -1.0 {
                return Err(Error::Config(format!("{name} must be a finite threshold >= -1, got {v}")));
            }
        }
        if self.walks.k == 0 || self.walks.t == 0 {
            return Err(Error::Config("walk length and walk count must be at least 1".into()));
        }
        LcatDims { d_in: 1, d_model: self.encoder.d_model, d_out: self.encoder.d_out }.validate()?;
        self.train.validate()?;
        if !(self.eval_fraction > 0.0 && self.eval_fraction <= 1.0) {
            return Err(Error::Config(format!("eval_fraction must lie in (0, 1], got {}", self.eval_fraction)));
        }
        if self.similarity_block == 0 {
            return Err(Error::Config("similarity_block must be positive".into()));
        }
        if self.context_mode == ContextMode::Exact && self.paths.sentence_embeddings.is_none() {
            return Err(Error::Config("exact context mode needs paths.sentence_embeddings".into()));
        }
        Ok(())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }
}

/// Parsed graphs and input features.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub primal: PrimalGraph,
    /// Rows follow merged entity ids.
    pub features: MultiViewFeatures,
}

impl Inputs {
    pub fn names1(&self) -> ArrayView2<'_, f64> {
        self.features.name_part.slice_axis(Axis(0), (0..self.primal.n1()).into())
    }

    pub fn names2(&self) -> ArrayView2<'_, f64> {
        self.features.name_part.slice_axis(Axis(0), (self.primal.n1()..).into())
    }
}

fn stack(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(0), &[a.view(), b.view()]).expect("same width")
}

pub fn load_graphs(config: &PipelineConfig) -> Result<PrimalGraph> {
    let kg1 = KnowledgeGraph::parse_triples(&config.paths.triples_1, GraphTag::Kg1)?;
    let kg2 = KnowledgeGraph::parse_triples(&config.paths.triples_2, GraphTag::Kg2)?;
    Ok(PrimalGraph::build(kg1, kg2))
}

/// Name and context features for the original (unreconstructed) graphs.
pub fn build_features(config: &PipelineConfig, primal: &PrimalGraph) -> Result<MultiViewFeatures> {
    let file = EmbeddingFile::read(&config.paths.embeddings)?;
    let norm = config.normalize_embeddings;
    let ent1 = file.table_for(primal.kg1.entities().names(), EmbeddingKind::EntityName, norm)?;
    let ent2 = file.table_for(primal.kg2.entities().names(), EmbeddingKind::EntityName, norm)?;
    let names = stack(&ent1.vectors, &ent2.vectors);
    let ent = EmbeddingTable::new(names.clone(), EmbeddingKind::EntityName, false);

    let context = match config.context_mode {
        ContextMode::Compositional => {
            let rel = match (
                file.table_for(primal.kg1.relations().names(), EmbeddingKind::RelationLabel, norm),
                file.table_for(primal.kg2.relations().names(), EmbeddingKind::RelationLabel, norm),
            ) {
                (Ok(r1), Ok(r2)) => Some(EmbeddingTable::new(stack(&r1.vectors, &r2.vectors), EmbeddingKind::RelationLabel, false)),
                _ => {
                    log::warn!("embedding file lacks relation rows; context paths use entity vectors only");
                    None
                }
            };
            let source = ContextSource::Compositional { entities: &ent, relations: rel.as_ref() };
            context_embedding(&primal.merged, source, config.walks, config.seed)?
        }
        ContextMode::Exact => {
            let path = config.paths.sentence_embeddings.as_ref().expect("validated");
            let sentences = EmbeddingFile::read(path)?;
            if sentences.dim != ent.dim {
                return Err(Error::Dimension {
                    expected: ent.dim,
                    found: sentences.dim,
                    context: "sentence embeddings vs name embeddings".into(),
                });
            }
            context_embedding(&primal.merged, ContextSource::Exact { sentences: &sentences }, config.walks, config.seed)?
        }
    };
    multiview_concat(names, context)
}

pub fn load_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let primal = load_graphs(config).map_err(|e| e.in_stage("ingest"))?;
    let features = build_features(config, &primal).map_err(|e| e.in_stage("features"))?;
    Ok(Inputs { primal, features })
}

/// Writes the walk sentences for external encoding.
pub fn export_walks(config: &PipelineConfig, path: &Path) -> Result<usize> {
    let primal = load_graphs(config)?;
    let sentences = walk_sentences(&primal.merged, config.walks, config.seed, config.name_underscores)?;
    write_walk_sentences(path, &sentences)?;
    Ok(sentences.len())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn reconstruct_stage(config: &PipelineConfig, inputs: &Inputs) -> Result<Reconstruction> {
    ensure_dir(&config.paths.output_dir)?;
    let rec = run_reconstruction(&inputs.primal, inputs.names1(), inputs.names2(), &config.reconstruction)?;
    rec.save(&inputs.primal, &config.paths.output_dir)?;
    Ok(rec)
}

/// Restricts `g` to the triples listed in `path`, resolving names against
/// `g`'s own tables.
fn restrict_to_file(g: &KnowledgeGraph, path: &Path) -> Result<KnowledgeGraph> {
    let listed = KnowledgeGraph::parse_triples(path, g.tag)?;
    let source = path.display().to_string();
    let mut triples = Vec::with_capacity(listed.num_triples());
    for t in listed.triples() {
        let lookup = |name: Option<&str>, ent: bool| -> Result<usize> {
            let name = name.unwrap_or_default();
            let id = if ent { g.entity_id(name) } else { g.relations().get(name) };
            id.ok_or_else(|| Error::Parse { path: source.clone(), line: 0, msg: format!("`{name}` is not in the input graph") })
        };
        triples.push(RelationTriple::new(
            lookup(listed.entity_name(t.head), true)?,
            lookup(listed.relation_name(t.relation), false)?,
            lookup(listed.entity_name(t.tail), true)?,
        ));
    }
    Ok(g.with_triples(triples))
}

/// The primal graph over the reconstructed triples in the output directory.
pub fn load_reconstructed(config: &PipelineConfig, primal: &PrimalGraph) -> Result<PrimalGraph> {
    let kg1 = restrict_to_file(&primal.kg1, &config.out("reconstructed_triples_1"))?;
    let kg2 = restrict_to_file(&primal.kg2, &config.out("reconstructed_triples_2"))?;
    Ok(PrimalGraph::build(kg1, kg2))
}

fn dims(config: &PipelineConfig, inputs: &Inputs) -> LcatDims {
    LcatDims {
        d_in: inputs.features.combined.ncols(),
        d_model: config.encoder.d_model,
        d_out: config.encoder.d_out,
    }
}

pub fn train_stage(config: &PipelineConfig, inputs: &Inputs, graph: &PrimalGraph) -> Result<TrainState> {
    ensure_dir(&config.paths.output_dir)?;
    let mut trainer = Trainer::new(&graph.merged, inputs.features.combined.view(), dims(config, inputs), config.train, config.seed)?;
    let ckpt = config.out("checkpoint.json");
    for _ in 0..config.train.epochs {
        if let Err(e) = trainer.epoch() {
            Checkpoint { params: trainer.state.online.clone(), seed: config.seed }.save(&ckpt)?;
            write_json(&config.out("train_log.json"), &trainer.state.log)?;
            return Err(e);
        }
    }
    Checkpoint { params: trainer.state.online.clone(), seed: config.seed }.save(&ckpt)?;
    write_json(&config.out("train_log.json"), &trainer.state.log)?;
    if let (Some(first), Some(last)) = (trainer.state.epoch_losses.first(), trainer.state.epoch_losses.last()) {
        log::info!("training: loss {first:.5} -> {last:.5} over {} epochs", trainer.state.epoch_losses.len());
    }
    Ok(trainer.state)
}

/// Final embeddings of the online encoder on the unperturbed graph.
pub fn encode(config: &PipelineConfig, inputs: &Inputs, graph: &PrimalGraph, checkpoint: &Checkpoint) -> Result<Array2<f64>> {
    let expect = dims(config, inputs);
    if checkpoint.params.dims() != expect {
        return Err(Error::Shape(format!("checkpoint dims {:?} do not match {expect:?}", checkpoint.params.dims())));
    }
    let lcat = Lcat::new(checkpoint.params.clone());
    let out = lcat.forward(inputs.features.combined.view(), &Neighborhoods::from_graph(&graph.merged))?;
    Ok(out.detach().e_tilde)
}

pub fn align_stage(config: &PipelineConfig, inputs: &Inputs, graph: &PrimalGraph) -> Result<Array2<f64>> {
    let checkpoint = Checkpoint::load(config.out("checkpoint.json"), Some(dims(config, inputs)))?;
    let emb = encode(config, inputs, graph, &checkpoint)?;
    save_final_embeddings(config, &inputs.primal, emb.view())?;
    Ok(emb)
}

fn save_final_embeddings(config: &PipelineConfig, primal: &PrimalGraph, emb: ArrayView2<'_, f64>) -> Result<()> {
    for (tag, g, file) in [
        (GraphTag::Kg1, &primal.kg1, "final_embeddings_1.tsv"),
        (GraphTag::Kg2, &primal.kg2, "final_embeddings_2.tsv"),
    ] {
        let mut out = EmbeddingFile::new(emb.ncols());
        for (id, name) in g.entities().names().iter().enumerate() {
            out.insert(name, emb.row(primal.entity_to_merged(tag, id)).to_vec());
        }
        out.write(config.out(file))?;
    }
    Ok(())
}

fn load_final_embeddings(config: &PipelineConfig, primal: &PrimalGraph) -> Result<Array2<f64>> {
    let a = EmbeddingFile::read(config.out("final_embeddings_1.tsv"))?.table_for(primal.kg1.entities().names(), EmbeddingKind::EntityName, false)?;
    let b = EmbeddingFile::read(config.out("final_embeddings_2.tsv"))?.table_for(primal.kg2.entities().names(), EmbeddingKind::EntityName, false)?;
    Ok(stack(&a.vectors, &b.vectors))
}

/// Gold pairs in merged ids, restricted to the trailing evaluation fraction.
pub fn gold_pairs(config: &PipelineConfig, primal: &PrimalGraph) -> Result<Vec<(usize, usize)>> {
    let links = parse_links(&config.paths.ent_links)?;
    let n_eval = ((links.len() as f64) * config.eval_fraction).round() as usize;
    let skip = links.len() - n_eval.min(links.len());
    links[skip..]
        .iter()
        .map(|(a, b)| {
            let s = primal.kg1.entity_id(a).ok_or_else(|| Error::MissingRanking(a.clone()))?;
            let t = primal.kg2.entity_id(b).ok_or_else(|| Error::MissingRanking(b.clone()))?;
            Ok((s, primal.entity_to_merged(GraphTag::Kg2, t)))
        })
        .collect()
}

/// Scores embeddings (merged row order) against the gold links.
pub fn evaluate_embeddings(config: &PipelineConfig, primal: &PrimalGraph, emb: ArrayView2<'_, f64>, mode: RankMode) -> Result<Evaluation> {
    let gold = gold_pairs(config, primal)?;
    let sources: Vec<usize> = (0..primal.n1()).collect();
    let targets: Vec<usize> = (primal.n1()..primal.n1() + primal.n2()).collect();
    evaluate(emb, &sources, &targets, &gold, mode, config.candidate_space, config.similarity_block)
}

pub fn eval_stage(config: &PipelineConfig, primal: &PrimalGraph, emb: Option<ArrayView2<'_, f64>>) -> Result<AlignmentReport> {
    let loaded;
    let emb = match emb {
        Some(e) => e,
        None => {
            loaded = load_final_embeddings(config, primal)?;
            loaded.view()
        }
    };
    let eval = evaluate_embeddings(config, primal, emb, config.rank_mode)?;
    write_json(&config.out("metrics.json"), &eval.report)?;
    if config.write_predictions {
        write_predictions(config, primal, &eval)?;
    }
    Ok(eval.report)
}

fn write_predictions(config: &PipelineConfig, primal: &PrimalGraph, eval: &Evaluation) -> Result<()> {
    let path = config.out("predictions.tsv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        for (i, j) in predict_one_to_one(&eval.sim) {
            let (_, s) = primal.entity_from_merged(eval.sources[i]);
            let (_, t) = primal.entity_from_merged(eval.targets[j]);
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                primal.kg1.entity_name(s).unwrap_or_default(),
                primal.kg2.entity_name(t).unwrap_or_default(),
                eval.sim.raw[[i, j]],
                eval.sim.adjusted[[i, j]]
            )?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: AlignmentReport,
    pub reconstruction: Reconstruction,
    pub train_log: Vec<EpochLog>,
    pub embeddings: Array2<f64>,
    pub inputs: Inputs,
}

/// Runs every stage in order and writes all artifacts to the output dir.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    ensure_dir(&config.paths.output_dir)?;
    write_json(&config.out("config.json"), config)?;
    let inputs = load_inputs(config)?;
    let reconstruction = reconstruct_stage(config, &inputs).map_err(|e| e.in_stage("reconstruct"))?;
    let graph = reconstruction.apply(&inputs.primal);
    let state = train_stage(config, &inputs, &graph).map_err(|e| e.in_stage("train"))?;
    let embeddings = align_stage(config, &inputs, &graph).map_err(|e| e.in_stage("align"))?;
    let report = eval_stage(config, &inputs.primal, Some(embeddings.view())).map_err(|e| e.in_stage("eval"))?;
    Ok(PipelineOutcome { report, reconstruction, train_log: state.log, embeddings, inputs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKnob {
    /// Online-view perturbation ratio.
    Perturb1,
    /// InfoNCE temperature.
    Tau,
    /// EMA coefficient.
    Momentum,
}

impl std::str::FromStr for SweepKnob {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturb1" | "gamma1" => Ok(SweepKnob::Perturb1),
            "tau" => Ok(SweepKnob::Tau),
            "momentum" | "m" => Ok(SweepKnob::Momentum),
            other => Err(Error::Config(format!("unknown sweep knob `{other}`"))),
        }
    }
}

impl SweepKnob {
    fn name(self) -> &'static str {
        match self {
            SweepKnob::Perturb1 => "perturb1",
            SweepKnob::Tau => "tau",
            SweepKnob::Momentum => "momentum",
        }
    }

    fn apply(self, config: &mut PipelineConfig, value: f64) -> Result<()> {
        match self {
            SweepKnob::Perturb1 => {
                if !(0.0..=0.5).contains(&value) {
                    return Err(Error::Config(format!("perturb1 sweep values must lie in [0, 0.5], got {value}")));
                }
                config.train.perturb1 = value;
            }
            SweepKnob::Tau => config.train.tau = value,
            SweepKnob::Momentum => config.train.momentum = value,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob: SweepKnob,
    pub value: f64,
    pub report: Option<AlignmentReport>,
    pub error: Option<String>,
}

/// Runs the pipeline once per value, each in its own subdirectory, and
/// writes `sweep.json` and `sweep.csv`. Failed runs are recorded and skipped.
pub fn sweep(config: &PipelineConfig, knob: SweepKnob, values: &[f64]) -> Result<Vec<SweepRow>> {
    for &v in values {
        knob.apply(&mut config.clone(), v)?;
    }
    let base = config.paths.output_dir.clone();
    ensure_dir(&base)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = config.clone();
        knob.apply(&mut cfg, value)?;
        cfg.paths.output_dir = base.join(format!("{}={value}", knob.name()));
        let row = match run_pipeline(&cfg) {
            Ok(out) => SweepRow { knob, value, report: Some(out.report), error: None },
            Err(e) => {
                log::warn!("sweep {}={value} failed: {e}", knob.name());
                SweepRow { knob, value, report: None, error: Some(e.to_string()) }
            }
        };
        rows.push(row);
    }
    write_json(&base.join("sweep.json"), &rows)?;
    let mut csv = String::from("knob,value,hits@1,hits@10,mrr,status\n");
    for r in &rows {
        match &r.report {
            Some(m) => csv.push_str(&format!("{},{},{},{},{},ok\n", knob.name(), r.value, m.hits_at_1, m.hits_at_10, m.mrr)),
            None => csv.push_str(&format!("{},{},,,,failed\n", knob.name(), r.value)),
        }
    }
    let path = base.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Base triples per entity.
    pub edge_factor: f64,
    /// Probability that a base triple is dropped or rewired, per side.
    pub edge_noise: f64,
    pub feature_dim: usize,
    /// Per-coordinate Gaussian noise added to each side's features.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 8,
            edge_factor: 3.0,
            edge_noise: 0.1,
            feature_dim: 32,
            feature_noise: 0.1,
            seed: 0,
        }
    }
}

/// A generated graph pair whose gold alignment is entity `i` ↔ entity `i`.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub embeddings: EmbeddingFile,
    pub links: Vec<(String, String)>,
}

pub fn entity_uri(side: usize, i: usize) -> String {
    format!("http://kg{side}.example.org/entity/E{i}")
}

pub fn relation_uri(side: usize, r: usize) -> String {
    format!("http://kg{side}.example.org/relation/R{r}")
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v
}

fn noisy<R: Rng + ?Sized>(rng: &mut R, base: &Array1<f64>, sigma: f64) -> Vec<f64> {
    let mut v = base.clone();
    if sigma > 0.0 {
        v.mapv_inplace(|x| x + sigma * rng.sample::<f64, _>(StandardNormal));
    }
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v.to_vec()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_entities < 2 || spec.n_relations == 0 || spec.feature_dim == 0 {
        return Err(Error::Config("synthetic instance needs >= 2 entities, >= 1 relation and a positive feature dim".into()));
    }
    if !(0.0..=1.0).contains(&spec.edge_noise) || spec.feature_noise < 0.0 {
        return Err(Error::Config("edge_noise must lie in [0, 1] and feature_noise must be >= 0".into()));
    }
    let n = spec.n_entities;
    let mut rng = stream(spec.seed, Stream::Synth);

    // connected backbone, then random extra edges
    let mut base: Vec<(usize, usize, usize)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut push = |t: (usize, usize, usize), base: &mut Vec<_>| {
        if t.0 != t.2 && seen.insert(t) {
            base.push(t);
        }
    };
    for i in 1..n {
        let j = rng.random_range(0..i);
        let r = rng.random_range(0..spec.n_relations);
        let t = if rng.random_bool(0.5) { (i, r, j) } else { (j, r, i) };
        push(t, &mut base);
    }
    let target = ((spec.edge_factor * n as f64).round() as usize).max(base.len());
    let mut attempts = 0;
    while base.len() < target && attempts < target * 20 {
        attempts += 1;
        let t = (rng.random_range(0..n), rng.random_range(0..spec.n_relations), rng.random_range(0..n));
        push(t, &mut base);
    }

    let mut sides = Vec::with_capacity(2);
    for side in 1..=2 {
        let mut triples: Vec<(usize, usize, usize)> = Vec::with_capacity(base.len());
        for &(h, r, t) in &base {
            if rng.random_bool(spec.edge_noise) {
                if rng.random_bool(0.5) {
                    continue;
                }
                let new_t = rng.random_range(0..n);
                if new_t != h {
                    triples.push((h, r, new_t));
                }
                continue;
            }
            triples.push((h, r, t));
        }
        // every entity keeps at least one triple so it appears in the file
        let mut covered = vec![false; n];
        for &(h, _, t) in &triples {
            covered[h] = true;
            covered[t] = true;
        }
        for &(h, r, t) in &base {
            if !covered[h] || !covered[t] {
                triples.push((h, r, t));
                covered[h] = true;
                covered[t] = true;
            }
        }
        triples.shuffle(&mut rng);
        let mut g = KnowledgeGraph::new(if side == 1 { GraphTag::Kg1 } else { GraphTag::Kg2 });
        for (h, r, t) in triples {
            g.insert(&entity_uri(side, h), &relation_uri(side, r), &entity_uri(side, t));
        }
        sides.push(g);
    }
    let kg2 = sides.pop().expect("two sides");
    let kg1 = sides.pop().expect("two sides");

    let mut embeddings = EmbeddingFile::new(spec.feature_dim);
    let ent_base: Vec<Array1<f64>> = (0..n).map(|_| unit_gaussian(&mut rng, spec.feature_dim)).collect();
    let rel_base: Vec<Array1<f64>> = (0..spec.n_relations).map(|_| unit_gaussian(&mut rng, spec.feature_dim)).collect();
    for side in 1..=2 {
        for (i, b) in ent_base.iter().enumerate() {
            embeddings.insert(&entity_uri(side, i), noisy(&mut rng, b, spec.feature_noise));
        }
        for (r, b) in rel_base.iter().enumerate() {
            embeddings.insert(&relation_uri(side, r), noisy(&mut rng, b, spec.feature_noise));
        }
    }

    let mut links: Vec<(String, String)> = (0..n).map(|i| (entity_uri(1, i), entity_uri(2, i))).collect();
    links.shuffle(&mut rng);
    Ok(SyntheticData { kg1, kg2, embeddings, links })
}

impl SyntheticData {
    /// Writes `rel_triples_1`, `rel_triples_2`, `embeddings.tsv`, `ent_links`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        self.kg1.save_triples(dir.join("rel_triples_1"))?;
        self.kg2.save_triples(dir.join("rel_triples_2"))?;
        self.embeddings.write(dir.join("embeddings.tsv"))?;
        let path = dir.join("ent_links");
        let text: String = self.links.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
