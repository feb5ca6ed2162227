use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgalign::align::{CandidateSpace, RankMode};
use kgalign::features::EmbeddingFile;
use kgalign::kg::parse_links;
use kgalign::pipeline::{
    align_stage, eval_stage, export_walks, generate_synthetic, load_inputs, load_reconstructed, reconstruct_stage,
    run_pipeline, sweep, train_stage, Paths, PipelineConfig, SweepKnob, SyntheticSpec,
};
use kgalign::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "kgalign", version, about = "Unsupervised entity alignment between two knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the inputs and print a summary.
    Ingest(Common),
    /// Write the random-walk sentences of every entity for external encoding.
    WalksExport {
        #[command(flatten)]
        common: Common,
        /// Destination TSV (`uri<TAB>walk-index<TAB>sentence`).
        #[arg(long)]
        walks: PathBuf,
    },
    /// Pseudo-label entities by name and keep the relations they agree on.
    Reconstruct(Common),
    /// Train the encoder on the reconstructed graphs.
    Train(Common),
    /// Encode every entity with the trained checkpoint.
    Align(Common),
    /// Score the final embeddings against the gold links.
    Eval(Common),
    /// Generate a synthetic graph pair with a known alignment.
    Synth(SynthArgs),
    /// Run the whole pipeline once per value of one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// perturb1, tau or momentum.
        #[arg(long)]
        knob: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run every stage in order.
    Run(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory holding rel_triples_1, rel_triples_2, embeddings.tsv and ent_links.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma_sim: Option<f64>,
    #[arg(long)]
    tau_sim: Option<f64>,
    #[arg(long)]
    gamma_r: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    perturb1: Option<f64>,
    #[arg(long)]
    perturb2: Option<f64>,
    #[arg(long)]
    walks_k: Option<usize>,
    #[arg(long)]
    walks_t: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    /// consistency or cosine.
    #[arg(long)]
    rank_mode: Option<String>,
    /// full or gold-targets.
    #[arg(long)]
    candidate_space: Option<String>,
    #[arg(long)]
    eval_fraction: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the dataset to.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    relations: usize,
    #[arg(long, default_value_t = 3.0)]
    edge_factor: f64,
    #[arg(long, default_value_t = 0.1)]
    edge_noise: f64,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Gaussian noise on each side's features.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn candidate_space(s: &str) -> Result<CandidateSpace> {
    serde_json::from_value(json!(s)).map_err(|_| Error::Config(format!("unknown candidate space `{s}`")))
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(dir) = &self.data {
            let out = cfg.paths.output_dir.clone();
            let sentences = cfg.paths.sentence_embeddings.clone();
            cfg.paths = Paths { sentence_embeddings: sentences, ..Paths::for_dataset(dir, &out) };
        }
        if let Some(out) = &self.out {
            cfg.paths.output_dir = out.clone();
        }
        if cfg.paths.output_dir.as_os_str().is_empty() {
            cfg.paths.output_dir = PathBuf::from("output");
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set! {
            seed => seed,
            gamma_sim => reconstruction.gamma_sim,
            tau_sim => reconstruction.tau_sim,
            gamma_r => reconstruction.gamma_r,
            tau => train.tau,
            momentum => train.momentum,
            epochs => train.epochs,
            batch => train.batch_size,
            lr => train.learning_rate,
            perturb1 => train.perturb1,
            perturb2 => train.perturb2,
            walks_k => walks.k,
            walks_t => walks.t,
            eval_fraction => eval_fraction,
        }
        if let Some(d) = self.d_model {
            cfg.encoder.d_model = d;
            cfg.encoder.d_out = d;
        }
        if let Some(m) = &self.rank_mode {
            cfg.rank_mode = m.parse::<RankMode>()?;
        }
        if let Some(s) = &self.candidate_space {
            cfg.candidate_space = candidate_space(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prints the effective config and stores it next to the outputs.
fn echo(cfg: &PipelineConfig) -> Result<()> {
    let text = cfg.to_json();
    eprintln!("effective config:\n{text}");
    let dir = &cfg.paths.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("config.json");
    fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(common) => {
            let cfg = common.config()?;
            let inputs = load_inputs(&cfg)?;
            let p = &inputs.primal;
            let links = parse_links(&cfg.paths.ent_links)?;
            let dim = EmbeddingFile::read(&cfg.paths.embeddings)?.dim;
            print_json(&json!({
                "kg1": {"entities": p.kg1.num_entities(), "relations": p.kg1.num_relations(), "triples": p.kg1.num_triples()},
                "kg2": {"entities": p.kg2.num_entities(), "relations": p.kg2.num_relations(), "triples": p.kg2.num_triples()},
                "links": links.len(),
                "embedding_dim": dim,
                "feature_dim": inputs.features.combined.ncols(),
            }))
        }
        Command::WalksExport { common, walks } => {
            let cfg = common.config()?;
            let n = export_walks(&cfg, &walks)?;
            eprintln!("wrote {n} walk sentences to {}", walks.display());
            Ok(())
        }
        Command::Reconstruct(common) => {
            let cfg = common.config()?;
            echo(&cfg)?;
            let inputs = load_inputs(&cfg)?;
            let rec = reconstruct_stage(&cfg, &inputs)?;
            print_json(&rec.report(&inputs.primal))
        }
        Command::Train(common) => {
            let cfg = common.config()?;
            echo(&cfg)?;
            let inputs = load_inputs(&cfg)?;
            let graph = load_reconstructed(&cfg, &inputs.primal).map_err(missing_stage("reconstruct"))?;
            let state = train_stage(&cfg, &inputs, &graph)?;
            print_json(&state.log.last())
        }
        Command::Align(common) => {
            let cfg = common.config()?;
            echo(&cfg)?;
            let inputs = load_inputs(&cfg)?;
            let graph = load_reconstructed(&cfg, &inputs.primal).map_err(missing_stage("reconstruct"))?;
            let emb = align_stage(&cfg, &inputs, &graph).map_err(missing_stage("train"))?;
            eprintln!("encoded {} entities into {}", emb.nrows(), cfg.paths.output_dir.display());
            Ok(())
        }
        Command::Eval(common) => {
            let cfg = common.config()?;
            echo(&cfg)?;
            let primal = kgalign::pipeline::load_graphs(&cfg)?;
            let report = eval_stage(&cfg, &primal, None).map_err(missing_stage("align"))?;
            print_json(&report)
        }
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                n_entities: a.n,
                n_relations: a.relations,
                edge_factor: a.edge_factor,
                edge_noise: a.edge_noise,
                feature_dim: a.dim,
                feature_noise: a.sigma,
                seed: a.seed,
            };
            let data = generate_synthetic(&spec)?;
            data.write(&a.out)?;
            eprintln!(
                "wrote {} + {} triples and {} links to {}",
                data.kg1.num_triples(),
                data.kg2.num_triples(),
                data.links.len(),
                a.out.display()
            );
            Ok(())
        }
        Command::Sweep { common, knob, values } => {
            let cfg = common.config()?;
            echo(&cfg)?;
            let knob: SweepKnob = knob.parse()?;
            print_json(&sweep(&cfg, knob, &values)?)
        }
        Command::Run(common) => {
            let cfg = common.config()?;
            echo(&cfg)?;
            print_json(&run_pipeline(&cfg)?.report)
        }
    }
}

/// Points at the stage whose output is missing.
fn missing_stage(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| {
        if matches!(&e, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound) {
            log::error!("missing input; run `kgalign {stage}` with the same --out first");
        }
        e
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
