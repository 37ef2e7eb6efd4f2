use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use etd_core::checkpoint::Checkpoint;
use etd_core::config::EtdConfig;
use etd_core::gateway::{BackendKind, ChatBackend};
use etd_core::pipeline::{Engine, Reference, Workspace};
use etd_core::prompt::Variant;
use etd_core::synth::{write_synthetic, SynthSpec};
use etd_core::trainer::EpochRecord;
use etd_core::Error;

#[derive(Parser)]
#[command(name = "etd", version, about = "Explore-then-determine question answering over knowledge graphs")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from scratch.
    Pretrain(TrainArgs),
    /// Continue training from an existing checkpoint with a fresh optimizer.
    Finetune(FinetuneArgs),
    /// Explore one question and show candidates with evidence.
    Explore(ExploreArgs),
    /// Explore one question and let the language model choose.
    Answer(AnswerArgs),
    /// Score a question set.
    Eval(EvalArgs),
    /// Write a synthetic benchmark directory.
    GenSynth(GenSynthArgs),
    /// Graph statistics and, given a model, pruning statistics.
    Stats(StatsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Checkpoint output path (defaults to `train.output`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Checkpoint to start from (defaults to `train.init`).
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct ModelArgs {
    /// Trained checkpoint (defaults to `train.output`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct QuestionArgs {
    #[arg(long)]
    question: String,
    /// Topic entity name; repeat for several.
    #[arg(long = "topic", required = true)]
    topics: Vec<String>,
    /// Number of reference answers (defaults to `prompt.top_n`).
    #[arg(long)]
    top_n: Option<usize>,
}

#[derive(Args)]
struct LlmArgs {
    /// mcp, wo_mcp, wo_cand, wo_prob or wo_path.
    #[arg(long)]
    prompt_variant: Option<Variant>,
    /// http or mock.
    #[arg(long)]
    llm_backend: Option<BackendKind>,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    llm_endpoint: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    question: QuestionArgs,
}

#[derive(Args)]
struct AnswerArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    question: QuestionArgs,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    llm: LlmArgs,
    /// Question file (defaults to `data.test`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of reference answers (defaults to `prompt.top_n`).
    #[arg(long)]
    top_n: Option<usize>,
    /// Include wall-clock time per stage in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    valid: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Question file for pruning statistics (defaults to `data.test`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Retention budget to measure (defaults to the model's).
    #[arg(long)]
    top_k: Option<usize>,
    /// Graph statistics only.
    #[arg(long)]
    graph_only: bool,
}

fn load_config(cli: &Cli) -> Result<EtdConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => EtdConfig::load(path)?,
        None => EtdConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.params.seed = seed;
    }
    Ok(config)
}

fn apply_llm(config: &mut EtdConfig, llm: &LlmArgs) -> Result<(), Error> {
    if let Some(v) = llm.prompt_variant {
        config.prompt.variant = v;
    }
    if let Some(b) = llm.llm_backend {
        config.llm.backend = b;
    }
    if let Some(e) = &llm.llm_endpoint {
        config.llm.endpoint = Some(e.clone());
    }
    if let Some(m) = &llm.llm_model {
        config.llm.model = Some(m.clone());
    }
    config.validate()
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("output serialises"));
    } else {
        print!("{}", text());
    }
}

fn load_model<'a>(ws: &'a Workspace, args: &ModelArgs) -> Result<Engine<'a>, Error> {
    let path = args.checkpoint.as_ref().unwrap_or(&ws.config.train.output);
    let ck = Checkpoint::load(path)?;
    let mut model = ck.model;
    // the configured budget wins so one checkpoint can be run at several K
    model.explorer.top_k = ws.config.model.top_k;
    ws.engine(model)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: &'a Path,
    epochs: usize,
    best_epoch: Option<usize>,
    history: &'a [EpochRecord],
}

fn run_training(cli: &Cli, output: &Option<PathBuf>, init: Option<&Path>) -> Result<(), Error> {
    let config = load_config(cli)?;
    let output = output.clone().unwrap_or_else(|| config.train.output.clone());
    let ws = Workspace::open(config)?;
    let initial = init.map(Checkpoint::load).transpose()?;
    let outcome = ws.train(initial.as_ref())?;
    outcome.checkpoint.save(&output)?;
    let summary = TrainSummary {
        checkpoint: &output,
        epochs: outcome.checkpoint.meta.epochs,
        best_epoch: outcome.checkpoint.meta.best_epoch,
        history: &outcome.history,
    };
    emit(cli.json, &summary, || {
        let mut s = String::new();
        for h in &outcome.history {
            s.push_str(&format!("epoch {:>3}  loss {:.6}", h.epoch, h.train_loss));
            if let Some(v) = h.valid_hits1 {
                s.push_str(&format!("  valid hits@1 {v:.4}"));
            }
            s.push('\n');
        }
        if let Some(b) = summary.best_epoch {
            s.push_str(&format!("best epoch {b}\n"));
        }
        s.push_str(&format!("wrote {}\n", output.display()));
        s
    });
    Ok(())
}

#[derive(Serialize)]
struct ExploreOutput<'a> {
    question: &'a str,
    topics: &'a [String],
    num_candidates: usize,
    candidates: Vec<Reference>,
}

fn references_text(refs: &[Reference]) -> String {
    let mut s = String::new();
    for (i, r) in refs.iter().enumerate() {
        s.push_str(&format!("{}. {} ({:.4})\n", i + 1, r.name, r.probability));
        for f in &r.facts {
            s.push_str(&format!("     {f}\n"));
        }
    }
    s
}

fn explore_cmd(cli: &Cli, args: &ExploreArgs) -> Result<(), Error> {
    let config = load_config(cli)?;
    let top_n = args.question.top_n.unwrap_or(config.prompt.top_n);
    let ws = Workspace::open(config)?;
    let engine = load_model(&ws, &args.model)?;
    let topics = ws.resolve_topics(&args.question.topics)?;
    let result = engine.explore(&args.question.question, &topics)?;
    let out = ExploreOutput {
        question: &args.question.question,
        topics: &args.question.topics,
        num_candidates: result.candidates.len(),
        candidates: engine.references(&result, top_n)?,
    };
    emit(cli.json, &out, || references_text(&out.candidates));
    Ok(())
}

fn answer_cmd(cli: &Cli, args: &AnswerArgs) -> Result<(), Error> {
    let mut config = load_config(cli)?;
    apply_llm(&mut config, &args.llm)?;
    let top_n = args.question.top_n.unwrap_or(config.prompt.top_n);
    let backend: Box<dyn ChatBackend> = config.llm.connect()?;
    let variant = config.prompt.variant;
    let ws = Workspace::open(config)?;
    let engine = load_model(&ws, &args.model)?;
    let topics = ws.resolve_topics(&args.question.topics)?;
    let answer = engine.answer(&args.question.question, &topics, backend.as_ref(), variant, top_n)?;
    emit(cli.json, &answer, || {
        format!(
            "{}\n\n{}\n\nanswer: {} (explore-only: {})\n",
            answer.prompt.body, answer.determination.raw_text, answer.predicted, answer.explore_only
        )
    });
    Ok(())
}

fn eval_cmd(cli: &Cli, args: &EvalArgs) -> Result<(), Error> {
    let mut config = load_config(cli)?;
    apply_llm(&mut config, &args.llm)?;
    let top_n = args.top_n.unwrap_or(config.prompt.top_n);
    let dataset = match &args.dataset {
        Some(p) => p.clone(),
        None => config.require(&config.data.test, "data.test")?.to_path_buf(),
    };
    let backend = config.llm.connect()?;
    let (variant, parallelism) = (config.prompt.variant, config.llm.parallelism);
    let ws = Workspace::open(config)?;
    let engine = load_model(&ws, &args.model)?;
    let data = ws.dataset(&dataset)?;
    let report = engine.evaluate(&data, backend.as_ref(), variant, top_n, parallelism, args.timing)?;
    emit(cli.json, &report, || {
        let mut s = format!(
            "questions            {}\nskipped              {}\nhits@1               {:.4}\nexplore-only hits@1  {:.4}\nmissed answer rate   {:.4}\n",
            report.questions, report.skipped, report.hits1, report.explore_only_hits1, report.missed_answer_rate
        );
        for (m, c) in &report.methods {
            s.push_str(&format!("method {m:<14}{c}\n"));
        }
        s.push_str("step  frontier  edges  retained\n");
        for st in &report.steps {
            s.push_str(&format!(
                "{:>4}  {:>8.1}  {:>5.1}  {:>8.1}\n",
                st.step, st.mean_frontier, st.mean_candidate_edges, st.mean_retained_edges
            ));
        }
        if let Some(t) = &report.timing {
            s.push_str(&format!(
                "time explore {:.2}s  prompt {:.2}s  llm {:.2}s\n",
                t.explore_secs, t.prompt_secs, t.llm_secs
            ));
        }
        s
    });
    Ok(())
}

fn gen_synth_cmd(cli: &Cli, args: &GenSynthArgs) -> Result<(), Error> {
    let mut spec = SynthSpec::default();
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut spec.entities, args.entities);
    set(&mut spec.relations, args.relations);
    set(&mut spec.distractors, args.distractors);
    set(&mut spec.train, args.train);
    set(&mut spec.valid, args.valid);
    set(&mut spec.test, args.test);
    if let Some(h) = args.hops {
        spec.hops = h;
        spec.max_hops = spec.max_hops.max(h);
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let files = write_synthetic(&args.out, &spec)?;
    #[derive(Serialize)]
    struct Out<'a> {
        spec: &'a SynthSpec,
        kg: &'a Path,
        train: &'a Path,
        valid: &'a Path,
        test: &'a Path,
        config: &'a Path,
    }
    let out = Out {
        spec: &spec,
        kg: &files.kg,
        train: &files.train,
        valid: &files.valid,
        test: &files.test,
        config: &files.config,
    };
    emit(cli.json, &out, || format!("wrote benchmark to {}\n", args.out.display()));
    Ok(())
}

#[derive(Serialize)]
struct GraphStats {
    entities: usize,
    base_relations: usize,
    relations_with_reverse_and_identity: usize,
    triples: usize,
    stored_edges: usize,
    max_out_degree: usize,
    mean_out_degree: f64,
}

fn stats_cmd(cli: &Cli, args: &StatsArgs) -> Result<(), Error> {
    let mut config = load_config(cli)?;
    if let Some(k) = args.top_k {
        config.model.top_k = k;
        config.validate()?;
    }
    let ws = Workspace::open(config)?;
    let kg = &ws.kg;
    let graph = GraphStats {
        entities: kg.num_entities(),
        base_relations: kg.num_base_relations(),
        relations_with_reverse_and_identity: kg.num_relations(),
        triples: kg.num_base_triples(),
        stored_edges: kg.num_edges(),
        max_out_degree: kg.max_out_degree(),
        mean_out_degree: kg.num_edges() as f64 / kg.num_entities().max(1) as f64,
    };
    let pruning = if args.graph_only {
        None
    } else {
        let dataset = match &args.dataset {
            Some(p) => p.clone(),
            None => ws.config.require(&ws.config.data.test, "data.test")?.to_path_buf(),
        };
        let engine = load_model(&ws, &args.model)?;
        Some(engine.prune_stats(&ws.dataset(&dataset)?)?)
    };
    #[derive(Serialize)]
    struct Out<'a> {
        graph: &'a GraphStats,
        #[serde(skip_serializing_if = "Option::is_none")]
        pruning: &'a Option<etd_core::pipeline::PruneReport>,
    }
    emit(cli.json, &Out { graph: &graph, pruning: &pruning }, || {
        let mut s = format!(
            "entities        {}\nrelations       {} ({} with reverse and identity)\ntriples         {}\nmax out-degree  {}\nmean out-degree {:.2}\n",
            graph.entities,
            graph.base_relations,
            graph.relations_with_reverse_and_identity,
            graph.triples,
            graph.max_out_degree,
            graph.mean_out_degree
        );
        if let Some(p) = &pruning {
            s.push_str(&format!("\npruning at K={} over {} questions\n", p.top_k, p.questions));
            s.push_str("step  edges(K)  edges(all)  frontier(K)  frontier(all)\n");
            for st in &p.steps {
                s.push_str(&format!(
                    "{:>4}  {:>8.1}  {:>10.1}  {:>11.1}  {:>13.1}\n",
                    st.step, st.pruned_mean_edges, st.unpruned_mean_edges, st.pruned_mean_frontier, st.unpruned_mean_frontier
                ));
            }
        }
        s
    });
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Transport(_) | Error::Protocol { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Pretrain(a) => run_training(&cli, &a.output, None),
        Command::Finetune(a) => load_config(&cli).and_then(|c| {
            let init = a
                .init
                .clone()
                .or(c.train.init.clone())
                .ok_or_else(|| Error::Config("finetune needs --init or train.init".into()))?;
            run_training(&cli, &a.train.output, Some(&init))
        }),
        Command::Explore(a) => explore_cmd(&cli, a),
        Command::Answer(a) => answer_cmd(&cli, a),
        Command::Eval(a) => eval_cmd(&cli, a),
        Command::GenSynth(a) => gen_synth_cmd(&cli, a),
        Command::Stats(a) => stats_cmd(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
