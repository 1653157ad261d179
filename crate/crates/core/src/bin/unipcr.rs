use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unipcr::config::{PrecisionDenominator, RunConfig};
use unipcr::corpus::NecessityRule;
use unipcr::model::AblationSpec;
use unipcr::pipeline::{self, DirLock, Workspace};
use unipcr::{Error, Result};

#[derive(Parser)]
#[command(name = "unipcr", version, about = "Request necessity prediction and tag recommendation for code review requests")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory holding corpus/, graphs/, model/, predictions/ and reports/.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a posts dump into train/val/test request files.
    Ingest(IngestArgs),
    /// Extract data-flow graphs for every split.
    BuildDfg(DfgArgs),
    /// Train one ablation variant.
    Train(TrainArgs),
    /// Predict tags and necessity for a file of requests.
    Predict(PredictArgs),
    /// Score predictions against truth requests.
    Evaluate(EvaluateArgs),
    /// Train, predict and evaluate every ablation variant.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    necessity_rule: Option<NecessityRule>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DfgArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    langs: Option<Vec<String>>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "full")]
    ablation: AblationSpec,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    graphs: Option<PathBuf>,
    /// Train without graphs even when the workspace has them.
    #[arg(long)]
    no_graphs: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    ablation: AblationSpec,
    /// Line-delimited requests; only `id` and `title` are required.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_denominator)]
    precision_denominator: Option<PrecisionDenominator>,
    #[arg(long, default_value = "model")]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',')]
    specs: Option<Vec<AblationSpec>>,
}

fn parse_denominator(s: &str) -> std::result::Result<PrecisionDenominator, String> {
    match s {
        "min" => Ok(PrecisionDenominator::Min),
        "k" => Ok(PrecisionDenominator::K),
        _ => Err(format!("expected `min` or `k`, got `{s}`")),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut c = RunConfig::default();
            c.apply_env_overrides();
            Ok(c)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    let ws = Workspace::new(&cli.work);
    match cli.command {
        Command::Ingest(a) => {
            if let Some(t) = a.theta {
                config.corpus.theta = t;
            }
            if let Some(s) = a.seed {
                config.corpus.seed = s;
            }
            if let Some(r) = a.necessity_rule {
                config.corpus.necessity_rule = r;
            }
            config.validate()?;
            let out = a.out.unwrap_or_else(|| ws.corpus());
            let _lock = DirLock::acquire(&out)?;
            let rep = pipeline::ingest(&config, &a.dump, &out)?;
            println!(
                "{} requests, {} tags ({} train / {} val / {} test)",
                rep.stats.n_requests,
                rep.stats.n_tags,
                rep.stats.splits["train"].n_requests,
                rep.stats.splits["val"].n_requests,
                rep.stats.splits["test"].n_requests,
            );
            if let Some(note) = rep.divergence {
                println!("{note}");
            }
            println!("manifest {}", rep.manifest_hash);
        }
        Command::BuildDfg(a) => {
            if let Some(l) = a.langs {
                config.dfg.langs = l;
            }
            let input = a.input.unwrap_or_else(|| ws.corpus());
            let out = a.out.unwrap_or_else(|| ws.graphs());
            let _lock = DirLock::acquire(&out)?;
            let s = pipeline::build_graphs(&config, &input, &out)?;
            println!(
                "{} requests, {} with code, parse failure rate {:.3}",
                s.requests, s.with_code, s.parse_failure_rate
            );
            for (lang, c) in &s.per_language {
                println!("  {lang}: {} requests, {} with a graph, {} parse failures", c.requests, c.with_graph, c.parse_failures);
            }
        }
        Command::Train(a) => {
            let corpus = a.corpus.unwrap_or_else(|| ws.corpus());
            let graphs = match (a.no_graphs, a.graphs) {
                (true, _) => None,
                (false, Some(g)) => Some(g),
                (false, None) => Some(ws.graphs()).filter(|g| g.join(pipeline::DFG_SUMMARY_FILE).exists()),
            };
            let out = a.out.unwrap_or_else(|| ws.model(a.ablation));
            let _lock = DirLock::acquire(&out)?;
            let rep = pipeline::train_stage(&config, a.ablation, &corpus, graphs.as_deref(), &out)?;
            println!(
                "{} steps, final loss {:.4}, best val loss {}",
                rep.steps,
                rep.losses.last().copied().unwrap_or(f64::NAN),
                rep.best_val_loss.map_or("n/a".to_string(), |v| format!("{v:.4}"))
            );
        }
        Command::Predict(a) => {
            let checkpoint = a.checkpoint.unwrap_or_else(|| ws.checkpoint(a.ablation));
            let lock_dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
            let _lock = DirLock::acquire(&lock_dir)?;
            let recs = pipeline::predict_stage(&config, &checkpoint, &a.input, &a.out)?;
            println!("{} predictions written to {}", recs.len(), a.out.display());
        }
        Command::Evaluate(a) => {
            let truth = a.truth.unwrap_or_else(|| pipeline::split_path(&ws.corpus(), "test"));
            let ks = a.k.unwrap_or_else(|| config.eval.ks.clone());
            let denom = a.precision_denominator.unwrap_or(config.eval.precision_denominator);
            let out = a.out.unwrap_or_else(|| ws.reports());
            let _lock = DirLock::acquire(&out)?;
            let set = pipeline::evaluate_stage(&a.name, &a.pred, &truth, &ks, denom, &out)?;
            print!("{}", unipcr::eval::render_report(&[set]).text);
        }
        Command::Ablate(a) => {
            let specs = a.specs.unwrap_or_else(|| AblationSpec::ALL.to_vec());
            let _lock = DirLock::acquire(&ws.root)?;
            let rep = pipeline::ablate(&config, &ws, &specs)?;
            print!("{}", rep.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
