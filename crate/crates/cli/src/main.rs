use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use strata::backends::{Backends, Reasoner};
use strata::graphbuild::build_hierarchy;
use strata::harness::config::parse_backend;
use strata::harness::metrics::{align_answers, read_answers};
use strata::harness::{evaluate, index_stats, load_index, save_index, Settings};
use strata::modeseek::{fit_policy, FitOptions, FittedPolicy, GaussianMixtureTarget, ObjectiveKind, Target};
use strata::prefsynth::{read_jsonl, synthesize_dataset, write_jsonl, QaPair};
use strata::retrieve::{layer_distribution, rank};

#[derive(Parser, Debug)]
#[command(name = "strata", version, about = "Hierarchical graph index, retrieval and preference-data tools")]
struct Cli {
    /// TOML settings file; `STRATA_*` environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an index from a plain-text corpus.
    Build(BuildArgs),
    /// Rank index nodes against a query.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long = "q")]
        query: String,
        #[arg(long)]
        top_k: Option<usize>,
        /// Also print how many hits came from each layer.
        #[arg(long)]
        show_layers: bool,
    },
    /// Print per-layer counts, community sizes and retrieval layer mix.
    Stats {
        #[arg(long)]
        index: PathBuf,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Generate chosen/rejected preference records from QA pairs.
    SynthPrefs {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        context_sizes: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a policy to a target distribution and write the loss trace.
    MsDemo {
        #[arg(long, value_enum)]
        objective: Objective,
        /// `bimodal`, `gmm:W@M,W@M/STD` or `cat:P,P,...`
        #[arg(long, default_value = "bimodal", value_parser = parse_target)]
        target: Target,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against gold answers.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value = "rouge")]
        metric: Metric,
        /// Write the per-item JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(clap::Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    large: Option<usize>,
    #[arg(long)]
    small: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k_edges: Option<usize>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["mock", "http"])]
    backend: Option<String>,
    #[arg(long)]
    endpoint_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Objective {
    Reverse,
    Forward,
    Ms,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Metric {
    Rouge,
    Accuracy,
}

fn parse_target(spec: &str) -> Result<Target, String> {
    let nums = |s: &str| -> Result<Vec<f64>, String> {
        s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect()
    };
    if spec == "bimodal" {
        return Ok(Target::Mixture(GaussianMixtureTarget::bimodal()));
    }
    if let Some(rest) = spec.strip_prefix("cat:") {
        return Ok(Target::Categorical(nums(rest)?));
    }
    if let Some(rest) = spec.strip_prefix("gmm:") {
        let (comps, std) = rest.split_once('/').unwrap_or((rest, "1"));
        let mut weights = Vec::new();
        let mut means = Vec::new();
        for c in comps.split(',') {
            let (w, m) = c.split_once('@').ok_or_else(|| format!("component {c:?} is not W@M"))?;
            weights.push(nums(w)?[0]);
            means.push(nums(m)?[0]);
        }
        let std = nums(std)?[0];
        return GaussianMixtureTarget::new(weights, means, std).map(Target::Mixture).map_err(|e| e.to_string());
    }
    Err(format!("unknown target {spec:?}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::from_process(cli.config.as_deref())?;
    match cli.command {
        Command::Build(args) => build(&mut settings, args),
        Command::Query { index, query, top_k, show_layers } => {
            let index = load_index(&index).with_context(|| format!("loading {}", index.display()))?;
            let top_k = top_k.unwrap_or(index.config.top_k_retrieval);
            let backends = backends(&settings)?;
            let result = rank(&index, &query, top_k, backends.embedder.as_ref())?;
            let mut out = io::stdout().lock();
            writeln!(out, "rank\tscore\tlayer\tid\tkind\ttext")?;
            for (i, e) in result.entries.iter().enumerate() {
                let text = index.chunk(e.chunk_id).map_or("", |c| c.text.as_str());
                writeln!(out, "{}\t{:.6}\t{}\t{}\t{}\t{}", i + 1, e.score, e.layer_index, e.chunk_id, e.kind.as_str(), text)?;
            }
            if show_layers {
                let dist = layer_distribution(&result, index.layers.len());
                let parts: Vec<String> = dist.iter().enumerate().map(|(l, n)| format!("L{l}={n}")).collect();
                writeln!(out, "layers\t{}", parts.join(" "))?;
            }
            Ok(())
        }
        Command::Stats { index, json } => {
            let index = load_index(&index).with_context(|| format!("loading {}", index.display()))?;
            let stats = index_stats(&index, index.config.top_k_retrieval)?;
            let mut out = io::stdout().lock();
            if json {
                serde_json::to_writer_pretty(&mut out, &stats)?;
                writeln!(out)?;
                return Ok(());
            }
            writeln!(out, "chunks\t{}", stats.chunk_count)?;
            writeln!(out, "layer\tnodes\tedges\tweight\tcommunities\tmin\tmax\tmean")?;
            for l in &stats.layers {
                let c = &l.community_sizes;
                let (min, max) = (c.iter().min().copied().unwrap_or(0), c.iter().max().copied().unwrap_or(0));
                let mean = if c.is_empty() { 0.0 } else { c.iter().sum::<usize>() as f64 / c.len() as f64 };
                writeln!(out, "{}\t{}\t{}\t{:.4}\t{}\t{min}\t{max}\t{mean:.2}", l.layer, l.nodes, l.edges, l.total_weight, c.len())?;
            }
            writeln!(out, "probes\t{} (top_k {})", stats.probe_count, stats.probe_top_k)?;
            for (l, (hits, share)) in stats.layer_hits.iter().zip(stats.layer_shares()).enumerate() {
                writeln!(out, "hits\tL{l}\t{hits}\t{share:.4}")?;
            }
            Ok(())
        }
        Command::SynthPrefs { index, qa, out, context_sizes, seed } => {
            if let Some(sizes) = context_sizes {
                settings.synth.context_sizes = sizes;
            }
            if let Some(s) = seed {
                settings.synth.seed = s;
            }
            let index = load_index(&index).with_context(|| format!("loading {}", index.display()))?;
            let pairs: Vec<QaPair> = read_jsonl(&qa).with_context(|| format!("reading {}", qa.display()))?;
            let backends = backends(&settings)?;
            let reasoners: [&dyn Reasoner; 1] = [backends.reasoner.as_ref()];
            let report = synthesize_dataset(&pairs, &index, &settings.synth, &reasoners, backends.embedder.as_ref())?;
            write_jsonl(&out, &report.records)?;
            println!("records\t{}\nskipped\t{}", report.records.len(), report.skipped());
            Ok(())
        }
        Command::MsDemo { objective, target, steps, lr, seed, out } => {
            let kind = match objective {
                Objective::Reverse => ObjectiveKind::ReverseKl,
                Objective::Forward => ObjectiveKind::ForwardKl,
                Objective::Ms => ObjectiveKind::MsLoss,
            };
            let options = FitOptions { steps, learning_rate: lr, seed, ..FitOptions::default() };
            let fit = fit_policy(&target, kind, &options)?;
            let dim = fit.trace.first().map_or(0, |t| t.params.len());
            let names: Vec<String> = match &fit.policy {
                FittedPolicy::Gaussian { .. } => vec!["mu".into(), "log_sigma".into()],
                FittedPolicy::Categorical(_) => (0..dim).map(|i| format!("logit_{i}")).collect(),
            };
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(io::stdout().lock()),
            };
            let mut w = BufWriter::new(sink);
            writeln!(w, "step,loss,{}", names.join(","))?;
            for t in &fit.trace {
                let params: Vec<String> = t.params.iter().map(f64::to_string).collect();
                writeln!(w, "{},{},{}", t.step, t.loss, params.join(","))?;
            }
            w.flush()?;
            let summary = match &fit.policy {
                FittedPolicy::Gaussian { mu, sigma } => format!("mu={mu:.6} sigma={sigma:.6}"),
                FittedPolicy::Categorical(p) => format!("probs={:?}", p.probs()),
            };
            if out.is_some() {
                println!("final_loss={:.6} {summary}", fit.final_loss());
            } else {
                info!("final_loss={:.6} {summary}", fit.final_loss());
            }
            Ok(())
        }
        Command::Eval { pred, gold, metric, report } => {
            let (p, g) = align_answers(read_answers(&pred)?, read_answers(&gold)?)?;
            let r = evaluate(&p, &g)?;
            let value = match metric {
                Metric::Rouge => r.aggregate.rouge_l_f1,
                Metric::Accuracy => r.aggregate.accuracy,
            };
            println!("{}\t{value:.6}\t(n={})", format!("{metric:?}").to_lowercase(), r.item_count);
            if let Some(path) = report {
                fs::write(&path, serde_json::to_string_pretty(&r)?)?;
            }
            Ok(())
        }
    }
}

fn build(settings: &mut Settings, a: BuildArgs) -> Result<()> {
    let b = &mut settings.build;
    overlay(&mut b.large, a.large);
    overlay(&mut b.small, a.small);
    overlay(&mut b.n_layers, a.layers);
    overlay(&mut b.tau, a.tau);
    overlay(&mut b.k_edges, a.k_edges);
    overlay(&mut b.resolution, a.resolution);
    overlay(&mut b.seed, a.seed);
    if let Some(kind) = a.backend {
        settings.backend.kind = parse_backend(&kind)?;
    }
    overlay(&mut settings.backend.endpoint_url, a.endpoint_url);
    overlay(&mut settings.backend.model_name, a.model);
    settings.validate()?;

    let text = read_text(&a.input)?;
    let backends = backends(settings)?;
    let index = build_hierarchy(&text, &settings.build, backends.embedder.as_ref(), backends.summarizer.as_ref())?;
    let manifest = save_index(&index, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let counts: Vec<String> = index.layers.iter().map(|l| l.node_count().to_string()).collect();
    println!("layers\t{}\nnodes\t{}\nchecksum\t{}", manifest.layer_count, counts.join(","), manifest.checksum);
    Ok(())
}

fn overlay<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn read_text(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim().is_empty() {
        bail!("{} is empty", path.display());
    }
    Ok(text)
}

fn backends(settings: &Settings) -> Result<Backends> {
    Ok(Backends::from_config(&settings.backend, settings.templates()?)?)
}
