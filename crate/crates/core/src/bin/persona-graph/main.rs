use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use persona_graph::checkpoint::Checkpoint;
use persona_graph::config::{self, Settings};
use persona_graph::graph::{add_post, build_graph, GraphExport, UserGraph};
use persona_graph::pipeline::{
    evaluate, ingest, mask_records, predict_user, run_experiment, synth_dataset, write_jsonl,
    Ablation, DataFormat, SynthSpec, UserRecord,
};
use persona_graph::providers::build_provider;
use persona_graph::{Error, Result};

const EXIT_USAGE: u8 = 64;

/// Per-user post graphs and four-axis personality prediction.
///
/// Any config key can also be given as a flag, e.g. `--edge.tau 0.4` or
/// `--train.epochs=50`; flags override the config file.
#[derive(Parser, Debug)]
#[command(name = "persona-graph", version)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a csv or jsonl dataset into jsonl and print a summary.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// `csv` or `jsonl`; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<DataFormat>,
        #[arg(long)]
        out: PathBuf,
        /// Also remove type codes and axis words from the posts.
        #[arg(long)]
        mask: bool,
    },
    /// Embed posts (one per line) with the configured provider.
    Embed {
        #[command(flatten)]
        posts: PostsArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and export one user's graph.
    Graph {
        #[command(flatten)]
        posts: PostsArg,
        /// Use the trained attention vector from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and test; writes checkpoint.json and report.json.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// none, no-personalization, no-contradiction, no-user-node,
        /// no-node-loss, no-edge-loss or no-contrastive-loss.
        #[arg(long, default_value = "none")]
        ablation: Ablation,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on every user of a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict a type code for one user's posts.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        posts: PostsArg,
    },
    /// Add a post to an exported graph.
    AddPost {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        post: String,
        /// Also rebuild from scratch and fail (exit 5) on any difference.
        #[arg(long)]
        check: bool,
        /// Take settings from the checkpoint the graph was built with.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic labeled dataset.
    Synth {
        #[arg(long, default_value_t = 60)]
        users: usize,
        #[arg(long, default_value_t = 8)]
        posts: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct PostsArg {
    /// Posts file: one post per line, or a JSON array of strings.
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Read posts from standard input, one per line.
    #[arg(long)]
    stdin: bool,
}

/// Splits `--section.key value` / `--section.key=value` overrides out of argv.
fn split_overrides(args: Vec<String>) -> std::result::Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_owned(), Some(v.to_owned())),
            None => (flag.to_owned(), None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        if !config::is_key(&name) {
            return Err(format!("unknown option --{name}"));
        }
        let value = match inline {
            Some(v) => v,
            None => iter.next().ok_or_else(|| format!("--{name} needs a value"))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn read_posts(arg: &PostsArg) -> Result<Vec<String>> {
    let text = match &arg.posts {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| Error::io("<stdin>", e))?;
            buf
        }
    };
    let posts: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)?
    } else {
        text.lines().map(str::to_owned).collect()
    };
    let posts: Vec<String> = posts
        .into_iter()
        .map(|p| p.trim().to_owned())
        .filter(|p| !p.is_empty())
        .collect();
    if posts.is_empty() {
        return Err(Error::EmptyInput("no non-blank posts".into()));
    }
    Ok(posts)
}

fn load_records(path: &Path) -> Result<Vec<UserRecord>> {
    let ingested = ingest(path, DataFormat::from_path(path))?;
    if ingested.records.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no usable users", path.display())));
    }
    Ok(ingested.records)
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{json}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

#[derive(Serialize)]
struct IngestSummary {
    summary: String,
    users: usize,
    posts: usize,
    rejected: Vec<String>,
    labels: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct EmbedOutput {
    post_ids: Vec<String>,
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

fn graphs_match(a: &UserGraph, b: &UserGraph) -> std::result::Result<(), String> {
    let close = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12)
    };
    if a.adjacency.shape() != b.adjacency.shape() || !close(a.adjacency.as_slice(), b.adjacency.as_slice()) {
        return Err("adjacency differs".into());
    }
    if a.features.shape() != b.features.shape() || !close(a.features.as_slice(), b.features.as_slice()) {
        return Err("node features differ".into());
    }
    if !close(&a.attention, &b.attention) {
        return Err("attention weights differ".into());
    }
    Ok(())
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    let base_settings = |ckpt: Option<&Checkpoint>| -> Result<Settings> {
        let mut s = match ckpt {
            Some(c) => c.settings()?,
            None => Settings::default(),
        };
        if let Some(path) = &cli.config {
            s.apply_file(path)?;
        }
        for (k, v) in overrides {
            s.set(k, v)?;
        }
        s.validate()?;
        Ok(s)
    };
    match &cli.command {
        Command::Ingest {
            input,
            format,
            out,
            mask,
        } => {
            let format = format.unwrap_or_else(|| DataFormat::from_path(input));
            let mut ingested = ingest(input, format)?;
            if *mask {
                ingested.records = mask_records(&ingested.records);
            }
            write_jsonl(out, &ingested.records)?;
            let mut labels = BTreeMap::new();
            for r in &ingested.records {
                *labels.entry(r.mbti.to_string()).or_insert(0) += 1;
            }
            let users = ingested.records.len();
            let posts = ingested.records.iter().map(|r| r.posts.len()).sum();
            emit(
                &IngestSummary {
                    summary: format!("{users} users, {posts} posts"),
                    users,
                    posts,
                    rejected: ingested.rejected,
                    labels,
                },
                None,
            )
        }
        Command::Embed { posts, out } => {
            let settings = base_settings(None)?;
            let provider = build_provider(&settings.provider)?;
            let emb = provider.embed_batch(&read_posts(posts)?)?;
            emit(
                &EmbedOutput {
                    post_ids: emb.post_ids.clone(),
                    dim: emb.dim(),
                    embeddings: emb.rows.to_rows(),
                },
                out.as_deref(),
            )
        }
        Command::Graph {
            posts,
            checkpoint,
            out,
        } => {
            let ckpt = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let settings = base_settings(ckpt.as_ref())?;
            let provider = build_provider(&settings.provider)?;
            let posts = read_posts(posts)?;
            let w = match &ckpt {
                Some(c) => c.params.user_attention.clone(),
                None => vec![0.0; provider.embed_batch(&posts[..1])?.dim()],
            };
            let graph = build_graph(&posts, provider.as_ref(), &settings.edge, &w)?;
            emit(&graph.to_export(), out.as_deref())
        }
        Command::Train {
            data,
            runs,
            ablation,
            out,
        } => {
            let mut settings = base_settings(None)?;
            if let Some(dir) = out {
                settings.output_dir = dir.clone();
            }
            let records = load_records(data)?;
            let experiment = run_experiment(&records, &settings, *runs, *ablation)?;
            let dir = &settings.output_dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            experiment.checkpoint.save(&dir.join("checkpoint.json"))?;
            let json = experiment.report.to_json()?;
            let report_path = dir.join("report.json");
            std::fs::write(&report_path, format!("{json}\n")).map_err(|e| Error::io(&report_path, e))?;
            emit(&experiment.report, None)
        }
        Command::Evaluate { checkpoint, data } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let settings = base_settings(Some(&ckpt))?;
            let report = evaluate(&ckpt.params, &load_records(data)?, &settings)?;
            emit(&report, None)
        }
        Command::Predict { checkpoint, posts } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let settings = base_settings(Some(&ckpt))?;
            let posts = read_posts(posts)?;
            let provider = build_provider(&settings.provider)?;
            let prediction = predict_user(&ckpt.params, &posts, provider.as_ref(), &settings.edge)?;
            emit(&prediction, None)
        }
        Command::AddPost {
            graph,
            post,
            check,
            checkpoint,
            out,
        } => {
            let ckpt = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let settings = base_settings(ckpt.as_ref())?;
            let text = std::fs::read_to_string(graph).map_err(|e| Error::io(graph, e))?;
            let export: GraphExport = serde_json::from_str(&text)?;
            let old = UserGraph::from_export(&export)?;
            let provider = build_provider(&settings.provider)?;
            let w = old.attention_vector.clone();
            let updated = add_post(&old, post, provider.as_ref(), &settings.edge, &w)?;
            if *check {
                let mut posts = old.posts.clone();
                posts.push(post.clone());
                let rebuilt = build_graph(&posts, provider.as_ref(), &settings.edge, &w)?;
                graphs_match(&updated, &rebuilt).map_err(|m| {
                    Error::Consistency(format!("incremental update differs from rebuild: {m}"))
                })?;
                log::info!("incremental update matches full rebuild");
            }
            emit(&updated.to_export(), out.as_deref())
        }
        Command::Synth {
            users,
            posts,
            noise,
            seed,
            out,
        } => {
            let records = synth_dataset(&SynthSpec {
                users: *users,
                posts_per_user: *posts,
                noise: *noise,
                seed: *seed,
            });
            write_jsonl(out, &records)?;
            emit(
                &serde_json::json!({ "users": records.len(), "out": out.display().to_string() }),
                None,
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(parts) => parts,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
