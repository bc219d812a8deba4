use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;

use cqa_rank::pipeline::manifest::write_json_atomic;
use cqa_rank::pipeline::{recommend, serve, Pipeline, PipelineConfig, StageError, StageResult, Variant};
use cqa_rank::synth::{self, SynthConfig};
use cqa_rank::Error;

#[derive(Parser)]
#[command(name = "cqa-rank", version, about = "Clarifying-question boosted answer ranking over StackExchange dumps")]
struct Cli {
    /// Flat key/value config file (TOML syntax).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Proceed even when upstream artifacts changed since their stage ran.
    #[arg(long, global = true)]
    force: bool,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Copy)]
struct VariantArgs {
    /// Train and score on the bare question.
    #[arg(long)]
    drop_cq: bool,
    /// Collapse labels to accepted vs. everything else.
    #[arg(long)]
    drop_labeling: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse the dump, build the vocabulary, embeddings, index and split.
    Ingest {
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Answer-hunger and clarifying-question statistics as JSON.
    Stats {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the clarifying-question generator.
    TrainQboost {
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Boost every question and build the labeled pair set.
    Label {
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Train the matching model.
    TrainRanker {
        #[command(flatten)]
        variant: VariantArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Grid-search the score weights on validation pools.
    Tune {
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Evaluate on the test split.
    Evaluate {
        #[command(flatten)]
        variant: VariantArgs,
        #[arg(long)]
        k: Option<usize>,
        /// Inclusive pool-size range, e.g. `6..10`.
        #[arg(long)]
        sweep_k: Option<String>,
        /// Rank the accepted answer first (harness check).
        #[arg(long)]
        oracle: bool,
    },
    /// Rank answers for one query and print a JSON line.
    Recommend {
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Newline-delimited JSON responder on a local TCP socket.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Write the planted synthetic dump and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        groups: Option<usize>,
        /// Only resolved questions, one accepted plus one other answer each.
        #[arg(long)]
        resolved_only: Option<usize>,
    },
}

fn parse_range(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Argument(format!("bad k range {s:?}; expected like 6..10"));
    let (a, b) = s.split_once("..=").or_else(|| s.split_once("..")).or_else(|| s.split_once('-')).ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn print_json<T: serde::Serialize>(v: &T) -> StageResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_config(cli: &Cli) -> StageResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(StageError::MissingInput(format!("config {} not found", p.display()))),
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.workspace {
        cfg.workspace = w.clone();
    }
    Ok(cfg)
}

fn variant(cfg: &PipelineConfig, v: VariantArgs) -> Variant {
    Variant {
        drop_cq: cfg.drop_cq || v.drop_cq,
        drop_labeling: cfg.drop_labeling || v.drop_labeling,
    }
}

fn run(cli: Cli) -> StageResult<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Ingest { dump: Some(d) } => cfg.dump_dir = d.clone(),
        Cmd::TrainQboost {
            beam,
            max_len,
            hidden,
            epochs,
        } => {
            cfg.beam = beam.unwrap_or(cfg.beam);
            cfg.max_len = max_len.unwrap_or(cfg.max_len);
            cfg.hidden = hidden.unwrap_or(cfg.hidden);
            cfg.qboost_epochs = epochs.unwrap_or(cfg.qboost_epochs);
        }
        Cmd::Label { beam, max_len } => {
            cfg.beam = beam.unwrap_or(cfg.beam);
            cfg.max_len = max_len.unwrap_or(cfg.max_len);
        }
        Cmd::TrainRanker { epochs: Some(e), .. } => cfg.ranker_epochs = *e,
        _ => {}
    }
    cfg.validate()?;
    let mut p = Pipeline::new(cfg);
    p.force = cli.force;

    match cli.cmd {
        Cmd::Ingest { .. } => print_json(&p.ingest()?),
        Cmd::Stats { out } => {
            let report = p.stats()?;
            match out {
                Some(path) => Ok(write_json_atomic(&path, &report)?),
                None => print_json(&report),
            }
        }
        Cmd::TrainQboost { .. } => print_json(&p.train_qboost()?),
        Cmd::Label { .. } => print_json(&p.label()?),
        Cmd::TrainRanker { variant: v, .. } => print_json(&p.train_ranker(variant(&p.cfg, v))?),
        Cmd::Tune { variant: v } => print_json(&p.tune(variant(&p.cfg, v))?),
        Cmd::Evaluate {
            variant: v,
            k,
            sweep_k,
            oracle,
        } => {
            let sweep = sweep_k.as_deref().map(parse_range).transpose()?;
            let out = p.evaluate(variant(&p.cfg, v), k.unwrap_or(p.cfg.k), sweep, oracle)?;
            print!("{}", out.report.table());
            if !out.sweep.is_empty() {
                print!("{}", cqa_rank::eval::sweep_table(&out.sweep));
            }
            Ok(())
        }
        Cmd::Recommend { query, k, variant: v } => {
            if k == Some(0) {
                return Err(Error::Argument("k must be at least 1".into()).into());
            }
            let state = p.recommend_state(variant(&p.cfg, v))?;
            let rec = recommend(&state, &query, k)?;
            println!("{}", serde_json::to_string(&rec)?);
            Ok(())
        }
        Cmd::Serve { addr, variant: v } => {
            let state = Arc::new(p.recommend_state(variant(&p.cfg, v))?);
            if state.index.is_empty() {
                return Err(StageError::EmptyIndex);
            }
            let addr = addr.unwrap_or_else(|| p.cfg.serve_addr.clone());
            let listener = TcpListener::bind(&addr).map_err(|source| StageError::Bind { addr: addr.clone(), source })?;
            info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
            serve(listener, state)
        }
        Cmd::Synth { out, groups, resolved_only } => {
            let mut sc = match resolved_only {
                Some(n) => SynthConfig::resolved_only(n, p.cfg.seed),
                None => SynthConfig {
                    seed: p.cfg.seed,
                    ..SynthConfig::default()
                },
            };
            if let Some(g) = groups {
                sc.groups = g;
            }
            let dump = synth::generate(&sc);
            synth::write_dump(&out, &dump)?;
            let cfg = PipelineConfig::synth(out.clone(), out.join("workspace"));
            let path = out.join("synth.toml");
            std::fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))?;
            println!("wrote {} questions to {}", dump.planted.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
