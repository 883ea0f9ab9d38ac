use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Result;
use clap::{Parser, Subcommand};
use hybrid_search::keyword::FilterSpec;
use hybrid_search::pipeline::{search, Locale, SearchRequest};
use hybrid_search::service::Service;
use hybrid_search::synth::{self, SynthConfig};
use hybrid_search::template::{Behavior, License};
use hybrid_search_cli::{bench, index, load_config, load_snapshot, loss_check, read_records, router, run_eval, Protocol};

#[derive(Parser)]
#[command(name = "hsearch", version, about = "Hybrid template search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a line-delimited corpus and write a snapshot.
    Index {
        corpus: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Serve `POST /search` and `GET /health` over HTTP.
    Serve {
        snapshot: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Run one query and print the response.
    Query {
        snapshot: PathBuf,
        text: String,
        #[arg(long)]
        explain: bool,
        #[arg(long)]
        page_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        behavior: Option<String>,
        #[arg(long)]
        license: Option<String>,
        /// Searcher's language, for the locale ranking feature.
        #[arg(long)]
        user_language: Option<String>,
        /// Searcher's region, for the locale ranking feature.
        #[arg(long)]
        user_region: Option<String>,
    },
    /// Evaluate a snapshot against query sets drawn from its corpus.
    Eval {
        snapshot: PathBuf,
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "title")]
        protocol: Protocol,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write per-query rows as JSON lines.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check analytic SupCoLA gradients against finite differences.
    LossCheck {
        #[arg(long, default_value_t = 50)]
        batches: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.07)]
        temperature: f64,
    },
    /// Time the sparse path against the exhaustive dense scan.
    Bench {
        #[arg(long, default_value_t = 300_000)]
        docs: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 300)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        dense_dim: usize,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 10_000)]
        docs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Index { corpus, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let (report, digest) = index(&corpus, &cfg, &out)?;
            for e in &report.errors {
                eprintln!("{e}");
            }
            println!("{} records, {} indexed, {} skipped", report.records, report.indexed, report.skipped);
            println!("digest {digest}");
        }
        Command::Serve { snapshot, addr } => {
            let svc = Arc::new(Service::with_snapshot(load_snapshot(&snapshot)?));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                axum::serve(listener, router(svc))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
        Command::Query {
            snapshot,
            text,
            explain,
            page_size,
            offset,
            language,
            region,
            behavior,
            license,
            user_language,
            user_region,
        } => {
            let snap = load_snapshot(&snapshot)?;
            let filters = FilterSpec {
                behavior: behavior.as_deref().map(str::parse::<Behavior>).transpose().map_err(anyhow::Error::msg)?,
                license: license.as_deref().map(str::parse::<License>).transpose().map_err(anyhow::Error::msg)?,
                language,
                region,
            };
            let mut req = SearchRequest::new(text).with_filters(filters);
            req.page_size = page_size;
            req.offset = offset;
            req.explain = explain;
            req.locale = Locale {
                language: user_language,
                region: user_region,
            };
            let resp = search(&snap, &req)?;
            let mut out = std::io::stdout().lock();
            if let Err(e) = writeln!(out, "{}", serde_json::to_string_pretty(&resp)?) {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
        Command::Eval {
            snapshot,
            corpus,
            protocol,
            queries,
            seed,
            report,
        } => {
            let snap = load_snapshot(&snapshot)?;
            let records = read_records(&corpus)?;
            if let Some(r) = run_eval(&snap, &records, protocol, queries, seed)? {
                print!("{}", r.summary_table());
                if let Some(path) = report {
                    std::fs::write(path, r.to_jsonl())?;
                }
            }
        }
        Command::LossCheck {
            batches,
            seed,
            temperature,
        } => {
            let worst = loss_check(batches, seed, temperature)?;
            println!("{batches} batches, max relative gradient error {worst:.3e}");
            if worst >= 1e-4 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bench {
            docs,
            queries,
            k,
            seed,
            dense_dim,
            config,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            for s in &mut cfg.spaces {
                s.dense_dim = dense_dim;
            }
            let r = bench(docs, queries, k, seed, &cfg)?;
            println!("docs {}  queries {}  k {}", r.docs, r.queries, r.k);
            println!("sparse path  p50 {:>9.0} us  p95 {:>9.0} us", r.sparse.p50_us, r.sparse.p95_us);
            println!("dense scan   p50 {:>9.0} us  p95 {:>9.0} us", r.dense.p50_us, r.dense.p95_us);
            println!("p50 ratio    {:.1}x", r.p50_ratio);
        }
        Command::Synth { docs, seed, out } => {
            let records = synth::generate(&SynthConfig::new(docs, seed));
            synth::write_jsonl(&out, &records)?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
