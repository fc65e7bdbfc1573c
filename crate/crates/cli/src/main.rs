use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use curio_core::bm25::DocKind;
use curio_core::embedding::{Embedder, EmbeddingProviderConfig, RemoteEmbedder, StubEmbedder, DEFAULT_DIMENSION};
use curio_core::fixture::generate_fixture;
use curio_core::hnsw::HnswParams;
use curio_core::ingest::{ingest, IngestConfig};
use curio_core::store::{Corpus, VectorField};
use curio_server::config::ServerConfig;

#[derive(Parser)]
#[command(name = "curio", version, about = "Multimodal search and chat over scientific collections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    Stub,
    Remote,
}

#[derive(clap::Args)]
struct EmbedderArgs {
    #[arg(long, value_enum, default_value = "stub")]
    embedder: EmbedderKind,
    /// Embedding endpoint for `--embedder remote`.
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchMode {
    /// BM25 over record titles.
    Records,
    /// BM25 over collection titles and descriptions.
    Collections,
    /// Text-to-image similarity over record images.
    Image,
    /// Text similarity over record titles.
    Title,
    /// Text similarity over collection descriptions.
    Description,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (manifest plus images).
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        collections: usize,
        #[arg(long, default_value_t = 12)]
        records: usize,
    },
    /// Validate a manifest, embed everything, and build a store.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        embedder: EmbedderArgs,
        #[arg(long, default_value_t = DEFAULT_DIMENSION)]
        dimension: usize,
        #[arg(long, default_value_t = HnswParams::default().m)]
        hnsw_m: usize,
        #[arg(long, default_value_t = HnswParams::default().ef_construction)]
        ef_construction: usize,
        #[arg(long, default_value_t = HnswParams::default().seed)]
        seed: u64,
    },
    /// Query a store directly, without the agent.
    Search {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value = "records")]
        mode: SearchMode,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        ef: Option<usize>,
        #[command(flatten)]
        embedder: EmbedderArgs,
        query: String,
    },
    /// Print corpus statistics of a store.
    Stats {
        #[arg(long)]
        store: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

fn embedder(args: &EmbedderArgs, dimension: usize) -> anyhow::Result<Box<dyn Embedder>> {
    Ok(match args.embedder {
        EmbedderKind::Stub => Box::new(StubEmbedder::new(dimension)),
        EmbedderKind::Remote => {
            let endpoint = args.endpoint.clone().context("--embedder remote needs --endpoint")?;
            Box::new(RemoteEmbedder::new(EmbeddingProviderConfig::new(endpoint, dimension))?)
        }
    })
}

fn open(store: &PathBuf) -> anyhow::Result<Corpus> {
    Corpus::open(store).with_context(|| format!("cannot open store {}", store.display()))
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    let mut stdout = String::new();
    match cli.command {
        Command::Fixture {
            out,
            seed,
            collections,
            records,
        } => {
            let manifest = generate_fixture(seed, collections, records)?.write(&out)?;
            writeln!(stdout, "wrote {collections} collections and {records} records to {}", manifest.display())?;
        }
        Command::Ingest {
            manifest,
            out,
            embedder: args,
            dimension,
            hnsw_m,
            ef_construction,
            seed,
        } => {
            let embedder = embedder(&args, dimension)?;
            let mut config = IngestConfig::default();
            config.hnsw.m = hnsw_m;
            config.hnsw.ef_construction = ef_construction;
            config.hnsw.seed = seed;
            let report = ingest(&manifest, &out, embedder.as_ref(), &config).await?;
            write!(stdout, "{report}")?;
        }
        Command::Search {
            store,
            mode,
            k,
            ef,
            embedder: args,
            query,
        } => {
            if k == 0 {
                bail!("k must be positive");
            }
            let corpus = open(&store)?;
            let hits: Vec<(String, f64)> = match mode {
                SearchMode::Records | SearchMode::Collections => {
                    let kinds: &[DocKind] = match mode {
                        SearchMode::Records => &[DocKind::RecordTitle],
                        _ => &[DocKind::CollectionTitle, DocKind::CollectionDescription],
                    };
                    corpus
                        .lexical
                        .search(&query, k, Some(kinds))
                        .into_iter()
                        .map(|h| (h.id.to_string(), h.score))
                        .collect()
                }
                SearchMode::Image | SearchMode::Title | SearchMode::Description => {
                    let field = match mode {
                        SearchMode::Image => VectorField::RecordImage,
                        SearchMode::Title => VectorField::RecordTitle,
                        _ => VectorField::CollectionDescription,
                    };
                    let embedder = embedder(&args, corpus.lock.dimension)?;
                    let vector = embedder.embed_text(std::slice::from_ref(&query)).await?.remove(0);
                    corpus
                        .index(field)
                        .search(&vector, k, ef)?
                        .into_iter()
                        .map(|h| (h.id.to_string(), h.score))
                        .collect()
                }
            };
            if hits.is_empty() {
                writeln!(stdout, "no matches")?;
            }
            for (rank, (id, score)) in hits.iter().enumerate() {
                let label = match corpus.store.get_record(id) {
                    Some(r) => corpus.store.record_title(r),
                    None => corpus.store.get_collection(id).map(|c| c.title.clone()).unwrap_or_default(),
                };
                writeln!(stdout, "{:>3}  {score:.6}  {id}  {label}", rank + 1)?;
            }
        }
        Command::Stats { store } => {
            let corpus = open(&store)?;
            let stats = corpus.store.stats();
            writeln!(stdout, "records:     {}", stats.total_records)?;
            writeln!(stdout, "collections: {}", stats.total_collections)?;
            writeln!(stdout, "embedder:    {} (dimension {})", corpus.lock.embedder, corpus.lock.dimension)?;
            for (name, n) in &stats.records_per_collection {
                writeln!(stdout, "  {name}: {n}")?;
            }
        }
        Command::Serve { config } => {
            let config = ServerConfig::load(&config)?;
            curio_server::serve(config).await?;
        }
    }
    // a closed pipe (`curio search ... | head`) is not an error
    match std::io::stdout().lock().write_all(stdout.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
