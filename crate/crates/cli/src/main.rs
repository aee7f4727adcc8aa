use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use icenet::checkpoint::Checkpoint;
use icenet::dataset::{load_dataset, Split, SplitDataset, WordClass};
use icenet::embeddings::{load_embeddings, write_embeddings, EmbeddingTable};
use icenet::graph::{self, write_edge_list, AttentionScheme};
use icenet::metrics::{self, format_table};
use icenet::par::Execution;
use icenet::synth::{generate_synthetic, SynthConfig};
use icenet::trainer::{self, Model, SuiteReport, TrainConfig};

#[derive(Parser)]
#[command(name = "icenet", version, about = "Antonym/synonym classification with interlaced encoders")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model (or a multi-seed suite) and report dev/test metrics.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on one split.
    Eval(EvalArgs),
    /// Train the preliminary encoders and write the head and tail graphs.
    BuildGraph(BuildGraphArgs),
    /// Compare attention schemes.
    Ablate(AblateArgs),
    /// Write a synthetic corpus, its embeddings and a matching config.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory with train/dev/test split files.
    #[arg(long)]
    data: PathBuf,
    /// Word-embedding text file (optionally .gz).
    #[arg(long)]
    embeddings: PathBuf,
    /// Flat key = value config; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Word class, used to find upstream-named split files.
    #[arg(long, default_value = "other")]
    word_class: WordClass,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for the checkpoint and run record.
    #[arg(long, default_value = "icenet-out")]
    out: PathBuf,
    /// Number of seeds; more than one reports mean ± sample std.
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Dataset directory; defaults to the one the checkpoint was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "icenet-graphs")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "A1,A2,A3,A4,A5")]
    schemes: Vec<AttentionScheme>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Write every suite as JSON.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 25)]
    words_per_cluster: usize,
    #[arg(long, default_value_t = 2)]
    antonym_cluster_pairs: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    pairs_per_class: Option<usize>,
    /// Make train and test vocabularies disjoint.
    #[arg(long)]
    lexical: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match cli.command {
        Command::Train(a) => train(a, exec),
        Command::Eval(a) => eval(a),
        Command::BuildGraph(a) => build_graph(a, exec),
        Command::Ablate(a) => ablate(a, exec),
        Command::SynthData(a) => synth_data(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

struct Loaded {
    ds: SplitDataset,
    table: EmbeddingTable,
    cfg: TrainConfig,
}

fn load(a: &DataArgs) -> Result<Loaded> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = load_dataset(&a.data, a.word_class)?;
    let table = load_embeddings(&a.embeddings, cfg.input_dim, cfg.seed)
        .with_context(|| format!("loading {}", a.embeddings.display()))?;
    let r = table.report();
    if r.malformed_lines > 0 || r.duplicate_words > 0 {
        log::warn!(
            "embeddings: {} malformed line(s), {} duplicate word(s) skipped",
            r.malformed_lines,
            r.duplicate_words
        );
    }
    log::info!("dataset sizes (train, dev, test): {:?}", ds.sizes());
    Ok(Loaded { ds, table, cfg })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn suite_table(name: &str, suite: &SuiteReport) -> String {
    format_table([(format!("{name}/dev"), &suite.dev), (format!("{name}/test"), &suite.test)])
}

fn train(a: TrainArgs, exec: Execution) -> Result<()> {
    let Loaded { ds, table, cfg } = load(&a.data)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let label = format!("{}/{}", ds.word_class, cfg.variant);
    if a.runs > 1 {
        let suite = trainer::run_suite(&ds, &table, &cfg, a.runs, exec)?;
        print!("{}", suite_table(&label, &suite));
        write_json(&suite, &a.out.join("suite.json"))?;
        return Ok(());
    }
    let trained = trainer::train_model(&ds, &table, &cfg, exec)?;
    let mut record = trained.record;
    let ckpt_path = a.out.join("model.ckpt");
    let mut ck = trained.model.to_checkpoint(&cfg);
    let data_dir = fs::canonicalize(&a.data.data).unwrap_or(a.data.data.clone());
    ck.meta.insert("data".into(), data_dir.display().to_string());
    ck.meta.insert("word_class".into(), ds.word_class.to_string());
    ck.save(&ckpt_path)?;
    record.checkpoint = Some(ckpt_path);
    let dev = metrics::aggregate(std::slice::from_ref(&record.dev))?;
    let test = metrics::aggregate(std::slice::from_ref(&record.test))?;
    print!("{}", format_table([(format!("{label}/dev"), &dev), (format!("{label}/test"), &test)]));
    record.write_json(a.out.join("run.json"))?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (model, _cfg) = Model::from_checkpoint(&ck)?;
    let data = match a.data {
        Some(d) => d,
        None => PathBuf::from(ck.meta("data").context("checkpoint does not name its dataset; pass --data")?),
    };
    let class: WordClass = ck.meta.get("word_class").map_or(Ok(WordClass::Other), |c| c.parse())?;
    let ds = load_dataset(&data, class)?;
    let report = model.evaluate(ds.split(a.split))?;
    let agg = metrics::aggregate(std::slice::from_ref(&report))?;
    print!("{}", format_table([(format!("{}/{}", model.variant, a.split), &agg)]));
    println!("# tp={} fp={} fn={} tn={}", report.tp, report.fp, report.fn_, report.tn);
    if let Some(path) = a.record {
        write_json(&report, &path)?;
    }
    Ok(())
}

fn build_graph(a: BuildGraphArgs, exec: Execution) -> Result<()> {
    let Loaded { ds, table, cfg } = load(&a.data)?;
    if !cfg.variant.uses_graphs() {
        bail!("variant {} builds no graphs", cfg.variant);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (m_init, _) = trainer::train_m_init(&ds, &table, &cfg)?;
    let proj = m_init.encoders.project_all(m_init.inputs())?;
    let all: Vec<_> = ds.all_pairs().cloned().collect();
    let pairs = ds.pair_index(&all)?;
    let words = ds.vocab().words();

    let mut report = String::new();
    let mut schemes = serde_json::Map::new();
    for scheme in AttentionScheme::ALL {
        let build = graph::construct(
            &proj,
            m_init.inputs(),
            &pairs,
            &graph::GraphConfig {
                scheme,
                ..cfg.graph_config()
            },
            exec,
        )?;
        if scheme == cfg.scheme {
            write_edge_list(&build.head_graph, words, a.out.join("g_h.tsv"))?;
            write_edge_list(&build.tail_graph, words, a.out.join("g_t.tsv"))?;
            report.push_str(&format!("# head graph ({scheme})\n{}\n", build.head_graph.stats()));
            report.push_str(&format!("# tail graph ({scheme})\n{}\n", build.tail_graph.stats()));
            report.push_str(&format!(
                "# dictionaries\tantonym_entries\t{}\tsynonym_entries\t{}\n",
                build.dicts.antonym_entries(),
                build.dicts.synonym_entries()
            ));
            report.push_str("# weights per scheme\nscheme\tgraph\tmin\tmean\tmax\n");
        }
        schemes.insert(
            scheme.to_string(),
            serde_json::json!({ "head": build.head_graph.stats(), "tail": build.tail_graph.stats() }),
        );
    }
    for (name, stats) in &schemes {
        for side in ["head", "tail"] {
            let s = &stats[side];
            report.push_str(&format!(
                "{name}\t{side}\t{:.4}\t{:.4}\t{:.4}\n",
                s["weight_min"].as_f64().unwrap_or(0.0),
                s["weight_mean"].as_f64().unwrap_or(0.0),
                s["weight_max"].as_f64().unwrap_or(0.0)
            ));
        }
    }
    print!("{report}");
    fs::write(a.out.join("stats.txt"), &report)?;
    write_json(&schemes, &a.out.join("stats.json"))?;
    Ok(())
}

fn ablate(a: AblateArgs, exec: Execution) -> Result<()> {
    let Loaded { ds, table, cfg } = load(&a.data)?;
    let results = trainer::ablate(&ds, &table, &cfg, &a.schemes, a.runs, exec)?;
    print!("{}", format_table(results.iter().map(|(s, r)| (s.to_string(), &r.test))));
    if let Some(path) = a.record {
        let map: serde_json::Map<String, serde_json::Value> = results
            .iter()
            .map(|(s, r)| Ok((s.to_string(), serde_json::to_value(r)?)))
            .collect::<Result<_>>()?;
        write_json(&map, &path)?;
    }
    Ok(())
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_clusters: a.clusters,
        words_per_cluster: a.words_per_cluster,
        antonym_cluster_pairs: a.antonym_cluster_pairs,
        dim: a.dim,
        noise: a.noise,
        seed: a.seed,
        pairs_per_class: a.pairs_per_class,
        lexical: a.lexical,
    };
    let (ds, table) = generate_synthetic(&cfg)?;
    ds.write_tsv(&a.out)?;
    write_embeddings(&table, a.out.join("embeddings.txt"))?;
    let train_cfg = TrainConfig {
        input_dim: a.dim,
        seed: a.seed,
        ..TrainConfig::default()
    };
    fs::write(a.out.join("config.toml"), train_cfg.to_toml())?;
    let [tr, dv, te] = ds.sizes();
    println!("split\tpairs\tantonyms\tsynonyms");
    for (split, n) in [(Split::Train, tr), (Split::Dev, dv), (Split::Test, te)] {
        let (ant, syn) = ds.class_balance(split);
        println!("{split}\t{n}\t{ant}\t{syn}");
    }
    Ok(())
}
