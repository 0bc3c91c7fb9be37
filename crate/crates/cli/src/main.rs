use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use malscan::pipeline::{self, ScanItem, ScanRecord, Scanner};
use malscan::report::{read_report, render_table, write_report, Summary};
use malscan::stores::{CorpusStore, ModelStore};
use malscan::verdict::{Triage, Verdict};
use malscan_core::classifiers::{calibrate_nu, cross_validate, CvConfig, SvmConfig};
use malscan_core::clone::canonical_digest_with;
use malscan_core::vectorizer::read_dataset;
use malscan_core::versioning::parse_timestamp;
use malscan_core::{
    extract_features, load_tarball, make_plan, reproduce, ChangeVectorF64, DigestAlgorithm, FeatureVectorF64,
    MalwareHashSet, ModelSetF64, PatternTable, ReproduceConfig, TrainConfig,
};
use malscan_registry::{RegistryClient, RegistrySource};

#[derive(Parser)]
#[command(name = "malscan", version, about = "Flag suspicious npm package versions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Registry base URL, or a fixture directory.
    #[arg(long, global = true, default_value = "https://registry.npmjs.org")]
    registry: String,
    /// Directory of trained model documents.
    #[arg(long, global = true, default_value = "malscan-data/models")]
    models: PathBuf,
    #[arg(long, global = true, default_value = "malscan-data/corpus.jsonl")]
    corpus: PathBuf,
    /// Append-only log of known-malware digests.
    #[arg(long, global = true, default_value = "malscan-data/hashes.tsv")]
    hashes: PathBuf,
    #[arg(long, global = true, value_parser = parse_algorithm, default_value = "md5")]
    digest: DigestAlgorithm,
    /// Pattern table JSON; the built-in table when omitted.
    #[arg(long, global = true)]
    pattern_table: Option<PathBuf>,
    /// Tarball cache directory for registry downloads.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Concurrent scan workers.
    #[arg(long, global = true, default_value_t = 4)]
    jobs: usize,
}

fn parse_algorithm(s: &str) -> Result<DigestAlgorithm, String> {
    s.parse().map_err(|e: malscan_core::clone::CloneError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Scan versions published in a window or named explicitly.
    Scan(ScanArgs),
    /// Print the features of a tarball, or the change vector of name@version.
    Extract { target: String },
    /// Train models on a labelled dataset and add it to the corpus.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Train only; leave the corpus untouched.
        #[arg(long)]
        no_import: bool,
    },
    /// Predict with the stored models, for name@version or every dataset row.
    Predict {
        target: Option<String>,
        #[arg(long, conflicts_with = "target")]
        dataset: Option<PathBuf>,
    },
    /// Record a triage decision for a scanned version.
    Label {
        target: String,
        /// tp or fp
        triage: Triage,
    },
    /// Retrain every model on the corpus.
    Retrain {
        /// Count unlabelled versions that scanned clean as benign.
        #[arg(long)]
        assume_unflagged_benign: bool,
    },
    /// Check a tarball or name@version against the known-malware digests.
    CloneCheck { target: String },
    /// Rebuild name@version from its source repository and compare.
    Reproduce {
        target: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stratified k-fold evaluation of all models.
    CrossValidate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Leave-one-out sweep of the SVM's nu over a grid.
    CalibrateNu {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.05,0.1")]
        grid: Vec<f64>,
    },
    /// Summarise a scan report, or every verdict in the corpus.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Also print the verdict lines.
        #[arg(long)]
        lines: bool,
    },
    /// Import or export the known-malware digest log.
    Hashes {
        #[command(subcommand)]
        action: HashAction,
    },
}

#[derive(Args)]
struct ScanArgs {
    /// Start of the publication window, RFC 3339 (inclusive).
    #[arg(long, requires = "until")]
    since: Option<String>,
    /// End of the publication window, RFC 3339 (exclusive).
    #[arg(long, requires = "since")]
    until: Option<String>,
    /// name@version to scan; repeatable.
    #[arg(long = "package")]
    packages: Vec<String>,
    /// Restrict the window listing to the names in this file, one per line.
    #[arg(long, requires = "since")]
    names_file: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_reproduce: bool,
    /// Reproducer settings as JSON.
    #[arg(long)]
    reproduce_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum HashAction {
    /// Merge digest lines from a file; prints how many were new.
    Import { file: PathBuf },
    /// Write every digest line to stdout or a file.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct App {
    global: Global,
}

impl App {
    fn registry(&self) -> RegistryClient {
        let client = RegistryClient::new(RegistrySource::parse(&self.global.registry));
        match &self.global.cache {
            Some(dir) => client.with_cache(dir),
            None => client,
        }
    }

    fn patterns(&self) -> Result<PatternTable> {
        match &self.global.pattern_table {
            Some(p) => PatternTable::load(p).with_context(|| format!("pattern table {}", p.display())),
            None => Ok(PatternTable::default()),
        }
    }

    fn hashes(&self) -> Result<MalwareHashSet> {
        let path = &self.global.hashes;
        ensure_parent(path)?;
        MalwareHashSet::open(path, self.global.digest).with_context(|| format!("hash set {}", path.display()))
    }

    fn corpus(&self) -> Result<CorpusStore> {
        let path = &self.global.corpus;
        CorpusStore::open(path).with_context(|| format!("corpus {}", path.display()))
    }

    fn model_store(&self) -> ModelStore {
        ModelStore::new(&self.global.models)
    }

    fn models(&self) -> Result<ModelSetF64> {
        let set = self.model_store().load()?;
        if set.is_empty() {
            bail!("no models in {}; run `train` first", self.global.models.display());
        }
        Ok(set)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn read_vectors(path: &Path) -> Result<Vec<ChangeVectorF64>> {
    let file = File::open(path).with_context(|| format!("dataset {}", path.display()))?;
    read_dataset(BufReader::new(file)).with_context(|| format!("dataset {}", path.display()))
}

fn read_reproduce_config(path: Option<&Path>) -> Result<ReproduceConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("reproducer config {}", p.display()))
        }
        None => Ok(ReproduceConfig::default()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Treats an existing path as a tarball, anything else as name@version.
fn is_tarball(target: &str) -> bool {
    Path::new(target).is_file()
}

/// Flags win over errors: a batch with anything flagged exits 1.
fn exit_for(summary: &Summary) -> ExitCode {
    if summary.flagged > 0 {
        ExitCode::from(1)
    } else if summary.errors > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn scan(cx: &App, args: &ScanArgs) -> Result<ExitCode> {
    let registry = cx.registry();
    let mut batch: Vec<ScanItem> = args
        .packages
        .iter()
        .map(|p| p.parse())
        .collect::<Result<_, _>>()?;
    if let (Some(since), Some(until)) = (&args.since, &args.until) {
        let since = parse_timestamp(since).context("--since")?;
        let until = parse_timestamp(until).context("--until")?;
        let names: Option<Vec<String>> = match &args.names_file {
            Some(p) => Some(
                fs::read_to_string(p)
                    .with_context(|| format!("names file {}", p.display()))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(String::from)
                    .collect(),
            ),
            None => None,
        };
        for v in registry.list_new_versions(since, until, names.as_deref())? {
            batch.push(ScanItem::new(v.package, v.version));
        }
    }
    if batch.is_empty() && args.since.is_none() {
        bail!("nothing to scan: give --since/--until or --package");
    }

    let models = cx.models()?;
    let patterns = cx.patterns()?;
    let hashes = cx.hashes()?;
    let reproduce_config = read_reproduce_config(args.reproduce_config.as_deref())?;
    let records: Vec<ScanRecord> = Scanner {
        registry: &registry,
        models: &models,
        hashes: &hashes,
        patterns: &patterns,
        reproduce: (!args.no_reproduce).then_some(&reproduce_config),
        jobs: cx.global.jobs,
    }
    .scan(&batch)?;

    let mut corpus = cx.corpus()?;
    let changed = pipeline::record_scan(&mut corpus, &records)?;
    log::info!("{changed} corpus entries updated");
    // carry existing triage into the report
    let verdicts: Vec<Verdict> = records
        .iter()
        .map(|r| {
            let mut v = r.verdict.clone();
            v.triage = corpus.get(&v.package, &v.version).and_then(|e| e.triage);
            v
        })
        .collect();
    for r in &records {
        if let Some(repro) = &r.reproduce {
            for line in &repro.logs {
                log::debug!("{}@{} reproduce: {line}", r.verdict.package, r.verdict.version);
            }
        }
    }
    let summary = match &args.out {
        Some(path) => {
            ensure_parent(path)?;
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            let s = write_report(&mut w, &verdicts)?;
            w.flush()?;
            s
        }
        None => write_report(io::stdout().lock(), &verdicts)?,
    };
    eprint!("{}", render_table(&summary));
    Ok(exit_for(&summary))
}

fn run(cx: &App, command: &Command) -> Result<ExitCode> {
    match command {
        Command::Scan(args) => return scan(cx, args),
        Command::Extract { target } => {
            let patterns = cx.patterns()?;
            if is_tarball(target) {
                let artifact = load_tarball(&fs::read(target)?)?;
                for w in &artifact.warnings {
                    log::warn!("{target}: {w}");
                }
                let features: FeatureVectorF64 = extract_features(&artifact, &patterns);
                print_json(&features)?;
            } else {
                let registry = cx.registry();
                let models = ModelSetF64::default();
                let hashes = MalwareHashSet::new(cx.global.digest);
                let scanner = Scanner {
                    registry: &registry,
                    models: &models,
                    hashes: &hashes,
                    patterns: &patterns,
                    reproduce: None,
                    jobs: 1,
                };
                let (vector, _) = scanner.vectorize(&target.parse()?).map_err(anyhow::Error::msg)?;
                print_json(&vector)?;
            }
        }
        Command::Train { dataset, no_import } => {
            let vectors = read_vectors(dataset)?;
            if !no_import {
                let mut corpus = cx.corpus()?;
                let mut added = 0;
                for v in &vectors {
                    added += usize::from(corpus.observe(v.clone(), None)?);
                }
                log::info!("{added} samples added to the corpus");
            }
            let outcome = pipeline::train_and_save(&vectors, &cx.model_store(), &TrainConfig::default(), cx.global.seed)?;
            report_training(&outcome);
        }
        Command::Predict { target, dataset } => {
            let models = cx.models()?;
            let vectors = match (target, dataset) {
                (_, Some(path)) => read_vectors(path)?,
                (Some(t), None) => {
                    let registry = cx.registry();
                    let patterns = cx.patterns()?;
                    let hashes = MalwareHashSet::new(cx.global.digest);
                    let scanner = Scanner {
                        registry: &registry,
                        models: &models,
                        hashes: &hashes,
                        patterns: &patterns,
                        reproduce: None,
                        jobs: 1,
                    };
                    vec![scanner.vectorize(&t.parse()?).map_err(anyhow::Error::msg)?.0]
                }
                (None, None) => bail!("give name@version or --dataset"),
            };
            let mut out = io::stdout().lock();
            let mut any = false;
            for v in &vectors {
                let flags = models.flags(v)?;
                any |= flags.values().any(|l| l.is_malicious());
                let line = serde_json::json!({"package": v.package, "version": v.version, "flags": flags});
                writeln!(out, "{line}")?;
            }
            return Ok(if any { ExitCode::from(1) } else { ExitCode::SUCCESS });
        }
        Command::Label { target, triage } => {
            let item: ScanItem = target.parse()?;
            let mut corpus = cx.corpus()?;
            let mut hashes = cx.hashes()?;
            let today = chrono::Utc::now().format("%Y-%m-%d").to_string();
            let outcome = pipeline::label(&mut corpus, &mut hashes, &item, *triage, &today)?;
            match outcome.previous {
                Some(p) if p != *triage => eprintln!("{item}: {p} -> {triage}"),
                _ => eprintln!("{item}: {triage}"),
            }
            if let Some(r) = outcome.registered {
                eprintln!("registered {}", r.digest);
            }
        }
        Command::Retrain { assume_unflagged_benign } => {
            let corpus = cx.corpus()?;
            let outcome = pipeline::retrain(
                &corpus,
                &cx.model_store(),
                *assume_unflagged_benign,
                &TrainConfig::default(),
                cx.global.seed,
            )?;
            report_training(&outcome);
        }
        Command::CloneCheck { target } => {
            let hashes = cx.hashes()?;
            let artifact = if is_tarball(target) {
                load_tarball(&fs::read(target)?)?
            } else {
                let item: ScanItem = target.parse()?;
                load_tarball(&cx.registry().fetch_tarball(&item.package, &item.version)?)?
            };
            let digest = canonical_digest_with(&artifact, hashes.algorithm());
            let matched = hashes.lookup(&digest);
            print_json(&serde_json::json!({"digest": digest, "clone_of": matched}))?;
            return Ok(if matched.is_some() { ExitCode::from(1) } else { ExitCode::SUCCESS });
        }
        Command::Reproduce { target, config } => {
            let item: ScanItem = target.parse()?;
            let config = read_reproduce_config(config.as_deref())?;
            let artifact = load_tarball(&cx.registry().fetch_tarball(&item.package, &item.version)?)?;
            let Some(plan) = make_plan(&artifact.manifest, &item.version, &config) else {
                bail!("{item}: no usable repository field");
            };
            let result = reproduce(&plan, &artifact, &config);
            print_json(&serde_json::json!({"plan": plan, "result": result}))?;
        }
        Command::CrossValidate { dataset, k } => {
            let vectors = read_vectors(dataset)?;
            let config = CvConfig {
                k: *k,
                seed: cx.global.seed,
                train: TrainConfig::default(),
            };
            let report = cross_validate(&vectors, &config)?;
            print_json(&report.metrics)?;
        }
        Command::CalibrateNu { dataset, grid } => {
            let vectors = read_vectors(dataset)?;
            print_json(&calibrate_nu(&vectors, grid, SvmConfig::default())?)?;
        }
        Command::Report { input, lines } => {
            let verdicts = match input {
                Some(p) => read_report(BufReader::new(File::open(p).with_context(|| format!("report {}", p.display()))?))?,
                None => cx.corpus()?.verdicts(),
            };
            let summary = Summary::of(&verdicts);
            if *lines {
                write_report(io::stdout().lock(), &verdicts)?;
            }
            print!("{}", render_table(&summary));
        }
        Command::Hashes { action } => {
            let mut hashes = cx.hashes()?;
            match action {
                HashAction::Import { file } => {
                    let f = File::open(file).with_context(|| format!("reading {}", file.display()))?;
                    let added = hashes.import(BufReader::new(f))?;
                    println!("{added}");
                }
                HashAction::Export { out } => match out {
                    Some(p) => {
                        let mut w = BufWriter::new(File::create(p)?);
                        hashes.export(&mut w)?;
                        w.flush()?;
                    }
                    None => hashes.export(io::stdout().lock())?,
                },
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report_training(outcome: &pipeline::RetrainOutcome) {
    for (kind, reason) in &outcome.skipped {
        eprintln!("{kind}: not trained ({reason})");
    }
    let kinds: Vec<&str> = outcome.trained.iter().map(|k| k.id()).collect();
    eprintln!(
        "model version {}: {} on {} rows (corpus {})",
        outcome.model_version,
        kinds.join(", "),
        outcome.rows,
        &outcome.corpus_hash[..12.min(outcome.corpus_hash.len())]
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cx = App { global: cli.global };
    match run(&cx, &cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
