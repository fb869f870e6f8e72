//! Command-line front end: prepare, train, eval, edge, params, predict.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use crate::augment::{expand_training_set, BlockEffect};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{
    load_dataset, load_idx, load_image, load_image_dir, preprocess, save_dataset, unify, Corpus, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, top_confusions};
use crate::fsutil::write_atomic;
use crate::model::{
    build, count_params_eq1, count_params_standard, predict, prepare_inputs, ModelGraph, Variant, Weights,
};
use crate::optim::{train_with, EpochMetrics, Precision, TrainConfig, TrainOutcome, DEFAULT_SEED};
use crate::seed::derive_seed;
use crate::tensor::Scalar;
use crate::vision::{encode_pgm, extract_edges, EdgeMethod, EdgeParams};

const AUGMENT_STREAM: u64 = 4;
pub const CHECKPOINT_FILE: &str = "checkpoint.enet";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Parser, Debug)]
#[command(name = "edgenet", version, about = "EdgeNet handwritten digit classifier")]
pub struct Cli {
    /// Master seed for every random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// edgenet, wc, se, id or log
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// canny, sobel, log or none; defaults to the variant's extractor
    #[arg(long, global = true)]
    pub edge_method: Option<String>,
    /// f32 or f64
    #[arg(long, global = true)]
    pub precision: Option<String>,
    /// Upper bound on worker threads
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// key=value file; command-line flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest corpora, unify, preprocess and save a dataset
    Prepare {
        /// Image directory with 0-9 subdirectories, or IMAGES,LABELS for an IDX pair
        #[arg(required = true)]
        sources: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Expand the training split with rotated, blocked and translated copies
        #[arg(long)]
        augment: bool,
    },
    /// Train a variant; writes checkpoint.enet and metrics.csv into --out
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, validation or test
        #[arg(long)]
        split: Option<String>,
        /// Confusion matrix CSV
        #[arg(long, default_value = "confusion.csv")]
        out: PathBuf,
    },
    /// Write the edge map of an image as PGM
    Edge {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter counts
    Params,
    /// Classify one image
    Predict {
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

const CONFIG_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "batch",
    "lr",
    "rho",
    "epsilon",
    "variant",
    "edge_method",
    "precision",
    "threads",
    "augment",
    "split",
];

/// Parsed `key=value` lines. `#` starts a comment; `-` and `_` are
/// interchangeable in keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let key = k.trim().replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{}`",
                    i + 1,
                    k.trim()
                )));
            }
            if values.insert(key, v.trim().to_owned()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{}`",
                    i + 1,
                    k.trim()
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("`{key}`: {e}"))))
            .transpose()
    }
}

/// Every tunable, resolved from flags, then the config file, then defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub variant: Variant,
    /// Explicit override of the variant's edge extractor.
    pub edge_method: Option<EdgeMethod>,
    pub precision: Precision,
    pub threads: Option<usize>,
    pub augment: bool,
    pub split: Split,
}

fn flag<T: FromStr<Err = Error>>(v: &Option<String>) -> Result<Option<T>> {
    v.as_deref().map(str::parse).transpose()
}

impl RunConfig {
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let defaults = TrainConfig::default();
        let (augment_flag, split_flag) = match &cli.command {
            Command::Prepare { augment, .. } => (augment.then_some(true), None),
            Command::Eval { split, .. } => (None, flag::<Split>(split)?),
            _ => (None, None),
        };
        let edge_method = match flag::<EdgeMethod>(&cli.edge_method)? {
            Some(m) => Some(m),
            None => file
                .get::<String>("edge_method")?
                .map(|s| s.parse())
                .transpose()?,
        };
        let cfg = Self {
            seed: cli.seed.or(file.get("seed")?).unwrap_or(DEFAULT_SEED),
            epochs: cli.epochs.or(file.get("epochs")?).unwrap_or(defaults.epochs),
            batch: cli.batch.or(file.get("batch")?).unwrap_or(defaults.batch_size),
            lr: cli.lr.or(file.get("lr")?).unwrap_or(defaults.lr),
            rho: file.get("rho")?.unwrap_or(defaults.rho),
            epsilon: file.get("epsilon")?.unwrap_or(defaults.epsilon),
            variant: match flag::<Variant>(&cli.variant)? {
                Some(v) => v,
                None => file
                    .get::<String>("variant")?
                    .map(|s| s.parse())
                    .transpose()?
                    .unwrap_or(Variant::EdgeNet),
            },
            edge_method,
            precision: match flag::<Precision>(&cli.precision)? {
                Some(p) => p,
                None => file
                    .get::<String>("precision")?
                    .map(|s| s.parse())
                    .transpose()?
                    .unwrap_or_default(),
            },
            threads: cli.threads.or(file.get("threads")?),
            augment: augment_flag.or(file.get("augment")?).unwrap_or(false),
            split: match split_flag {
                Some(s) => s,
                None => file
                    .get::<String>("split")?
                    .map(|s| s.parse())
                    .transpose()?
                    .unwrap_or(Split::Test),
            },
        };
        if cfg.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            epochs: self.epochs,
            lr: self.lr,
            rho: self.rho,
            epsilon: self.epsilon,
            master_seed: self.seed,
            precision: self.precision,
        }
    }

    /// Edge parameters for `variant`, honouring an explicit override.
    pub fn edge_params(&self, variant: Variant) -> Result<EdgeParams> {
        let method = match self.edge_method {
            Some(m) if variant == Variant::Wc && m != EdgeMethod::None => {
                return Err(Error::Config(format!(
                    "variant wc has no edge input; --edge-method {m} conflicts"
                )))
            }
            Some(m) if variant != Variant::Wc && m == EdgeMethod::None => {
                return Err(Error::Config(format!(
                    "variant {variant} needs an edge extractor"
                )))
            }
            Some(m) => m,
            None => variant.edge_method(),
        };
        Ok(EdgeParams::with_method(method))
    }
}

/// Parses `IMAGES,LABELS` as an IDX pair and anything else as an image
/// directory.
fn load_source(arg: &str) -> Result<Corpus> {
    match arg.split_once(',') {
        Some((images, labels)) => {
            let images = Path::new(images);
            Ok(Corpus {
                name: file_label(images),
                samples: load_idx(images, Path::new(labels))?,
            })
        }
        None => {
            let dir = Path::new(arg);
            if !dir.is_dir() {
                return Err(Error::io(
                    format!("source {arg}"),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
                ));
            }
            Ok(Corpus {
                name: file_label(dir),
                samples: load_image_dir(dir)?,
            })
        }
    }
}

fn file_label(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn cmd_prepare(cfg: &RunConfig, sources: &[String], out: &Path) -> Result<()> {
    let mut corpora: Vec<Corpus> = Vec::with_capacity(sources.len());
    for arg in sources {
        let mut corpus = load_source(arg)?;
        let base = corpus.name.clone();
        let mut k = 2;
        while corpora.iter().any(|c| c.name == corpus.name) {
            corpus.name = format!("{base}#{k}");
            k += 1;
        }
        corpora.push(corpus);
    }
    let mut ds = preprocess(unify(corpora, cfg.seed)?)?;
    if cfg.augment {
        let seed = derive_seed(cfg.seed, &[AUGMENT_STREAM]);
        ds.train = expand_training_set(&ds.train, seed, BlockEffect::default())?.samples;
        ds.manifest.augmented = true;
        ds.manifest.augment_seed = Some(seed);
    }
    ds.manifest.split_counts = ds.split_counts();
    save_dataset(&ds, out)?;
    for c in &ds.manifest.corpora {
        println!("corpus {}: {}", c.name, c.count);
    }
    let counts = ds.split_counts();
    println!(
        "train={} validation={} test={}{}",
        counts.train,
        counts.validation,
        counts.test,
        if cfg.augment { " (train augmented 4x)" } else { "" }
    );
    println!("saved {}", out.display());
    Ok(())
}

fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_acc\n");
    for m in history {
        writeln!(
            s,
            "{},{:.8},{:.8},{:.6}",
            m.epoch, m.train_loss, m.val_loss, m.val_accuracy
        )
        .unwrap();
    }
    s
}

fn banner(graph: &ModelGraph, edge: &EdgeParams) {
    println!("variant: {}", graph.variant);
    if graph.variant.has_edge_connection() {
        println!("edge extractor: {}", edge.method);
    } else {
        println!("edge extractor: none (no edge connection)");
    }
    println!("params standard={}", count_params_standard(graph));
    println!("params eq1={}", count_params_eq1(graph));
}

fn run_training<T: Scalar>(
    graph: &ModelGraph,
    train: &[crate::model::PreparedSample],
    validation: &[crate::model::PreparedSample],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let init = Weights::<T>::init_he(graph, config.init_seed());
    train_with(graph, init, train, validation, config, |m| {
        println!(
            "epoch {:>3}  train_loss={:.6}  val_loss={:.6}  val_acc={:.4}",
            m.epoch, m.train_loss, m.val_loss, m.val_accuracy
        );
    })
}

fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let edge = cfg.edge_params(cfg.variant)?;
    let ds = load_dataset(data)?;
    if ds.manifest.preprocessing_version == 0 {
        return Err(Error::Config(format!(
            "{} holds unprocessed images",
            data.display()
        )));
    }
    let graph = build(cfg.variant);
    banner(&graph, &edge);
    let train = prepare_inputs(cfg.variant, &edge, &ds.train)?;
    let validation = prepare_inputs(cfg.variant, &edge, &ds.validation)?;
    let config = cfg.train_config();
    let (best, history, best_epoch) = match cfg.precision {
        Precision::F32 => {
            let o = run_training::<f32>(&graph, &train, &validation, &config)?;
            (o.best, o.history, o.best_epoch)
        }
        Precision::F64 => {
            let o = run_training::<f64>(&graph, &train, &validation, &config)?;
            (o.best.cast::<f32>(), o.history, o.best_epoch)
        }
    };
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), cfg.variant, &best)?;
    write_atomic(&out.join(METRICS_FILE), metrics_csv(&history).as_bytes())?;
    println!(
        "best epoch {best_epoch} val_acc={:.4}",
        history[best_epoch - 1].val_accuracy
    );
    println!("saved {}", out.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let (graph, weights) = load_checkpoint(checkpoint)?;
    let edge = cfg.edge_params(graph.variant)?;
    let ds = load_dataset(data)?;
    let m = evaluate(&graph, &weights, ds.split(cfg.split), &edge)?;
    println!("split={}", cfg.split);
    println!("variant={}", graph.variant);
    print!("{}", m.summary());
    for (t, p, c) in top_confusions(&m.confusion, 5) {
        println!("confusion {t}->{p}={c}");
    }
    write_atomic(out, m.confusion.to_csv().as_bytes())?;
    Ok(())
}

fn cmd_edge(cfg: &RunConfig, image: &Path, out: &Path) -> Result<()> {
    let method = cfg.edge_method.unwrap_or(EdgeMethod::Canny);
    let img = load_image(image)?;
    let edges = extract_edges(&img, &EdgeParams::with_method(method))?;
    write_atomic(out, &encode_pgm(&edges))?;
    let on = edges.pixels().iter().filter(|&&v| v > 0.5).count();
    println!("{method}: {on} edge pixels of {}", edges.pixels().len());
    Ok(())
}

fn cmd_params(cfg: &RunConfig) -> Result<()> {
    cfg.edge_params(cfg.variant)?;
    let g = build(cfg.variant);
    println!("variant={}", cfg.variant);
    println!("standard={}", count_params_standard(&g));
    println!("eq1={}", count_params_eq1(&g));
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, image: &Path, checkpoint: &Path) -> Result<()> {
    let (graph, weights) = load_checkpoint(checkpoint)?;
    let edge = cfg.edge_params(graph.variant)?;
    let p = predict(&graph, &weights, &load_image(image)?, &edge)?;
    println!("label={}", p.label);
    let probs: Vec<String> = p.probabilities.iter().map(|v| format!("{v:.6}")).collect();
    println!("probabilities={}", probs.join(","));
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Prepare { sources, out, .. } => cmd_prepare(&cfg, sources, out),
        Command::Train { data, out } => cmd_train(&cfg, data, out),
        Command::Eval {
            data,
            checkpoint,
            out,
            ..
        } => cmd_eval(&cfg, data, checkpoint, out),
        Command::Edge { image, out } => cmd_edge(&cfg, image, out),
        Command::Params => cmd_params(&cfg),
        Command::Predict { image, checkpoint } => cmd_predict(&cfg, image, checkpoint),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("edgenet").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let c = ConfigFile::parse("# comment\nseed = 5\nedge-method=sobel\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(5));
        assert_eq!(c.get::<String>("edge_method").unwrap().as_deref(), Some("sobel"));
        assert!(matches!(ConfigFile::parse("colour=blue"), Err(Error::Config(_))));
        assert!(ConfigFile::parse("seed").is_err());
        assert!(ConfigFile::parse("seed=1\nseed=2").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "seed=5\nepochs=7\nvariant=wc\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = RunConfig::resolve(&parse(&["--config", p, "--epochs", "2", "params"])).unwrap();
        assert_eq!((cfg.seed, cfg.epochs, cfg.variant), (5, 2, Variant::Wc));
        let cfg = RunConfig::resolve(&parse(&["params"])).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.variant, Variant::EdgeNet);
    }

    #[test]
    fn edge_method_conflicts() {
        let cfg = RunConfig::resolve(&parse(&["--edge-method", "canny", "params"])).unwrap();
        assert!(cfg.edge_params(Variant::Wc).is_err());
        assert_eq!(cfg.edge_params(Variant::Se).unwrap().method, EdgeMethod::Canny);
        let cfg = RunConfig::resolve(&parse(&["params"])).unwrap();
        assert_eq!(cfg.edge_params(Variant::Log).unwrap().method, EdgeMethod::Log);
        assert_eq!(cfg.edge_params(Variant::Wc).unwrap().method, EdgeMethod::None);
    }

    #[test]
    fn bad_values_fail_before_work() {
        let cli = parse(&["--variant", "vgg", "params"]);
        assert!(matches!(RunConfig::resolve(&cli), Err(Error::UnknownVariant(_))));
        let cli = parse(&["--batch", "0", "params"]);
        assert!(RunConfig::resolve(&cli).is_err());
        let cli = parse(&["--threads", "0", "params"]);
        assert!(RunConfig::resolve(&cli).is_err());
    }
}
