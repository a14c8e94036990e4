//! convboost: synthesize datasets, train the baseline CNN or the hybrid
//! CNN+GBT classifier, compare both on one shared split, and classify
//! single images.
//!
//! Every command writes plain files and is idempotent: identical inputs
//! and seeds produce identical bytes. Each JSON artifact embeds the fully
//! resolved configuration (seed included); CSV artifacts keep their pinned
//! headers and sit next to a JSON file that carries the config. Exit codes:
//! 0 success, 1 usage or config error, 2 data error, 3 internal error.

use std::env;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use convboost_core::convnet::{load_network, save_network, Network};
use convboost_core::dataio::{
    load_dataset, preprocess, read_pgm, save_dataset, synthesize_dataset, ImageSample,
    MANIFEST_NAME,
};
use convboost_core::fsutil::write_atomic;
use convboost_core::gbt::Ensemble;
use convboost_core::metrics::MetricsReport;
use convboost_core::pipeline::{
    run_experiment, train_baseline_cnn, train_hybrid, ExperimentConfig, HybridModel,
};
use convboost_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "convboost",
    version,
    about = "Train and compare a small CNN against a hybrid CNN + gradient-boosted-tree classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic PGM dataset with a manifest.
    Synth(SynthArgs),
    /// Train one model and write its artifact directory.
    Train(TrainArgs),
    /// Train baseline and hybrid on one split and write the comparison.
    Compare(CompareArgs),
    /// Classify one PGM image with a trained model directory.
    Predict(PredictArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Images per class.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Number of classes (2 to 5).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Image side in pixels (>= 16).
    #[arg(long, default_value_t = 32)]
    side: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest CSV.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Output directory for model artifacts (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Which model to train.
    #[arg(long, value_enum)]
    mode: Mode,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Dataset manifest CSV.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Output directory for report files (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Model directory written by `train`.
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Grayscale PGM image to classify.
    #[arg(long, value_name = "PATH")]
    image: PathBuf,
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum Mode {
    Cnn,
    Hybrid,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Cnn => "cnn",
            Mode::Hybrid => "hybrid",
        }
    }
}

/// Experiment settings: an optional JSON config file plus one flag per
/// field. Flags override file values; the file must not contain unknown
/// keys. The resolved result is a validated [`ExperimentConfig`].
#[derive(Args)]
struct ConfigArgs {
    /// JSON config file mirroring the experiment config; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every stage derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Preprocessing resize target (images become side x side x 3).
    #[arg(long)]
    side: Option<usize>,
    /// Fraction of samples held out for the test split.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Augment the whole pool before splitting (the order the source
    /// experiment used) instead of augmenting the train side after.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    paper_order: Option<bool>,
    /// Disable augmentation.
    #[arg(long, conflicts_with = "augment")]
    no_augment: bool,
    /// Enable or disable augmentation explicitly.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    augment: Option<bool>,
    /// Transformed copies per source image when augmenting.
    #[arg(long)]
    copies: Option<usize>,
    /// Keep source images alongside their augmented copies.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    keep_originals: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// CNN learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Weight initialization scale before fan-in normalization.
    #[arg(long)]
    init_stddev: Option<f64>,
    /// Rate of the two dropout layers around the global average pool.
    #[arg(long)]
    dropout: Option<f64>,
    /// L2 penalty on the dense head's weights and bias.
    #[arg(long)]
    l2: Option<f64>,
    /// Boosting shrinkage.
    #[arg(long)]
    boost_lr: Option<f64>,
    /// Maximum tree depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Boosting rounds (one tree per class per round).
    #[arg(long)]
    n_estimators: Option<usize>,
    /// L2 regularization on leaf weights.
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum gain required to keep a split.
    #[arg(long)]
    gamma: Option<f64>,
    /// Minimum hessian sum per child.
    #[arg(long)]
    min_child_hessian: Option<f64>,
    /// Initial raw score for every class.
    #[arg(long)]
    base_score: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Load(format!("{}: {}", path.display(), e)))?;
                serde_json::from_str::<ExperimentConfig>(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e)))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(self.seed => cfg.seed);
        set!(self.side => cfg.target_side);
        set!(self.test_fraction => cfg.test_fraction);
        set!(self.paper_order => cfg.paper_order);
        set!(self.augment => cfg.augment);
        if self.no_augment {
            cfg.augment = false;
        }
        set!(self.copies => cfg.copies_per_image);
        set!(self.keep_originals => cfg.keep_originals);
        set!(self.epochs => cfg.epochs);
        set!(self.batch_size => cfg.batch_size);
        set!(self.lr => cfg.learning_rate);
        set!(self.init_stddev => cfg.init_stddev);
        set!(self.dropout => cfg.dropout_rate);
        set!(self.l2 => cfg.l2);
        set!(self.boost_lr => cfg.boost.learning_rate);
        set!(self.max_depth => cfg.boost.max_depth);
        set!(self.n_estimators => cfg.boost.n_estimators);
        set!(self.lambda => cfg.boost.lambda);
        set!(self.gamma => cfg.boost.gamma);
        set!(self.min_child_hessian => cfg.boost.min_child_hessian);
        set!(self.base_score => cfg.boost.base_score);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// What `predict` needs to rebuild a model from its directory. Written as
/// model.json next to the weight files.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDescriptor {
    mode: String,
    seed: u64,
    config: ExperimentConfig,
    class_names: Vec<String>,
    target_side: usize,
}

#[derive(Serialize)]
struct MetricsArtifact<'a> {
    seed: u64,
    config: &'a ExperimentConfig,
    metrics: &'a MetricsReport,
}

#[derive(Serialize)]
struct Prediction<'a> {
    class: &'a str,
    probabilities: &'a [f64],
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; they are not errors.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = init_thread_pool() {
        eprintln!("error: {}", msg);
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        1
    } else if e.is_data() {
        2
    } else {
        3
    }
}

/// Caps rayon's worker count when CONVBOOST_THREADS is set. Results do not
/// depend on the thread count; only speed does.
fn init_thread_pool() -> std::result::Result<(), String> {
    let raw = match env::var("CONVBOOST_THREADS") {
        Ok(v) => v,
        Err(env::VarError::NotPresent) => return Ok(()),
        Err(e) => return Err(format!("CONVBOOST_THREADS: {}", e)),
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("CONVBOOST_THREADS must be a positive integer, got {:?}", raw))?;
    if threads == 0 {
        return Err("CONVBOOST_THREADS must be >= 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Predict(args) => cmd_predict(&args),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let ds = synthesize_dataset(args.seed, args.per_class, args.classes, args.side)?;
    save_dataset(&ds, &args.out)?;
    println!(
        "wrote {} images and {} to {}",
        ds.len(),
        MANIFEST_NAME,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let ds = load_dataset(&args.data)?;
    let out = &args.out;

    let (network, history, metrics, ensemble) = match args.mode {
        Mode::Cnn => {
            let (network, history, metrics) = train_baseline_cnn(&ds, &cfg)?;
            (network, history, metrics, None)
        }
        Mode::Hybrid => {
            let (model, history, metrics) = train_hybrid(&ds, &cfg)?;
            let ensemble = model.booster().to_json()?;
            (model.cnn().clone(), history, metrics, Some(ensemble))
        }
    };

    let descriptor = ModelDescriptor {
        mode: args.mode.as_str().to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        class_names: ds.class_names().to_vec(),
        target_side: cfg.target_side,
    };
    write_atomic(&out.join("config.json"), json_pretty(&cfg)?.as_bytes())?;
    write_atomic(&out.join("model.json"), json_pretty(&descriptor)?.as_bytes())?;
    save_network(
        &network,
        &cfg.train_config(),
        &out.join("network.json"),
        &out.join("network.bin"),
    )?;
    if let Some(ensemble) = ensemble {
        write_atomic(&out.join("ensemble.json"), ensemble.as_bytes())?;
    }
    write_atomic(&out.join("history.csv"), history.to_csv_string().as_bytes())?;
    let artifact = MetricsArtifact {
        seed: cfg.seed,
        config: &cfg,
        metrics: &metrics,
    };
    write_atomic(&out.join("metrics.json"), json_pretty(&artifact)?.as_bytes())?;
    println!(
        "{}: test accuracy {:.4}; artifacts in {}",
        args.mode.as_str(),
        metrics.accuracy,
        out.display()
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let ds = load_dataset(&args.data)?;
    let report = run_experiment(&cfg, &ds)?;

    let out = &args.out;
    write_atomic(&out.join("config.json"), json_pretty(&cfg)?.as_bytes())?;
    write_atomic(&out.join("report.json"), report.to_json()?.as_bytes())?;
    write_atomic(&out.join("summary.csv"), report.summary_csv().as_bytes())?;
    for model in &report.models {
        write_atomic(
            &out.join(format!("history_{}.csv", model.name)),
            model.history.to_csv_string().as_bytes(),
        )?;
    }
    println!("report written to {}", out.display());
    print!("{}", report.summary_csv());
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let text = fs::read_to_string(args.model.join("model.json"))
        .map_err(|e| Error::Load(format!("{}: {}", args.model.join("model.json").display(), e)))?;
    let descriptor: ModelDescriptor = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("model.json: {}", e)))?;
    let (network, _) = load_network(&args.model.join("network.json"), &args.model.join("network.bin"))?;

    let pixels = read_pgm(&args.image)?;
    let id = args
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    // The label is a required field of a sample but plays no part in
    // prediction; 0 is a placeholder.
    let sample = ImageSample::new(id, pixels, 0)?;

    let (class, probabilities) = match descriptor.mode.as_str() {
        "cnn" => predict_cnn(&network, &descriptor, &sample)?,
        "hybrid" => {
            let json = fs::read_to_string(args.model.join("ensemble.json")).map_err(|e| {
                Error::Load(format!("{}: {}", args.model.join("ensemble.json").display(), e))
            })?;
            let booster = Ensemble::from_json(&json)?;
            let model = HybridModel::new(
                network,
                booster,
                descriptor.class_names.clone(),
                descriptor.target_side,
            )?;
            model.predict(&sample)?
        }
        other => {
            return Err(Error::Load(format!(
                "model.json: unknown mode {:?} (expected \"cnn\" or \"hybrid\")",
                other
            )))
        }
    };

    let prediction = Prediction {
        class: &class,
        probabilities: &probabilities,
    };
    let json = serde_json::to_string(&prediction)
        .map_err(|e| Error::Serialize(format!("prediction: {}", e)))?;
    println!("{}", json);
    Ok(())
}

fn predict_cnn(
    network: &Network,
    descriptor: &ModelDescriptor,
    sample: &ImageSample,
) -> Result<(String, Vec<f64>)> {
    let out_shape = network.output_shape();
    if out_shape != [descriptor.class_names.len()] {
        return Err(Error::Load(format!(
            "model.json lists {} classes but the network emits shape {:?}",
            descriptor.class_names.len(),
            out_shape
        )));
    }
    let x = preprocess(sample, descriptor.target_side)?;
    let probs = network.infer(&x)?.data().to_vec();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((descriptor.class_names[best].clone(), probs))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_config_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"seed": 5, "epochs": 3, "target_side": 64}"#).unwrap();
        let cli = parse(&[
            "convboost",
            "train",
            "--data",
            "m.csv",
            "--out",
            "o",
            "--mode",
            "cnn",
            "--config",
            path.to_str().unwrap(),
            "--epochs",
            "1",
        ]);
        let Command::Train(args) = cli.command else {
            panic!("expected train");
        };
        let cfg = args.config.resolve().unwrap();
        assert_eq!(cfg.seed, 5, "file value survives");
        assert_eq!(cfg.epochs, 1, "flag wins over file");
        assert_eq!(cfg.target_side, 64);
    }

    #[test]
    fn unknown_config_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        let cli = parse(&[
            "convboost",
            "compare",
            "--data",
            "m.csv",
            "--out",
            "o",
            "--config",
            path.to_str().unwrap(),
        ]);
        let Command::Compare(args) = cli.command else {
            panic!("expected compare");
        };
        let err = args.config.resolve().unwrap_err();
        assert!(err.is_config(), "got {:?}", err);
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn no_augment_conflicts_with_augment() {
        let res = Cli::try_parse_from([
            "convboost",
            "compare",
            "--data",
            "m.csv",
            "--out",
            "o",
            "--no-augment",
            "--augment",
        ]);
        assert!(res.is_err());
    }

    #[test]
    fn boolean_flags_accept_bare_and_explicit_forms() {
        let cli = parse(&[
            "convboost", "compare", "--data", "m", "--out", "o", "--paper-order",
        ]);
        let Command::Compare(args) = cli.command else {
            panic!();
        };
        assert_eq!(args.config.resolve().unwrap().paper_order, true);

        let cli = parse(&[
            "convboost",
            "compare",
            "--data",
            "m",
            "--out",
            "o",
            "--paper-order",
            "false",
            "--no-augment",
        ]);
        let Command::Compare(args) = cli.command else {
            panic!();
        };
        let cfg = args.config.resolve().unwrap();
        assert_eq!(cfg.paper_order, false);
        assert_eq!(cfg.augment, false);
    }

    #[test]
    fn every_experiment_field_has_a_flag() {
        let cli = parse(&[
            "convboost",
            "train",
            "--data", "m",
            "--out", "o",
            "--mode", "hybrid",
            "--seed", "9",
            "--side", "17",
            "--test-fraction", "0.3",
            "--paper-order",
            "--augment", "true",
            "--copies", "2",
            "--keep-originals", "false",
            "--epochs", "4",
            "--batch-size", "8",
            "--lr", "0.05",
            "--init-stddev", "0.9",
            "--dropout", "0.3",
            "--l2", "0.01",
            "--boost-lr", "0.2",
            "--max-depth", "6",
            "--n-estimators", "11",
            "--lambda", "2.0",
            "--gamma", "0.5",
            "--min-child-hessian", "0.1",
            "--base-score", "0.25",
        ]);
        let Command::Train(args) = cli.command else {
            panic!();
        };
        let cfg = args.config.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.target_side, 17);
        assert_eq!(cfg.test_fraction, 0.3);
        assert_eq!(cfg.paper_order, true);
        assert_eq!(cfg.augment, true);
        assert_eq!(cfg.copies_per_image, 2);
        assert_eq!(cfg.keep_originals, false);
        assert_eq!(cfg.epochs, 4);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.learning_rate, 0.05);
        assert_eq!(cfg.init_stddev, 0.9);
        assert_eq!(cfg.dropout_rate, 0.3);
        assert_eq!(cfg.l2, 0.01);
        assert_eq!(cfg.boost.learning_rate, 0.2);
        assert_eq!(cfg.boost.max_depth, 6);
        assert_eq!(cfg.boost.n_estimators, 11);
        assert_eq!(cfg.boost.lambda, 2.0);
        assert_eq!(cfg.boost.gamma, 0.5);
        assert_eq!(cfg.boost.min_child_hessian, 0.1);
        assert_eq!(cfg.boost.base_score, 0.25);
    }

    #[test]
    fn invalid_resolved_config_is_rejected() {
        let cli = parse(&[
            "convboost",
            "compare",
            "--data",
            "m",
            "--out",
            "o",
            "--test-fraction",
            "1.5",
        ]);
        let Command::Compare(args) = cli.command else {
            panic!();
        };
        assert!(args.config.resolve().unwrap_err().is_config());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 1);
        assert_eq!(exit_code(&Error::InvalidData("x".into())), 2);
        assert_eq!(exit_code(&Error::Load("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidState("x".into())), 3);
        assert_eq!(exit_code(&Error::ShapeMismatch("x".into())), 3);
    }
}
