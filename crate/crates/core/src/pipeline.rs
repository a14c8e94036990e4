//! Experiment orchestration: train a CNN classifier, evaluate it as-is
//! (baseline) and truncated at its global-average-pool layer feeding a
//! boosted-tree head (hybrid), both on one shared train/test split.
//!
//! Comparison fairness: baseline and hybrid share the same trained CNN
//! body. The only difference between the two model rows is the head the
//! pooled features flow into, so the paired report isolates the boosted
//! head's contribution.
//!
//! Every stage is a deterministic function of (config, dataset): sub-seeds
//! are derived from the experiment seed (training = seed, augmentation =
//! seed + 1, split = seed + 2), so one seed fixes every artifact byte.

use crate::convnet::{
    argmax, default_classifier_spec, fit, init_network, FeatureExtractor, Network, TrainConfig,
    TrainHistory,
};
use crate::dataio::{augment, preprocess, train_test_split, AugmentConfig, Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::gbt::{BoostConfig, Ensemble, FeatureMatrix};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Model-row name for the plain CNN baseline.
pub const MODEL_CNN: &str = "cnn";
/// Model-row name for the hybrid (CNN features + boosted trees).
pub const MODEL_HYBRID: &str = "c_xgboost";
/// Header of the comparison summary CSV.
pub const SUMMARY_CSV_HEADER: &str =
    "model,accuracy,macro_sensitivity,macro_specificity,macro_f1";

/// Everything one experiment run depends on. Unknown JSON keys are
/// rejected; omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Preprocessing resize target (images become side x side x 3).
    pub target_side: usize,
    /// Fraction of samples held out for the test split.
    pub test_fraction: f64,
    /// Augment before splitting (the paper's order, which leaks augmented
    /// twins of one image across the split) instead of after.
    pub paper_order: bool,
    /// Whether to augment at all.
    pub augment: bool,
    /// Transformed copies per source image when augmenting.
    pub copies_per_image: usize,
    /// Keep source images alongside their augmented copies.
    pub keep_originals: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_stddev: f64,
    /// Rate of the two dropout layers around the global average pool.
    pub dropout_rate: f64,
    /// L2 penalty on the dense head's weights and bias.
    pub l2: f64,
    pub boost: BoostConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            target_side: 224,
            test_fraction: 0.1,
            paper_order: false,
            augment: true,
            copies_per_image: 3,
            keep_originals: true,
            epochs: 25,
            batch_size: 2,
            learning_rate: 1e-3,
            init_stddev: 1.0,
            dropout_rate: 0.8,
            l2: 1e-4,
            boost: BoostConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_side < 8 {
            return Err(Error::InvalidConfig(format!(
                "target_side must be >= 8, got {}",
                self.target_side
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "l2 must be >= 0 and finite, got {}",
                self.l2
            )));
        }
        if self.augment && self.copies_per_image == 0 && !self.keep_originals {
            return Err(Error::InvalidConfig(
                "augmentation with copies_per_image 0 and keep_originals false \
                 would discard every sample"
                    .into(),
            ));
        }
        self.train_config().validate()?;
        self.boost.validate()
    }

    /// CNN training sub-config; shares the experiment seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            init_stddev: self.init_stddev,
            seed: self.seed,
        }
    }

    /// Augmentation sub-config, on its own derived seed.
    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            copies_per_image: self.copies_per_image,
            keep_originals: self.keep_originals,
            seed: self.seed.wrapping_add(1),
        }
    }

    fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
}

/// Splits (and, when enabled, augments) per the configured order.
///
/// Default order augments the training side only, after splitting, so no
/// augmented twin of a test image reaches training. `paper_order` augments
/// the whole pool first and splits the enlarged pool.
pub fn prepare_split(ds: &Dataset, cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    if cfg.paper_order && cfg.augment {
        let pool = augment(ds, &cfg.augment_config())?;
        train_test_split(&pool, cfg.test_fraction, cfg.split_seed())
    } else {
        let (train, test) = train_test_split(ds, cfg.test_fraction, cfg.split_seed())?;
        let train = if cfg.augment {
            augment(&train, &cfg.augment_config())?
        } else {
            train
        };
        Ok((train, test))
    }
}

/// Preprocesses every sample; output order matches input order.
fn preprocess_set(ds: &Dataset, target_side: usize) -> Result<Vec<(Tensor, usize)>> {
    ds.samples()
        .par_iter()
        .map(|s| Ok((preprocess(s, target_side)?, s.label())))
        .collect()
}

/// Shared split + trained CNN that both model rows build on.
struct Stage {
    train_x: Vec<(Tensor, usize)>,
    test_x: Vec<(Tensor, usize)>,
    test_ids: Vec<String>,
    class_names: Vec<String>,
    network: Network,
    history: TrainHistory,
}

fn train_stage(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Stage> {
    cfg.validate()?;
    if ds.class_count() < 2 {
        return Err(Error::InvalidData(format!(
            "experiments need >= 2 classes, dataset has {}",
            ds.class_count()
        )));
    }
    let (train_ds, test_ds) = prepare_split(ds, cfg)?;
    let train_x = preprocess_set(&train_ds, cfg.target_side)?;
    let test_x = preprocess_set(&test_ds, cfg.target_side)?;

    let spec = default_classifier_spec(ds.class_count(), cfg.dropout_rate, cfg.l2);
    let side = cfg.target_side;
    let mut network = init_network([side, side, 3], &spec, cfg.init_stddev, cfg.seed)?;
    let history = fit(&mut network, &train_x, &test_x, &cfg.train_config())?;

    Ok(Stage {
        train_x,
        test_x,
        test_ids: test_ds.samples().iter().map(|s| s.id().to_string()).collect(),
        class_names: ds.class_names().to_vec(),
        network,
        history,
    })
}

/// Confusion-matrix metrics of predicted vs true labels over one set.
fn report_from_predictions(
    y_true: &[usize],
    y_pred: &[usize],
    class_names: &[String],
) -> Result<MetricsReport> {
    let cm = ConfusionMatrix::from_labels(y_true, y_pred, class_names)?;
    MetricsReport::from_confusion(&cm)
}

fn eval_network(net: &Network, set: &[(Tensor, usize)], class_names: &[String]) -> Result<MetricsReport> {
    let y_pred: Vec<usize> = set
        .par_iter()
        .map(|(x, _)| Ok(argmax(net.infer(x)?.data())))
        .collect::<Result<_>>()?;
    let y_true: Vec<usize> = set.iter().map(|(_, y)| *y).collect();
    report_from_predictions(&y_true, &y_pred, class_names)
}

fn extract_features(extractor: &FeatureExtractor, set: &[(Tensor, usize)]) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = set
        .par_iter()
        .map(|(x, _)| Ok(extractor.extract(x)?.data().to_vec()))
        .collect::<Result<_>>()?;
    FeatureMatrix::from_rows(&rows)
}

/// A trained hybrid: the full CNN (kept for persistence), its truncation
/// serving as feature extractor, and the boosted head.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    cnn: Network,
    extractor: FeatureExtractor,
    booster: Ensemble,
    class_names: Vec<String>,
    target_side: usize,
}

impl HybridModel {
    /// Derives the extractor from `cnn` and checks the pieces agree:
    /// extractor width == booster feature width, class counts equal,
    /// input shape == [side, side, 3].
    pub fn new(
        cnn: Network,
        booster: Ensemble,
        class_names: Vec<String>,
        target_side: usize,
    ) -> Result<HybridModel> {
        let extractor = cnn.truncate_at_gap()?;
        if extractor.output_width() != booster.feature_count {
            return Err(Error::InvalidArchitecture(format!(
                "extractor emits {} features, booster expects {}",
                extractor.output_width(),
                booster.feature_count
            )));
        }
        if booster.class_count != class_names.len() {
            return Err(Error::InvalidArchitecture(format!(
                "booster has {} classes, {} class names given",
                booster.class_count,
                class_names.len()
            )));
        }
        if cnn.input_shape() != [target_side, target_side, 3] {
            return Err(Error::InvalidArchitecture(format!(
                "CNN input shape {:?} does not match target side {}",
                cnn.input_shape(),
                target_side
            )));
        }
        Ok(HybridModel {
            cnn,
            extractor,
            booster,
            class_names,
            target_side,
        })
    }

    pub fn cnn(&self) -> &Network {
        &self.cnn
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn booster(&self) -> &Ensemble {
        &self.booster
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn target_side(&self) -> usize {
        self.target_side
    }

    /// Predicted class index and probabilities for one preprocessed tensor.
    fn predict_tensor(&self, x: &Tensor) -> Result<(usize, Vec<f64>)> {
        if self.booster.rounds.is_empty() {
            return Err(Error::InvalidState(
                "hybrid model's booster has no trained rounds".into(),
            ));
        }
        let features = self.extractor.extract(x)?;
        self.booster.predict(features.data())
    }

    /// Predicted class name and softmax probabilities for a raw image.
    pub fn predict(&self, sample: &ImageSample) -> Result<(String, Vec<f64>)> {
        let x = preprocess(sample, self.target_side)?;
        let (idx, probs) = self.predict_tensor(&x)?;
        Ok((self.class_names[idx].clone(), probs))
    }
}

/// Spec'd entry point; equivalent to [`HybridModel::predict`].
pub fn predict(model: &HybridModel, sample: &ImageSample) -> Result<(String, Vec<f64>)> {
    model.predict(sample)
}

/// Trains the CNN and evaluates its own softmax head on the test split.
pub fn train_baseline_cnn(
    ds: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<(Network, TrainHistory, MetricsReport)> {
    let stage = train_stage(ds, cfg)?;
    let metrics = eval_network(&stage.network, &stage.test_x, &stage.class_names)?;
    Ok((stage.network, stage.history, metrics))
}

/// Trains the CNN, truncates it at the global average pool, fits the
/// boosted head on the pooled training features, and evaluates the hybrid
/// on the test split. The returned history is the CNN body's.
pub fn train_hybrid(
    ds: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<(HybridModel, TrainHistory, MetricsReport)> {
    let stage = train_stage(ds, cfg)?;
    let (model, metrics) = hybrid_from_stage(&stage, cfg)?;
    Ok((model, stage.history, metrics))
}

fn hybrid_from_stage(stage: &Stage, cfg: &ExperimentConfig) -> Result<(HybridModel, MetricsReport)> {
    let extractor = stage.network.truncate_at_gap()?;
    let features = extract_features(&extractor, &stage.train_x)?;
    let labels: Vec<usize> = stage.train_x.iter().map(|(_, y)| *y).collect();
    let booster = Ensemble::fit(&features, &labels, stage.class_names.len(), &cfg.boost)?;
    let model = HybridModel::new(
        stage.network.clone(),
        booster,
        stage.class_names.clone(),
        cfg.target_side,
    )?;

    let y_pred: Vec<usize> = stage
        .test_x
        .par_iter()
        .map(|(x, _)| Ok(model.predict_tensor(x)?.0))
        .collect::<Result<_>>()?;
    let y_true: Vec<usize> = stage.test_x.iter().map(|(_, y)| *y).collect();
    let metrics = report_from_predictions(&y_true, &y_pred, &stage.class_names)?;
    Ok((model, metrics))
}

/// One model row of a comparison: metrics plus the training history its
/// CNN body ran through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub metrics: MetricsReport,
    pub history: TrainHistory,
}

/// Paired evaluation of baseline and hybrid on one shared split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub class_names: Vec<String>,
    /// Ids of the shared test split, in evaluation order.
    pub test_ids: Vec<String>,
    pub models: Vec<ModelReport>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(json: &str) -> Result<ComparisonReport> {
        serde_json::from_str(json).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// One line per model: accuracy and the three macro rates. Undefined
    /// rates render as the literal `undefined`.
    pub fn summary_csv(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => x.to_string(),
            None => "undefined".to_string(),
        };
        let mut out = String::from(SUMMARY_CSV_HEADER);
        out.push('\n');
        for m in &self.models {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.name,
                m.metrics.accuracy,
                fmt(m.metrics.macro_avg.sensitivity),
                fmt(m.metrics.macro_avg.specificity),
                fmt(m.metrics.macro_avg.f1),
            ));
        }
        out
    }
}

/// Trains one CNN and reports both heads on the identical test split:
/// row `cnn` evaluates the network's own softmax head, row `c_xgboost`
/// evaluates the boosted head fitted on the same body's pooled features.
pub fn run_experiment(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ComparisonReport> {
    let stage = train_stage(ds, cfg)?;
    let baseline_metrics = eval_network(&stage.network, &stage.test_x, &stage.class_names)?;
    let (_, hybrid_metrics) = hybrid_from_stage(&stage, cfg)?;

    Ok(ComparisonReport {
        seed: cfg.seed,
        config: cfg.clone(),
        class_names: stage.class_names.clone(),
        test_ids: stage.test_ids.clone(),
        models: vec![
            ModelReport {
                name: MODEL_CNN.to_string(),
                metrics: baseline_metrics,
                history: stage.history.clone(),
            },
            ModelReport {
                name: MODEL_HYBRID.to_string(),
                metrics: hybrid_metrics,
                history: stage.history,
            },
        ],
    })
}
