//! Training experiments shared by `train` and `noise-bench`.

use std::path::PathBuf;

use expoloss::data::{
    gen_gaussians, gen_outlier_gaussians, inject_symmetric_noise, load_csv, load_idx,
    normalize_unit_ball, Dataset, Provenance,
};
use expoloss::model::{Model, ModelSpec};
use expoloss::optim::{train_with_observer, EpochMetrics, OptimizerConfig, TrainConfig};
use expoloss::{BaseLoss, LossSpec, TransformParams};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// Offset between the generator seed of a training split and its test split.
pub const TEST_SEED_OFFSET: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Two unit-variance Gaussians; the test split is drawn clean.
    Gaussians {
        n_per_class: usize,
        d: usize,
        separation: f64,
        test_n_per_class: usize,
    },
    /// As above with planted outliers in the training split only.
    OutlierGaussians {
        n_per_class: usize,
        d: usize,
        separation: f64,
        outlier_frac: f64,
        outlier_scale: f64,
        test_n_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

impl DatasetSpec {
    /// Standard MNIST file names inside `dir`.
    pub fn mnist(
        dir: &std::path::Path,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    ) -> Self {
        DatasetSpec::Idx {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
            train_limit,
            test_limit,
        }
    }

    fn depends_on_seed(&self) -> bool {
        matches!(
            self,
            DatasetSpec::Gaussians { .. } | DatasetSpec::OutlierGaussians { .. }
        )
    }

    fn build(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let test_seed = seed.wrapping_add(TEST_SEED_OFFSET);
        Ok(match self {
            DatasetSpec::Gaussians {
                n_per_class,
                d,
                separation,
                test_n_per_class,
            } => (
                gen_gaussians(*n_per_class, *d, *separation, seed)?,
                gen_gaussians(*test_n_per_class, *d, *separation, test_seed)?,
            ),
            DatasetSpec::OutlierGaussians {
                n_per_class,
                d,
                separation,
                outlier_frac,
                outlier_scale,
                test_n_per_class,
            } => (
                gen_outlier_gaussians(
                    *n_per_class,
                    *d,
                    *separation,
                    *outlier_frac,
                    *outlier_scale,
                    seed,
                )?,
                gen_gaussians(*test_n_per_class, *d, *separation, test_seed)?,
            ),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let limit = |ds: Dataset, n: Option<usize>| match n {
                    Some(n) if n < ds.len() => ds.slice_rows(0, n),
                    _ => Ok(ds),
                };
                (
                    limit(load_idx(train_images, train_labels)?, *train_limit)?,
                    limit(load_idx(test_images, test_labels)?, *test_limit)?,
                )
            }
            DatasetSpec::Csv { train, test } => (load_csv(train)?, load_csv(test)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Scale each split into the unit ball by its largest row norm.
    pub normalize: bool,
    pub loss: BaseLoss,
    pub e: Vec<f64>,
    pub c: f64,
    pub noise_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_radius: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e.is_empty() || self.noise_rates.is_empty() || self.seeds.is_empty() {
            return Err(CliError::Config(
                "need at least one e, noise rate and seed".into(),
            ));
        }
        for &e in &self.e {
            TransformParams::new(e, self.c)?;
        }
        for &r in &self.noise_rates {
            if !(0.0..1.0).contains(&r) {
                return Err(CliError::Config(format!("noise rate {r} not in [0, 1)")));
            }
        }
        self.train_config(self.e[0], self.seeds[0])?.validate()?;
        Ok(())
    }

    pub fn train_config(&self, e: f64, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            loss: LossSpec::new(self.loss, TransformParams::new(e, self.c)?),
            model: self.model.clone(),
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            total_epochs: self.epochs,
            warmup_fraction: self.warmup_frac,
            seed,
            projection_radius: self.projection_radius,
        })
    }
}

/// Datasets for one seed, or shared by all seeds for file-backed data.
pub struct Prepared {
    fixed: Option<(Dataset, Dataset)>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let fixed = if cfg.dataset.depends_on_seed() {
            None
        } else {
            Some(finish(cfg, cfg.dataset.build(0)?))
        };
        Ok(Prepared { fixed })
    }

    pub fn for_seed(&self, cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
        match &self.fixed {
            Some(pair) => Ok(pair.clone()),
            None => Ok(finish(cfg, cfg.dataset.build(seed)?)),
        }
    }
}

fn finish(cfg: &ExperimentConfig, (train, test): (Dataset, Dataset)) -> (Dataset, Dataset) {
    if cfg.normalize {
        (normalize_unit_ball(&train), normalize_unit_ball(&test))
    } else {
        (train, test)
    }
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub seed: u64,
    pub e: f64,
    pub noise_rate: f64,
    pub trace: Vec<EpochMetrics>,
    pub final_metrics: EpochMetrics,
    pub train_provenance: Provenance,
    pub test_provenance: Provenance,
}

/// Trains on the seed's data with noise injected on the training split.
pub fn run_cell(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    e: f64,
    noise_rate: f64,
    seed: u64,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Run, Model, Vec<f64>)> {
    let (train, test) = prepared.for_seed(cfg, seed)?;
    let train = if noise_rate > 0.0 {
        inject_symmetric_noise(&train, noise_rate, train.num_classes(), seed)?
    } else {
        train
    };
    let tc = cfg.train_config(e, seed)?;
    let res = train_with_observer(&tc, &train, &test, on_epoch).map_err(|err| {
        CliError::from(err).context(&format!("e={e} noise_rate={noise_rate} seed={seed}"))
    })?;
    let run = Run {
        seed,
        e,
        noise_rate,
        final_metrics: *res.final_metrics(),
        trace: res.epochs,
        train_provenance: train.provenance().clone(),
        test_provenance: test.provenance().clone(),
    };
    Ok((run, res.model, res.epoch_seconds))
}

/// Builds the flag-level experiment config with command-specific defaults.
pub fn from_flags(a: &crate::args::TrainArgs, bench: bool) -> Result<ExperimentConfig> {
    let c = &a.common;
    let loss = c.loss.unwrap_or(if a.mnist_dir.is_some() {
        BaseLoss::SoftmaxCe
    } else {
        BaseLoss::Logistic
    });
    let dataset = match &a.mnist_dir {
        Some(dir) => DatasetSpec::mnist(dir, a.train_limit, a.test_limit),
        None => DatasetSpec::Gaussians {
            n_per_class: 500,
            d: 2,
            separation: 4.0,
            test_n_per_class: 1000,
        },
    };
    let model = match (&a.hidden, loss) {
        (Some(h), _) => ModelSpec::Mlp { hidden: h.clone() },
        (None, BaseLoss::SoftmaxCe) => ModelSpec::Mlp { hidden: vec![64] },
        (None, _) => ModelSpec::Linear { bias: true },
    };
    let lr = a.lr.unwrap_or(match a.optimizer.as_deref() {
        Some("adam") => 1e-3,
        _ => 0.05,
    });
    let optimizer = match a.optimizer.as_deref().unwrap_or("sgd") {
        "sgd" => OptimizerConfig::sgd(lr),
        "adam" => OptimizerConfig::adam(lr),
        other => return Err(CliError::Config(format!("unknown optimizer '{other}'"))),
    };
    let default_e = if bench {
        vec![1.0, 0.75, 0.6]
    } else {
        vec![0.6]
    };
    let default_rates = if bench {
        vec![0.0, 0.2, 0.4]
    } else {
        vec![0.0]
    };
    let n_seeds = c.seeds.unwrap_or(if bench { 5 } else { 1 });
    Ok(ExperimentConfig {
        dataset,
        normalize: false,
        loss,
        e: if c.e.is_empty() {
            default_e
        } else {
            c.e.clone()
        },
        c: c.c,
        noise_rates: if c.noise_rate.is_empty() {
            default_rates
        } else {
            c.noise_rate.clone()
        },
        seeds: (0..n_seeds as u64).map(|i| c.seed + i).collect(),
        model,
        optimizer,
        batch_size: a.batch_size.unwrap_or(32),
        epochs: c.epochs.unwrap_or(20),
        warmup_frac: c.warmup_frac,
        projection_radius: None,
    })
}
