use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{UtilityFeature, DISTANCE_COLUMN, NUM_UTILITIES};

use super::dataset::Dataset;
use super::network::{Activation, Architecture, Classifier};
use super::optim::{backward_and_step, Optimizer, OptimizerKind};

/// How the classifier's parameters start out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    /// Seeded He/Glorot-uniform weights.
    Random,
    /// See [`Classifier::pass_through`].
    PassThrough { gain: f64, compress_bias: f64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::PassThrough {
            gain: 2000.0,
            compress_bias: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub m: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub hidden: [usize; 2],
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub init: Init,
    /// Factor on the four terrain columns before compression. The default
    /// equals the horizon n, so the network sees point counts rather than
    /// fractions and a single point on terrain is not drowned out by the
    /// distance column.
    pub terrain_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 21,
            epochs: 15,
            learning_rate: 1e-3,
            batch_size: 256,
            train_fraction: 0.8,
            seed: 0,
            hidden: [42, 42],
            activation: Activation::Relu,
            optimizer: OptimizerKind::default(),
            init: Init::default(),
            terrain_scale: 30.0,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        let mut scale = [self.terrain_scale; NUM_UTILITIES];
        scale[DISTANCE_COLUMN] = 1.0;
        Architecture::new(self.m, self.hidden, self.activation).with_input_scale(scale)
    }

    /// The untrained model this config starts from.
    pub fn initial_model(&self) -> Result<Classifier> {
        match self.init {
            Init::Random => Ok(Classifier::init(self.architecture(), self.seed.wrapping_add(1))),
            Init::PassThrough { gain, compress_bias } => {
                Classifier::pass_through(self.architecture(), gain, compress_bias)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid("m must be at least 2"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(self.terrain_scale > 0.0 && self.terrain_scale.is_finite()) {
            return Err(Error::invalid("terrain_scale must be positive"));
        }
        if let Init::PassThrough { gain, compress_bias } = self.init {
            if !(gain > 0.0 && gain.is_finite() && compress_bias.is_finite()) {
                return Err(Error::invalid("pass-through gain must be positive"));
            }
            if self.hidden.iter().any(|&h| h < 2 * self.m) {
                return Err(Error::invalid(format!(
                    "pass-through init needs hidden widths of at least 2m = {}",
                    2 * self.m
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: SplitStats,
    pub validation: SplitStats,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Statistics of the freshly initialized model.
    pub initial: EpochStats,
    /// One entry per epoch, measured after the epoch's last step.
    pub history: Vec<EpochStats>,
    /// Model state at the end of each epoch, aligned with `history`.
    pub checkpoints: Vec<Classifier>,
    /// Index into `checkpoints` with the lowest validation loss.
    pub selected: usize,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

impl TrainReport {
    pub fn selected_model(&self) -> &Classifier {
        &self.checkpoints[self.selected]
    }

    pub fn selected_stats(&self) -> &EpochStats {
        &self.history[self.selected]
    }
}

/// Mean loss and argmax accuracy over a set of samples.
pub fn evaluate(model: &Classifier, samples: &[(&UtilityFeature, usize)]) -> Result<SplitStats> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let loss = model.loss(samples)?;
    let mut correct = 0usize;
    for (u, label) in samples {
        if model.forward(u)?.argmax_index == *label {
            correct += 1;
        }
    }
    Ok(SplitStats {
        loss,
        accuracy: correct as f64 / samples.len() as f64,
    })
}

/// Deterministic seeded split into (train, validation) record indices.
pub fn split_indices(len: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((len as f64 * train_fraction).round() as usize).clamp(1, len.saturating_sub(1).max(1));
    let validation = order.split_off(n_train);
    (order, validation)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if dataset.meta.m != config.m {
        return Err(Error::invalid(format!(
            "dataset has m={} but the training config expects m={}",
            dataset.meta.m, config.m
        )));
    }
    if dataset.len() < 2 {
        return Err(Error::invalid("training needs at least 2 records"));
    }
    for (i, r) in dataset.records.iter().enumerate() {
        if r.utility_feature.m() != config.m || r.label_index >= config.m {
            return Err(Error::invalid(format!("record {i} does not match m={}", config.m)));
        }
    }

    let (train_indices, validation_indices) =
        split_indices(dataset.len(), config.train_fraction, config.seed);
    let sample = |i: &usize| {
        let r = &dataset.records[*i];
        (&r.utility_feature, r.label_index)
    };
    let train_set: Vec<_> = train_indices.iter().map(sample).collect();
    let validation_set: Vec<_> = validation_indices.iter().map(sample).collect();

    let mut model = config.initial_model()?;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));

    let stats = |model: &Classifier, epoch| -> Result<EpochStats> {
        Ok(EpochStats {
            epoch,
            train: evaluate(model, &train_set)?,
            validation: evaluate(model, &validation_set)?,
        })
    };
    let initial = stats(&model, 0)?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| train_set[i]).collect();
            backward_and_step(&mut model, &batch, &mut optimizer, config.learning_rate).map_err(
                |e| match e {
                    Error::Training(msg) => Error::Training(format!("epoch {epoch}: {msg}")),
                    other => other,
                },
            )?;
        }
        let epoch_stats = stats(&model, epoch)?;
        log::debug!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            epoch_stats.train.loss,
            epoch_stats.train.accuracy,
            epoch_stats.validation.loss,
            epoch_stats.validation.accuracy
        );
        history.push(epoch_stats);
        checkpoints.push(model.clone());
    }

    let selected = history
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| {
            if s.validation.loss < history[best].validation.loss {
                i
            } else {
                best
            }
        });
    Ok(TrainReport {
        initial,
        history,
        checkpoints,
        selected,
        train_indices,
        validation_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Pose;
    use crate::learner::dataset::{DatasetMeta, DemoRecord};
    use rand::Rng;

    fn synthetic(count: usize, m: usize, seed: u64, label: impl Fn(&UtilityFeature) -> usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(DatasetMeta::new(m, 0.1, 30, vec!["synthetic".into()], 10.0));
        for i in 0..count {
            let rows = (0..m)
                .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
                .collect();
            let u = UtilityFeature::from_rows(rows).unwrap();
            let y = label(&u);
            ds.push(DemoRecord {
                utility_feature: u,
                label_index: y,
                timestamp: i as f64 * 0.1,
                pose: Pose::ORIGIN,
            })
            .unwrap();
        }
        ds
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, b) = split_indices(10, 0.8, 3);
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.8, 3), (a, b));
        let (a, b) = split_indices(2, 0.8, 0);
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = synthetic(10, 5, 0, |_| 0);
        let cfg = TrainConfig::default();
        assert!(train(&ds, &cfg).is_err());
        let cfg = TrainConfig { m: 5, ..TrainConfig::default() };
        let tiny = synthetic(1, 5, 0, |_| 0);
        assert!(train(&tiny, &cfg).is_err());
        let cfg = TrainConfig { m: 5, epochs: 0, ..TrainConfig::default() };
        assert!(train(&ds, &cfg).is_err());
    }

    #[test]
    fn single_class_collapses() {
        let ds = synthetic(500, 21, 5, |_| 4);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let report = train(&ds, &cfg).unwrap();
        assert_eq!(report.history.len(), 15);
        assert!(report.history.last().unwrap().train.loss < 0.01);
    }

    #[test]
    fn linearly_separable_dataset_is_learned() {
        let weights = [-2.0, -1.5, -1.0, -0.5, 1.0];
        let rule = |u: &UtilityFeature| {
            let scores: Vec<f64> = u
                .rows()
                .iter()
                .map(|r| r.iter().zip(&weights).map(|(x, w)| x * w).sum())
                .collect();
            crate::learner::network::argmax(&scores)
        };
        let ds = synthetic(2000, 21, 7, rule);
        // Uniform synthetic columns are already on a common scale.
        let cfg = TrainConfig { terrain_scale: 1.0, ..TrainConfig::default() };
        let report = train(&ds, &cfg).unwrap();
        assert_eq!(report.history.len(), cfg.epochs);
        let best = report.history.iter().map(|s| s.validation.accuracy).fold(0.0, f64::max);
        assert!(best >= 0.9, "best validation accuracy {best}");
    }

    #[test]
    fn pass_through_init_ignores_the_seed() {
        let cfg = TrainConfig::default();
        let a = cfg.initial_model().unwrap();
        let b = TrainConfig { seed: 99, ..cfg.clone() }.initial_model().unwrap();
        assert_eq!(a, b);
        let narrow = TrainConfig { hidden: [32, 32], ..cfg };
        assert!(narrow.validate().is_err());
    }

    #[test]
    fn training_is_reproducible() {
        let ds = synthetic(300, 5, 9, |u| crate::learner::network::argmax(
            &u.rows().iter().map(|r| r[4]).collect::<Vec<_>>(),
        ));
        let cfg = TrainConfig {
            m: 5,
            epochs: 3,
            batch_size: 64,
            seed: 17,
            init: Init::Random,
            ..TrainConfig::default()
        };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoints, b.checkpoints);
        assert!(a.history.last().unwrap().train.loss < a.initial.train.loss);
        assert_eq!(a.selected_stats().validation.loss,
            a.history.iter().map(|s| s.validation.loss).fold(f64::INFINITY, f64::min));
    }
}
