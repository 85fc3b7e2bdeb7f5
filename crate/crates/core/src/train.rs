//! Self-training against the region-growing clusters: each iteration the
//! network's prediction is replaced, inside every cluster, by the cluster's
//! majority label, and the network is fitted to that target by one SGD step.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelInput, SrgNet};
use crate::types::{LabelMap, PointCloud};

pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_MIN_LABELS: usize = 2;
pub const DEFAULT_WARMUP: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Training stops once fewer distinct labels are predicted.
    pub min_labels: usize,
    /// Leading iterations that fit the cluster ids themselves before
    /// refinement takes over.
    pub warmup: usize,
    /// Weight every target label equally in the loss instead of every
    /// point.
    pub balance_labels: bool,
    /// Seeds the parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            min_labels: DEFAULT_MIN_LABELS,
            balance_labels: true,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParam(alloc::format!(
                "learning rate {} must be > 0",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParam(alloc::format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub loss: f64,
    /// Distinct labels in the prediction.
    pub n_labels: usize,
    /// Fraction of points whose prediction already equals the target.
    pub agreement: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    /// The prediction fell below `min_labels` distinct labels at this
    /// iteration (0-based); no update was applied for it.
    Collapsed {
        iteration: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Iterations spent fitting the cluster ids directly.
    pub warmup_iterations: usize,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean loss over records `range`.
    pub fn mean_loss(&self, range: core::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.loss).sum::<f64>() / slice.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub net: SrgNet,
    pub history: TrainHistory,
    /// Prediction of the final parameters, compacted.
    pub labels: LabelMap,
}

/// Majority vote of `pred` inside every cluster of `clusters` (ties to the
/// smallest label). The result lives in the label space of `pred`.
pub fn refine_targets(pred: &LabelMap, clusters: &LabelMap) -> Result<LabelMap> {
    if pred.len() != clusters.len() {
        return Err(Error::LengthMismatch {
            expected: clusters.len(),
            found: pred.len(),
        });
    }
    let k = pred.k();
    let mut votes = vec![0usize; clusters.k() * k];
    for (&p, &c) in pred.labels().iter().zip(clusters.labels()) {
        votes[c * k + p] += 1;
    }
    let mode: Vec<usize> = votes
        .chunks_exact(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (l, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    LabelMap::new(clusters.labels().iter().map(|&c| mode[c]).collect(), k)
}

/// Per-point weights giving every used label the same total weight; they
/// sum to 1.
pub fn label_balanced_weights(targets: &LabelMap) -> Vec<f64> {
    let counts = targets.counts();
    let used = counts.iter().filter(|&&c| c > 0).count() as f64;
    targets
        .labels()
        .iter()
        .map(|&t| 1.0 / (used * counts[t] as f64))
        .collect()
}

/// Fits a freshly initialized network to the refined targets.
pub fn train(
    cloud: &PointCloud,
    clusters: &LabelMap,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let input = ModelInput::new(cloud, model.k_graph)?;
    let net = SrgNet::init(model.clone(), config.seed)?;
    train_from(net, &input, clusters, config)
}

/// Continues training `net` on a prepared input.
pub fn train_from(
    mut net: SrgNet,
    input: &ModelInput,
    clusters: &LabelMap,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    clusters.check(input.len())?;
    let k = net.config.out_labels;
    if clusters.num_distinct() > k {
        return Err(Error::InvalidParam(alloc::format!(
            "{} clusters exceed {k} output labels",
            clusters.num_distinct()
        )));
    }
    let warm_targets = LabelMap::new(clusters.compact().labels().to_vec(), k)?;
    let mut records = Vec::with_capacity(config.iterations);
    let mut stop = StopReason::Completed;
    for iteration in 0..config.iterations {
        let (mut tape, vars, out) = net.forward(input)?;
        let pred = LabelMap::new(tape.value(out.logits).argmax_rows(), k)?;
        let targets = if iteration < config.warmup {
            warm_targets.clone()
        } else {
            refine_targets(&pred, clusters)?
        };
        let loss = if config.balance_labels {
            tape.weighted_softmax_cross_entropy(out.logits, targets.labels(), &label_balanced_weights(&targets))?
        } else {
            tape.softmax_cross_entropy(out.logits, targets.labels())?
        };
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                iteration,
                what: "loss",
            });
        }
        let n_labels = pred.num_distinct();
        let agree = pred
            .labels()
            .iter()
            .zip(targets.labels())
            .filter(|(a, b)| a == b)
            .count();
        records.push(IterationRecord {
            loss: loss_value,
            n_labels,
            agreement: agree as f64 / pred.len() as f64,
        });
        if n_labels < config.min_labels {
            stop = StopReason::Collapsed { iteration };
            break;
        }
        let grads = tape.backward(loss)?;
        net.params.set_grads(&vars, &grads)?;
        net.params.sgd_step(config.lr, config.momentum)?;
        if !net.params.is_finite() {
            return Err(Error::Diverged {
                iteration,
                what: "parameters",
            });
        }
    }
    let labels = infer_input(&net, input)?;
    let warmup_iterations = config.warmup.min(records.len());
    Ok(TrainOutcome {
        net,
        history: TrainHistory {
            records,
            stop,
            warmup_iterations,
        },
        labels,
    })
}

/// Rowwise argmax of the network on `cloud`, compacted.
pub fn infer(net: &SrgNet, cloud: &PointCloud) -> Result<LabelMap> {
    let input = ModelInput::new(cloud, net.config.k_graph)?;
    infer_input(net, &input)
}

pub fn infer_input(net: &SrgNet, input: &ModelInput) -> Result<LabelMap> {
    Ok(LabelMap::compacted(net.predict(input)?))
}
