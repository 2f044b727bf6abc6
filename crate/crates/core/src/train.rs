//! Epoch-level training and evaluation of a [`Model`] on a [`Dataset`].

use crate::ae::{AeAccumulator, AeSample};
use crate::arch::ArchSpec;
use crate::data::{batches, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::nn::{sgd_step, softmax_xent, OptimizerConfig};
use crate::prune::{NetRole, NetworkTrainer};
use crate::rng::{derive_seed, PURPOSE_FINAL_INIT, PURPOSE_INIT};
use crate::scalar::Scalar;

const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

fn correct<T: Scalar>(logits: &[T], classes: usize, labels: &[usize]) -> usize {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count()
}

/// One pass over `plan`, recording AE of every measured ReLU into `acc`.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    opt: &OptimizerConfig,
    lr: f64,
    plan: &BatchPlan,
    acc: &AeAccumulator,
) -> Result<EpochStats> {
    if acc.layers() != model.measured_layers() {
        return Err(Error::Shape(format!(
            "accumulator has {} layers, model measures {}",
            acc.layers(),
            model.measured_layers()
        )));
    }
    let classes = model.arch().num_classes;
    let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
    for batch in batches(data, plan) {
        let (images, labels) = batch?;
        let x = images.cast::<T>();
        let mut hook_err = None;
        let logits = model.forward_with(&x, Mode::Train, &mut |layer, _, count| {
            if let Err(e) = acc.record_count(layer, count) {
                hook_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = hook_err {
            return Err(e);
        }
        let (loss, grad) = softmax_xent(&logits, &labels)?;
        hits += correct(logits.data(), classes, &labels);
        loss_sum += loss * labels.len() as f64;
        seen += labels.len();
        model.backward(&grad)?;
        sgd_step(model.params_mut(), opt, lr);
    }
    if seen == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    Ok(EpochStats {
        mean_loss: loss_sum / seen as f64,
        train_accuracy: hits as f64 / seen as f64,
    })
}

/// Top-1 accuracy in [0, 1].
pub fn evaluate<T: Scalar>(model: &mut Model<T>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let classes = model.arch().num_classes;
    let plan = BatchPlan::sequential(data.len(), EVAL_BATCH)?;
    let mut hits = 0;
    for batch in batches(data, &plan) {
        let (images, labels) = batch?;
        let logits = model.forward(&images.cast::<T>(), Mode::Eval)?;
        hits += correct(logits.data(), classes, &labels);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Stream id separating the shuffle sequence of each network.
pub fn shuffle_stream(role: NetRole) -> u64 {
    match role {
        NetRole::Stage(i) => i as u64,
        NetRole::Final => u64::MAX,
    }
}

/// Seed a network's weights are drawn from.
pub fn init_seed(base_seed: u64, role: NetRole) -> u64 {
    match role {
        NetRole::Stage(i) => derive_seed(base_seed, PURPOSE_INIT, i as u64),
        NetRole::Final => derive_seed(base_seed, PURPOSE_FINAL_INIT, 0),
    }
}

/// SGD training on a fixed train/validation split.
pub struct SgdTrainer<'a> {
    pub train: &'a Dataset,
    pub validation: &'a Dataset,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Stats of the most recent epoch.
    pub last_stats: Option<EpochStats>,
}

impl<'a> SgdTrainer<'a> {
    pub fn new(train: &'a Dataset, validation: &'a Dataset, optimizer: OptimizerConfig, seed: u64) -> Self {
        SgdTrainer {
            train,
            validation,
            optimizer,
            seed,
            last_stats: None,
        }
    }

    pub fn run_epoch<T: Scalar>(
        &mut self,
        model: &mut Model<T>,
        role: NetRole,
        epoch: usize,
        phase_epochs: usize,
    ) -> Result<AeSample> {
        let plan = BatchPlan::shuffled(
            self.train.len(),
            self.optimizer.batch_size,
            self.seed,
            shuffle_stream(role),
            epoch as u64,
        )?;
        let mut acc = AeAccumulator::new(model.measured_layers(), epoch);
        let lr = self.optimizer.lr_at(epoch, phase_epochs);
        let stats = train_epoch(model, self.train, &self.optimizer, lr, &plan, &acc)?;
        self.last_stats = Some(stats);
        let accuracy = evaluate(model, self.validation)?;
        acc.finalize_epoch(accuracy)
    }
}

impl NetworkTrainer for SgdTrainer<'_> {
    type Net = Model<f32>;

    fn instantiate(&mut self, arch: &ArchSpec, role: NetRole) -> Result<Model<f32>> {
        Model::instantiate(arch, init_seed(self.seed, role))
    }

    fn train_epoch(&mut self, net: &mut Model<f32>, role: NetRole, epoch: usize, phase_epochs: usize) -> Result<AeSample> {
        self.run_epoch(net, role, epoch, phase_epochs)
    }
}
