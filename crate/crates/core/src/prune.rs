//! Pruning in training: train until activation density saturates, shrink every
//! prunable layer to its density, re-initialize, repeat until the density
//! profile turns upward or the round limit is hit, then train the final net.

use serde::{Deserialize, Serialize};

use crate::ae::{AeHistory, AeSample};
use crate::arch::{resize_arch, ArchSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneCriteria {
    /// Largest epoch-to-epoch |Δ total AE| still counted as saturated.
    pub rho_tolerance: f64,
    /// Number of consecutive differences that must all be below tolerance.
    pub rho_window: usize,
    pub rho_min_epochs: usize,
    pub delta_slope_tolerance: f64,
    /// Leading epochs ignored when fitting the AE slope.
    pub delta_warmup_epochs: usize,
    pub max_rounds: usize,
    pub final_train_epochs: usize,
}

impl Default for PruneCriteria {
    fn default() -> Self {
        PruneCriteria {
            rho_tolerance: 0.001,
            rho_window: 2,
            rho_min_epochs: 10,
            delta_slope_tolerance: 1e-4,
            delta_warmup_epochs: 5,
            max_rounds: 3,
            final_train_epochs: 210,
        }
    }
}

impl PruneCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_tolerance > 0.0 && self.rho_tolerance.is_finite()) {
            return Err(Error::Config("rho_tolerance must be > 0".into()));
        }
        if !(self.delta_slope_tolerance > 0.0 && self.delta_slope_tolerance.is_finite()) {
            return Err(Error::Config("delta_slope_tolerance must be > 0".into()));
        }
        if self.rho_window < 2 {
            return Err(Error::Config("rho_window must be >= 2".into()));
        }
        // the profile is classified at the ρ point, which needs enough samples past warmup
        if self.rho_min_epochs < self.delta_warmup_epochs + 2 {
            return Err(Error::Config(format!(
                "rho_min_epochs ({}) must be >= delta_warmup_epochs + 2 ({})",
                self.rho_min_epochs,
                self.delta_warmup_epochs + 2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeProfile {
    Decreasing,
    Flat,
    Increasing,
}

/// ρ: at least `rho_min_epochs` samples and the last `rho_window` absolute
/// differences of total AE all below `rho_tolerance`.
pub fn saturation_reached(history: &AeHistory, c: &PruneCriteria) -> bool {
    saturated_totals(&history.totals(), c)
}

pub fn saturated_totals(totals: &[f64], c: &PruneCriteria) -> bool {
    if totals.len() < c.rho_min_epochs.max(c.rho_window + 1) {
        return false;
    }
    totals[totals.len() - c.rho_window - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() < c.rho_tolerance)
}

/// δ: sign of the least-squares slope of total AE against epoch, after warmup.
pub fn classify_profile(history: &AeHistory, c: &PruneCriteria) -> Result<AeProfile> {
    let points: Vec<(f64, f64)> = history
        .samples
        .iter()
        .skip(c.delta_warmup_epochs)
        .map(|s| (s.epoch as f64, s.total_ae))
        .collect();
    classify_points(&points, c.delta_slope_tolerance)
}

pub fn classify_totals(totals: &[f64], c: &PruneCriteria) -> Result<AeProfile> {
    let points: Vec<(f64, f64)> = totals
        .iter()
        .enumerate()
        .skip(c.delta_warmup_epochs)
        .map(|(e, &t)| (e as f64, t))
        .collect();
    classify_points(&points, c.delta_slope_tolerance)
}

fn classify_points(points: &[(f64, f64)], tolerance: f64) -> Result<AeProfile> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "slope needs at least 2 post-warmup samples, have {}",
            points.len()
        )));
    }
    let slope = least_squares_slope(points);
    Ok(if slope > tolerance {
        AeProfile::Increasing
    } else if slope < -tolerance {
        AeProfile::Decreasing
    } else {
        AeProfile::Flat
    })
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// One trained network of the pruning sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub network_index: usize,
    pub arch: ArchSpec,
    pub epochs_trained: usize,
    pub history: AeHistory,
    pub final_accuracy: f64,
    pub profile: AeProfile,
    /// False when the epoch budget ran out before ρ fired.
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub from_index: usize,
    pub ae_used: Vec<f64>,
    pub old_sizes: Vec<usize>,
    pub new_sizes: Vec<usize>,
    /// Epoch of the stage whose AE vector was used.
    pub epoch: usize,
}

/// Resizes the stage's architecture by its last-epoch AE vector.
pub fn prune_arch(stage: &StageRecord) -> Result<(ArchSpec, PruneEvent)> {
    let last = stage
        .history
        .last()
        .ok_or_else(|| Error::InvalidArgument(format!("stage {} has no AE history", stage.network_index)))?;
    let ae = stage.history.ae_vector_at(last.epoch)?.to_vec();
    let arch = resize_arch(&stage.arch, &ae)?;
    let event = PruneEvent {
        from_index: stage.network_index,
        old_sizes: stage.arch.prunable_sizes(),
        new_sizes: arch.prunable_sizes(),
        ae_used: ae,
        epoch: last.epoch,
    };
    Ok((arch, event))
}

/// [`prune_arch`] plus a fresh, randomly initialized model of the new shape.
pub fn prune_step<T: Scalar>(stage: &StageRecord, seed: u64) -> Result<(ArchSpec, Model<T>, PruneEvent)> {
    let (arch, event) = prune_arch(stage)?;
    let model = Model::instantiate(&arch, seed)?;
    Ok((arch, model, event))
}

/// Which network of a run is being built or trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetRole {
    Stage(usize),
    Final,
}

pub trait NetworkTrainer {
    type Net;

    fn instantiate(&mut self, arch: &ArchSpec, role: NetRole) -> Result<Self::Net>;

    /// Trains one epoch and returns its AE sample (epoch numbers start at 0
    /// for every network). `phase_epochs` is the length the LR schedule spans.
    fn train_epoch(&mut self, net: &mut Self::Net, role: NetRole, epoch: usize, phase_epochs: usize) -> Result<AeSample>;
}

/// Progress callbacks; all default to no-ops.
pub trait RunObserver {
    fn on_epoch(&mut self, _role: NetRole, _sample: &AeSample) -> Result<()> {
        Ok(())
    }
    fn on_stage_end(&mut self, _stage: &StageRecord) -> Result<()> {
        Ok(())
    }
    fn on_prune(&mut self, _event: &PruneEvent) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;
impl RunObserver for NoopObserver {}

pub struct RunOutcome<N> {
    pub final_net: N,
    pub final_arch: ArchSpec,
    /// Index of the final network in the pruning sequence.
    pub final_index: usize,
    pub final_history: AeHistory,
    pub stages: Vec<StageRecord>,
    pub events: Vec<PruneEvent>,
}

impl<N> RunOutcome<N> {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.final_history.last().map(|s| s.accuracy)
    }
}

/// Runs the full prune-in-training loop.
///
/// Each stage trains for at most `epochs_budget` epochs, stopping early at ρ.
/// An increasing AE profile makes the stage's network final; otherwise it is
/// pruned, and after `max_rounds` prunes the newest network is final. The final
/// network is retrained from a fresh initialization for `final_train_epochs`.
/// With `max_rounds == 0` this is plain training of `initial`.
pub fn run_pruning_in_training<Tr: NetworkTrainer>(
    trainer: &mut Tr,
    initial: &ArchSpec,
    criteria: &PruneCriteria,
    epochs_budget: usize,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome<Tr::Net>> {
    criteria.validate()?;
    initial.validate()?;
    if criteria.max_rounds > 0 && epochs_budget < criteria.delta_warmup_epochs + 2 {
        return Err(Error::Config(format!(
            "epochs_budget ({epochs_budget}) must be >= delta_warmup_epochs + 2 ({})",
            criteria.delta_warmup_epochs + 2
        )));
    }
    let mut stages = Vec::new();
    let mut events = Vec::new();
    let mut arch = initial.clone();
    let mut index = 0;

    while events.len() < criteria.max_rounds {
        let role = NetRole::Stage(index);
        let mut net = trainer.instantiate(&arch, role)?;
        let mut history = AeHistory::new(index);
        let mut saturated = false;
        for epoch in 0..epochs_budget {
            let sample = trainer.train_epoch(&mut net, role, epoch, epochs_budget)?;
            observer.on_epoch(role, &sample)?;
            history.push(sample)?;
            if saturation_reached(&history, criteria) {
                saturated = true;
                break;
            }
        }
        let profile = classify_profile(&history, criteria)?;
        let stage = StageRecord {
            network_index: index,
            arch: arch.clone(),
            epochs_trained: history.len(),
            final_accuracy: history.last().map_or(0.0, |s| s.accuracy),
            history,
            profile,
            saturated,
        };
        observer.on_stage_end(&stage)?;
        if profile == AeProfile::Increasing {
            stages.push(stage);
            break;
        }
        let (next, event) = prune_arch(&stage)?;
        observer.on_prune(&event)?;
        stages.push(stage);
        events.push(event);
        arch = next;
        index += 1;
    }

    let mut final_net = trainer.instantiate(&arch, NetRole::Final)?;
    let mut final_history = AeHistory::new(index);
    for epoch in 0..criteria.final_train_epochs {
        let sample = trainer.train_epoch(&mut final_net, NetRole::Final, epoch, criteria.final_train_epochs)?;
        observer.on_epoch(NetRole::Final, &sample)?;
        final_history.push(sample)?;
    }
    Ok(RunOutcome {
        final_net,
        final_arch: arch,
        final_index: index,
        final_history,
        stages,
        events,
    })
}
