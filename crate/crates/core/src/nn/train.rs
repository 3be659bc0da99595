//! Epoch loop with validation-loss early stopping.

use serde::{Deserialize, Serialize};

/// Outcome of observing one epoch's validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss. `patience == 0` stops at the first non-improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, wait: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if val_loss.is_nan() || val_loss >= best => {
                self.wait += 1;
                if self.wait >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.wait = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Per-epoch losses of one training run. Epochs are numbered from 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }
}

/// A model plus data that can be trained one epoch at a time.
pub trait EpochRunner {
    type Snapshot;
    fn train_epoch(&mut self, epoch: usize) -> f64;
    fn validation_loss(&mut self) -> f64;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Trains until `max_epochs` or early stopping, then restores the weights of
/// the epoch with the lowest validation loss.
pub fn fit_with_early_stopping<R: EpochRunner>(runner: &mut R, max_epochs: usize, patience: usize) -> History {
    let mut stopper = EarlyStopping::new(patience);
    let mut history = History::default();
    let mut best = None;
    for epoch in 1..=max_epochs {
        let train = runner.train_epoch(epoch);
        let val = runner.validation_loss();
        history.train_loss.push(train);
        history.val_loss.push(val);
        log::debug!("epoch {epoch}: train {train:.5} val {val:.5}");
        match stopper.observe(epoch, val) {
            StopDecision::Improved => best = Some(runner.snapshot()),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((epoch, _)) = stopper.best() {
        history.best_epoch = epoch;
    }
    if let Some(snapshot) = best {
        runner.restore(snapshot);
    }
    history
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Validation losses replayed from a script; the "weights" are just the
    /// epoch number that produced them.
    struct Scripted {
        losses: Vec<f64>,
        weights: usize,
    }

    impl EpochRunner for Scripted {
        type Snapshot = usize;
        fn train_epoch(&mut self, epoch: usize) -> f64 {
            self.weights = epoch;
            0.0
        }
        fn validation_loss(&mut self) -> f64 {
            self.losses[self.weights - 1]
        }
        fn snapshot(&self) -> usize {
            self.weights
        }
        fn restore(&mut self, s: usize) {
            self.weights = s;
        }
    }

    #[test]
    fn increasing_loss_stops_after_patience_plus_one() {
        let mut r = Scripted { losses: (1..=20).map(f64::from).collect(), weights: 0 };
        let h = fit_with_early_stopping(&mut r, 80, 3);
        assert_eq!(h.epochs_run(), 4);
        assert!(h.stopped_early);
        assert_eq!(h.best_epoch, 1);
        assert_eq!(r.weights, 1);
    }

    #[test]
    fn zero_patience_stops_at_first_non_improvement() {
        let mut r = Scripted { losses: vec![3.0, 2.0, 2.5, 1.0], weights: 0 };
        let h = fit_with_early_stopping(&mut r, 80, 0);
        assert_eq!(h.epochs_run(), 3);
        assert_eq!(r.weights, 2);
    }

    #[test]
    fn runs_to_max_when_always_improving() {
        let mut r = Scripted { losses: (0..10).map(|k| 10.0 - k as f64).collect(), weights: 0 };
        let h = fit_with_early_stopping(&mut r, 10, 3);
        assert_eq!(h.epochs_run(), 10);
        assert!(!h.stopped_early);
        assert_eq!(h.best_epoch, 10);
    }
}
