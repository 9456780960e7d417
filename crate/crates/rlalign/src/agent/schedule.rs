//! Piecewise-linear exploration rate over epochs: a fast first decay to a
//! middle anchor, a slower one to the end anchor, constant afterwards.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub mid: f64,
    pub mid_epoch: f64,
    pub end: f64,
    pub end_epoch: f64,
}

impl ExplorationSchedule {
    /// The published decay: 1.0 at epoch 0, 0.1 at epoch 20, then down to
    /// 0.01 at epoch 100.
    pub fn standard() -> Self {
        ExplorationSchedule {
            start: 1.0,
            mid: 0.1,
            mid_epoch: 20.0,
            end: 0.01,
            end_epoch: 100.0,
        }
    }

    /// The standard shape squeezed into a short run: anchors at 20% and 80%
    /// of `total_epochs`, so even a handful of epochs ends mostly greedy.
    pub fn compressed(total_epochs: usize) -> Self {
        let total = total_epochs.max(1) as f64;
        ExplorationSchedule {
            start: 1.0,
            mid: 0.1,
            mid_epoch: (total * 0.2).max(0.5),
            end: 0.01,
            end_epoch: (total * 0.8).max(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.end
            && self.end <= self.mid
            && self.mid <= self.start
            && self.start <= 1.0;
        if !ordered {
            return Err(Error::Config(format!(
                "exploration anchors must satisfy 0 <= end <= mid <= start <= 1, got {} {} {}",
                self.start, self.mid, self.end
            )));
        }
        if !(self.mid_epoch > 0.0 && self.end_epoch > self.mid_epoch) {
            return Err(Error::Config(format!(
                "anchor epochs must satisfy 0 < mid_epoch < end_epoch, got {} {}",
                self.mid_epoch, self.end_epoch
            )));
        }
        Ok(())
    }

    /// Exploration rate at a (possibly fractional) epoch index.
    pub fn value(&self, epoch: f64) -> f64 {
        if epoch <= 0.0 {
            self.start
        } else if epoch < self.mid_epoch {
            self.start + (self.mid - self.start) * epoch / self.mid_epoch
        } else if epoch < self.end_epoch {
            self.mid
                + (self.end - self.mid) * (epoch - self.mid_epoch)
                    / (self.end_epoch - self.mid_epoch)
        } else {
            self.end
        }
    }
}
