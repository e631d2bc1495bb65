//! Validation-driven learning-rate reduction and early stopping.

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to improve for more than `patience` consecutive epochs.
///
/// An epoch improves when the value drops below `best * (1 - threshold)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            threshold: 1e-4,
            min_lr: 0.0,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's value and returns the learning rate to use next.
    pub fn step(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best * (1.0 - self.threshold) {
            self.best = value;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }
}

/// Signals a stop after `patience` consecutive epochs without a strict
/// improvement of the best value.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    stagnant: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    /// Returns `true` when training should stop after this epoch.
    pub fn step(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
        }
        self.stagnant >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}
