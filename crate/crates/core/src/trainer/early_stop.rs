/// Keeps the epoch with the highest validation accuracy (earliest on ties)
/// and signals a halt after `patience` epochs without improvement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopPolicy {
    pub patience: usize,
}

impl Default for EarlyStopPolicy {
    fn default() -> Self {
        EarlyStopPolicy { patience: 10 }
    }
}

/// Running state of an [`EarlyStopPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    policy: EarlyStopPolicy,
    best: Option<(usize, f64)>,
}

impl EarlyStopper {
    pub fn new(policy: EarlyStopPolicy) -> Self {
        EarlyStopper { policy, best: None }
    }

    /// Records the metric of a 1-based epoch; `true` when it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        match self.best {
            Some((_, b)) if metric <= b => false,
            _ => {
                self.best = Some((epoch, metric));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    /// Whether training should halt after `epoch`.
    pub fn should_stop(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(b, _)| epoch - b >= self.policy.patience)
    }
}

/// Best 1-based epoch of a validation-accuracy history under `policy`.
/// Epochs after the halt point are ignored.
pub fn select_best(history: &[f64], policy: EarlyStopPolicy) -> Option<usize> {
    let mut s = EarlyStopper::new(policy);
    for (i, &m) in history.iter().enumerate() {
        s.observe(i + 1, m);
        if s.should_stop(i + 1) {
            break;
        }
    }
    s.best().map(|(e, _)| e)
}
