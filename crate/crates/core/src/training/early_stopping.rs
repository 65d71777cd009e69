/// Tracks the best validation loss; epochs are numbered from 0.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// New best; snapshot the weights.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_two_stops_after_fourth_epoch() {
        let mut es = EarlyStopping::new(2);
        let decisions: Vec<_> = [1.0, 0.9, 0.95, 0.97]
            .iter()
            .enumerate()
            .map(|(e, &l)| es.observe(e, l))
            .collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(es.best_epoch(), Some(1));
        assert_eq!(es.best_loss(), 0.9);
    }

    #[test]
    fn nan_never_counts_as_improvement() {
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.observe(0, 1.0), StopDecision::Improved);
        assert_eq!(es.observe(1, f64::NAN), StopDecision::Stop);
        assert_eq!(es.best_epoch(), Some(0));
    }
}
