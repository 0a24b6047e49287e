use serde::{Deserialize, Serialize};

/// Halves the learning rate whenever the relative improvement of a dev
/// metric (lower is better) drops below a threshold.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub threshold: f64,
    pub best: Option<f64>,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        PlateauScheduler {
            lr,
            factor: 0.5,
            threshold: 0.001,
            best: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn update(&mut self, metric: f64) -> f64 {
        match self.best {
            None => self.best = Some(metric),
            Some(best) => {
                let improvement = if best > 0.0 {
                    (best - metric) / best
                } else {
                    0.0
                };
                if improvement < self.threshold {
                    self.lr *= self.factor;
                }
                self.best = Some(best.min(metric));
            }
        }
        self.lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Tracks the lowest metric seen and stops after `patience` consecutive
/// epochs without strict improvement. Ties keep the earlier reference.
#[derive(Clone, Debug)]
pub struct EarlyStopper<R> {
    pub patience: usize,
    best: Option<(f64, R)>,
    stale: usize,
}

impl<R: Clone> EarlyStopper<R> {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn update(&mut self, metric: f64, reference: R) -> StopDecision {
        let improved = match &self.best {
            None => true,
            Some((best, _)) => metric < *best,
        };
        if improved {
            self.best = Some((metric, reference));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<(f64, &R)> {
        self.best.as_ref().map(|(m, r)| (*m, r))
    }

    pub fn into_best(self) -> Option<(f64, R)> {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn plateau_examples() {
        let mut s = PlateauScheduler::new(1.0);
        assert_eq!(s.update(0.5), 1.0);
        assert_eq!(s.best, Some(0.5));
        assert_eq!(s.update(0.4), 1.0);

        let mut s = PlateauScheduler::new(1.0);
        s.update(0.5);
        assert_eq!(s.update(0.4999), 0.5);
    }

    #[test]
    fn early_stop_examples() {
        let mut st = EarlyStopper::new(3);
        let metrics = [0.5, 0.4, 0.45, 0.46, 0.47];
        let decisions: Vec<_> = metrics
            .iter()
            .enumerate()
            .map(|(i, &m)| st.update(m, i + 1))
            .collect();
        assert_eq!(decisions[3], StopDecision::Continue);
        assert_eq!(decisions[4], StopDecision::Stop);
        assert_eq!(st.best(), Some((0.4, &2)));

        let mut st = EarlyStopper::new(2);
        for (i, m) in [0.9, 0.8, 0.7, 0.6].iter().enumerate() {
            assert_eq!(st.update(*m, i), StopDecision::Continue);
        }

        let mut st = EarlyStopper::new(5);
        st.update(0.3, "first");
        st.update(0.3, "second");
        assert_eq!(st.best(), Some((0.3, &"first")));
    }

    proptest! {
        #[test]
        fn plateau_lr_never_increases_and_halves_exactly(
            metrics in proptest::collection::vec(0.01f64..1.0, 1..40)
        ) {
            let mut s = PlateauScheduler::new(0.08);
            let mut prev = s.lr;
            for m in metrics {
                let lr = s.update(m);
                prop_assert!(lr == prev || lr == prev * 0.5);
                prev = lr;
            }
        }

        #[test]
        fn early_stop_best_is_argmin_before_stop(
            metrics in proptest::collection::vec(0.0f64..1.0, 1..40),
            patience in 1usize..6,
        ) {
            let mut st = EarlyStopper::new(patience);
            let mut seen = vec![];
            for (i, &m) in metrics.iter().enumerate() {
                seen.push(m);
                if st.update(m, i) == StopDecision::Stop {
                    break;
                }
            }
            let (bm, &bi) = st.best().unwrap();
            let argmin = seen
                .iter()
                .enumerate()
                .fold(0, |a, (i, &m)| if m < seen[a] { i } else { a });
            prop_assert_eq!(bi, argmin);
            prop_assert_eq!(bm, seen[argmin]);
        }
    }
}
