use super::{train_forecaster, ForecastError, ForecastHyperparams};
use crate::dataio::HouseholdRecord;
use crate::numerics::ScalerKind;
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Ranges sampled by [`random_search`]. Learning rate and L2 are drawn
/// log-uniformly; the other fields pick uniformly from their lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub l2: (f64, f64),
    pub lstm_nodes: Vec<usize>,
    pub fc_nodes: Vec<usize>,
    pub scalers: Vec<ScalerKind>,
    pub windows: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (1e-3, 3e-2),
            l2: (1e-6, 1e-3),
            lstm_nodes: vec![4, 8, 16, 32],
            fc_nodes: vec![8, 16, 32, 64],
            scalers: vec![ScalerKind::MinMax, ScalerKind::Standard],
            windows: vec![48],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !range_ok(self.learning_rate) || !range_ok(self.l2) {
            return Err(ForecastError::Hyperparams("search ranges must be positive and ordered".into()));
        }
        if self.lstm_nodes.is_empty() || self.fc_nodes.is_empty() || self.scalers.is_empty() || self.windows.is_empty() {
            return Err(ForecastError::Hyperparams("search lists must be non-empty".into()));
        }
        Ok(())
    }

    fn sample(&self, base: &ForecastHyperparams, rng: &mut impl Rng) -> ForecastHyperparams {
        fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
            if lo == hi {
                return lo;
            }
            rng.random_range(lo.ln()..hi.ln()).exp()
        }
        fn pick<T: Copy>(rng: &mut impl Rng, xs: &[T]) -> T {
            xs[rng.random_range(0..xs.len())]
        }
        ForecastHyperparams {
            learning_rate: log_uniform(rng, self.learning_rate),
            l2: log_uniform(rng, self.l2),
            lstm_nodes: pick(rng, &self.lstm_nodes),
            fc_nodes: pick(rng, &self.fc_nodes),
            scaler: pick(rng, &self.scalers),
            window: pick(rng, &self.windows),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub hyperparams: ForecastHyperparams,
    /// Mean test MAE over the validation meters; `None` if any run failed.
    pub mean_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: ForecastHyperparams,
    pub best_mae: f64,
    pub trials: Vec<Trial>,
}

/// Budgeted random search. Every candidate is trained on every validation
/// meter with the same per-meter seed; the lowest mean MAE wins (earliest
/// trial on ties).
pub fn random_search(
    records: &[HouseholdRecord],
    budget: usize,
    seed: u64,
    base: &ForecastHyperparams,
    space: &SearchSpace,
) -> Result<SearchOutcome, ForecastError> {
    if records.is_empty() {
        return Err(ForecastError::Hyperparams("need at least one validation meter".into()));
    }
    if budget == 0 {
        return Err(ForecastError::Hyperparams("search budget must be >= 1".into()));
    }
    space.validate()?;
    let candidates: Vec<ForecastHyperparams> = (0..budget)
        .map(|t| space.sample(base, &mut seed::rng(seed::derive(seed, t as u64))))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..budget).flat_map(|t| (0..records.len()).map(move |r| (t, r))).collect();
    let results = crate::par_map(&jobs, |(t, r)| {
        let rec = &records[*r];
        match train_forecaster(rec, &candidates[*t], seed::derive(seed, rec.meter_id)) {
            Ok(tr) => Some(tr.test_mae),
            Err(e) => {
                log::warn!("search trial {t} on meter {}: {e}", rec.meter_id);
                None
            }
        }
    });

    let mut trials = Vec::with_capacity(budget);
    for (t, hp) in candidates.into_iter().enumerate() {
        let maes: Option<Vec<f64>> = results[t * records.len()..(t + 1) * records.len()].iter().copied().collect();
        let mean_mae = maes.map(|m| m.iter().sum::<f64>() / m.len() as f64);
        trials.push(Trial { hyperparams: hp, mean_mae });
    }
    let (best_idx, best_mae) = trials
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.mean_mae.map(|m| (i, m)))
        .fold(None, |acc: Option<(usize, f64)>, (i, m)| match acc {
            Some((_, bm)) if bm <= m => acc,
            _ => Some((i, m)),
        })
        .ok_or_else(|| ForecastError::Hyperparams("every search candidate failed to train".into()))?;
    Ok(SearchOutcome {
        best: trials[best_idx].hyperparams.clone(),
        best_mae,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_dataset, SynthConfig};

    fn meters(n: usize, days: usize) -> Vec<HouseholdRecord> {
        generate_dataset(&SynthConfig::new(n.max(2), days, 21))
            .unwrap()
            .households
            .into_iter()
            .map(|h| h.record)
            .take(n)
            .collect()
    }

    fn quick() -> ForecastHyperparams {
        ForecastHyperparams {
            window: 24,
            epochs: 3,
            batch_size: 32,
            max_windows_per_epoch: 256,
            ..ForecastHyperparams::default()
        }
    }

    fn space() -> SearchSpace {
        SearchSpace {
            lstm_nodes: vec![4, 8],
            fc_nodes: vec![8, 16],
            windows: vec![24],
            ..SearchSpace::default()
        }
    }

    #[test]
    fn budget_one_returns_the_single_candidate() {
        let recs = meters(1, 14);
        let out = random_search(&recs, 1, 5, &quick(), &space()).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.best, out.trials[0].hyperparams);
    }

    #[test]
    fn same_seed_same_selection() {
        let recs = meters(2, 14);
        let a = random_search(&recs, 3, 8, &quick(), &space()).unwrap();
        let b = random_search(&recs, 3, 8, &quick(), &space()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn search_beats_or_matches_default() {
        let recs = meters(3, 14);
        let base = quick();
        let out = random_search(&recs, 20, 2, &base, &space()).unwrap();
        let default_mae = recs
            .iter()
            .map(|r| train_forecaster(r, &base, seed::derive(2, r.meter_id)).unwrap().test_mae)
            .sum::<f64>()
            / recs.len() as f64;
        assert!(out.best_mae <= default_mae, "{} > {default_mae}", out.best_mae);
    }

    #[test]
    fn samples_respect_the_space() {
        let s = space();
        let mut rng = seed::rng(1);
        for _ in 0..200 {
            let hp = s.sample(&quick(), &mut rng);
            assert!(hp.learning_rate >= 1e-3 && hp.learning_rate <= 3e-2);
            assert!(hp.l2 >= 1e-6 && hp.l2 <= 1e-3);
            assert!(s.lstm_nodes.contains(&hp.lstm_nodes));
            assert_eq!(hp.window, 24);
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(random_search(&[], 3, 0, &quick(), &space()).is_err());
        assert!(random_search(&meters(1, 14), 0, 0, &quick(), &space()).is_err());
    }
}
