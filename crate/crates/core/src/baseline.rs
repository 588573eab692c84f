//! Raw-data comparator: the same classifier family as the meta-classifier,
//! trained on day-by-half-hour consumption matrices.

use crate::classifier::{train_classifier, ClassifierConfig, ClassifierError, ConvClassifier};
use crate::dataio::{Dataset, HouseholdRecord, Property, SLOTS_PER_DAY};
use crate::metrics::ProbabilityMatrix;
use crate::numerics::{Scaler, ScalerKind, Tensor};
use chrono::Timelike;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MIN_DAYS: usize = 14;
pub const DEFAULT_MAX_DAYS: usize = 60;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("meter {meter_id}: {days} full days, need at least {needed}")]
    TooShort { meter_id: u64, days: usize, needed: usize },
    #[error("matrix has {got} days, classifier expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Number of complete midnight-aligned days in the record.
pub fn full_days(record: &HouseholdRecord) -> usize {
    let (offset, _) = day_offset(record);
    record.len().saturating_sub(offset) / SLOTS_PER_DAY
}

fn day_offset(record: &HouseholdRecord) -> (usize, usize) {
    let t = record.start.time();
    let slot = (t.hour() * 60 + t.minute()) as usize / 30;
    let offset = if slot == 0 { 0 } else { SLOTS_PER_DAY - slot };
    (offset, slot)
}

/// The most recent `max_days` full days as a `[days, 48]` matrix, min-max
/// scaled over the household's own selected readings. A constant series maps
/// to zeros.
pub fn featurize_raw(record: &HouseholdRecord, max_days: usize) -> Result<Tensor, BaselineError> {
    let days = full_days(record);
    if days < MIN_DAYS {
        return Err(BaselineError::TooShort {
            meter_id: record.meter_id,
            days,
            needed: MIN_DAYS,
        });
    }
    let take = days.min(max_days.max(1));
    let (offset, _) = day_offset(record);
    let end = offset + days * SLOTS_PER_DAY;
    let slice = &record.readings[end - take * SLOTS_PER_DAY..end];
    let scaler = Scaler::fit_series(ScalerKind::MinMax, slice).expect("non-empty finite slice");
    let data = slice.iter().map(|v| scaler.apply(0, *v)).collect();
    Ok(Tensor::matrix(take, SLOTS_PER_DAY, data).expect("take x 48 values"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCard {
    pub property: Property,
    pub days: usize,
    pub cv_auc: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineClassifier {
    pub card: BaselineCard,
    pub classifier: ConvClassifier,
}

fn io(path: &Path, e: impl std::fmt::Display) -> BaselineError {
    BaselineError::Io(format!("{}: {e}", path.display()))
}

impl BaselineClassifier {
    fn paths(dir: &Path, p: Property) -> (PathBuf, PathBuf) {
        (dir.join(format!("{}.sglk", p.key())), dir.join(format!("{}.json", p.key())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), BaselineError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let (weights, card) = Self::paths(dir, self.card.property);
        self.classifier.save(&weights)?;
        std::fs::write(&card, serde_json::to_string_pretty(&self.card).expect("card serializes")).map_err(|e| io(&card, e))
    }

    pub fn load(dir: &Path, p: Property) -> Result<Option<Self>, BaselineError> {
        let (weights, card) = Self::paths(dir, p);
        if !card.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&card).map_err(|e| io(&card, e))?;
        let card: BaselineCard = serde_json::from_str(&text).map_err(|e| io(&weights, e))?;
        let classifier = ConvClassifier::load(&weights)?;
        if classifier.input_rows != card.days || card.property != p {
            return Err(io(&weights, "card does not match weights"));
        }
        Ok(Some(Self { card, classifier }))
    }
}

pub fn save_baselines(dir: &Path, models: &BTreeMap<Property, BaselineClassifier>) -> Result<(), BaselineError> {
    models.values().try_for_each(|m| m.save(dir))
}

pub fn load_baselines(dir: &Path) -> Result<BTreeMap<Property, BaselineClassifier>, BaselineError> {
    let mut out = BTreeMap::new();
    for p in Property::ALL {
        if let Some(m) = BaselineClassifier::load(dir, p)? {
            out.insert(p, m);
        }
    }
    Ok(out)
}

/// Day count shared by every household: the shortest record, capped at
/// `max_days`.
pub fn common_days(data: &Dataset, max_days: usize) -> usize {
    data.households
        .iter()
        .map(|h| full_days(&h.record))
        .min()
        .unwrap_or(0)
        .min(max_days)
}

pub fn train_baseline(
    aux: &Dataset,
    property: Property,
    max_days: usize,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<BaselineClassifier, BaselineError> {
    let days = common_days(aux, max_days);
    let matrices = aux
        .households
        .iter()
        .map(|h| featurize_raw(&h.record, days))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<&Tensor> = matrices.iter().collect();
    let trained = train_classifier(&inputs, &aux.labels(property), config, seed)?;
    log::info!("baseline {property}: cv auc {:.3}, {} epochs", trained.cv_auc, trained.epochs);
    Ok(BaselineClassifier {
        card: BaselineCard {
            property,
            days,
            cv_auc: trained.cv_auc,
            epochs: trained.epochs,
        },
        classifier: trained.model,
    })
}

pub fn predict_baseline(model: &BaselineClassifier, matrix: &Tensor) -> Result<f64, BaselineError> {
    let got = matrix.shape()[0];
    if got != model.card.days {
        return Err(BaselineError::Shape {
            expected: model.card.days,
            got,
        });
    }
    Ok(model.classifier.predict_one(matrix)?)
}

/// Probability matrix over every household of `data`, in dataset order.
/// Properties without a model are skipped with a warning.
pub fn predict_matrix(
    models: &BTreeMap<Property, BaselineClassifier>,
    data: &Dataset,
    properties: &[Property],
) -> Result<ProbabilityMatrix, BaselineError> {
    let present: Vec<Property> = properties
        .iter()
        .copied()
        .filter(|p| {
            let ok = models.contains_key(p);
            if !ok {
                log::warn!("no baseline model for {p}; skipping");
            }
            ok
        })
        .collect();
    let mut values = Vec::with_capacity(data.len());
    for h in &data.households {
        let mut row = Vec::with_capacity(present.len());
        for p in &present {
            let m = &models[p];
            row.push(predict_baseline(m, &featurize_raw(&h.record, m.card.days)?)?);
        }
        values.push(row);
    }
    Ok(ProbabilityMatrix {
        meters: data.meter_ids(),
        properties: present,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn record(start_hour: u32, n: usize, f: impl Fn(usize) -> f64) -> HouseholdRecord {
        let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap().and_hms_opt(start_hour, 0, 0).unwrap();
        HouseholdRecord::new(1, start, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn keeps_most_recent_days() {
        let r = record(0, 20 * 48 + 7, |i| i as f64);
        let m = featurize_raw(&r, 14).unwrap();
        assert_eq!(m.shape(), &[14, 48]);
        // partial trailing day dropped, last full day ends at index 959
        let first = (6 * 48) as f64;
        let last = (20 * 48 - 1) as f64;
        assert_eq!(m.data()[0], 0.0);
        assert_eq!(*m.data().last().unwrap(), 1.0);
        assert!((m.data()[1] - 1.0 / (last - first)).abs() < 1e-12);
    }

    #[test]
    fn exactly_fourteen_days_and_leading_partial_day() {
        let r = record(0, 14 * 48, |i| (i % 48) as f64);
        assert_eq!(featurize_raw(&r, 60).unwrap().shape(), &[14, 48]);
        let r = record(12, 24 + 14 * 48, |i| i as f64);
        let m = featurize_raw(&r, 60).unwrap();
        assert_eq!(m.shape(), &[14, 48]);
        assert_eq!(m.data()[0], 0.0);
        let r = record(12, 14 * 48, |i| i as f64);
        assert!(matches!(featurize_raw(&r, 60), Err(BaselineError::TooShort { days: 13, .. })));
    }

    #[test]
    fn constant_series_is_flat() {
        let m = featurize_raw(&record(0, 15 * 48, |_| 0.7), 60).unwrap();
        let v = m.data()[0];
        assert!(v.is_finite());
        assert!(m.data().iter().all(|x| *x == v));
    }

    #[test]
    fn shape_checked_on_predict() {
        use crate::dataio::{generate_dataset, SynthConfig};
        let ds = generate_dataset(&SynthConfig::new(10, 16, 3)).unwrap();
        let cfg = ClassifierConfig {
            max_epochs: 2,
            ..ClassifierConfig::default()
        };
        let p = Property::ALL.into_iter().find(|p| {
            let pos = ds.labels(*p).iter().filter(|l| **l).count();
            (2..=8).contains(&pos)
        });
        let Some(p) = p else { return };
        let m = train_baseline(&ds, p, 60, &cfg, 1).unwrap();
        assert_eq!(m.card.days, 16);
        let short = featurize_raw(&ds.households[0].record, 14).unwrap();
        assert!(matches!(
            predict_baseline(&m, &short),
            Err(BaselineError::Shape { expected: 16, got: 14 })
        ));
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = BaselineClassifier::load(dir.path(), p).unwrap().unwrap();
        let full = featurize_raw(&ds.households[0].record, 16).unwrap();
        assert_eq!(predict_baseline(&back, &full).unwrap(), predict_baseline(&m, &full).unwrap());
        let matrix = predict_matrix(&BTreeMap::from([(p, m)]), &ds, &Property::ALL).unwrap();
        assert_eq!(matrix.properties, vec![p]);
        assert_eq!(matrix.values.len(), 10);
    }
}
