//! Household load records, their significant-property labels, and the
//! auxiliary/honest split.

mod files;
mod synth;

pub use files::{load_csv, load_dataset, save_dataset, write_labels_csv, write_meters_csv};
pub use synth::{generate_dataset, PropertyStrengths, SynthConfig};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Readings per calendar day at 30-minute resolution.
pub const SLOTS_PER_DAY: usize = 48;
pub const INTERVAL_MINUTES: i64 = 30;

pub fn interval() -> Duration {
    Duration::minutes(INTERVAL_MINUTES)
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{file}: row {row}: {reason}")]
    Malformed { file: String, row: usize, reason: String },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("need at least {needed} households, got {got}")]
    TooFewHouseholds { needed: usize, got: usize },
    #[error("io: {0}")]
    Io(String),
}

/// The eight binary significant properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Retired,
    ElectricCooking,
    Children,
    Alone,
    HouseOld,
    Detached,
    Console,
    Desktop,
}

impl Property {
    /// Label-file column order.
    pub const ALL: [Property; 8] = [
        Property::Retired,
        Property::ElectricCooking,
        Property::Children,
        Property::Alone,
        Property::HouseOld,
        Property::Detached,
        Property::Console,
        Property::Desktop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name in the labels file and in configs.
    pub fn key(self) -> &'static str {
        match self {
            Property::Retired => "retired",
            Property::ElectricCooking => "electric_cooking",
            Property::Children => "children",
            Property::Alone => "alone",
            Property::HouseOld => "house_old",
            Property::Detached => "detached",
            Property::Console => "console",
            Property::Desktop => "desktop",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.key() == key)
    }

    /// Survey question the label answers.
    pub fn description(self) -> &'static str {
        match self {
            Property::Retired => "Chief income earner retired or not",
            Property::ElectricCooking => "Cooking facility type",
            Property::Children => "Having children",
            Property::Alone => "Living alone",
            Property::HouseOld => "House age",
            Property::Detached => "House type",
            Property::Console => "Number of gaming consoles",
            Property::Desktop => "Number of desktop computers",
        }
    }

    /// `(positive count, labelled households)` in the reference survey.
    pub fn survey_counts(self) -> (u32, u32) {
        match self {
            Property::Retired => (1285, 1285 + 2947),
            Property::ElectricCooking => (1272, 1272 + 2960),
            Property::Children => (1229, 1229 + 3003),
            Property::Alone => (808, 808 + 3424),
            Property::HouseOld => (2152, 2152 + 2077),
            Property::Detached => (2189, 2189 + 1964),
            Property::Console => (1438, 1438 + 2794),
            Property::Desktop => (2001, 2001 + 2231),
        }
    }

    /// Share of positive labels.
    pub fn prior(self) -> f64 {
        let (pos, total) = self.survey_counts();
        pos as f64 / total as f64
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Labels for all eight properties of one household.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PropertyVector([bool; 8]);

impl PropertyVector {
    pub fn new(labels: [bool; 8]) -> Self {
        Self(labels)
    }

    pub fn get(&self, p: Property) -> bool {
        self.0[p.index()]
    }

    pub fn set(&mut self, p: Property, value: bool) {
        self.0[p.index()] = value;
    }

    pub fn as_array(&self) -> [bool; 8] {
        self.0
    }
}

/// One meter's half-hourly consumption in kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdRecord {
    pub meter_id: u64,
    pub start: NaiveDateTime,
    pub readings: Vec<f64>,
}

impl HouseholdRecord {
    pub fn new(meter_id: u64, start: NaiveDateTime, readings: Vec<f64>) -> Result<Self, DataError> {
        if meter_id == 0 {
            return Err(DataError::Invalid("meter ids must be positive".into()));
        }
        if let Some(i) = readings.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(DataError::Invalid(format!("meter {meter_id}: reading {i} is {}", readings[i])));
        }
        Ok(Self { meter_id, start, readings })
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + interval() * i as i32
    }

    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.len().saturating_sub(1))
    }

    /// Bytes of the raw series stored as `f64`.
    pub fn data_bytes(&self) -> usize {
        self.readings.len() * std::mem::size_of::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Household {
    pub record: HouseholdRecord,
    pub labels: PropertyVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub households: Vec<Household>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(households: Vec<Household>, provenance: Provenance) -> Result<Self, DataError> {
        let mut seen = BTreeSet::new();
        for h in &households {
            if !seen.insert(h.record.meter_id) {
                return Err(DataError::Invalid(format!("duplicate meter id {}", h.record.meter_id)));
            }
        }
        Ok(Self { households, provenance })
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    pub fn meter_ids(&self) -> Vec<u64> {
        self.households.iter().map(|h| h.record.meter_id).collect()
    }

    pub fn get(&self, meter_id: u64) -> Option<&Household> {
        self.households.iter().find(|h| h.record.meter_id == meter_id)
    }

    /// Earliest start and latest end over all records.
    pub fn date_range(&self) -> Option<(NaiveDateTime, NaiveDateTime)> {
        let start = self.households.iter().map(|h| h.record.start).min()?;
        let end = self.households.iter().map(|h| h.record.end()).max()?;
        Some((start, end))
    }

    pub fn labels(&self, p: Property) -> Vec<bool> {
        self.households.iter().map(|h| h.labels.get(p)).collect()
    }
}

pub const MIN_SPLIT_HOUSEHOLDS: usize = 5;

/// Sorts by meter id and puts the first `ceil(0.8 n)` households in the
/// auxiliary (adversary) set and the rest in the honest set.
pub fn split_aux_honest(ds: &Dataset) -> Result<(Dataset, Dataset), DataError> {
    let n = ds.len();
    if n < MIN_SPLIT_HOUSEHOLDS {
        return Err(DataError::TooFewHouseholds {
            needed: MIN_SPLIT_HOUSEHOLDS,
            got: n,
        });
    }
    let mut sorted = ds.households.clone();
    sorted.sort_by_key(|h| h.record.meter_id);
    let n_aux = (4 * n).div_ceil(5);
    let honest = sorted.split_off(n_aux);
    Ok((Dataset::new(sorted, ds.provenance)?, Dataset::new(honest, ds.provenance)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn start() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2010, 1, 4).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    fn toy(ids: &[u64]) -> Dataset {
        let hh = ids
            .iter()
            .map(|id| Household {
                record: HouseholdRecord::new(*id, start(), vec![0.1; 4]).unwrap(),
                labels: PropertyVector::default(),
            })
            .collect();
        Dataset::new(hh, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn split_takes_first_eighty_percent_of_sorted_ids() {
        let (aux, honest) = split_aux_honest(&toy(&[3, 1, 4, 2, 5])).unwrap();
        assert_eq!(aux.meter_ids(), vec![1, 2, 3, 4]);
        assert_eq!(honest.meter_ids(), vec![5]);
    }

    #[test]
    fn split_ten() {
        let ids: Vec<u64> = (1..=10).collect();
        let (aux, honest) = split_aux_honest(&toy(&ids)).unwrap();
        assert_eq!((aux.len(), honest.len()), (8, 2));
    }

    #[test]
    fn split_refuses_tiny_datasets() {
        assert!(matches!(
            split_aux_honest(&toy(&[10, 20])),
            Err(DataError::TooFewHouseholds { got: 2, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut ds = toy(&[1, 2]);
        ds.households.push(ds.households[0].clone());
        assert!(Dataset::new(ds.households, Provenance::Synthetic).is_err());
    }

    #[test]
    fn negative_readings_rejected() {
        assert!(HouseholdRecord::new(1, start(), vec![0.1, -0.2]).is_err());
        assert!(HouseholdRecord::new(0, start(), vec![0.1]).is_err());
    }

    #[test]
    fn priors_follow_survey_counts() {
        assert!((Property::Children.prior() - 1229.0 / 4232.0).abs() < 1e-12);
        assert_eq!(Property::from_key("house_old"), Some(Property::HouseOld));
    }

    proptest! {
        #[test]
        fn split_is_an_order_independent_partition(
            ids in prop::collection::btree_set(1u64..10_000, 5..60),
            rot in 0usize..60,
        ) {
            let mut v: Vec<u64> = ids.iter().copied().collect();
            let (a1, h1) = split_aux_honest(&toy(&v)).unwrap();
            let r = rot % v.len();
            v.rotate_left(r);
            v.reverse();
            let (a2, h2) = split_aux_honest(&toy(&v)).unwrap();
            prop_assert_eq!(a1.meter_ids(), a2.meter_ids());
            prop_assert_eq!(h1.meter_ids(), h2.meter_ids());
            let mut all: Vec<u64> = a1.meter_ids();
            all.extend(h1.meter_ids());
            let expected: Vec<u64> = ids.iter().copied().collect();
            prop_assert_eq!(all, expected);
        }
    }
}
