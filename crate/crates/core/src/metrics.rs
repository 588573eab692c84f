//! ROC-AUC, macro precision/recall/F1, the random-guess reference, and the
//! leakage report table.

use crate::dataio::Property;
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("only one class present; metric undefined")]
    SingleClass,
    #[error("score {0} is not a probability")]
    OutOfRange(f64),
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(MetricsError::OutOfRange(*s));
    }
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 || pos == labels.len() {
        return Err(MetricsError::SingleClass);
    }
    Ok(())
}

/// Area under the ROC curve by the trapezoid rule over tied-score groups,
/// which equals the Mann-Whitney statistic with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) * (tp + tp0) / 2.0;
    }
    Ok(area / (pos * neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Macro-averaged precision, recall and F1 with `score >= threshold`
/// predicting the positive class. F1 is the mean of per-class F1 scores.
pub fn macro_prf1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Prf1, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    check(scores, labels)?;
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let mut acc = Prf1 {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for class in [true, false] {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (s, l) in scores.iter().zip(labels) {
            let predicted = (*s >= threshold) == class;
            let actual = *l == class;
            match (predicted, actual) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        acc.precision += p / 2.0;
        acc.recall += r / 2.0;
        acc.f1 += ratio(2.0 * p * r, p + r) / 2.0;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Baseline,
    Random,
    Adversary,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Baseline, Source::Random, Source::Adversary];

    pub fn name(self) -> &'static str {
        match self {
            Source::Baseline => "Baseline",
            Source::Random => "Random",
            Source::Adversary => "Adversary",
        }
    }
}

/// Metric values in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub property: Property,
    pub source: Source,
    pub scores: Scores,
}

/// Scores one source's probabilities for one property.
pub fn evaluate(property: Property, source: Source, scores: &[f64], labels: &[bool]) -> Result<MetricRow, MetricsError> {
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(MetricsError::OutOfRange(*s));
    }
    let auc = roc_auc(scores, labels)?;
    let prf = macro_prf1(scores, labels, 0.5)?;
    Ok(MetricRow {
        property,
        source,
        scores: Scores {
            auc: 100.0 * auc,
            f1: 100.0 * prf.f1,
            precision: 100.0 * prf.precision,
            recall: 100.0 * prf.recall,
        },
    })
}

/// Mean metrics of `trials` uniform random score vectors.
pub fn random_reference(property: Property, labels: &[bool], seed: u64, trials: usize) -> Result<MetricRow, MetricsError> {
    if trials == 0 {
        return Err(MetricsError::Empty);
    }
    let mut rng = seed::rng(seed);
    let mut sum = Scores {
        auc: 0.0,
        f1: 0.0,
        precision: 0.0,
        recall: 0.0,
    };
    for _ in 0..trials {
        let scores: Vec<f64> = (0..labels.len()).map(|_| rng.random::<f64>()).collect();
        let row = evaluate(property, Source::Random, &scores, labels)?;
        sum.auc += row.scores.auc;
        sum.f1 += row.scores.f1;
        sum.precision += row.scores.precision;
        sum.recall += row.scores.recall;
    }
    let n = trials as f64;
    Ok(MetricRow {
        property,
        source: Source::Random,
        scores: Scores {
            auc: sum.auc / n,
            f1: sum.f1 / n,
            precision: sum.precision / n,
            recall: sum.recall / n,
        },
    })
}

/// Probabilities per (meter, property), the common output of the attack and
/// the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    pub meters: Vec<u64>,
    pub properties: Vec<Property>,
    /// One row per meter, one column per property.
    pub values: Vec<Vec<f64>>,
}

impl ProbabilityMatrix {
    pub fn column(&self, p: Property) -> Option<Vec<f64>> {
        let j = self.properties.iter().position(|q| *q == p)?;
        Some(self.values.iter().map(|row| row[j]).collect())
    }

    /// `meter_id,<property keys...>` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("meter_id");
        for p in &self.properties {
            s.push(',');
            s.push_str(p.key());
        }
        s.push('\n');
        for (m, row) in self.meters.iter().zip(&self.values) {
            s.push_str(&m.to_string());
            for v in row {
                write!(s, ",{v}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty probability file")?;
        let mut cols = header.split(',');
        if cols.next() != Some("meter_id") {
            return Err("first column must be meter_id".into());
        }
        let properties = cols
            .map(|k| Property::from_key(k).ok_or_else(|| format!("unknown property {k}")))
            .collect::<Result<Vec<_>, _>>()?;
        let (mut meters, mut values) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let bad = || format!("line {}: malformed", i + 2);
            meters.push(cells.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?);
            let row = cells.map(|c| c.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?;
            if row.len() != properties.len() {
                return Err(bad());
            }
            values.push(row);
        }
        Ok(Self {
            meters,
            properties,
            values,
        })
    }
}

/// AUC of uninformative guessing.
pub const ANALYTIC_RANDOM_AUC: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `None` for the Average block.
    pub property: Option<Property>,
    pub source: Source,
    /// `None` when the source had no result for this property.
    pub scores: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub rows: Vec<ReportRow>,
}

/// Groups rows per property (alphabetical by key), sources in
/// Baseline/Random/Adversary order, then an Average block holding the
/// unweighted mean over properties for each source.
pub fn build_report(rows: &[MetricRow]) -> LeakageReport {
    let mut props: Vec<Property> = rows.iter().map(|r| r.property).collect();
    props.sort_by_key(|p| p.key());
    props.dedup();
    let mut out = Vec::with_capacity(props.len() * 3 + 3);
    for p in &props {
        for s in Source::ALL {
            let found = rows.iter().find(|r| r.property == *p && r.source == s);
            if found.is_none() {
                log::warn!("report: no {} result for {}", s.name(), p.key());
            }
            out.push(ReportRow {
                property: Some(*p),
                source: s,
                scores: found.map(|r| r.scores),
            });
        }
    }
    for s in Source::ALL {
        let vals: Vec<Scores> = out.iter().filter(|r| r.source == s).filter_map(|r| r.scores).collect();
        let scores = (!vals.is_empty()).then(|| {
            let n = vals.len() as f64;
            Scores {
                auc: vals.iter().map(|v| v.auc).sum::<f64>() / n,
                f1: vals.iter().map(|v| v.f1).sum::<f64>() / n,
                precision: vals.iter().map(|v| v.precision).sum::<f64>() / n,
                recall: vals.iter().map(|v| v.recall).sum::<f64>() / n,
            }
        });
        out.push(ReportRow {
            property: None,
            source: s,
            scores,
        });
    }
    LeakageReport { rows: out }
}

impl LeakageReport {
    pub fn average(&self, source: Source) -> Option<Scores> {
        self.rows
            .iter()
            .find(|r| r.property.is_none() && r.source == source)
            .and_then(|r| r.scores)
    }

    pub fn get(&self, property: Property, source: Source) -> Option<Scores> {
        self.rows
            .iter()
            .find(|r| r.property == Some(property) && r.source == source)
            .and_then(|r| r.scores)
    }

    /// `property,source,auc,f1,precision,recall` with two decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("property,source,auc,f1,precision,recall\n");
        for r in &self.rows {
            let prop = r.property.map_or("average", |p| p.key());
            match r.scores {
                Some(v) => writeln!(
                    s,
                    "{prop},{},{:.2},{:.2},{:.2},{:.2}",
                    r.source.name(),
                    v.auc,
                    v.f1,
                    v.precision,
                    v.recall
                ),
                None => writeln!(s, "{prop},{},,,,", r.source.name()),
            }
            .expect("write to string");
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let line = "-".repeat(84);
        writeln!(
            s,
            "{:<36}{:<12}{:>9}{:>9}{:>10}{:>8}",
            "Property", "Source", "AUC", "F1", "Precision", "Recall"
        )
        .unwrap();
        writeln!(s, "{line}").unwrap();
        let mut last: Option<Option<Property>> = None;
        for r in &self.rows {
            let name = if last == Some(r.property) {
                ""
            } else {
                if last.is_some() {
                    writeln!(s, "{line}").unwrap();
                }
                r.property.map_or("Average", |p| p.description())
            };
            last = Some(r.property);
            match r.scores {
                Some(v) => writeln!(
                    s,
                    "{name:<36}{:<12}{:>9.2}{:>9.2}{:>10.2}{:>8.2}",
                    r.source.name(),
                    v.auc,
                    v.f1,
                    v.precision,
                    v.recall
                ),
                None => writeln!(s, "{name:<36}{:<12}{:>9}{:>9}{:>10}{:>8}", r.source.name(), "-", "-", "-", "-"),
            }
            .unwrap();
        }
        writeln!(s, "{line}").unwrap();
        writeln!(s, "Random AUC (analytic): {ANALYTIC_RANDOM_AUC:.2}").unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise Mann-Whitney count with ties as one half.
    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, si) in scores.iter().enumerate() {
            for (j, sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert!((roc_auc(&s, &l).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(brute_auc(&s, &l), 0.75);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, true]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn prf1_examples() {
        let labels = [true, false, true, false];
        let perfect = macro_prf1(&[0.9, 0.1, 0.7, 0.2], &labels, 0.5).unwrap();
        assert_eq!(
            perfect,
            Prf1 {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        let all_pos = macro_prf1(&[0.9; 4], &labels, 0.5).unwrap();
        assert_eq!(all_pos.recall, 0.5);
        // precision 0.5 for the positive class, 0 (empty) for the negative
        assert_eq!(all_pos.precision, 0.25);
        // per-class precision = recall = 0.5 for both classes
        let half = macro_prf1(&[0.9, 0.9, 0.1, 0.1], &labels, 0.5).unwrap();
        assert_eq!(
            half,
            Prf1 {
                precision: 0.5,
                recall: 0.5,
                f1: 0.5
            }
        );
        assert_eq!(macro_prf1(&[], &[], 0.5), Err(MetricsError::Empty));
    }

    #[test]
    fn random_reference_hovers_at_fifty() {
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let r = random_reference(Property::Children, &labels, 4, 200).unwrap();
        assert!((48.0..=52.0).contains(&r.scores.auc), "{}", r.scores.auc);
        let one = random_reference(Property::Children, &labels, 5, 1).unwrap();
        assert!((0.0..=100.0).contains(&one.scores.auc));
    }

    #[test]
    fn report_shape_and_average() {
        let row = |p, s, auc| MetricRow {
            property: p,
            source: s,
            scores: Scores {
                auc,
                f1: 60.0,
                precision: 61.0,
                recall: 62.0,
            },
        };
        let rows: Vec<MetricRow> = Property::ALL.iter().flat_map(|p| Source::ALL.map(|s| row(*p, s, 70.0))).collect();
        let rep = build_report(&rows);
        assert_eq!(rep.rows.len(), 27);
        assert_eq!(rep.rows[0].property, Some(Property::Alone));
        assert_eq!(rep.rows[26].property, None);
        assert_eq!(rep.average(Source::Adversary).unwrap().auc, 70.0);
        let csv = rep.to_csv();
        assert!(csv.starts_with("property,source,auc,f1,precision,recall\nalone,Baseline,70.00,"));
        assert_eq!(csv.lines().count(), 28);

        let single = build_report(&[
            row(Property::Retired, Source::Baseline, 80.0),
            row(Property::Retired, Source::Random, 50.0),
            row(Property::Retired, Source::Adversary, 75.0),
        ]);
        for s in Source::ALL {
            assert_eq!(single.average(s), single.get(Property::Retired, s));
        }
    }

    #[test]
    fn probability_matrix_csv_round_trip() {
        let m = ProbabilityMatrix {
            meters: vec![5, 9],
            properties: vec![Property::Retired, Property::Alone],
            values: vec![vec![0.1, 1.0 / 3.0], vec![0.0, 0.75]],
        };
        let csv = m.to_csv();
        assert!(csv.starts_with("meter_id,retired,alone\n5,0.1,"));
        assert_eq!(ProbabilityMatrix::from_csv(&csv).unwrap(), m);
        assert_eq!(m.column(Property::Alone), Some(vec![1.0 / 3.0, 0.75]));
        assert_eq!(m.column(Property::Console), None);
    }

    #[test]
    fn missing_source_gives_blank_row() {
        let rep = build_report(&[MetricRow {
            property: Property::Console,
            source: Source::Baseline,
            scores: Scores {
                auc: 70.0,
                f1: 1.0,
                precision: 1.0,
                recall: 1.0,
            },
        }]);
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.to_csv().contains("console,Adversary,,,,\n"));
        assert!(rep.average(Source::Adversary).is_none());
        assert!(rep.render().contains("Number of gaming consoles"));
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pair_counting(
            raw in prop::collection::vec((0u8..12, any::<bool>()), 2..120),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 11.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert!((a - brute_auc(&scores, &labels)).abs() < 1e-9);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            prop_assert!((a + roc_auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-9);
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 2.0).collect();
            prop_assert!((a - roc_auc(&cubed, &labels).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn prf1_symmetric_under_flip(
            raw in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..80),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            prop_assume!(scores.iter().all(|s| *s != 0.5));
            let a = macro_prf1(&scores, &labels, 0.5).unwrap();
            let fs: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let fl: Vec<bool> = labels.iter().map(|l| !l).collect();
            let b = macro_prf1(&fs, &fl, 0.5).unwrap();
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }
    }
}
