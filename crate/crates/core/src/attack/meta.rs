use super::{gen_signature_set, AttackError, SignatureSet, SignatureSpec};
use crate::blackbox::{ForecastQuery, ForecastResponse, Handshake, Oracle, OracleError};
use crate::classifier::{train_classifier, ClassifierConfig, ConvClassifier};
use crate::dataio::{Property, PropertyVector};
use crate::metrics::ProbabilityMatrix;
use crate::seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Sidecar metadata stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaCard {
    pub property: Property,
    pub k: usize,
    pub w: usize,
    pub cv_auc: f64,
    pub epochs: usize,
}

/// Maps a `K x w` signature matrix to the probability of one property.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaClassifier {
    pub card: MetaCard,
    pub classifier: ConvClassifier,
}

impl MetaClassifier {
    pub fn property(&self) -> Property {
        self.card.property
    }

    fn paths(dir: &Path, p: Property) -> (PathBuf, PathBuf) {
        (dir.join(format!("{}.sglk", p.key())), dir.join(format!("{}.json", p.key())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), AttackError> {
        std::fs::create_dir_all(dir).map_err(|e| AttackError::Io(format!("{}: {e}", dir.display())))?;
        let (weights, card) = Self::paths(dir, self.card.property);
        self.classifier.save(&weights)?;
        let json = serde_json::to_string_pretty(&self.card).expect("card serializes");
        std::fs::write(&card, json).map_err(|e| AttackError::Io(format!("{}: {e}", card.display())))
    }

    /// `Ok(None)` when no classifier for `p` exists in `dir`.
    pub fn load(dir: &Path, p: Property) -> Result<Option<Self>, AttackError> {
        let (weights, card) = Self::paths(dir, p);
        if !card.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&card).map_err(|e| AttackError::Io(format!("{}: {e}", card.display())))?;
        let card: MetaCard = serde_json::from_str(&text).map_err(|e| AttackError::Io(format!("{}: {e}", weights.display())))?;
        let classifier = ConvClassifier::load(&weights)?;
        if classifier.input_rows != card.k || classifier.input_cols != card.w || card.property != p {
            return Err(AttackError::Io(format!("{}: card does not match weights", weights.display())));
        }
        Ok(Some(Self { card, classifier }))
    }
}

pub fn save_metas(dir: &Path, metas: &BTreeMap<Property, MetaClassifier>) -> Result<(), AttackError> {
    metas.values().try_for_each(|m| m.save(dir))
}

/// Every classifier present in `dir`, keyed by property.
pub fn load_metas(dir: &Path) -> Result<BTreeMap<Property, MetaClassifier>, AttackError> {
    let mut out = BTreeMap::new();
    for p in Property::ALL {
        if let Some(m) = MetaClassifier::load(dir, p)? {
            out.insert(p, m);
        }
    }
    Ok(out)
}

/// Trains a meta-classifier for `property` on shadow signature sets.
/// `labels[i]` belongs to `sets[i]`. All sets must share one `(K, w)`.
pub fn train_meta(
    sets: &[SignatureSet],
    labels: &[PropertyVector],
    property: Property,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<MetaClassifier, AttackError> {
    if sets.len() != labels.len() {
        return Err(AttackError::Spec(format!(
            "{} signature sets for {} label vectors",
            sets.len(),
            labels.len()
        )));
    }
    let first = sets.first().ok_or_else(|| AttackError::Spec("no signature sets".into()))?;
    let shape = (first.k(), first.w);
    if let Some(bad) = sets.iter().find(|s| (s.k(), s.w) != shape) {
        return Err(AttackError::ShapeMismatch {
            expected: shape,
            got: (bad.k(), bad.w),
        });
    }
    let tensors: Vec<_> = sets.iter().map(SignatureSet::to_tensor).collect();
    let inputs: Vec<_> = tensors.iter().collect();
    let y: Vec<bool> = labels.iter().map(|l| l.get(property)).collect();
    let trained = train_classifier(&inputs, &y, config, seed)?;
    log::info!("meta {property}: cv auc {:.3}, {} epochs", trained.cv_auc, trained.epochs);
    Ok(MetaClassifier {
        card: MetaCard {
            property,
            k: shape.0,
            w: shape.1,
            cv_auc: trained.cv_auc,
            epochs: trained.epochs,
        },
        classifier: trained.model,
    })
}

pub fn infer_property(cm: &MetaClassifier, sigs: &SignatureSet) -> Result<f64, AttackError> {
    let expected = (cm.card.k, cm.card.w);
    if (sigs.k(), sigs.w) != expected {
        return Err(AttackError::ShapeMismatch {
            expected,
            got: (sigs.k(), sigs.w),
        });
    }
    Ok(cm.classifier.predict_one(&sigs.to_tensor())?)
}

/// Probabilities for every `(set, property)` pair with a classifier.
/// Properties without one are skipped with a warning.
pub fn infer_matrix(
    meters: &[u64],
    sets: &[SignatureSet],
    metas: &BTreeMap<Property, MetaClassifier>,
    properties: &[Property],
) -> Result<ProbabilityMatrix, AttackError> {
    let mut present = Vec::new();
    for p in properties {
        if metas.contains_key(p) {
            present.push(*p);
        } else {
            log::warn!("no meta-classifier for {p}; skipping");
        }
    }
    let mut values = vec![Vec::with_capacity(present.len()); sets.len()];
    for p in &present {
        let cm = &metas[p];
        for (row, set) in values.iter_mut().zip(sets) {
            row.push(infer_property(cm, set)?);
        }
    }
    Ok(ProbabilityMatrix {
        meters: meters.to_vec(),
        properties: present,
        values,
    })
}

/// Outcome of the active stage.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub matrix: ProbabilityMatrix,
    /// Signature sets of the attacked meters, in matrix row order.
    pub sets: Vec<SignatureSet>,
    /// Queries sent to each oracle, keyed by meter.
    pub queries: BTreeMap<u64, u64>,
    /// Oracles abandoned during signature extraction.
    pub failed: Vec<(u64, String)>,
}

struct Counting<'a> {
    inner: &'a mut dyn Oracle,
    queries: u64,
}

impl Oracle for Counting<'_> {
    fn handshake(&mut self) -> Result<Handshake, OracleError> {
        self.inner.handshake()
    }

    fn query(&mut self, q: &ForecastQuery) -> Result<ForecastResponse, OracleError> {
        self.queries += 1;
        self.inner.query(q)
    }
}

/// Extracts one signature set per honest oracle with the offline-stage spec,
/// then applies every requested meta-classifier to it. Signatures are
/// generated once and shared by all properties. An oracle that fails is
/// dropped from the matrix with a warning.
pub fn run_attack(
    oracles: &mut [(u64, Box<dyn Oracle + Send>)],
    metas: &BTreeMap<Property, MetaClassifier>,
    spec: &SignatureSpec,
    properties: &[Property],
) -> Result<AttackRun, AttackError> {
    spec.validate()?;
    for m in metas.values() {
        if (m.card.k, m.card.w) != (spec.k(), spec.w) {
            return Err(AttackError::ShapeMismatch {
                expected: (m.card.k, m.card.w),
                got: (spec.k(), spec.w),
            });
        }
    }
    let mut meters = Vec::new();
    let mut sets = Vec::new();
    let mut queries = BTreeMap::new();
    let mut failed = Vec::new();
    for (id, oracle) in oracles.iter_mut() {
        let mut counting = Counting {
            inner: oracle.as_mut(),
            queries: 0,
        };
        let result = gen_signature_set(&mut counting, spec, &format!("honest:{id}"));
        queries.insert(*id, counting.queries);
        match result {
            Ok(set) => {
                meters.push(*id);
                sets.push(set);
            }
            Err(e) => {
                log::warn!("attack on meter {id} abandoned: {e}");
                failed.push((*id, e.to_string()));
            }
        }
    }
    let matrix = infer_matrix(&meters, &sets, metas, properties)?;
    Ok(AttackRun {
        matrix,
        sets,
        queries,
        failed,
    })
}

/// Seed of the meta-classifier for one property.
pub fn property_seed(seed: u64, p: Property) -> u64 {
    seed::derive(seed, p.index() as u64)
}
