use super::{gen_signature_set, AttackError, SignatureSet, SignatureSpec};
use crate::blackbox::LocalOracle;
use crate::dataio::Dataset;
use crate::forecaster::{train_forecaster, ForecastHyperparams, ForecastModel, ModelCard};
use crate::seed;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct ShadowModel {
    pub meter_id: u64,
    pub model: Arc<ForecastModel>,
    pub test_mae: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ShadowFarm {
    /// Ascending by meter id.
    pub models: Vec<ShadowModel>,
    /// Meters whose training failed, with the reason.
    pub dropped: Vec<(u64, String)>,
}

pub fn model_path(dir: &Path, meter_id: u64) -> PathBuf {
    dir.join(format!("{meter_id}.sglk"))
}

/// Trains one forecaster per household with child seed
/// `derive(seed, meter_id)`. `overrides` replaces the hyperparameters of
/// individual meters. A meter that fails to train is dropped with a warning.
/// With `store`, every model is written to `<store>/<meter>.sglk`.
pub fn train_shadow_farm(
    data: &Dataset,
    hp: &ForecastHyperparams,
    seed: u64,
    overrides: &BTreeMap<u64, ForecastHyperparams>,
    store: Option<&Path>,
) -> Result<ShadowFarm, AttackError> {
    if data.is_empty() {
        return Err(AttackError::Spec("cannot train a shadow farm on an empty dataset".into()));
    }
    hp.validate()?;
    if let Some(dir) = store {
        std::fs::create_dir_all(dir).map_err(|e| AttackError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut households: Vec<_> = data.households.iter().collect();
    households.sort_by_key(|h| h.record.meter_id);
    let results = crate::par_map(&households, |h| {
        let id = h.record.meter_id;
        let hp = overrides.get(&id).unwrap_or(hp);
        let child = seed::derive(seed, id);
        let trained = train_forecaster(&h.record, hp, child)?;
        if let Some(dir) = store {
            let card = ModelCard {
                hyperparams: hp.clone(),
                meter_id: Some(id),
                test_mae: Some(trained.test_mae),
                seed: child,
            };
            trained.model.save(&model_path(dir, id), &card)?;
        }
        Ok::<_, crate::forecaster::ForecastError>(trained)
    });
    let mut farm = ShadowFarm::default();
    for (h, r) in households.iter().zip(results) {
        let id = h.record.meter_id;
        match r {
            Ok(t) => farm.models.push(ShadowModel {
                meter_id: id,
                model: Arc::new(t.model),
                test_mae: t.test_mae,
            }),
            Err(e) => {
                log::warn!("dropping meter {id}: {e}");
                farm.dropped.push((id, e.to_string()));
            }
        }
    }
    Ok(farm)
}

/// Loads every `<meter>.sglk` in `dir`, ascending by meter id.
pub fn load_models(dir: &Path) -> Result<Vec<ShadowModel>, AttackError> {
    let rd = std::fs::read_dir(dir).map_err(|e| AttackError::Io(format!("{}: {e}", dir.display())))?;
    let mut ids: Vec<u64> = rd
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".sglk")?.parse().ok()
        })
        .collect();
    ids.sort_unstable();
    ids.into_iter()
        .map(|id| {
            let path = model_path(dir, id);
            let model = ForecastModel::load(&path)?;
            let card = crate::forecaster::load_card(&path)?;
            Ok(ShadowModel {
                meter_id: id,
                model: Arc::new(model),
                test_mae: card.test_mae.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Signature sets of many in-process models, one local oracle each.
/// Returns the sets in input order and the total number of queries served.
pub fn local_signatures(models: &[ShadowModel], spec: &SignatureSpec) -> Vec<Result<(SignatureSet, u64), AttackError>> {
    crate::par_map(models, |m| {
        let mut oracle = LocalOracle::new(m.model.clone());
        let set = gen_signature_set(&mut oracle, spec, &m.meter_id.to_string())?;
        Ok((set, oracle.stats().total()))
    })
}
