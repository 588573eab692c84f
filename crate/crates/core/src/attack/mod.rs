//! Offline and active stages of the property-inference attack: recursive
//! signature extraction, the shadow farm, and meta-classifiers.

mod farm;
mod meta;
mod signature;
mod store;

pub use farm::{load_models, local_signatures, model_path, train_shadow_farm, ShadowFarm, ShadowModel};
pub use meta::{
    infer_matrix, infer_property, load_metas, property_seed, run_attack, save_metas, train_meta, AttackRun, MetaCard, MetaClassifier,
};
pub use signature::{
    gen_signature, gen_signature_set, gen_signature_trace, ModelSignature, Rescaler, SignatureSet, SignatureSpec, MAX_GAP_SHARE,
};
pub use store::{
    load_signature_manifest, load_signature_store, read_signature_csv, save_signature_store, signature_path, write_signature_csv,
    SignatureManifest, SIGNATURE_FORMAT_VERSION,
};

use crate::blackbox::OracleError;
use crate::classifier::ClassifierError;
use crate::forecaster::ForecastError;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("invalid signature spec: {0}")]
    Spec(String),
    #[error("oracle {oracle} uses window {got}, spec expects {expected}")]
    WindowMismatch { oracle: String, expected: usize, got: usize },
    #[error("oracle {oracle}: {failed} of {k} dates failed")]
    TooManyGaps { oracle: String, failed: usize, k: usize },
    #[error("signature matrix is {got:?}, classifier expects (K, w) = {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}
