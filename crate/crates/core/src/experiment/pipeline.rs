use super::config::{hex, DataConfig, ExperimentConfig, OracleMode};
use crate::attack::{
    load_models, load_signature_store, local_signatures, property_seed, run_attack, save_metas, save_signature_store, train_meta,
    train_shadow_farm, write_signature_csv, AttackError, MetaClassifier, SignatureSpec,
};
use crate::baseline::{predict_matrix, save_baselines, train_baseline, BaselineClassifier};
use crate::blackbox::{serve, LocalOracle, Oracle, ServerHandle, WireConfig, WireOracle};
use crate::classifier::ClassifierError;
use crate::dataio::{generate_dataset, load_csv, load_dataset, save_dataset, split_aux_honest, Dataset, Property, PropertyVector};
use crate::forecaster::{random_search, size_sweep, write_sweep_csv, ForecastHyperparams, SweepRow, DEFAULT_SWEEP_SIZES};
use crate::metrics::{build_report, evaluate, random_reference, LeakageReport, MetricRow, ProbabilityMatrix, Source};
use crate::seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Bumped when stage semantics change so old artifacts are not reused.
pub const PIPELINE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Tune,
    Honest,
    Shadows,
    Signatures,
    Meta,
    Baseline,
    Attack,
    Evaluate,
    Report,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 10] = [
        Stage::Data,
        Stage::Tune,
        Stage::Honest,
        Stage::Shadows,
        Stage::Signatures,
        Stage::Meta,
        Stage::Baseline,
        Stage::Attack,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Tune => "tune",
            Stage::Honest => "honest",
            Stage::Shadows => "shadows",
            Stage::Signatures => "signatures",
            Stage::Meta => "meta",
            Stage::Baseline => "baseline",
            Stage::Attack => "attack",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Data => &[],
            Stage::Tune => &[Stage::Data],
            Stage::Honest | Stage::Shadows => &[Stage::Data, Stage::Tune],
            Stage::Signatures => &[Stage::Data, Stage::Shadows],
            Stage::Meta => &[Stage::Data, Stage::Signatures],
            Stage::Baseline => &[Stage::Data],
            Stage::Attack => &[Stage::Honest, Stage::Signatures, Stage::Meta],
            Stage::Evaluate => &[Stage::Data, Stage::Baseline, Stage::Attack],
            Stage::Report => &[Stage::Evaluate],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl From<super::ConfigError> for ExperimentError {
    fn from(e: super::ConfigError) -> Self {
        ExperimentError::Config(e.0)
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub key: String,
    pub dir: PathBuf,
    pub status: StageStatus,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `out/<config-hash>/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    /// In execution order.
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageMarker {
    stage: Stage,
    key: String,
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    queries: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Split {
    aux: Vec<u64>,
    honest: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QueryLog {
    dates_hash: String,
    tau: usize,
    k: usize,
    per_meter: BTreeMap<u64, u64>,
    total: u64,
    failed: Vec<(u64, String)>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> BoxError {
    format!("{}: {e}", path.display()).into()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BoxError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BoxError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(|e| io(path, e))?)
}

fn write_text(path: &Path, text: &str) -> Result<(), BoxError> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

/// Runs one experiment config stage by stage. Each stage lives in
/// `out/<stage-key>/<stage>/`, where the key hashes the stage's own settings
/// with the keys of the stages it reads, so an edit re-runs exactly the
/// stages downstream of it. A `stage.json` marker written last makes a
/// completed stage skippable.
pub struct Experiment {
    pub config: ExperimentConfig,
    config_hash: String,
    keys: BTreeMap<Stage, String>,
    manifest: RunManifest,
    done: Vec<Stage>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let config_hash = config.hash();
        let mut keys: BTreeMap<Stage, String> = BTreeMap::new();
        for s in Stage::ALL {
            let mut h = Sha256::new();
            h.update(format!("{}:{}:{}:", PIPELINE_VERSION, s.name(), config.seed));
            h.update(stage_settings(&config, s)?.as_bytes());
            for d in s.deps() {
                h.update(keys[d].as_bytes());
            }
            keys.insert(s, hex(&h.finalize())[..16].to_string());
        }
        let manifest = RunManifest {
            config_hash: config_hash.clone(),
            seed: config.seed,
            stages: Vec::new(),
        };
        Ok(Self {
            config,
            config_hash,
            keys,
            manifest,
            done: Vec::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn key(&self, s: Stage) -> &str {
        &self.keys[&s]
    }

    pub fn stage_dir(&self, s: Stage) -> PathBuf {
        self.config.out.join(&self.keys[&s]).join(s.name())
    }

    /// `out/<config-hash>/`, holding the manifest and the final report.
    pub fn run_dir(&self) -> PathBuf {
        self.config.out.join(&self.config_hash[..16])
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Runs every stage up to and including `target`.
    pub fn run_to(&mut self, target: Stage) -> Result<(), ExperimentError> {
        for s in Stage::ALL {
            if s > target || self.done.contains(&s) || !needed(s, target) {
                continue;
            }
            self.run_stage(s)?;
        }
        Ok(())
    }

    /// Runs the whole pipeline and returns the report.
    pub fn run(&mut self) -> Result<LeakageReport, ExperimentError> {
        self.run_to(Stage::Report)?;
        let rows: Vec<MetricRow> =
            read_json(&self.stage_dir(Stage::Evaluate).join("metrics.json")).map_err(|e| ExperimentError::Stage {
                stage: Stage::Report,
                message: e.to_string(),
            })?;
        Ok(build_report(&rows))
    }

    fn run_stage(&mut self, s: Stage) -> Result<(), ExperimentError> {
        let dir = self.stage_dir(s);
        let key = self.keys[&s].clone();
        let marker_path = dir.join("stage.json");
        let start = Instant::now();
        let marker: Option<StageMarker> = read_json(&marker_path).ok();
        let outcome = match marker {
            Some(m) if m.key == key && m.version == PIPELINE_VERSION && m.stage == s => {
                log::info!("stage {s}: up to date, skipping");
                Ok((StageStatus::Skipped, m.queries))
            }
            _ => {
                log::info!("stage {s}: running in {}", dir.display());
                let result = (|| -> Result<Option<u64>, BoxError> {
                    if dir.exists() {
                        std::fs::remove_dir_all(&dir).map_err(|e| io(&dir, e))?;
                    }
                    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
                    let queries = self.execute(s, &dir)?;
                    write_json(
                        &marker_path,
                        &StageMarker {
                            stage: s,
                            key: key.clone(),
                            version: PIPELINE_VERSION,
                            queries,
                        },
                    )?;
                    Ok(queries)
                })();
                result.map(|q| (StageStatus::Completed, q))
            }
        };
        let wall_seconds = start.elapsed().as_secs_f64();
        let record = |status, queries, error| StageRecord {
            stage: s,
            key: key.clone(),
            dir: dir.clone(),
            status,
            wall_seconds,
            queries,
            error,
        };
        match outcome {
            Ok((status, queries)) => {
                self.manifest.stages.push(record(status, queries, None));
                self.done.push(s);
                self.write_manifest().map_err(|e| ExperimentError::Stage {
                    stage: s,
                    message: e.to_string(),
                })
            }
            Err(e) => {
                log::error!("stage {s} failed: {e}");
                self.manifest.stages.push(record(StageStatus::Failed, None, Some(e.to_string())));
                let _ = self.write_manifest();
                Err(ExperimentError::Stage {
                    stage: s,
                    message: e.to_string(),
                })
            }
        }
    }

    fn write_manifest(&self) -> Result<(), BoxError> {
        let dir = self.run_dir();
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        write_text(&dir.join("config.json"), &(self.config.canonical_json() + "\n"))?;
        write_json(&dir.join("manifest.json"), &self.manifest)
    }

    fn execute(&self, s: Stage, dir: &Path) -> Result<Option<u64>, BoxError> {
        match s {
            Stage::Data => self.exec_data(dir).map(|_| None),
            Stage::Tune => self.exec_tune(dir).map(|_| None),
            Stage::Honest => self.exec_farm(dir, false).map(|_| None),
            Stage::Shadows => self.exec_farm(dir, true).map(|_| None),
            Stage::Signatures => self.exec_signatures(dir).map(Some),
            Stage::Meta => self.exec_meta(dir).map(|_| None),
            Stage::Baseline => self.exec_baseline(dir).map(|_| None),
            Stage::Attack => self.exec_attack(dir).map(Some),
            Stage::Evaluate => self.exec_evaluate(dir).map(|_| None),
            Stage::Report => self.exec_report(dir).map(|_| None),
        }
    }

    fn seed(&self, name: &str) -> u64 {
        seed::derive_named(self.config.seed, name)
    }

    /// The full dataset with its auxiliary/honest split.
    pub fn load_data(&self) -> Result<(Dataset, Dataset), BoxError> {
        let dir = self.stage_dir(Stage::Data);
        let ds = load_dataset(&dir.join("dataset"))?;
        let split: Split = read_json(&dir.join("split.json"))?;
        let pick = |ids: &[u64]| -> Result<Dataset, BoxError> {
            let hs = ids
                .iter()
                .map(|id| ds.get(*id).cloned().ok_or_else(|| format!("split names unknown meter {id}")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Dataset::new(hs, ds.provenance)?)
        };
        Ok((pick(&split.aux)?, pick(&split.honest)?))
    }

    pub fn load_hyperparams(&self) -> Result<ForecastHyperparams, BoxError> {
        read_json(&self.stage_dir(Stage::Tune).join("hyperparams.json"))
    }

    fn exec_data(&self, dir: &Path) -> Result<(), BoxError> {
        let (ds, info) = match &self.config.data {
            DataConfig::Synthetic(s) => {
                let cfg = s.synth_config(self.seed("data"));
                (generate_dataset(&cfg)?, serde_json::json!({ "synthetic": cfg }))
            }
            DataConfig::Csv(c) => {
                let min = c.min_readings.unwrap_or(self.config.forecaster.hyperparams.window + 1);
                (
                    load_csv(&c.meters, &c.labels, min)?,
                    serde_json::json!({ "csv": c, "min_readings": min }),
                )
            }
        };
        let (aux, honest) = split_aux_honest(&ds)?;
        save_dataset(
            &dir.join("dataset"),
            &ds,
            &serde_json::json!({ "seed": self.config.seed, "config": info }),
        )?;
        write_json(
            &dir.join("split.json"),
            &Split {
                aux: aux.meter_ids(),
                honest: honest.meter_ids(),
            },
        )
    }

    fn exec_tune(&self, dir: &Path) -> Result<(), BoxError> {
        let f = &self.config.forecaster;
        let hp = if f.search_budget == 0 {
            f.hyperparams.clone()
        } else {
            let (aux, _) = self.load_data()?;
            let mut records: Vec<_> = aux.households.iter().map(|h| h.record.clone()).collect();
            records.truncate(f.tune_meters);
            let outcome = random_search(&records, f.search_budget, self.seed("tune"), &f.hyperparams, &f.space)?;
            write_json(&dir.join("search.json"), &outcome)?;
            outcome.best
        };
        write_json(&dir.join("hyperparams.json"), &hp)
    }

    fn exec_farm(&self, dir: &Path, shadows: bool) -> Result<(), BoxError> {
        let (aux, honest) = self.load_data()?;
        let hp = self.load_hyperparams()?;
        let (data, name) = if shadows { (&aux, "shadows") } else { (&honest, "honest") };
        let farm = train_shadow_farm(data, &hp, self.seed(name), &BTreeMap::new(), Some(&dir.join("models")))?;
        if farm.models.is_empty() {
            return Err("every model failed to train".into());
        }
        let maes: BTreeMap<u64, f64> = farm.models.iter().map(|m| (m.meter_id, m.test_mae)).collect();
        write_json(
            &dir.join("farm.json"),
            &serde_json::json!({ "test_mae": maes, "dropped": farm.dropped }),
        )
    }

    fn exec_signatures(&self, dir: &Path) -> Result<u64, BoxError> {
        let (aux, _) = self.load_data()?;
        let hp = self.load_hyperparams()?;
        let range = aux.date_range().ok_or("auxiliary data is empty")?;
        let sig = &self.config.signature;
        let spec = SignatureSpec::sample(hp.window, sig.tau, sig.k, range, self.seed("dates"), self.seed("x0"))?;
        let models = load_models(&self.stage_dir(Stage::Shadows).join("models"))?;
        let mut sets = Vec::new();
        let mut queries = 0;
        for (m, r) in models.iter().zip(local_signatures(&models, &spec)) {
            match r {
                Ok((set, q)) => {
                    sets.push(set);
                    queries += q;
                }
                Err(e) => log::warn!("no signatures for shadow {}: {e}", m.meter_id),
            }
        }
        save_signature_store(dir, &spec, &sets)?;
        Ok(queries)
    }

    fn exec_meta(&self, dir: &Path) -> Result<(), BoxError> {
        let (aux, _) = self.load_data()?;
        let (_, sets) = load_signature_store(&self.stage_dir(Stage::Signatures))?;
        let labels = sets
            .iter()
            .map(|s| {
                let id: u64 = s.source.parse()?;
                Ok(aux.get(id).ok_or_else(|| format!("no labels for shadow {id}"))?.labels)
            })
            .collect::<Result<Vec<PropertyVector>, BoxError>>()?;
        let base = self.seed("meta");
        let results = crate::par_map(&self.config.properties, |p| {
            train_meta(&sets, &labels, *p, &self.config.classifier, property_seed(base, *p))
        });
        let mut metas = BTreeMap::new();
        for (p, r) in self.config.properties.iter().zip(results) {
            match r {
                Ok(m) => {
                    metas.insert(*p, m);
                }
                Err(AttackError::Classifier(e @ ClassifierError::TooFewPerClass { .. })) => log::warn!("no meta-classifier for {p}: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
        save_metas(&dir.join("classifiers"), &metas)?;
        let cards: Vec<_> = metas.values().map(|m| &m.card).collect();
        write_json(&dir.join("meta.json"), &cards)
    }

    fn exec_baseline(&self, dir: &Path) -> Result<(), BoxError> {
        let (aux, honest) = self.load_data()?;
        let cfg = &self.config;
        let base = self.seed("baseline");
        let results = crate::par_map(&cfg.properties, |p| {
            train_baseline(&aux, *p, cfg.baseline.max_days, &cfg.classifier, property_seed(base, *p))
        });
        let mut models: BTreeMap<Property, BaselineClassifier> = BTreeMap::new();
        for (p, r) in cfg.properties.iter().zip(results) {
            match r {
                Ok(m) => {
                    models.insert(*p, m);
                }
                Err(crate::baseline::BaselineError::Classifier(e @ ClassifierError::TooFewPerClass { .. })) => {
                    log::warn!("no baseline for {p}: {e}")
                }
                Err(e) => return Err(e.into()),
            }
        }
        save_baselines(&dir.join("classifiers"), &models)?;
        let matrix = predict_matrix(&models, &honest, &cfg.properties)?;
        write_text(&dir.join("baseline_probs.csv"), &matrix.to_csv())
    }

    fn exec_attack(&self, dir: &Path) -> Result<u64, BoxError> {
        let sig_dir = self.stage_dir(Stage::Signatures);
        let (manifest, _) = load_signature_store(&sig_dir)?;
        let spec = manifest.spec()?;
        let metas: BTreeMap<Property, MetaClassifier> = crate::attack::load_metas(&self.stage_dir(Stage::Meta).join("classifiers"))?;
        let mut servers: Vec<ServerHandle> = Vec::new();
        let mut oracles: Vec<(u64, Box<dyn Oracle + Send>)> = Vec::new();
        let wire = WireConfig::default();
        if self.config.attack.targets.is_empty() {
            for m in load_models(&self.stage_dir(Stage::Honest).join("models"))? {
                let oracle: Box<dyn Oracle + Send> = match self.config.attack.oracle {
                    OracleMode::Local => Box::new(LocalOracle::new(m.model.clone())),
                    OracleMode::Tcp => {
                        let server = serve(m.model.clone(), "127.0.0.1:0")?;
                        let addr = server.addr().to_string();
                        servers.push(server);
                        Box::new(WireOracle::connect(&addr, wire.clone())?)
                    }
                };
                oracles.push((m.meter_id, oracle));
            }
        } else {
            for t in &self.config.attack.targets {
                oracles.push((t.meter_id, Box::new(WireOracle::connect(&t.addr, wire.clone())?)));
            }
        }
        let run = run_attack(&mut oracles, &metas, &spec, &self.config.properties)?;
        drop(oracles);
        for s in servers {
            s.shutdown();
        }
        if spec.dates_hash() != manifest.dates_hash {
            return Err("active-stage dates differ from the offline stage".into());
        }
        for (id, set) in run.matrix.meters.iter().zip(&run.sets) {
            write_signature_csv(&dir.join("signatures").join(format!("{id}.csv")), set)?;
        }
        write_text(&dir.join("adversary_probs.csv"), &run.matrix.to_csv())?;
        let total = run.queries.values().sum();
        for (id, q) in &run.queries {
            if !run.failed.iter().any(|(f, _)| f == id) && *q != spec.queries_per_oracle() {
                return Err(format!("meter {id} received {q} queries, expected {}", spec.queries_per_oracle()).into());
            }
        }
        write_json(
            &dir.join("queries.json"),
            &QueryLog {
                dates_hash: spec.dates_hash(),
                tau: spec.tau,
                k: spec.k(),
                per_meter: run.queries,
                total,
                failed: run.failed,
            },
        )?;
        Ok(total)
    }

    fn exec_evaluate(&self, dir: &Path) -> Result<(), BoxError> {
        let (_, honest) = self.load_data()?;
        let read = |p: PathBuf| -> Result<ProbabilityMatrix, BoxError> {
            let text = std::fs::read_to_string(&p).map_err(|e| io(&p, e))?;
            Ok(ProbabilityMatrix::from_csv(&text).map_err(|e| io(&p, e))?)
        };
        let baseline = read(self.stage_dir(Stage::Baseline).join("baseline_probs.csv"))?;
        let adversary = read(self.stage_dir(Stage::Attack).join("adversary_probs.csv"))?;
        let labels_of = |m: &ProbabilityMatrix, p: Property| -> Result<Vec<bool>, BoxError> {
            m.meters
                .iter()
                .map(|id| Ok(honest.get(*id).ok_or_else(|| format!("no labels for meter {id}"))?.labels.get(p)))
                .collect()
        };
        let random_base = self.seed("random");
        let mut rows = Vec::new();
        for p in &self.config.properties {
            let mut push = |r: Result<MetricRow, crate::metrics::MetricsError>, source: Source| match r {
                Ok(row) => rows.push(row),
                Err(e) => log::warn!("no {} metrics for {p}: {e}", source.name()),
            };
            if let Some(scores) = baseline.column(*p) {
                push(
                    evaluate(*p, Source::Baseline, &scores, &labels_of(&baseline, *p)?),
                    Source::Baseline,
                );
            }
            let all = honest.labels(*p);
            push(
                random_reference(*p, &all, property_seed(random_base, *p), self.config.evaluate.random_trials),
                Source::Random,
            );
            if let Some(scores) = adversary.column(*p) {
                push(
                    evaluate(*p, Source::Adversary, &scores, &labels_of(&adversary, *p)?),
                    Source::Adversary,
                );
            }
        }
        write_json(&dir.join("metrics.json"), &rows)
    }

    fn exec_report(&self, dir: &Path) -> Result<(), BoxError> {
        let rows: Vec<MetricRow> = read_json(&self.stage_dir(Stage::Evaluate).join("metrics.json"))?;
        let report = build_report(&rows);
        let run_dir = self.run_dir();
        std::fs::create_dir_all(&run_dir).map_err(|e| io(&run_dir, e))?;
        for d in [dir, run_dir.as_path()] {
            write_text(&d.join("report.csv"), &report.to_csv())?;
            write_text(&d.join("report.txt"), &report.render())?;
        }
        Ok(())
    }

    /// Model-size sweep on one auxiliary meter (the first by default),
    /// written to `out/<config-hash>/sweep.csv`.
    pub fn sweep(&mut self, meter: Option<u64>, sizes: Option<&[(usize, usize)]>) -> Result<Vec<SweepRow>, ExperimentError> {
        self.run_to(Stage::Tune)?;
        let fail = |e: BoxError| ExperimentError::Stage {
            stage: Stage::Tune,
            message: e.to_string(),
        };
        let (aux, _) = self.load_data().map_err(fail)?;
        let hp = self.load_hyperparams().map_err(fail)?;
        let household = match meter {
            Some(id) => aux
                .get(id)
                .ok_or_else(|| ExperimentError::Config(format!("meter {id} is not an auxiliary meter")))?,
            None => aux
                .households
                .first()
                .ok_or_else(|| ExperimentError::Config("no auxiliary meters".into()))?,
        };
        let rows =
            size_sweep(&household.record, sizes.unwrap_or(&DEFAULT_SWEEP_SIZES), self.seed("sweep"), &hp).map_err(|e| fail(e.into()))?;
        let dir = self.run_dir();
        std::fs::create_dir_all(&dir).map_err(|e| fail(io(&dir, e)))?;
        write_sweep_csv(&dir.join("sweep.csv"), &rows).map_err(|e| fail(e.into()))?;
        Ok(rows)
    }
}

/// Whether `s` is upstream of (or equal to) `target`.
fn needed(s: Stage, target: Stage) -> bool {
    s == target || target.deps().iter().any(|d| needed(s, *d))
}

/// The slice of the config a stage depends on, in canonical JSON.
fn stage_settings(cfg: &ExperimentConfig, s: Stage) -> Result<String, ExperimentError> {
    let v = match s {
        Stage::Data => match &cfg.data {
            DataConfig::Synthetic(d) => serde_json::json!({ "synthetic": d, "window": cfg.forecaster.hyperparams.window }),
            DataConfig::Csv(c) => {
                let digest = |p: &Path| -> Result<String, ExperimentError> {
                    let bytes = std::fs::read(p).map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))?;
                    Ok(hex(&Sha256::digest(&bytes)))
                };
                serde_json::json!({
                    "meters": digest(&c.meters)?,
                    "labels": digest(&c.labels)?,
                    "min_readings": c.min_readings,
                    "window": cfg.forecaster.hyperparams.window,
                })
            }
        },
        Stage::Tune => serde_json::to_value(&cfg.forecaster).expect("serializes"),
        Stage::Honest | Stage::Shadows => serde_json::Value::Null,
        Stage::Signatures => serde_json::to_value(&cfg.signature).expect("serializes"),
        Stage::Meta => serde_json::json!({ "classifier": cfg.classifier, "properties": cfg.properties }),
        Stage::Baseline => serde_json::json!({ "classifier": cfg.classifier, "baseline": cfg.baseline, "properties": cfg.properties }),
        Stage::Attack => serde_json::json!({ "attack": cfg.attack, "properties": cfg.properties }),
        Stage::Evaluate => serde_json::json!({ "evaluate": cfg.evaluate, "properties": cfg.properties }),
        Stage::Report => serde_json::Value::Null,
    };
    Ok(v.to_string())
}
