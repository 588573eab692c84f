use super::{train_forecaster, ForecastError, ForecastHyperparams, ForecastModel};
use crate::dataio::HouseholdRecord;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Named preset of the large reference forecaster (lstm, fc).
pub const BASE_PRESET: (usize, usize) = (110, 174);

/// LSTM_8 through LSTM_64 with the FC layer at twice the LSTM width, plus
/// the base preset.
pub const DEFAULT_SWEEP_SIZES: [(usize, usize); 5] = [(8, 16), (16, 32), (32, 64), (64, 128), BASE_PRESET];

pub fn size_label(lstm: usize, fc: usize) -> String {
    if (lstm, fc) == BASE_PRESET {
        "LSTM_base".to_string()
    } else if fc == 2 * lstm {
        format!("LSTM_{lstm}")
    } else {
        format!("LSTM_{lstm}_{fc}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size_label: String,
    pub lstm_nodes: usize,
    pub fc_nodes: usize,
    pub params: usize,
    pub param_bytes: usize,
    pub test_mae: f64,
    pub data_bytes: usize,
}

/// Trains one forecaster per size on `record` and tabulates model bytes
/// against test MAE and the household's raw data bytes. Rows come back in
/// ascending parameter count.
pub fn size_sweep(
    record: &HouseholdRecord,
    sizes: &[(usize, usize)],
    seed: u64,
    base: &ForecastHyperparams,
) -> Result<Vec<SweepRow>, ForecastError> {
    if sizes.is_empty() {
        return Err(ForecastError::Hyperparams("size sweep needs at least one size".into()));
    }
    let runs = crate::par_map(sizes, |(l, f)| {
        let hp = base.with_size(*l, *f);
        train_forecaster(record, &hp, seed).map(|t| (hp, t.test_mae))
    });
    let mut rows = Vec::with_capacity(sizes.len());
    for run in runs {
        let (hp, test_mae) = run?;
        let params = ForecastModel::param_count_for(hp.lstm_nodes, hp.fc_nodes);
        rows.push(SweepRow {
            size_label: size_label(hp.lstm_nodes, hp.fc_nodes),
            lstm_nodes: hp.lstm_nodes,
            fc_nodes: hp.fc_nodes,
            params,
            param_bytes: params * std::mem::size_of::<f64>(),
            test_mae,
            data_bytes: record.data_bytes(),
        });
    }
    rows.sort_by_key(|r| r.params);
    Ok(rows)
}

/// Writes `size_label,params,param_bytes,test_mae,data_bytes`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ForecastError> {
    let io = |e: csv::Error| ForecastError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["size_label", "params", "param_bytes", "test_mae", "data_bytes"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.size_label.clone(),
            r.params.to_string(),
            r.param_bytes.to_string(),
            format!("{:.6}", r.test_mae),
            r.data_bytes.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| ForecastError::Io(e.to_string()))
}
