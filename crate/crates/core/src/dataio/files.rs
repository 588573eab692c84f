//! CSV ingestion and the on-disk dataset layout
//! (`meters.csv`, `labels.csv`, `manifest.json`).

use super::{interval, DataError, Dataset, Household, HouseholdRecord, Property, PropertyVector, Provenance, TIMESTAMP_FORMAT};
use chrono::NaiveDateTime;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const METERS_HEADER: [&str; 3] = ["meter_id", "timestamp", "kwh"];

/// Longest gap (in missing intervals) that is forward-filled.
pub const MAX_FILLED_GAP: i64 = 2;

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io(format!("{}: {e}", path.display()))
}

fn malformed(path: &Path, row: usize, reason: impl Into<String>) -> DataError {
    DataError::Malformed {
        file: path.display().to_string(),
        row,
        reason: reason.into(),
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .ok()
}

fn labels_header() -> Vec<&'static str> {
    std::iter::once("meter_id").chain(Property::ALL.iter().map(|p| p.key())).collect()
}

struct Reading {
    row: usize,
    at: NaiveDateTime,
    kwh: f64,
}

fn read_meters(path: &Path) -> Result<BTreeMap<u64, Vec<Reading>>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| malformed(path, 1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != METERS_HEADER {
        return Err(malformed(path, 1, format!("expected header {}", METERS_HEADER.join(","))));
    }
    let mut meters: BTreeMap<u64, Vec<Reading>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        if rec.len() != 3 {
            return Err(malformed(path, row, format!("expected 3 fields, got {}", rec.len())));
        }
        let meter_id: u64 = rec[0]
            .parse()
            .ok()
            .filter(|id| *id > 0)
            .ok_or_else(|| malformed(path, row, format!("bad meter_id '{}'", &rec[0])))?;
        let at = parse_timestamp(&rec[1]).ok_or_else(|| malformed(path, row, format!("bad timestamp '{}'", &rec[1])))?;
        let kwh: f64 = rec[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| malformed(path, row, format!("bad kwh '{}'", &rec[2])))?;
        meters.entry(meter_id).or_default().push(Reading { row, at, kwh });
    }
    Ok(meters)
}

/// Orders readings, forward-fills short gaps and keeps the longest
/// contiguous segment.
fn assemble(path: &Path, meter_id: u64, mut readings: Vec<Reading>) -> Result<HouseholdRecord, DataError> {
    readings.sort_by_key(|r| (r.at, r.row));
    let step = interval().num_seconds();
    let mut segments: Vec<(NaiveDateTime, Vec<f64>)> = Vec::new();
    let mut prev: Option<&Reading> = None;
    for r in &readings {
        match prev {
            None => segments.push((r.at, vec![r.kwh])),
            Some(p) => {
                let secs = (r.at - p.at).num_seconds();
                if secs == 0 {
                    return Err(malformed(path, r.row, format!("duplicate timestamp for meter {meter_id}")));
                }
                if secs % step != 0 {
                    return Err(malformed(path, r.row, "timestamp is off the 30-minute grid"));
                }
                let missing = secs / step - 1;
                let seg = segments.last_mut().expect("segment open");
                if missing <= MAX_FILLED_GAP {
                    for _ in 0..missing {
                        seg.1.push(p.kwh);
                    }
                    seg.1.push(r.kwh);
                } else {
                    segments.push((r.at, vec![r.kwh]));
                }
            }
        }
        prev = Some(r);
    }
    let (start, values) = segments
        .into_iter()
        .reduce(|best, s| if s.1.len() > best.1.len() { s } else { best })
        .expect("at least one reading");
    HouseholdRecord::new(meter_id, start, values)
}

fn read_labels(path: &Path) -> Result<BTreeMap<u64, Option<PropertyVector>>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| malformed(path, 1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != labels_header() {
        return Err(malformed(path, 1, format!("expected header {}", labels_header().join(","))));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        let meter_id: u64 = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .filter(|id| *id > 0)
            .ok_or_else(|| malformed(path, row, "bad meter_id"))?;
        let mut labels = PropertyVector::default();
        let mut complete = true;
        for p in Property::ALL {
            match rec.get(p.index() + 1).unwrap_or("") {
                "0" => labels.set(p, false),
                "1" => labels.set(p, true),
                "" => complete = false,
                other => return Err(malformed(path, row, format!("label {} must be 0 or 1, got '{other}'", p.key()))),
            }
        }
        if out.insert(meter_id, complete.then_some(labels)).is_some() {
            return Err(malformed(path, row, format!("duplicate labels for meter {meter_id}")));
        }
    }
    Ok(out)
}

/// Reads a meter file (`meter_id,timestamp,kwh`) and a labels file.
///
/// Meters with fewer than `min_readings` readings after gap handling, and
/// meters with missing labels, are excluded with a warning.
pub fn load_csv(meters: &Path, labels: &Path, min_readings: usize) -> Result<Dataset, DataError> {
    let raw = read_meters(meters)?;
    let labels = read_labels(labels)?;
    let mut households = Vec::new();
    for (meter_id, readings) in raw {
        let record = assemble(meters, meter_id, readings)?;
        if record.len() < min_readings {
            log::warn!(
                "meter {meter_id}: {} readings after gap handling, need {min_readings}; excluded",
                record.len()
            );
            continue;
        }
        match labels.get(&meter_id) {
            Some(Some(l)) => households.push(Household { record, labels: *l }),
            Some(None) => log::warn!("meter {meter_id}: incomplete labels; excluded"),
            None => log::warn!("meter {meter_id}: no labels; excluded"),
        }
    }
    Dataset::new(households, Provenance::Ingested)
}

pub fn write_meters_csv(ds: &Dataset, out: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| DataError::Io(e.to_string());
    w.write_record(METERS_HEADER).map_err(err)?;
    for h in &ds.households {
        let id = h.record.meter_id.to_string();
        for (i, v) in h.record.readings.iter().enumerate() {
            let ts = h.record.timestamp(i).format(TIMESTAMP_FORMAT).to_string();
            w.write_record([id.as_str(), ts.as_str(), v.to_string().as_str()]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

pub fn write_labels_csv(ds: &Dataset, out: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| DataError::Io(e.to_string());
    w.write_record(labels_header()).map_err(err)?;
    for h in &ds.households {
        let mut row = vec![h.record.meter_id.to_string()];
        row.extend(Property::ALL.iter().map(|p| if h.labels.get(*p) { "1" } else { "0" }.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

/// Writes `meters.csv`, `labels.csv` and `manifest.json` into `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset, manifest: &serde_json::Value) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let open = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| io_err(&p, e))
    };
    write_meters_csv(ds, open("meters.csv")?)?;
    write_labels_csv(ds, open("labels.csv")?)?;
    let mut m = manifest.clone();
    if let Some(obj) = m.as_object_mut() {
        obj.insert("provenance".into(), serde_json::to_value(ds.provenance).expect("enum"));
        obj.insert("households".into(), ds.len().into());
    }
    let text = serde_json::to_string_pretty(&m).expect("json value");
    std::fs::write(dir.join("manifest.json"), text).map_err(|e| io_err(dir, e))
}

/// Reads a directory written by [`save_dataset`]. Nothing is excluded:
/// `min_readings` is 1.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest: serde_json::Value = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| io_err(dir, e))
        .and_then(|s| serde_json::from_str(&s).map_err(|e| io_err(dir, e)))?;
    let provenance = manifest
        .get("provenance")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or(Provenance::Ingested);
    let mut ds = load_csv(&dir.join("meters.csv"), &dir.join("labels.csv"), 1)?;
    ds.provenance = provenance;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_dataset, SynthConfig};
    use std::fs;

    const LABELS: &str = "meter_id,retired,electric_cooking,children,alone,house_old,detached,console,desktop\n\
                          1,1,0,0,1,0,1,0,0\n2,0,1,1,0,1,0,1,1\n";

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn toy_two_meters_in_timestamp_order() {
        let dir = tempfile::tempdir().unwrap();
        let meters = write(
            dir.path(),
            "m.csv",
            "meter_id,timestamp,kwh\n\
             2,2010-01-01T00:30:00,0.4\n\
             1,2010-01-01T00:30:00,0.2\n\
             1,2010-01-01T00:00:00,0.1\n\
             2,2010-01-01T00:00:00,0.3\n\
             1,2010-01-01T01:00:00,0.3\n",
        );
        let labels = write(dir.path(), "l.csv", LABELS);
        let ds = load_csv(&meters, &labels, 1).unwrap();
        assert_eq!(ds.meter_ids(), vec![1, 2]);
        assert_eq!(ds.households[0].record.readings, vec![0.1, 0.2, 0.3]);
        assert_eq!(ds.households[1].record.readings, vec![0.3, 0.4]);
        assert!(ds.households[0].labels.get(Property::Alone));
        assert_eq!(ds.provenance, Provenance::Ingested);
    }

    #[test]
    fn unparsable_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let meters = write(
            dir.path(),
            "m.csv",
            "meter_id,timestamp,kwh\n1,2010-01-01T00:00:00,0.1\n1,yesterday,0.2\n",
        );
        let labels = write(dir.path(), "l.csv", LABELS);
        match load_csv(&meters, &labels, 1) {
            Err(DataError::Malformed { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected malformed row error, got {other:?}"),
        }
    }

    #[test]
    fn one_interval_gap_is_forward_filled() {
        let dir = tempfile::tempdir().unwrap();
        let meters = write(
            dir.path(),
            "m.csv",
            "meter_id,timestamp,kwh\n\
             1,2010-01-01T00:00:00,0.1\n\
             1,2010-01-01T00:30:00,0.2\n\
             1,2010-01-01T01:30:00,0.5\n\
             1,2010-01-01T02:00:00,0.6\n",
        );
        let labels = write(dir.path(), "l.csv", LABELS);
        let ds = load_csv(&meters, &labels, 1).unwrap();
        assert_eq!(ds.households[0].record.readings, vec![0.1, 0.2, 0.2, 0.5, 0.6]);
    }

    #[test]
    fn long_gap_keeps_longest_segment_and_short_meters_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let meters = write(
            dir.path(),
            "m.csv",
            "meter_id,timestamp,kwh\n\
             1,2010-01-01T00:00:00,0.1\n\
             1,2010-01-01T03:00:00,0.7\n\
             1,2010-01-01T03:30:00,0.8\n\
             2,2010-01-01T00:00:00,0.1\n",
        );
        let labels = write(dir.path(), "l.csv", LABELS);
        let ds = load_csv(&meters, &labels, 2).unwrap();
        assert_eq!(ds.meter_ids(), vec![1]);
        let r = &ds.households[0].record;
        assert_eq!(r.readings, vec![0.7, 0.8]);
        assert_eq!(r.start, parse_timestamp("2010-01-01T03:00:00").unwrap());
    }

    #[test]
    fn incomplete_labels_exclude_household() {
        let dir = tempfile::tempdir().unwrap();
        let meters = write(
            dir.path(),
            "m.csv",
            "meter_id,timestamp,kwh\n1,2010-01-01T00:00:00,0.1\n2,2010-01-01T00:00:00,0.1\n",
        );
        let labels = write(
            dir.path(),
            "l.csv",
            "meter_id,retired,electric_cooking,children,alone,house_old,detached,console,desktop\n\
             1,1,0,0,1,0,1,0,0\n2,0,,1,0,1,0,1,1\n",
        );
        assert_eq!(load_csv(&meters, &labels, 1).unwrap().meter_ids(), vec![1]);
    }

    #[test]
    fn dataset_directory_round_trip() {
        let ds = generate_dataset(&SynthConfig::new(3, 14, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, &serde_json::json!({"seed": 5})).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }
}
