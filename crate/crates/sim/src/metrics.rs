//! In-memory metrics collection, flushed to one CSV file per metric
//! family at the end of a run. Rows are appended in event order, so two
//! runs of the same scenario with the same seed produce byte-identical
//! files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rollflow_core::model::Version;

/// Every family a run can emit. Files for all of them are always written,
/// header-only when a family stayed empty.
pub const FAMILIES: &[&str] = &[
    "pool_size",
    "wait_fraction",
    "produced",
    "transfer_seconds",
    "trainer_wait",
    "step_seconds",
    "rollout_downtime",
    "delta_sparsity",
];

pub const HEADER: &str = "time,version,metric,labels,value";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub family: &'static str,
    pub time: f64,
    pub version: Version,
    pub labels: BTreeMap<String, String>,
    pub value: f64,
}

impl MetricRow {
    fn labels_field(&self) -> String {
        self.labels
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Default)]
pub struct MetricsSink {
    rows: Mutex<Vec<MetricRow>>,
}

impl MetricsSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// `family` must be one of [`FAMILIES`]; unknown families would be
    /// silently dropped at write time, so they panic here instead.
    pub fn push(
        &self,
        family: &'static str,
        time: f64,
        version: Version,
        labels: &[(&str, &str)],
        value: f64,
    ) {
        assert!(FAMILIES.contains(&family), "unknown metric family {family}");
        let labels = labels
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        self.rows
            .lock()
            .unwrap()
            .push(MetricRow { family, time, version, labels, value });
    }

    pub fn rows(&self, family: &str) -> Vec<MetricRow> {
        self.rows
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.family == family)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rows.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `<family>.csv` for every family into `dir`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let rows = self.rows.lock().unwrap();
        for family in FAMILIES {
            let mut out = String::from(HEADER);
            out.push('\n');
            for row in rows.iter().filter(|r| r.family == *family) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.time,
                    row.version,
                    row.family,
                    row.labels_field(),
                    row.value
                ));
            }
            let mut file = std::fs::File::create(dir.join(format!("{family}.csv")))?;
            file.write_all(out.as_bytes())?;
        }
        Ok(())
    }
}

/// Parses one metrics CSV back into rows (time, version, metric, labels,
/// value). The inverse of `write_dir` for a single family file.
pub fn parse_metrics_csv(
    text: &str,
) -> Result<Vec<(f64, Version, String, BTreeMap<String, String>, f64)>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => return Err(format!("bad header: {other:?}")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(format!("line {}: expected 5 fields, got {}", i + 2, parts.len()));
        }
        let time: f64 = parts[0].parse().map_err(|e| format!("line {}: {e}", i + 2))?;
        let version: Version = parts[1].parse().map_err(|e| format!("line {}: {e}", i + 2))?;
        let mut labels = BTreeMap::new();
        if !parts[3].is_empty() {
            for pair in parts[3].split(';') {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| format!("line {}: bad label {pair:?}", i + 2))?;
                labels.insert(k.to_string(), v.to_string());
            }
        }
        let value: f64 = parts[4].parse().map_err(|e| format!("line {}: {e}", i + 2))?;
        rows.push((time, version, parts[2].to_string(), labels, value));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_through_files() {
        let sink = MetricsSink::new();
        sink.push("pool_size", 0.0, 0, &[], 6.0);
        sink.push("trainer_wait", 1.5, 1, &[("policy", "a")], 0.25);
        sink.push("transfer_seconds", 2.0, 1, &[("uid", "r1"), ("mode", "full")], 3.3);
        let dir = tempfile::tempdir().unwrap();
        sink.write_dir(dir.path()).unwrap();

        for family in FAMILIES {
            let text = std::fs::read_to_string(dir.path().join(format!("{family}.csv"))).unwrap();
            let rows = parse_metrics_csv(&text).unwrap();
            match *family {
                "pool_size" => {
                    assert_eq!(rows.len(), 1);
                    assert_eq!(rows[0].4, 6.0);
                    assert!(rows[0].3.is_empty());
                }
                "trainer_wait" => {
                    assert_eq!(rows[0].3["policy"], "a");
                    assert_eq!(rows[0].4, 0.25);
                }
                "transfer_seconds" => {
                    assert_eq!(rows[0].3["mode"], "full");
                    assert_eq!(rows[0].2, "transfer_seconds");
                }
                // Families with no rows still get a header-only file.
                _ => assert_eq!(rows.len(), 0, "{family}"),
            }
        }
    }

    #[test]
    fn float_formatting_round_trips_exactly() {
        let sink = MetricsSink::new();
        let value = 0.1 + 0.2; // not representable "nicely"
        sink.push("step_seconds", value, 3, &[("policy", "a")], value);
        let dir = tempfile::tempdir().unwrap();
        sink.write_dir(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("step_seconds.csv")).unwrap();
        let rows = parse_metrics_csv(&text).unwrap();
        assert_eq!(rows[0].0, value);
        assert_eq!(rows[0].4, value);
    }

    #[test]
    #[should_panic(expected = "unknown metric family")]
    fn unknown_family_panics() {
        MetricsSink::new().push("nope", 0.0, 0, &[], 1.0);
    }
}
