use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::utility::{UtilityFeature, COLUMN_NAMES};

pub const DATASET_FORMAT: u32 = 1;
const DATASET_KIND: &str = "terrapref-dataset";

/// One demonstration tick: the feature the demonstrator saw and the bin it chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub utility_feature: UtilityFeature,
    pub label_index: usize,
    pub timestamp: f64,
    /// Diagnostic only.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub m: usize,
    pub dt: f64,
    pub horizon: usize,
    pub scenarios: Vec<String>,
    pub rate_hz: f64,
    pub columns: Vec<String>,
}

impl DatasetMeta {
    pub fn new(m: usize, dt: f64, horizon: usize, scenarios: Vec<String>, rate_hz: f64) -> Self {
        Self {
            m,
            dt,
            horizon,
            scenarios,
            rate_hz,
            columns: COLUMN_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    kind: String,
    #[serde(flatten)]
    meta: DatasetMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<DemoRecord>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: DemoRecord) -> Result<()> {
        self.check(&record, self.records.len())?;
        self.records.push(record);
        Ok(())
    }

    /// Appends another dataset recorded with the same preference set.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if other.meta.m != self.meta.m
            || other.meta.horizon != self.meta.horizon
            || other.meta.dt != self.meta.dt
        {
            return Err(Error::invalid("cannot merge datasets with different preference sets"));
        }
        for name in other.meta.scenarios {
            if !self.meta.scenarios.contains(&name) {
                self.meta.scenarios.push(name);
            }
        }
        self.records.extend(other.records);
        Ok(())
    }

    fn check(&self, record: &DemoRecord, line: usize) -> Result<()> {
        if record.utility_feature.m() != self.meta.m {
            return Err(Error::format(
                "dataset",
                format!(
                    "record {line} has {} rows, dataset m is {}",
                    record.utility_feature.m(),
                    self.meta.m
                ),
            ));
        }
        if record.label_index >= self.meta.m {
            return Err(Error::format(
                "dataset",
                format!("record {line} label {} out of range", record.label_index),
            ));
        }
        Ok(())
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut out = BufWriter::new(out);
        let header = Header {
            format: DATASET_FORMAT,
            kind: DATASET_KIND.into(),
            meta: self.meta.clone(),
        };
        let io = |e: std::io::Error| Error::format("dataset", e);
        serde_json::to_writer(&mut out, &header).map_err(|e| Error::format("dataset", e))?;
        out.write_all(b"\n").map_err(io)?;
        for record in &self.records {
            serde_json::to_writer(&mut out, record).map_err(|e| Error::format("dataset", e))?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_from(input: impl std::io::Read) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::format("dataset", "file is empty"))?
            .map_err(|e| Error::format("dataset", e))?;
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| Error::format("dataset", format!("header: {e}")))?;
        if header.kind != DATASET_KIND || header.format != DATASET_FORMAT {
            return Err(Error::format(
                "dataset",
                format!("unsupported header kind={} format={}", header.kind, header.format),
            ));
        }
        let mut dataset = Dataset::new(header.meta);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format("dataset", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DemoRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format("dataset", format!("record {}: {e}", i + 1)))?;
            dataset.check(&record, i + 1)?;
            dataset.records.push(record);
        }
        Ok(dataset)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: usize, m: usize, t: f64) -> DemoRecord {
        let rows = (0..m)
            .map(|i| [0.1 * t, 0.0, 1.0 / 3.0, 0.0, i as f64 / m as f64])
            .collect();
        DemoRecord {
            utility_feature: UtilityFeature::from_rows(rows).unwrap(),
            label_index: label,
            timestamp: t,
            pose: Pose::new(t, -t, 0.1 * t),
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let mut ds = Dataset::new(DatasetMeta::new(3, 0.1, 30, vec!["a".into()], 10.0));
        for i in 0..5 {
            ds.push(record(i % 3, 3, i as f64 * 0.1)).unwrap();
        }
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().contains("\"format\":1"));
        assert_eq!(Dataset::read_from(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn rejects_mismatched_records() {
        let mut ds = Dataset::new(DatasetMeta::new(3, 0.1, 30, vec![], 10.0));
        assert!(ds.push(record(3, 3, 0.0)).is_err());
        assert!(ds.push(record(0, 4, 0.0)).is_err());
        assert!(Dataset::read_from(&b""[..]).is_err());
        assert!(Dataset::read_from(&b"{\"format\":2}\n"[..]).is_err());
    }
}
