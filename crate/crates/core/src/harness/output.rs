//! CSV tables, metrics JSON and run manifests.
//!
//! Every CSV starts with a `# schema=<name>/<version>` line followed by the
//! column header. Readers check both and refuse anything else.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{Method, StepTelemetry};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::EpochLog;

/// Name, version and column list of a CSV table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

impl Schema {
    pub fn tag(&self) -> String {
        format!("{}/{}", self.name, self.version)
    }
}

pub const TELEMETRY: Schema = Schema {
    name: "telemetry",
    version: 1,
    columns: &[
        "step",
        "method",
        "severity",
        "discrepancy",
        "applied_lr",
        "tta_loss",
        "correct_count",
        "bank_size",
    ],
};

pub const TRAIN_LOG: Schema = Schema {
    name: "train-log",
    version: 1,
    columns: &["epoch", "loss", "accuracy"],
};

pub const RUNS: Schema = Schema {
    name: "runs",
    version: 1,
    columns: &[
        "method",
        "alpha",
        "retrieval_size",
        "steps_per_batch",
        "seed",
        "order",
        "streaming_accuracy",
        "final_accuracy",
        "loss_smoothness",
        "lr_mean",
        "aborted_steps",
    ],
};

pub const SWEEP_SUMMARY: Schema = Schema {
    name: "sweep-lr-summary",
    version: 1,
    columns: &["method", "alpha", "mean_final_accuracy", "grid_std"],
};

pub const RETRIEVAL_SUMMARY: Schema = Schema {
    name: "retrieval-summary",
    version: 1,
    columns: &["retrieval_size", "mean_final_accuracy", "mean_streaming_accuracy"],
};

pub const ORDER_SUMMARY: Schema = Schema {
    name: "order-summary",
    version: 1,
    columns: &["order", "order_seed", "final_accuracy", "batch_checksum"],
};

pub const ALL_SCHEMAS: [Schema; 6] = [
    TELEMETRY,
    TRAIN_LOG,
    RUNS,
    SWEEP_SUMMARY,
    RETRIEVAL_SUMMARY,
    ORDER_SUMMARY,
];

/// A parsed table: header checked against its schema, rows as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.schema.columns.len() {
            return Err(Error::Format(format!(
                "{} row has {} fields, schema has {}",
                self.schema.tag(),
                row.len(),
                self.schema.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.schema
            .columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Format(format!("{} has no column {name:?}", self.schema.tag())))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Format(format!("column {name:?}: {v:?} is not a number")))
            })
            .collect()
    }

    pub fn write(&self, out: impl Write) -> Result<()> {
        let mut out = out;
        writeln!(out, "# schema={}", self.schema.tag())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.schema.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    /// Reads a table that must carry exactly `schema`.
    pub fn read(input: impl Read, schema: Schema) -> Result<Self> {
        let table = Self::read_any(input)?;
        if table.schema != schema {
            return Err(Error::Format(format!(
                "expected schema {}, found {}",
                schema.tag(),
                table.schema.tag()
            )));
        }
        Ok(table)
    }

    /// Reads a table with any known schema.
    pub fn read_any(input: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let tag = first
            .trim_end()
            .strip_prefix("# schema=")
            .ok_or_else(|| Error::Format("missing '# schema=' line".into()))?;
        let schema = ALL_SCHEMAS
            .into_iter()
            .find(|s| s.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown schema {tag:?}")))?;
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        for (i, want) in schema.columns.iter().enumerate() {
            match header.get(i) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::Format(format!(
                        "{tag}: column {} should be {want:?}, found {got:?}",
                        i + 1
                    )))
                }
                None => return Err(Error::Format(format!("{tag}: missing column {want:?}"))),
            }
        }
        if header.len() > schema.columns.len() {
            return Err(Error::Format(format!(
                "{tag}: unexpected column {:?}",
                header[schema.columns.len()]
            )));
        }
        let mut table = Self::new(schema);
        for record in r.records() {
            table.push(record?.iter().map(str::to_string).collect())?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_any(fs::File::open(path)?)
    }
}

/// Shortest round-trip decimal form, so identical values give identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn telemetry_table(method: Method, telemetry: &[StepTelemetry]) -> Result<Table> {
    let mut t = Table::new(TELEMETRY);
    for s in telemetry {
        t.push(vec![
            s.step_index.to_string(),
            method.to_string(),
            s.severity_label.clone(),
            fmt_f64(s.discrepancy),
            fmt_f64(s.applied_lr),
            fmt_f64(s.tta_loss_before),
            s.correct.map_or_else(String::new, |c| c.to_string()),
            s.bank_size.to_string(),
        ])?;
    }
    Ok(t)
}

pub fn train_log_table(log: &[EpochLog]) -> Result<Table> {
    let mut t = Table::new(TRAIN_LOG);
    for e in log {
        t.push(vec![e.epoch.to_string(), fmt_f64(e.loss), fmt_f64(e.accuracy)])?;
    }
    Ok(t)
}

pub fn write_metrics_json(metrics: &Metrics, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(metrics)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_metrics_json(path: impl AsRef<Path>) -> Result<Metrics> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Any serialisable summary as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to repeat a run: the resolved config text (which
/// parses back with `RunConfig::parse`), the command, seeds, inputs and the
/// hashes of the files produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub command: String,
    pub config_text: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn new(command: &str, config_text: String, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            config_text,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Artifact {
            name: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Hashes files under `dir`, recorded by their names relative to it.
    pub fn add_outputs(&mut self, dir: &Path, names: &[PathBuf]) -> Result<()> {
        for name in names {
            self.outputs.push(Artifact {
                name: name.display().to_string(),
                sha256: sha256_file(dir.join(name))?,
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# command: {}\n", self.command));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        s.push_str(&format!("# seeds: {}\n", seeds.join(",")));
        for a in &self.inputs {
            s.push_str(&format!("# input {} sha256={}\n", a.name, a.sha256));
        }
        for a in &self.outputs {
            s.push_str(&format!("# artifact {} sha256={}\n", a.name, a.sha256));
        }
        s.push_str(&self.config_text);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new("", String::new(), Vec::new());
        let mut config = String::new();
        let artifact = |rest: &str| -> Result<Artifact> {
            let (name, hash) = rest
                .rsplit_once(" sha256=")
                .ok_or_else(|| Error::Format(format!("bad artifact line {rest:?}")))?;
            Ok(Artifact {
                name: name.to_string(),
                sha256: hash.to_string(),
            })
        };
        for line in text.lines() {
            if let Some(c) = line.strip_prefix("# command: ") {
                m.command = c.to_string();
            } else if let Some(s) = line.strip_prefix("# seeds: ") {
                m.seeds = s
                    .split(',')
                    .filter(|v| !v.is_empty())
                    .map(|v| v.parse().map_err(|_| Error::Format(format!("bad seed {v:?}"))))
                    .collect::<Result<_>>()?;
            } else if let Some(rest) = line.strip_prefix("# input ") {
                m.inputs.push(artifact(rest)?);
            } else if let Some(rest) = line.strip_prefix("# artifact ") {
                m.outputs.push(artifact(rest)?);
            } else {
                config.push_str(line);
                config.push('\n');
            }
        }
        m.config_text = config;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }
}
