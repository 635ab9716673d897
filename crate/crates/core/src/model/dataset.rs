//! Patient-level meta-analysis data.
//!
//! Rows are stored grouped by study (study 1 first, then study 2, ...). The
//! relative order of patients inside a study is the order of ingestion.

use std::collections::HashMap;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient: 1-based study index, outcome, baseline and arm indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub study: usize,
    pub y: f64,
    pub y0: f64,
    pub treated: bool,
}

impl Record {
    pub fn new(study: usize, y: f64, y0: f64, treated: bool) -> Self {
        Self {
            study,
            y,
            y0,
            treated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpdDataset {
    labels: Vec<String>,
    y: Vec<f64>,
    y0: Vec<f64>,
    z: Vec<bool>,
    blocks: Vec<Range<usize>>,
}

/// Per-study counts, used in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySummary {
    pub label: String,
    pub n: usize,
    pub treated: usize,
    pub control: usize,
}

impl IpdDataset {
    /// Builds a dataset from records whose study indices run over `1..=k`.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = Record>,
    {
        let records: Vec<Record> = records.into_iter().collect();
        let k = records.iter().map(|r| r.study).max().unwrap_or(0);
        if records.iter().any(|r| r.study == 0) {
            return Err(Error::InvalidDataset("study indices start at 1".into()));
        }
        let labels = (1..=k).map(|i| i.to_string()).collect();
        Self::assemble(labels, records)
    }

    /// Builds a dataset from arbitrary study labels, numbered in order of
    /// first appearance.
    pub fn from_labeled<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64, f64, bool)>,
        S: AsRef<str>,
    {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut records = Vec::new();
        for (label, y, y0, treated) in rows {
            let label = label.as_ref();
            let next = labels.len() + 1;
            let study = *index.entry(label.to_string()).or_insert_with(|| {
                labels.push(label.to_string());
                next
            });
            records.push(Record::new(study, y, y0, treated));
        }
        Self::assemble(labels, records)
    }

    fn assemble(labels: Vec<String>, mut records: Vec<Record>) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(Error::InvalidDataset("no records".into()));
        }
        // stable: keeps patient order within each study
        records.sort_by_key(|r| r.study);

        let n = records.len();
        let mut y = Vec::with_capacity(n);
        let mut y0 = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut blocks = Vec::with_capacity(k);
        let mut start = 0;
        for study in 1..=k {
            let end = start
                + records[start..]
                    .iter()
                    .take_while(|r| r.study == study)
                    .count();
            if end == start {
                return Err(Error::InvalidDataset(format!(
                    "study {} ({}) has no patients",
                    study,
                    labels[study - 1]
                )));
            }
            blocks.push(start..end);
            start = end;
        }
        for r in &records {
            if !r.y.is_finite() || !r.y0.is_finite() {
                return Err(Error::InvalidDataset(format!(
                    "non-finite outcome or baseline in study {}",
                    r.study
                )));
            }
            y.push(r.y);
            y0.push(r.y0);
            z.push(r.treated);
        }
        let ds = Self {
            labels,
            y,
            y0,
            z,
            blocks,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        for (i, block) in self.blocks.iter().enumerate() {
            let n = block.len();
            if n < 3 {
                return Err(Error::InvalidDataset(format!(
                    "study {} has {} patients; at least 3 are required",
                    self.labels[i], n
                )));
            }
            let treated = self.z[block.clone()].iter().filter(|&&t| t).count();
            if treated == 0 || treated == n {
                return Err(Error::NonIdentifiable(format!(
                    "study {} has patients in only one arm",
                    self.labels[i]
                )));
            }
        }
        Ok(())
    }

    /// Reads the `study,y,y0,z` CSV layout (header required, any column order).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_error(1, e))?.clone();
        let column = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MalformedInput {
                    line: 1,
                    message: format!("missing column `{name}`"),
                })
        };
        let (c_study, c_y, c_y0, c_z) =
            (column("study")?, column("y")?, column("y0")?, column("z")?);

        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| csv_error(line, e))?;
            let field = |c: usize, name: &str| -> Result<&str> {
                rec.get(c).ok_or_else(|| Error::MalformedInput {
                    line,
                    message: format!("missing value for `{name}`"),
                })
            };
            let number = |c: usize, name: &str| -> Result<f64> {
                let raw = field(c, name)?;
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MalformedInput {
                        line,
                        message: format!("column `{name}`: `{raw}` is not a finite number"),
                    })
            };
            let study = field(c_study, "study")?;
            if study.is_empty() {
                return Err(Error::MalformedInput {
                    line,
                    message: "column `study`: empty label".into(),
                });
            }
            let treated = match field(c_z, "z")? {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::MalformedInput {
                        line,
                        message: format!("column `z`: expected 0 or 1, found `{other}`"),
                    })
                }
            };
            rows.push((
                study.to_string(),
                number(c_y, "y")?,
                number(c_y0, "y0")?,
                treated,
            ));
        }
        Self::from_labeled(rows)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    /// Serializes in the ingestion layout, rows in canonical study order.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("study,y,y0,z\n");
        for (i, block) in self.blocks.iter().enumerate() {
            for r in block.clone() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    self.labels[i], self.y[r], self.y0[r], self.z[r] as u8
                ));
            }
        }
        out
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_total(&self) -> usize {
        self.y.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn baselines(&self) -> &[f64] {
        &self.y0
    }

    pub fn arms(&self) -> &[bool] {
        &self.z
    }

    /// Row ranges of each study, contiguous and in study order.
    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn study_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn treated_counts(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .map(|b| self.z[b.clone()].iter().filter(|&&t| t).count())
            .collect()
    }

    pub fn summary(&self) -> Vec<StudySummary> {
        self.blocks
            .iter()
            .zip(self.treated_counts())
            .zip(&self.labels)
            .map(|((b, t), label)| StudySummary {
                label: label.clone(),
                n: b.len(),
                treated: t,
                control: b.len() - t,
            })
            .collect()
    }

    /// Same design, new outcome vector (canonical row order).
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_total() {
            return Err(Error::InvalidArgument(format!(
                "expected {} outcomes, got {}",
                self.n_total(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite outcome".into()));
        }
        Ok(Self { y, ..self.clone() })
    }

    /// `Y - theta0 * Z 1`: removes a hypothesised treatment effect.
    pub fn shifted(&self, theta0: f64) -> Self {
        let y = self
            .y
            .iter()
            .zip(&self.z)
            .map(|(&v, &t)| if t { v - theta0 } else { v })
            .collect();
        Self { y, ..self.clone() }
    }

    /// Adds `c` to every outcome.
    pub fn translated(&self, c: f64) -> Self {
        Self {
            y: self.y.iter().map(|v| v + c).collect(),
            ..self.clone()
        }
    }

    /// Multiplies outcomes and baselines by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            y: self.y.iter().map(|v| v * c).collect(),
            y0: self.y0.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

fn csv_error(line: usize, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::MalformedInput {
        line,
        message: e.to_string(),
    }
}
