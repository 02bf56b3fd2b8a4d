//! Labeled datasets with ground-truth membership tags and regenerable
//! provenance.
//!
//! Provenance records the generator name, seed and parameters of every
//! synthetic dataset, enough to regenerate it byte-identically. File
//! format: JSON Lines, one object per sample
//! `{"id":0,"x":[...],"label":0,"membership":"ID"}`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Ground-truth membership of a sample relative to the training distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Membership {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

/// Kinds of synthetic out-of-distribution data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodKind {
    /// Uniform over the reference bounding box inflated five-fold.
    FarUniform,
    /// Two to three spreads away from the nearest class mean.
    NearBoundary,
    /// On a hypersphere of four data radii around the data centroid.
    Ring,
}

/// Distribution-shift kinds with their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    /// Translate inputs by `magnitude * spread` along a seeded direction,
    /// keeping the label-given-input generator fixed.
    Covariate { magnitude: f64 },
    /// Resample class proportions, keeping per-class generators fixed.
    Label { proportions: Vec<f64> },
    /// Permute the class-mean-to-label assignment (`None` rotates by one).
    Concept { permutation: Option<Vec<usize>> },
}

/// Generator record sufficient to regenerate a dataset byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Provenance {
    IdBlobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
        /// Seeded class means, recorded for resampling and shifts.
        means: Vec<Vector>,
    },
    Resampled {
        base: Box<Provenance>,
        per_class: usize,
        seed: u64,
    },
    Ood {
        base: Box<Provenance>,
        kind: OodKind,
        count: usize,
        seed: u64,
    },
    Shifted {
        base: Box<Provenance>,
        shift: ShiftKind,
        seed: u64,
    },
    Perturbed {
        base: Box<Provenance>,
        epsilon: f64,
        seed: u64,
    },
    Mixed {
        parts: Vec<Provenance>,
    },
    File {
        path: String,
    },
    Manual,
}

/// Samples, integer class labels, and per-sample ID/OOD tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub membership: Vec<Membership>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        samples: Matrix,
        labels: Vec<usize>,
        membership: Vec<Membership>,
        provenance: Provenance,
    ) -> Result<Self> {
        if samples.rows() != labels.len() || samples.rows() != membership.len() {
            return Err(Error::Shape(format!(
                "rows ({}), labels ({}) and membership tags ({}) must agree",
                samples.rows(),
                labels.len(),
                membership.len()
            )));
        }
        Ok(Self {
            samples,
            labels,
            membership,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn count_membership(&self, m: Membership) -> usize {
        self.membership.iter().filter(|&&t| t == m).count()
    }

    /// Replace every label (used to direct proxy-OOD data at a reject class).
    pub fn with_labels(mut self, label: usize) -> Self {
        for l in &mut self.labels {
            *l = label;
        }
        self
    }

    /// Concatenate datasets; provenance becomes `Mixed`.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let samples = Matrix::vstack(&parts.iter().map(|d| &d.samples).collect::<Vec<_>>())?;
        let mut labels = Vec::new();
        let mut membership = Vec::new();
        let mut prov = Vec::new();
        for d in parts {
            labels.extend_from_slice(&d.labels);
            membership.extend_from_slice(&d.membership);
            prov.push(d.provenance.clone());
        }
        LabeledDataset::new(
            samples,
            labels,
            membership,
            Provenance::Mixed { parts: prov },
        )
    }

    /// Rows whose membership matches `m`, as a matrix.
    pub fn rows_with_membership(&self, m: Membership) -> Matrix {
        let rows: Vec<Vector> = self
            .samples
            .row_iter()
            .zip(&self.membership)
            .filter(|(_, &t)| t == m)
            .map(|(r, _)| r.to_vec())
            .collect();
        Matrix::from_rows(&rows).expect("rows share the dataset dimension")
    }

    /// Rows of one class among the ID samples.
    pub fn class_rows(&self, class: usize) -> Matrix {
        let rows: Vec<Vector> = self
            .samples
            .row_iter()
            .zip(self.labels.iter().zip(&self.membership))
            .filter(|(_, (&l, &m))| l == class && m == Membership::Id)
            .map(|(r, _)| r.to_vec())
            .collect();
        Matrix::from_rows(&rows).expect("rows share the dataset dimension")
    }

    /// Number of distinct labels present.
    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Number of classes among the ID samples (proxy-OOD rows carry the
    /// reject label and do not count).
    pub fn id_class_count(&self) -> usize {
        self.labels
            .iter()
            .zip(&self.membership)
            .filter(|(_, &m)| m == Membership::Id)
            .map(|(&l, _)| l + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.len() {
            let line = SampleRecord {
                id: i as u64,
                x: self.samples.row(i).to_vec(),
                label: self.labels[i],
                membership: self.membership[i],
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    pub fn read_jsonl<R: BufRead>(r: R, provenance: Provenance) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut membership = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| {
                Error::InvalidInput(format!("line {}: malformed sample record: {e}", n + 1))
            })?;
            rows.push(rec.x);
            labels.push(rec.label);
            membership.push(rec.membership);
        }
        let samples = Matrix::from_rows(&rows)?;
        LabeledDataset::new(samples, labels, membership, provenance)
    }

    pub fn load_jsonl<P: AsRef<Path>>(path: P) -> Result<Self> {
        let display = path.as_ref().display().to_string();
        let f = std::fs::File::open(&path)
            .map_err(|e| Error::InvalidInput(format!("cannot open {display}: {e}")))?;
        Self::read_jsonl(
            std::io::BufReader::new(f),
            Provenance::File { path: display },
        )
    }
}

/// One JSONL record.
#[derive(Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub x: Vec<f64>,
    pub label: usize,
    pub membership: Membership,
}
