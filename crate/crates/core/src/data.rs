//! Transition records and offline datasets with newline-delimited JSON IO.

use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{PspoError, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// One `(s, a, r, s', done)` transition. Field names match the on-disk schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord<S> {
    pub s: S,
    pub a: usize,
    pub r: f64,
    pub s2: S,
    pub done: bool,
    pub provenance: Provenance,
}

impl<S> TransitionRecord<S> {
    pub fn real(s: S, a: usize, r: f64, s2: S, done: bool) -> Self {
        Self { s, a, r, s2, done, provenance: Provenance::Real }
    }

    pub fn synthetic(s: S, a: usize, r: f64, s2: S, done: bool) -> Self {
        Self { s, a, r, s2, done, provenance: Provenance::Synthetic }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OfflineDataset<S> {
    records: Vec<TransitionRecord<S>>,
}

impl<S: Clone> OfflineDataset<S> {
    pub fn new(records: Vec<TransitionRecord<S>>) -> Result<Self> {
        if let Some(bad) = records.iter().position(|r| !r.r.is_finite()) {
            return Err(PspoError::InvalidInput(format!("record {bad} has a non-finite reward")));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[TransitionRecord<S>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn real_records(&self) -> impl Iterator<Item = &TransitionRecord<S>> {
        self.records.iter().filter(|r| r.provenance == Provenance::Real)
    }

    /// Same-size resample with replacement.
    pub fn bootstrap(&self, rng: &mut Rng) -> Vec<&TransitionRecord<S>> {
        let n = self.records.len();
        (0..n).map(|_| &self.records[rng.random_range(0..n)]).collect()
    }

    /// `size` records drawn uniformly with replacement.
    pub fn minibatch(&self, size: usize, rng: &mut Rng) -> Result<Vec<TransitionRecord<S>>> {
        if self.records.is_empty() {
            return Err(PspoError::EmptyBatch);
        }
        let n = self.records.len();
        Ok((0..size).map(|_| self.records[rng.random_range(0..n)].clone()).collect())
    }
}

impl<S: Clone + Serialize + DeserializeOwned> OfflineDataset<S> {
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| PspoError::InvalidInput(format!("dataset line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Self::new(records)
    }
}
