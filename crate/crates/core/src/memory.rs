//! FIFO memory of recent (feature, prediction) pairs and the discrepancy
//! estimate built on top of it.
//!
//! Keys are extractor outputs, values are softmax predictions. A query
//! retrieves its nearest keys, averages their values into a reference
//! prediction, and compares that reference with the live prediction through
//! a symmetric KL divergence.

use std::collections::VecDeque;
use std::io::{Read, Write};

use crate::error::{dim_err, domain_err, Error, Result};
use crate::numeric::{check_distribution, cosine_distance, kl_div, l2_distance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    L2,
    Cosine,
}

impl Similarity {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Similarity::L2 => l2_distance(a, b),
            Similarity::Cosine => cosine_distance(a, b),
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!(
                "unknown similarity {other:?} (expected l2 or cosine)"
            ))),
        }
    }
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L2 => "l2",
            Self::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub insert_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    key_dim: usize,
    value_dim: usize,
    entries: VecDeque<BankEntry>,
    next_index: u64,
}

/// Nearest entries to a query, closest first.
#[derive(Debug, Clone)]
pub struct SupportSet<'a> {
    pub members: Vec<&'a BankEntry>,
    pub distances: Vec<f64>,
}

impl SupportSet<'_> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn indices(&self) -> Vec<u64> {
        self.members.iter().map(|e| e.insert_index).collect()
    }
}

impl MemoryBank {
    pub fn new(capacity: usize, key_dim: usize, value_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return domain_err("memory bank capacity must be positive");
        }
        Ok(Self {
            capacity,
            key_dim,
            value_dim,
            entries: VecDeque::with_capacity(capacity),
            next_index: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter()
    }

    /// Appends a pair, evicting the oldest entry when full.
    pub fn push(&mut self, key: &[f64], value: &[f64]) -> Result<()> {
        if key.len() != self.key_dim || value.len() != self.value_dim {
            return dim_err(format!(
                "bank expects key/value of length {}/{}, got {}/{}",
                self.key_dim,
                self.value_dim,
                key.len(),
                value.len()
            ));
        }
        if key.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("memory key".into()));
        }
        check_distribution(value)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(BankEntry {
            key: key.to_vec(),
            value: value.to_vec(),
            insert_index: self.next_index,
        });
        self.next_index += 1;
        Ok(())
    }

    /// The `min(d, len)` entries nearest to `query`. Equal distances go to the
    /// more recent entry. Returns `None` while the bank is empty.
    pub fn retrieve(
        &self,
        query: &[f64],
        d: usize,
        similarity: Similarity,
    ) -> Result<Option<SupportSet<'_>>> {
        if d == 0 {
            return domain_err("retrieval size must be at least 1");
        }
        if query.len() != self.key_dim {
            return dim_err(format!(
                "query has length {}, keys have length {}",
                query.len(),
                self.key_dim
            ));
        }
        if self.entries.is_empty() {
            return Ok(None);
        }
        let mut scored = self
            .entries
            .iter()
            .map(|e| Ok((similarity.distance(&e.key, query)?, e)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|(da, ea), (db, eb)| {
            da.total_cmp(db).then(eb.insert_index.cmp(&ea.insert_index))
        });
        scored.truncate(d);
        let (distances, members) = scored.into_iter().unzip();
        Ok(Some(SupportSet { members, distances }))
    }

    pub fn write_snapshot(&self, out: &mut impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BANK_MAGIC);
        buf.extend_from_slice(&BANK_FORMAT_VERSION.to_le_bytes());
        for v in [self.capacity, self.key_dim, self.value_dim, self.entries.len()] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.extend_from_slice(&self.next_index.to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&e.insert_index.to_le_bytes());
            for v in e.key.iter().chain(&e.value) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_snapshot(input: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 12 || &bytes[..8] != BANK_MAGIC {
            return Err(Error::Format("not a bank snapshot (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != BANK_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: BANK_FORMAT_VERSION,
            });
        }
        let truncated = || Error::Format("truncated bank snapshot".into());
        let words: Vec<[u8; 8]> = bytes[12..]
            .chunks(8)
            .map(|w| w.try_into().map_err(|_| truncated()))
            .collect::<Result<_>>()?;
        let header: Vec<usize> = words
            .get(..5)
            .ok_or_else(truncated)?
            .iter()
            .map(|w| u64::from_le_bytes(*w) as usize)
            .collect();
        let (capacity, key_dim, value_dim, len, next_index) =
            (header[0], header[1], header[2], header[3], header[4]);
        if len > capacity {
            return Err(Error::Format("snapshot holds more entries than its capacity".into()));
        }
        let stride = 1 + key_dim + value_dim;
        let body = &words[5..];
        if body.len() != len * stride {
            return Err(if body.len() < len * stride {
                truncated()
            } else {
                Error::Format("trailing bytes after bank snapshot".into())
            });
        }
        let mut bank = Self::new(capacity, key_dim, value_dim)
            .map_err(|e| Error::Format(e.to_string()))?;
        for rec in body.chunks(stride) {
            let vals: Vec<f64> = rec[1..].iter().map(|w| f64::from_le_bytes(*w)).collect();
            bank.entries.push_back(BankEntry {
                insert_index: u64::from_le_bytes(rec[0]),
                key: vals[..key_dim].to_vec(),
                value: vals[key_dim..].to_vec(),
            });
        }
        bank.next_index = next_index as u64;
        Ok(bank)
    }
}

pub const BANK_MAGIC: &[u8; 8] = b"DTTABANK";
pub const BANK_FORMAT_VERSION: u32 = 1;

/// Mean of the support values.
pub fn reference_prediction(support: &SupportSet<'_>) -> Result<Vec<f64>> {
    let first = support
        .members
        .first()
        .ok_or_else(|| Error::State("reference prediction from an empty support set".into()))?;
    let mut acc = vec![0.0; first.value.len()];
    for m in &support.members {
        for (a, v) in acc.iter_mut().zip(&m.value) {
            *a += v;
        }
    }
    let n = support.members.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// `½ (KL(reference ‖ prediction) + KL(prediction ‖ reference))`, in nats.
pub fn sample_discrepancy(reference: &[f64], prediction: &[f64]) -> Result<f64> {
    let forward = kl_div(reference, prediction)?;
    let backward = kl_div(prediction, reference)?;
    Ok(0.5 * (forward + backward))
}

/// Mean of the per-sample discrepancies of one batch.
pub fn batch_discrepancy(per_sample: &[f64]) -> Result<f64> {
    if per_sample.is_empty() {
        return domain_err("batch discrepancy of an empty batch");
    }
    Ok(per_sample.iter().sum::<f64>() / per_sample.len() as f64)
}
