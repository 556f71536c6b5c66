//! Segmentation, windowing, fold assignment and leakage-safe train/test preparation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ContiguousSequence, GlucoseReading};

pub const PREP_MAGIC: &[u8; 8] = b"GLYFPREP";
pub const PREP_VERSION: u32 = 1;

/// Input/horizon split of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub input_len: usize,
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            input_len: 132,
            horizon: 12,
        }
    }
}

impl WindowSpec {
    pub fn total(&self) -> usize {
        self.input_len + self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub source_sequence_id: usize,
    /// Window start index within the source sequence.
    pub offset: usize,
}

/// Splits sorted readings into contiguous runs. A new run starts on a patient
/// change or when the gap to the previous reading exceeds `max_gap` seconds.
pub fn segment(readings: &[GlucoseReading], max_gap: i64) -> Result<Vec<ContiguousSequence>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=readings.len() {
        let split = if i == readings.len() {
            true
        } else {
            let (a, b) = (&readings[i - 1], &readings[i]);
            match a.patient_id.cmp(&b.patient_id) {
                std::cmp::Ordering::Greater => {
                    return Err(Error::InvalidValue(format!(
                        "readings not sorted: patient {} after {}",
                        b.patient_id, a.patient_id
                    )))
                }
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => {
                    if b.timestamp <= a.timestamp {
                        return Err(Error::InvalidValue(format!(
                            "readings not sorted for patient {}: t={} after t={}",
                            a.patient_id, b.timestamp, a.timestamp
                        )));
                    }
                    b.timestamp - a.timestamp > max_gap
                }
            }
        };
        if split && i > start {
            out.push(ContiguousSequence::from_readings(&readings[start..i], max_gap)?);
            start = i;
        }
    }
    Ok(out)
}

/// `floor((len - total) / step) + 1` when `len >= total`, else 0.
pub fn window_count(len: usize, total: usize, step: usize) -> usize {
    if len < total || step == 0 {
        0
    } else {
        (len - total) / step + 1
    }
}

/// Sliding windows over one sequence; trailing readings that do not fill a window are dropped.
pub fn window(sequence_id: usize, values: &[f64], spec: WindowSpec, step: usize) -> Vec<Example> {
    let total = spec.total();
    (0..window_count(values.len(), total, step))
        .map(|w| {
            let offset = w * step;
            Example {
                input: values[offset..offset + spec.input_len].to_vec(),
                target: values[offset + spec.input_len..offset + total].to_vec(),
                source_sequence_id: sequence_id,
                offset,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_sequence_ids: BTreeSet<usize>,
    pub test_sequence_ids: BTreeSet<usize>,
    pub seed: u64,
}

fn in_cohort(seq: &ContiguousSequence, cohort: Option<&BTreeSet<String>>) -> bool {
    cohort.is_none_or(|c| c.contains(&seq.patient_id))
}

/// Ids (indices into `sequences`) of sequences long enough for one window and
/// belonging to the cohort, if one is given.
pub fn eligible_ids(
    sequences: &[ContiguousSequence],
    total: usize,
    cohort: Option<&BTreeSet<String>>,
) -> Vec<usize> {
    sequences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() >= total && in_cohort(s, cohort))
        .map(|(i, _)| i)
        .collect()
}

/// Seeded shuffle of sequence ids, then a round-robin deal into `k` folds.
pub fn kfold_split_ids(ids: &[usize], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} eligible sequences for {k} folds",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    shuffled.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut buckets = vec![BTreeSet::new(); k];
    for (pos, id) in shuffled.iter().enumerate() {
        buckets[pos % k].insert(*id);
    }
    Ok((0..k)
        .map(|f| FoldSplit {
            fold_index: f,
            test_sequence_ids: buckets[f].clone(),
            train_sequence_ids: buckets
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, b)| b.iter().copied())
                .collect(),
            seed,
        })
        .collect())
}

/// Folds over the eligible sequences (length >= `total`, optionally restricted to a cohort).
pub fn kfold_split(
    sequences: &[ContiguousSequence],
    total: usize,
    k: usize,
    seed: u64,
    cohort: Option<&BTreeSet<String>>,
) -> Result<Vec<FoldSplit>> {
    kfold_split_ids(&eligible_ids(sequences, total, cohort), k, seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub fold: usize,
    /// `"all"` or the cohort label.
    pub cohort: String,
    pub train_step: usize,
    pub test_step: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSet {
    pub spec: WindowSpec,
    pub train_examples: Vec<Example>,
    pub test_examples: Vec<Example>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct PrepareOptions<'a> {
    pub spec: WindowSpec,
    pub train_step: usize,
    pub test_step: usize,
    pub cohort_label: String,
    pub cohort_filter: Option<&'a BTreeSet<String>>,
}

impl Default for PrepareOptions<'_> {
    fn default() -> Self {
        Self {
            spec: WindowSpec::default(),
            train_step: 1,
            test_step: 1,
            cohort_label: "all".into(),
            cohort_filter: None,
        }
    }
}

/// Windows the fold's train sequences with `train_step` and its test sequences
/// with `test_step`. Train and test never share a source sequence.
pub fn prepare(sequences: &[ContiguousSequence], fold: &FoldSplit, opts: &PrepareOptions) -> Result<PreparedSet> {
    if opts.train_step == 0 || opts.test_step == 0 {
        return Err(Error::Config("window steps must be >= 1".into()));
    }
    if let Some(bad) = fold
        .train_sequence_ids
        .iter()
        .chain(&fold.test_sequence_ids)
        .find(|&&id| id >= sequences.len())
    {
        return Err(Error::InvalidValue(format!(
            "fold refers to sequence {bad}, only {} sequences given",
            sequences.len()
        )));
    }
    if let Some(shared) = fold.train_sequence_ids.intersection(&fold.test_sequence_ids).next() {
        return Err(Error::InvalidValue(format!("sequence {shared} is in both train and test")));
    }
    let build = |ids: &BTreeSet<usize>, step: usize| -> Vec<Example> {
        ids.iter()
            .filter(|&&id| in_cohort(&sequences[id], opts.cohort_filter))
            .flat_map(|&id| window(id, &sequences[id].values, opts.spec, step))
            .collect()
    };
    let train_examples = build(&fold.train_sequence_ids, opts.train_step);
    let test_examples = build(&fold.test_sequence_ids, opts.test_step);
    if train_examples.is_empty() || test_examples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "fold {} cohort {}: {} train / {} test examples after filtering",
            fold.fold_index,
            opts.cohort_label,
            train_examples.len(),
            test_examples.len()
        )));
    }
    Ok(PreparedSet {
        spec: opts.spec,
        train_examples,
        test_examples,
        provenance: Provenance {
            fold: fold.fold_index,
            cohort: opts.cohort_label.clone(),
            train_step: opts.train_step,
            test_step: opts.test_step,
            seed: fold.seed,
        },
    })
}

/// Number of raw readings, identified by (sequence, position), used by both a
/// train and a test example.
pub fn shared_readings(set: &PreparedSet) -> usize {
    let total = set.spec.total();
    let extents = |xs: &[Example]| -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for e in xs {
            let end = m.entry(e.source_sequence_id).or_insert(0);
            *end = (*end).max(e.offset + total);
        }
        m
    };
    let cover = |xs: &[Example], id: usize, len: usize| -> Vec<bool> {
        let mut c = vec![false; len];
        for e in xs.iter().filter(|e| e.source_sequence_id == id) {
            c[e.offset..e.offset + total].iter_mut().for_each(|b| *b = true);
        }
        c
    };
    let (train, test) = (extents(&set.train_examples), extents(&set.test_examples));
    train
        .iter()
        .filter_map(|(id, a)| test.get(id).map(|b| (*id, (*a).max(*b))))
        .map(|(id, len)| {
            let (a, b) = (cover(&set.train_examples, id, len), cover(&set.test_examples, id, len));
            a.iter().zip(&b).filter(|(x, y)| **x && **y).count()
        })
        .sum()
}

#[derive(Serialize, Deserialize)]
struct PrepHeader {
    provenance: Provenance,
    input_len: usize,
    horizon: usize,
    n_train: usize,
    n_test: usize,
    /// `[source_sequence_id, offset]` per example, train first.
    index: Vec<[usize; 2]>,
}

pub fn write_prepared<W: Write>(mut w: W, set: &PreparedSet) -> Result<()> {
    let header = PrepHeader {
        provenance: set.provenance.clone(),
        input_len: set.spec.input_len,
        horizon: set.spec.horizon,
        n_train: set.train_examples.len(),
        n_test: set.test_examples.len(),
        index: set
            .train_examples
            .iter()
            .chain(&set.test_examples)
            .map(|e| [e.source_sequence_id, e.offset])
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(
        24 + json.len() + 8 * set.spec.total() * (header.n_train + header.n_test),
    );
    buf.extend_from_slice(PREP_MAGIC);
    buf.extend_from_slice(&PREP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for xs in [&set.train_examples, &set.test_examples] {
        for e in xs.iter() {
            for v in &e.input {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for e in xs.iter() {
            for v in &e.target {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(|e| Error::Format(e.to_string()))
}

pub(crate) fn read_header_block<'a>(bytes: &'a [u8], magic: &[u8; 8], version: u32) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 20 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "not a {} file (bad magic)",
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Format(format!("unsupported version {found}, expected {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let rest = &bytes[20..];
    if rest.len() < len {
        return Err(Error::Format("truncated header".into()));
    }
    Ok((&rest[..len], &rest[len..]))
}

pub(crate) fn decode_f64s(payload: &[u8], expected: usize) -> Result<Vec<f64>> {
    if payload.len() != expected * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {} ({} floats)",
            payload.len(),
            expected * 8,
            expected
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_prepared(bytes: &[u8]) -> Result<PreparedSet> {
    let (json, payload) = read_header_block(bytes, PREP_MAGIC, PREP_VERSION)?;
    let h: PrepHeader = serde_json::from_slice(json)?;
    let n = h.n_train + h.n_test;
    if h.index.len() != n {
        return Err(Error::Format(format!("index has {} entries for {n} examples", h.index.len())));
    }
    let floats = decode_f64s(payload, n * (h.input_len + h.horizon))?;
    let spec = WindowSpec {
        input_len: h.input_len,
        horizon: h.horizon,
    };
    let mut pos = 0;
    let mut take = |count: usize, width: usize| -> Vec<Vec<f64>> {
        let out = floats[pos..pos + count * width]
            .chunks_exact(width.max(1))
            .map(|c| c.to_vec())
            .collect();
        pos += count * width;
        out
    };
    let mut assemble = |count: usize, index: &[[usize; 2]]| -> Vec<Example> {
        let inputs = take(count, spec.input_len);
        let targets = take(count, spec.horizon);
        inputs
            .into_iter()
            .zip(targets)
            .zip(index)
            .map(|((input, target), ix)| Example {
                input,
                target,
                source_sequence_id: ix[0],
                offset: ix[1],
            })
            .collect()
    };
    let train_examples = assemble(h.n_train, &h.index[..h.n_train]);
    let test_examples = assemble(h.n_test, &h.index[h.n_train..]);
    Ok(PreparedSet {
        spec,
        train_examples,
        test_examples,
        provenance: h.provenance,
    })
}

pub fn save_prepared(set: &PreparedSet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_prepared(std::io::BufWriter::new(f), set)
}

pub fn load_prepared(path: &Path) -> Result<PreparedSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_prepared(&bytes)
}
