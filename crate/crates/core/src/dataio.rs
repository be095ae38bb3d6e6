//! Gesture recordings: CSV ingest, per-sample preprocessing, padding with
//! window validity, and labeled pair construction.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CSV_HEADER: [&str; 7] = ["user_id", "sample_id", "t", "x", "y", "p", "a"];
pub const CHANNELS: usize = 5;
const ZSCORE_MIN_STD: f64 = 1e-8;

/// One touch event: time (ms), screen position, pressure, contact area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub p: f64,
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GestureSample {
    pub user_id: String,
    pub sample_id: String,
    pub rows: Vec<TouchRow>,
}

impl GestureSample {
    /// `user/sample`, the key used by pair manifests.
    pub fn key(&self) -> String {
        format!("{}/{}", self.user_id, self.sample_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Validation(format!("sample {} has no rows", self.key())));
        }
        for (i, w) in self.rows.windows(2).enumerate() {
            if w[1].t < w[0].t {
                return Err(Error::Validation(format!(
                    "sample {}: timestamp decreases at row {} ({} -> {})",
                    self.key(),
                    i + 1,
                    w[0].t,
                    w[1].t
                )));
            }
        }
        let finite = self
            .rows
            .iter()
            .all(|r| [r.t, r.x, r.y, r.p, r.a].iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Validation(format!("sample {} has non-finite values", self.key())));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct CsvRecord {
    user_id: String,
    sample_id: String,
    t: f64,
    x: f64,
    y: f64,
    p: f64,
    a: f64,
}

pub fn load_gesture_csv(path: impl AsRef<Path>) -> Result<Vec<GestureSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_gesture_csv(BufReader::new(file))
}

/// Parses the gesture CSV format; one sample per `(user_id, sample_id)`,
/// ordered by first appearance, rows in file order.
pub fn read_gesture_csv<R: Read>(reader: R) -> Result<Vec<GestureSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .clone();
    for col in CSV_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Format(format!("missing column `{col}`")));
        }
    }
    let mut samples: Vec<GestureSample> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for (line, rec) in rdr.deserialize::<CsvRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("record {}: {e}", line + 1)))?;
        let key = (rec.user_id.clone(), rec.sample_id.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            samples.push(GestureSample {
                user_id: rec.user_id.clone(),
                sample_id: rec.sample_id.clone(),
                rows: Vec::new(),
            });
            samples.len() - 1
        });
        samples[slot].rows.push(TouchRow {
            t: rec.t,
            x: rec.x,
            y: rec.y,
            p: rec.p,
            a: rec.a,
        });
    }
    for s in &samples {
        s.validate()?;
    }
    Ok(samples)
}

pub fn write_gesture_csv<W: Write>(writer: W, samples: &[GestureSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(fail)?;
    for s in samples {
        for r in &s.rows {
            w.write_record([
                s.user_id.clone(),
                s.sample_id.clone(),
                r.t.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.p.to_string(),
                r.a.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// First-order differences of `values` with the first entry fixed at 0.
pub fn first_difference(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    if !values.is_empty() {
        out.push(0.0);
    }
    out.extend(values.windows(2).map(|w| w[1] - w[0]));
    out
}

/// Differenced (T', X', Y') per row.
pub fn first_order_difference(sample: &GestureSample) -> Vec<[f64; 3]> {
    let t = first_difference(&sample.rows.iter().map(|r| r.t).collect::<Vec<_>>());
    let x = first_difference(&sample.rows.iter().map(|r| r.x).collect::<Vec<_>>());
    let y = first_difference(&sample.rows.iter().map(|r| r.y).collect::<Vec<_>>());
    (0..t.len()).map(|i| [t[i], x[i], y[i]]).collect()
}

/// Standardizes with the population mean and standard deviation of `values`.
/// A standard deviation below `1e-8` maps everything to zero.
pub fn zscore_normalize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < ZSCORE_MIN_STD {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// `[T × 5]` features (T', X', Y', P', A'): differenced time and position,
/// per-sample z-scored pressure and area.
pub fn preprocess(sample: &GestureSample) -> Tensor {
    let diffs = first_order_difference(sample);
    let p = zscore_normalize(&sample.rows.iter().map(|r| r.p).collect::<Vec<_>>());
    let a = zscore_normalize(&sample.rows.iter().map(|r| r.a).collect::<Vec<_>>());
    let mut data = Vec::with_capacity(sample.rows.len() * CHANNELS);
    for i in 0..sample.rows.len() {
        let [dt, dx, dy] = diffs[i];
        data.extend([dt, dx, dy, p[i], a[i]].map(|v| v as f32));
    }
    Tensor::from_parts(vec![sample.rows.len(), CHANNELS], data)
}

/// A preprocessed, padded sample ready for windowing.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedSample {
    pub user_id: String,
    pub sample_id: String,
    /// `[pad_len × 5]`, zero rows after `len`.
    pub features: Tensor,
    /// Number of real rows.
    pub len: usize,
    pub pad_len: usize,
    pub window: usize,
    /// One flag per window of `window` rows; false when more than half of
    /// its positions are padding.
    pub window_valid: Vec<bool>,
}

impl ProcessedSample {
    pub fn key(&self) -> String {
        format!("{}/{}", self.user_id, self.sample_id)
    }

    pub fn num_windows(&self) -> usize {
        self.window_valid.len()
    }

    pub fn valid_windows(&self) -> Vec<usize> {
        (0..self.window_valid.len()).filter(|&i| self.window_valid[i]).collect()
    }
}

/// Zero-pads `features` to the next multiple of `window` and flags windows
/// that are more than half padding.
pub fn pad_and_window_mask(features: &Tensor, window: usize) -> Result<(Tensor, Vec<bool>)> {
    if window == 0 {
        return Err(Error::Param("window size must be >= 1".into()));
    }
    if features.rank() != 2 {
        return Err(Error::shape("pad_and_window_mask", features.shape(), &[2]));
    }
    let (len, c) = (features.rows(), features.cols());
    let pad_len = len.div_ceil(window).max(1) * window;
    let mut data = features.data().to_vec();
    data.resize(pad_len * c, 0.0);
    let valid = (0..pad_len / window)
        .map(|w| {
            let real = len.saturating_sub(w * window).min(window);
            let padded = window - real;
            2 * padded <= window
        })
        .collect();
    Ok((Tensor::from_parts(vec![pad_len, c], data), valid))
}

/// Full pipeline: difference, z-score (P, A), pad.
pub fn process_sample(sample: &GestureSample, window: usize) -> Result<ProcessedSample> {
    let features = preprocess(sample);
    let len = features.rows();
    let (features, window_valid) = pad_and_window_mask(&features, window)?;
    Ok(ProcessedSample {
        user_id: sample.user_id.clone(),
        sample_id: sample.sample_id.clone(),
        pad_len: features.rows(),
        features,
        len,
        window,
        window_valid,
    })
}

pub fn process_all(samples: &[GestureSample], window: usize) -> Result<Vec<ProcessedSample>> {
    samples.iter().map(|s| process_sample(s, window)).collect()
}

/// Indices into a sample list, and whether both belong to the same user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SamplePair {
    pub a: usize,
    pub b: usize,
    pub y: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<SamplePair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.pairs.iter().map(|p| p.y).collect()
    }
}

fn by_user(users: &[&str]) -> Vec<Vec<usize>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, u) in users.iter().enumerate() {
        groups
            .entry(u)
            .or_insert_with(|| {
                order.push(u);
                Vec::new()
            })
            .push(i);
    }
    order.into_iter().map(|u| groups.remove(u).unwrap()).collect()
}

/// Balanced same-user / cross-user pairs over samples identified by user id.
///
/// Positives are drawn without replacement from all unordered same-user
/// pairs (cycling through a fresh shuffle if more are requested than exist);
/// negatives likewise from cross-user pairs. A sample is never paired with
/// itself. The final list is shuffled.
pub fn make_pairs(user_ids: &[&str], seed: u64, n_pairs: usize) -> Result<PairBatch> {
    if n_pairs == 0 {
        return Ok(PairBatch::default());
    }
    let groups = by_user(user_ids);
    let eligible = groups.iter().filter(|g| g.len() >= 2).count();
    if groups.len() < 2 || eligible < 2 {
        return Err(Error::Data(format!(
            "pairing needs at least 2 users with 2 samples each; got {} users, {} eligible",
            groups.len(),
            eligible
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = n_pairs.div_ceil(2);
    let n_neg = n_pairs - n_pos;

    let mut positives: Vec<(usize, usize)> = Vec::new();
    for g in &groups {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                positives.push((g[i], g[j]));
            }
        }
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    draw_cycling(&mut positives, n_pos, &mut rng, |(a, b)| pairs.push(SamplePair { a, b, y: 1 }));

    let total_neg = {
        let n: usize = groups.iter().map(Vec::len).sum();
        let same: usize = groups.iter().map(|g| g.len() * (g.len() - 1) / 2).sum();
        n * (n - 1) / 2 - same
    };
    let user_of: Vec<usize> = {
        let mut u = vec![0; user_ids.len()];
        for (gi, g) in groups.iter().enumerate() {
            for &i in g {
                u[i] = gi;
            }
        }
        u
    };
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for _ in 0..n_neg {
        if seen.len() == total_neg {
            seen.clear();
        }
        loop {
            let a = rng.random_range(0..user_ids.len());
            let b = rng.random_range(0..user_ids.len());
            if user_of[a] == user_of[b] {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                pairs.push(SamplePair { a: key.0, b: key.1, y: 0 });
                break;
            }
        }
    }
    pairs.shuffle(&mut rng);
    Ok(PairBatch { pairs })
}

/// [`make_pairs`] restricted to the samples listed in `subset`; the returned
/// pairs index the full `user_ids` list.
pub fn make_pairs_within(user_ids: &[&str], subset: &[usize], seed: u64, n_pairs: usize) -> Result<PairBatch> {
    let ids: Vec<&str> = subset.iter().map(|&i| user_ids[i]).collect();
    let local = make_pairs(&ids, seed, n_pairs)?;
    Ok(PairBatch {
        pairs: local
            .pairs
            .into_iter()
            .map(|p| SamplePair {
                a: subset[p.a],
                b: subset[p.b],
                y: p.y,
            })
            .collect(),
    })
}

fn draw_cycling<T: Copy, R: Rng>(pool: &mut [T], n: usize, rng: &mut R, mut emit: impl FnMut(T)) {
    let mut taken = 0;
    while taken < n {
        pool.shuffle(rng);
        for &item in pool.iter().take(n - taken) {
            emit(item);
            taken += 1;
        }
    }
}

/// Splits each user's samples into train / held-out sets; `train_fraction`
/// of every user's samples (rounded, at least one on each side when the user
/// has two or more) go to training. Returns sample indices.
pub fn split_by_sample(user_ids: &[&str], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut g in by_user(user_ids) {
        g.shuffle(&mut rng);
        let mut n_train = (g.len() as f64 * train_fraction).round() as usize;
        if g.len() >= 2 {
            n_train = n_train.clamp(1, g.len() - 1);
        }
        train.extend_from_slice(&g[..n_train.min(g.len())]);
        test.extend_from_slice(&g[n_train.min(g.len())..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    a: String,
    b: String,
    y: u8,
}

/// Writes one JSON object per pair: `{"a": "<user>/<sample>", "b": ..., "y": 0|1}`.
pub fn write_pair_manifest<W: Write>(mut writer: W, keys: &[String], pairs: &PairBatch) -> Result<()> {
    for p in &pairs.pairs {
        let line = ManifestLine {
            a: keys[p.a].clone(),
            b: keys[p.b].clone(),
            y: p.y,
        };
        let json = serde_json::to_string(&line).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(writer, "{json}").map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

/// Reads a pair manifest, resolving keys against `keys` (sample index order).
pub fn read_pair_manifest<R: Read>(reader: R, keys: &[String]) -> Result<PairBatch> {
    let index: HashMap<&str, usize> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
        if m.y > 1 {
            return Err(Error::Format(format!("manifest line {}: label {} not 0/1", n + 1, m.y)));
        }
        let find = |k: &str| {
            index
                .get(k)
                .copied()
                .ok_or_else(|| Error::Data(format!("manifest line {}: unknown sample `{k}`", n + 1)))
        };
        pairs.push(SamplePair {
            a: find(&m.a)?,
            b: find(&m.b)?,
            y: m.y,
        });
    }
    Ok(PairBatch { pairs })
}
