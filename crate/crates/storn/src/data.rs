//! Dataset ingestion, batching, standardization, splits, and synthetic
//! benchmark generators with analytic oracles.
//!
//! Two text formats are supported (see the README for the grammar):
//!
//! * Event sequences: one sequence per line, steps separated by `;`, sorted
//!   integer events separated by `,` within a step, expanded to binary
//!   vectors over a declared channel range. Blank lines are ignored.
//! * Real sequences: a CSV table with a `seq_id` column followed by one
//!   numeric column per channel; rows group by id in order of first
//!   appearance.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Likelihood, Recognition, StornModel};
use crate::rnn::{RnnParams, SequenceBatch, Transfer};
use crate::seed::stream_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Binary,
    Real,
}

/// Per-channel standardization statistics (population moments of the split
/// they were computed on). Constant channels get a std floor of 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

/// A list of variable-length sequences with a common feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<Tensor>,
    pub kind: FeatureKind,
    /// Present iff the data is real-valued and standardization was applied.
    pub standardization: Option<ChannelStats>,
}

impl Dataset {
    pub fn new(sequences: Vec<Tensor>, kind: FeatureKind) -> Result<Dataset> {
        if sequences.is_empty() {
            return Err(Error::validation("dataset has no sequences"));
        }
        let (_, k) = sequences[0].dims2()?;
        for (i, s) in sequences.iter().enumerate() {
            let (_, ki) = s.dims2()?;
            if ki != k {
                return Err(Error::validation(format!(
                    "sequence {i} has {ki} channels, expected {k}"
                )));
            }
            if kind == FeatureKind::Binary {
                if let Some(v) = s.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::validation(format!(
                        "binary dataset contains non-binary value {v} in sequence {i}"
                    )));
                }
            }
        }
        Ok(Dataset {
            sequences,
            kind,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn features(&self) -> usize {
        self.sequences[0].shape()[1]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let seqs = indices
            .iter()
            .map(|&i| {
                self.sequences
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("sequence index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            sequences: seqs,
            kind: self.kind,
            standardization: self.standardization.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Event-sequence format.
// ---------------------------------------------------------------------------

/// Reads line-delimited event sequences, expanding events into binary
/// vectors over `channels` channels.
pub fn load_event_sequences(path: &Path, channels: usize) -> Result<Dataset> {
    if channels == 0 {
        return Err(Error::invalid("channel range must be positive"));
    }
    let file = std::fs::File::open(path).map_err(|e| {
        Error::config(format!("cannot open {}: {e}", path.display()))
    })?;
    let reader = BufReader::new(file);
    let mut sequences = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let steps: Vec<&str> = line.split(';').collect();
        let mut values = vec![0.0; steps.len() * channels];
        for (t, step) in steps.iter().enumerate() {
            let step = step.trim();
            if step.is_empty() {
                continue;
            }
            for ev in step.split(',') {
                let ev = ev.trim();
                let idx: usize = ev.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    message: format!("bad event `{ev}`"),
                })?;
                if idx >= channels {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        message: format!("event index {idx} outside channel range 0..{channels}"),
                    });
                }
                values[t * channels + idx] = 1.0;
            }
        }
        sequences.push(Tensor::from_vec(vec![steps.len(), channels], values)?);
    }
    if sequences.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "file contains no sequences".into(),
        });
    }
    Dataset::new(sequences, FeatureKind::Binary)
}

/// Extracts the sorted event indices of one binary step vector.
pub fn extract_events(row: &[f64]) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

pub fn write_event_sequences(path: &Path, dataset: &Dataset) -> Result<()> {
    if dataset.kind != FeatureKind::Binary {
        return Err(Error::invalid("event format requires a binary dataset"));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in &dataset.sequences {
        let (t_len, k) = s.dims2()?;
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let events = extract_events(&s.data()[t * k..(t + 1) * k]);
            steps.push(
                events
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        writeln!(out, "{}", steps.join(";"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Real-sequence format.
// ---------------------------------------------------------------------------

/// Reads a CSV table with a `seq_id` column; rows group by id preserving
/// order of first appearance.
pub fn load_real_sequences(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::config(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("seq_id") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "first column must be `seq_id`".into(),
        });
    }
    let channels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if channels.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no channel columns".into(),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<Vec<f64>>> =
        std::collections::HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let id = record
            .get(0)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "missing seq_id".into(),
            })?
            .to_string();
        let mut row = Vec::with_capacity(channels.len());
        for (ci, name) in channels.iter().enumerate() {
            let cell = record.get(ci + 1).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("non-numeric cell `{cell}` in column `{name}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-finite cell in column `{name}`"),
                });
            }
            row.push(v);
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(row);
    }
    if order.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "file contains no sequences".into(),
        });
    }
    let sequences = order
        .iter()
        .map(|id| Tensor::from_rows(&rows[id]))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sequences, FeatureKind::Real)
}

pub fn write_real_sequences(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = dataset.features();
    let mut header = vec!["seq_id".to_string()];
    header.extend((0..k).map(|i| format!("c{i}")));
    w.write_record(&header)?;
    for (i, s) in dataset.sequences.iter().enumerate() {
        let (t_len, _) = s.dims2()?;
        for t in 0..t_len {
            let mut record = vec![i.to_string()];
            record.extend(s.data()[t * k..(t + 1) * k].iter().map(|v| format!("{v:?}")));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-channel population mean and floored std over every timestep.
pub fn compute_standardization(dataset: &Dataset) -> Result<ChannelStats> {
    if dataset.kind != FeatureKind::Real {
        return Err(Error::invalid("standardization applies to real datasets"));
    }
    let k = dataset.features();
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let mut n = 0usize;
    for s in &dataset.sequences {
        let (t_len, _) = s.dims2()?;
        n += t_len;
        for t in 0..t_len {
            for c in 0..k {
                let v = s.data()[t * k + c];
                sum[c] += v;
                sum_sq[c] += v * v;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    Ok(ChannelStats { mean, std })
}

pub fn standardize(dataset: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    if dataset.kind != FeatureKind::Real {
        return Err(Error::invalid("standardization applies to real datasets"));
    }
    let k = dataset.features();
    if stats.mean.len() != k || stats.std.len() != k {
        return Err(Error::invalid("standardization stats have wrong width"));
    }
    let sequences = dataset
        .sequences
        .iter()
        .map(|s| {
            let (t_len, _) = s.dims2()?;
            Tensor::from_vec(
                vec![t_len, k],
                s.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (v - stats.mean[i % k]) / stats.std[i % k])
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        sequences,
        kind: FeatureKind::Real,
        standardization: Some(stats.clone()),
    })
}

pub fn destandardize(dataset: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    let k = dataset.features();
    if stats.mean.len() != k || stats.std.len() != k {
        return Err(Error::invalid("standardization stats have wrong width"));
    }
    let sequences = dataset
        .sequences
        .iter()
        .map(|s| {
            let (t_len, _) = s.dims2()?;
            Tensor::from_vec(
                vec![t_len, k],
                s.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * stats.std[i % k] + stats.mean[i % k])
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        sequences,
        kind: FeatureKind::Real,
        standardization: None,
    })
}

// ---------------------------------------------------------------------------
// Batching and splits.
// ---------------------------------------------------------------------------

/// One padded batch plus the dataset indices of its sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub data: SequenceBatch,
    pub indices: Vec<usize>,
}

pub fn batch_from_indices(dataset: &Dataset, indices: &[usize]) -> Result<Batch> {
    let seqs: Vec<Tensor> = indices
        .iter()
        .map(|&i| dataset.sequences[i].clone())
        .collect();
    Ok(Batch {
        data: SequenceBatch::from_sequences(&seqs)?,
        indices: indices.to_vec(),
    })
}

/// Seeded shuffle, then padded batches; every sequence appears exactly once.
pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = stream_rng(seed, 0);
    indices.shuffle(&mut rng);
    indices
        .chunks(batch_size)
        .map(|chunk| batch_from_indices(dataset, chunk))
        .collect()
}

/// Unshuffled batches in dataset order (for evaluation reports).
pub fn batches_in_order(dataset: &Dataset, batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    indices
        .chunks(batch_size)
        .map(|chunk| batch_from_indices(dataset, chunk))
        .collect()
}

/// Splits by a manifest file (lines `train|val|test <index>`, each sequence
/// assigned exactly once) or, without one, by a seeded shuffle into
/// 80/10/10.
pub fn split_dataset(
    dataset: &Dataset,
    manifest: Option<&Path>,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (train_idx, val_idx, test_idx) = match manifest {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| {
                Error::config(format!("cannot open split manifest {}: {e}", path.display()))
            })?;
            let mut assigned = vec![None::<usize>; dataset.len()]; // split per sequence
            let mut splits: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for (line_no, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.split_whitespace();
                let name = parts.next().unwrap_or("");
                let which = match name {
                    "train" => 0,
                    "val" => 1,
                    "test" => 2,
                    other => {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line: line_no + 1,
                            message: format!("unknown split `{other}`"),
                        })
                    }
                };
                let idx: usize = parts
                    .next()
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        message: "missing sequence index".into(),
                    })?
                    .parse()
                    .map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        message: "bad sequence index".into(),
                    })?;
                if idx >= dataset.len() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        message: format!("index {idx} out of range 0..{}", dataset.len()),
                    });
                }
                if assigned[idx].is_some() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no + 1,
                        message: format!("sequence {idx} assigned twice"),
                    });
                }
                assigned[idx] = Some(which);
                splits[which].push(idx);
            }
            if let Some(missing) = assigned.iter().position(Option::is_none) {
                return Err(Error::config(format!(
                    "split manifest does not assign sequence {missing}"
                )));
            }
            let [t, v, te] = splits;
            (t, v, te)
        }
        None => {
            let mut indices: Vec<usize> = (0..dataset.len()).collect();
            let mut rng = stream_rng(seed, 0);
            indices.shuffle(&mut rng);
            let n = dataset.len();
            let n_val = n / 10;
            let n_test = n / 10;
            let n_train = n - n_val - n_test;
            if n_train == 0 {
                return Err(Error::config("dataset too small to split"));
            }
            let train = indices[..n_train].to_vec();
            let val = indices[n_train..n_train + n_val].to_vec();
            let test = indices[n_train + n_val..].to_vec();
            (train, val, test)
        }
    };
    Ok((
        dataset.subset(&train_idx)?,
        dataset.subset(&val_idx)?,
        dataset.subset(&test_idx)?,
    ))
}

// ---------------------------------------------------------------------------
// Synthetic benchmarks with analytic oracles.
// ---------------------------------------------------------------------------

/// Tightly coupled binary sequences: each step is all-ones with probability
/// one half, else all-zeros, independently over steps.
#[derive(Debug, Clone)]
pub struct CoupledSynth {
    pub dataset: Dataset,
    /// Exact per-step NLL of the true process: ln 2.
    pub true_nll_per_step: f64,
    /// Best per-step NLL of any factorized (per-channel) predictor:
    /// `channels * ln 2`.
    pub factorized_nll_per_step: f64,
}

pub fn synth_coupled_binary(n: usize, t: usize, k: usize, seed: u64) -> Result<CoupledSynth> {
    if k < 2 {
        return Err(Error::invalid("coupled benchmark needs at least 2 channels"));
    }
    if n == 0 || t == 0 {
        return Err(Error::invalid("coupled benchmark needs n >= 1 and t >= 1"));
    }
    let mut sequences = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let mut values = vec![0.0; t * k];
        for step in 0..t {
            if rng.random::<bool>() {
                values[step * k..(step + 1) * k].fill(1.0);
            }
        }
        sequences.push(Tensor::from_vec(vec![t, k], values)?);
    }
    Ok(CoupledSynth {
        dataset: Dataset::new(sequences, FeatureKind::Binary)?,
        true_nll_per_step: std::f64::consts::LN_2,
        factorized_nll_per_step: k as f64 * std::f64::consts::LN_2,
    })
}

/// Scalar linear-Gaussian generative model (identity transfers, one hidden
/// unit, one latent channel): `h_t = w_in x_{t-1} + w_lat z_t + w_rec h_{t-1}
/// + b_hid`, `x_t ~ N(w_out h_t + b_out, sigma_out^2)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearGaussianParams {
    pub w_in: f64,
    pub w_lat: f64,
    pub w_rec: f64,
    pub b_hid: f64,
    pub w_out: f64,
    pub b_out: f64,
    pub sigma_out: f64,
}

impl Default for LinearGaussianParams {
    fn default() -> Self {
        LinearGaussianParams {
            w_in: 0.5,
            w_lat: 0.8,
            w_rec: 0.3,
            b_hid: 0.1,
            w_out: 1.0,
            b_out: 0.0,
            sigma_out: 0.7,
        }
    }
}

impl LinearGaussianParams {
    /// Affine expansion of `x_{1..t}` over the basis `(1, z_1..z_t,
    /// e_1..e_t)`: returns the mean vector and the coefficient matrices for
    /// the latent and output noises.
    fn affine(&self, t: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut mean = vec![0.0; t];
        let mut a = vec![vec![0.0; t]; t];
        let mut b = vec![vec![0.0; t]; t];
        // h and x as (const, z coeffs, e coeffs)
        let mut h_c = 0.0;
        let mut h_z = vec![0.0; t];
        let mut h_e = vec![0.0; t];
        let mut x_c = 0.0;
        let mut x_z = vec![0.0; t];
        let mut x_e = vec![0.0; t];
        for step in 0..t {
            let mut nh_c = self.w_in * x_c + self.w_rec * h_c + self.b_hid;
            let mut nh_z: Vec<f64> = (0..t)
                .map(|j| self.w_in * x_z[j] + self.w_rec * h_z[j])
                .collect();
            let nh_e: Vec<f64> = (0..t)
                .map(|j| self.w_in * x_e[j] + self.w_rec * h_e[j])
                .collect();
            nh_z[step] += self.w_lat;
            let _ = &mut nh_c;
            h_c = nh_c;
            h_z = nh_z;
            h_e = nh_e;
            x_c = self.w_out * h_c + self.b_out;
            x_z = h_z.iter().map(|v| self.w_out * v).collect();
            x_e = h_e.iter().map(|v| self.w_out * v).collect();
            x_e[step] += self.sigma_out;
            mean[step] = x_c;
            a[step].copy_from_slice(&x_z);
            b[step].copy_from_slice(&x_e);
        }
        (mean, a, b)
    }

    /// Mean and covariance of the joint Gaussian over `x_{1..t}`.
    pub fn marginal(&self, t: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (mean, a, b) = self.affine(t);
        let mut cov = vec![vec![0.0; t]; t];
        for i in 0..t {
            for j in 0..t {
                let mut s = 0.0;
                for l in 0..t {
                    s += a[i][l] * a[j][l] + b[i][l] * b[j][l];
                }
                cov[i][j] = s;
            }
        }
        (mean, cov)
    }

    /// Exact marginal negative log-likelihood of one sequence.
    pub fn marginal_nll(&self, x: &[f64]) -> Result<f64> {
        let t = x.len();
        let (mean, cov) = self.marginal(t);
        let chol = cholesky(&cov)?;
        let resid: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let y = solve_lower(&chol, &resid);
        let quad: f64 = y.iter().map(|v| v * v).sum();
        let logdet: f64 = 2.0 * chol.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<f64>();
        Ok(0.5 * (quad + logdet + t as f64 * math::LN_TWO_PI))
    }

    /// Differential entropy of the joint Gaussian: the expected NLL of its
    /// own samples.
    pub fn entropy(&self, t: usize) -> Result<f64> {
        let (_, cov) = self.marginal(t);
        let chol = cholesky(&cov)?;
        let logdet: f64 = 2.0 * chol.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<f64>();
        Ok(0.5 * (t as f64 * (1.0 + math::LN_TWO_PI) + logdet))
    }

    pub fn sample(&self, t: usize, rng: &mut impl Rng) -> Vec<f64> {
        let dist = rand_distr::StandardNormal;
        let mut h = 0.0;
        let mut x_prev = 0.0;
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            let z: f64 = dist.sample(rng);
            let e: f64 = dist.sample(rng);
            h = self.w_in * x_prev + self.w_lat * z + self.w_rec * h + self.b_hid;
            let x = self.w_out * h + self.b_out + self.sigma_out * e;
            out.push(x);
            x_prev = x;
        }
        out
    }

    /// The equivalent STORN model (identity transfers), with a recognition
    /// net pinned to the exact standard-normal prior as proposal.
    pub fn to_storn(&self) -> Result<StornModel> {
        let gen = RnnParams {
            w_in: Tensor::from_vec(vec![1, 1], vec![self.w_in])?,
            w_rec: Tensor::from_vec(vec![1, 1], vec![self.w_rec])?,
            w_out: Tensor::from_vec(vec![1, 1], vec![self.w_out])?,
            b_hid: Tensor::from_vec(vec![1], vec![self.b_hid])?,
            b_out: Tensor::from_vec(vec![1], vec![self.b_out])?,
            f_h: Transfer::Identity,
            f_y: Transfer::Identity,
        };
        // Zero recognition weights with the sigma head biased to
        // sqrt(1 - eps_sigma): after the floor, sigma is exactly 1.
        let head = (1.0 - math::SIGMA_FLOOR).sqrt();
        let recog = RnnParams {
            w_in: Tensor::zeros(vec![1, 1]),
            w_rec: Tensor::zeros(vec![1, 1]),
            w_out: Tensor::zeros(vec![1, 2]),
            b_hid: Tensor::zeros(vec![1]),
            b_out: Tensor::from_vec(vec![2], vec![0.0, head])?,
            f_h: Transfer::Identity,
            f_y: Transfer::Identity,
        };
        StornModel::new(
            gen,
            Tensor::from_vec(vec![1, 1], vec![self.w_lat])?,
            Recognition::Causal(recog),
            1,
            Likelihood::Gaussian { std: self.sigma_out },
        )
    }
}

#[derive(Debug, Clone)]
pub struct LinearGaussianSynth {
    pub dataset: Dataset,
    /// Exact marginal NLL of each sequence under the generating process.
    pub nll_per_sequence: Vec<f64>,
    pub params: LinearGaussianParams,
}

/// Samples sequences from the scalar linear-Gaussian model and attaches the
/// exact marginal NLL oracle. `t` is capped at 6; the oracle assembles the
/// full joint covariance.
pub fn synth_linear_gaussian(
    n: usize,
    t: usize,
    seed: u64,
    params: &LinearGaussianParams,
) -> Result<LinearGaussianSynth> {
    if t == 0 || t > 6 {
        return Err(Error::invalid(format!("sequence length {t} must be in 1..=6")));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one sequence"));
    }
    if params.sigma_out <= 0.0 {
        return Err(Error::invalid("sigma_out must be positive"));
    }
    let mut sequences = Vec::with_capacity(n);
    let mut nll = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let xs = params.sample(t, &mut rng);
        nll.push(params.marginal_nll(&xs)?);
        sequences.push(Tensor::from_vec(vec![t, 1], xs)?);
    }
    Ok(LinearGaussianSynth {
        dataset: Dataset::new(sequences, FeatureKind::Real)?,
        nll_per_sequence: nll,
        params: *params,
    })
}

fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::validation(
                        "covariance is not positive definite",
                    ));
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}
