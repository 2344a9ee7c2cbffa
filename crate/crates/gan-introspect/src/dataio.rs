//! Synthetic multi-domain feature data, per-domain normalization, the
//! log-F0 conversion transform, and the AMAT/FSEQ binary containers.
//!
//! The synthetic generator stands in for speech corpora: each domain is a
//! stationary process with its own per-dimension means and scales, its own
//! temporal correlation, and its own cross-dimension mixing, so domains stay
//! separable before normalization (through the means) and after it (through
//! the correlation structure).

use std::io::{Read, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svcca::ActivationMatrix;

/// One Q x T acoustic feature image with its domain code.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub q: usize,
    pub t: usize,
    /// Row-major q x t payload.
    pub data: Vec<f64>,
    pub domain: usize,
    pub id: String,
}

impl FeatureSequence {
    pub fn validate(&self) -> Result<()> {
        if self.q < 4 || self.t < 4 {
            return Err(Error::InvalidData(format!(
                "feature sequence {} must be at least 4x4, got {}x{}",
                self.id, self.q, self.t
            )));
        }
        if self.data.len() != self.q * self.t {
            return Err(Error::InvalidData(format!(
                "feature sequence {}: {} values for {}x{}",
                self.id,
                self.data.len(),
                self.q,
                self.t
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "feature sequence {} contains non-finite entries",
                self.id
            )));
        }
        Ok(())
    }
}

/// Per-domain feature statistics plus log-F0 statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats {
    /// Per domain, per feature dimension.
    pub feature_mean: Vec<Vec<f64>>,
    pub feature_std: Vec<Vec<f64>>,
    pub logf0_mean: Vec<f64>,
    pub logf0_std: Vec<f64>,
}

/// A bag of sequences over a fixed feature dimension and domain count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub q: usize,
    pub n_domains: usize,
    pub sequences: Vec<FeatureSequence>,
}

impl Dataset {
    /// Indices of the sequences belonging to one domain, in dataset order.
    pub fn domain_indices(&self, domain: usize) -> Vec<usize> {
        self.sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.domain == domain)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::ConfigError("dataset needs at least 2 domains".into()));
        }
        for s in &self.sequences {
            s.validate()?;
            if s.q != self.q {
                return Err(Error::ShapeMismatch(format!(
                    "sequence {} has q {}, dataset has {}",
                    s.id, s.q, self.q
                )));
            }
            if s.domain >= self.n_domains {
                return Err(Error::UnknownDomain(s.domain));
            }
        }
        for d in 0..self.n_domains {
            if self.domain_indices(d).is_empty() {
                return Err(Error::ConfigError(format!("domain {} has no sequences", d)));
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_domains: usize,
    pub sentences_per_domain: usize,
    pub q: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_domains: 4,
            sentences_per_domain: 20,
            q: 36,
            t_min: 80,
            t_max: 160,
            seed: 1234,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::ConfigError("n_domains must be >= 2".into()));
        }
        if self.sentences_per_domain == 0 {
            return Err(Error::ConfigError("sentences_per_domain must be >= 1".into()));
        }
        if self.q < 4 {
            return Err(Error::ConfigError("q must be >= 4".into()));
        }
        if self.t_min < 4 || self.t_max < self.t_min {
            return Err(Error::ConfigError(format!(
                "invalid t range [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }
}

struct DomainProcess {
    mean: Vec<f64>,
    scale: Vec<f64>,
    ar: f64,
    /// Row-normalized Q x Q mixing matrix applied to the innovations.
    mixing: Vec<f64>,
    logf0_mean: f64,
    logf0_std: f64,
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_domain_process(q: usize, rng: &mut ChaCha8Rng) -> DomainProcess {
    let mean: Vec<f64> = (0..q).map(|_| 1.5 * std_normal(rng)).collect();
    let scale: Vec<f64> = (0..q).map(|_| (0.4 * std_normal(rng)).exp()).collect();
    let ar: f64 = rng.random_range(0.3..0.9);
    let mut mixing = vec![0.0f64; q * q];
    let spread = 0.35 / (q as f64).sqrt();
    for r in 0..q {
        for c in 0..q {
            mixing[r * q + c] =
                if r == c { 1.0 } else { 0.0 } + spread * std_normal(rng);
        }
        let norm: f64 = mixing[r * q..(r + 1) * q]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        mixing[r * q..(r + 1) * q].iter_mut().for_each(|v| *v /= norm);
    }
    let logf0_mean = rng.random_range(4.5..5.5);
    let logf0_std = rng.random_range(0.1..0.3);
    DomainProcess {
        mean,
        scale,
        ar,
        mixing,
        logf0_mean,
        logf0_std,
    }
}

/// Deterministically synthesize a separable multi-domain dataset together
/// with its per-domain statistics.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(Dataset, DomainStats)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = cfg.q;
    let processes: Vec<DomainProcess> = (0..cfg.n_domains)
        .map(|_| draw_domain_process(q, &mut rng))
        .collect();

    let mut sequences = Vec::with_capacity(cfg.n_domains * cfg.sentences_per_domain);
    let mut eps = vec![0.0f64; q];
    for (d, proc) in processes.iter().enumerate() {
        for s in 0..cfg.sentences_per_domain {
            let t = rng.random_range(cfg.t_min..=cfg.t_max);
            let mut data = vec![0.0f64; q * t];
            let mut state = vec![0.0f64; q];
            // stationary start: unit-variance mixed noise
            for e in eps.iter_mut() {
                *e = std_normal(&mut rng);
            }
            for (r, st) in state.iter_mut().enumerate() {
                *st = proc.mixing[r * q..(r + 1) * q]
                    .iter()
                    .zip(&eps)
                    .map(|(m, e)| m * e)
                    .sum();
            }
            let innov = (1.0 - proc.ar * proc.ar).sqrt();
            for ti in 0..t {
                if ti > 0 {
                    for e in eps.iter_mut() {
                        *e = std_normal(&mut rng);
                    }
                    for (r, st) in state.iter_mut().enumerate() {
                        let mixed: f64 = proc.mixing[r * q..(r + 1) * q]
                            .iter()
                            .zip(&eps)
                            .map(|(m, e)| m * e)
                            .sum();
                        *st = proc.ar * *st + innov * mixed;
                    }
                }
                for r in 0..q {
                    data[r * t + ti] = proc.mean[r] + proc.scale[r] * state[r];
                }
            }
            sequences.push(FeatureSequence {
                q,
                t,
                data,
                domain: d,
                id: format!("d{}_s{:03}", d, s),
            });
        }
    }

    let dataset = Dataset {
        q,
        n_domains: cfg.n_domains,
        sequences,
    };
    dataset.validate()?;
    let (feature_mean, feature_std) = compute_feature_stats(&dataset)?;
    let stats = DomainStats {
        feature_mean,
        feature_std,
        logf0_mean: processes.iter().map(|p| p.logf0_mean).collect(),
        logf0_std: processes.iter().map(|p| p.logf0_std).collect(),
    };
    Ok((dataset, stats))
}

/// Per-domain, per-dimension population mean and standard deviation over
/// every frame of every sequence.
pub fn compute_feature_stats(dataset: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    dataset.validate()?;
    let q = dataset.q;
    let mut means = vec![vec![0.0f64; q]; dataset.n_domains];
    let mut stds = vec![vec![0.0f64; q]; dataset.n_domains];
    for d in 0..dataset.n_domains {
        let idxs = dataset.domain_indices(d);
        let mut count = 0usize;
        for &i in &idxs {
            let s = &dataset.sequences[i];
            count += s.t;
            for r in 0..q {
                means[d][r] += s.data[r * s.t..(r + 1) * s.t].iter().sum::<f64>();
            }
        }
        for r in 0..q {
            means[d][r] /= count as f64;
        }
        for &i in &idxs {
            let s = &dataset.sequences[i];
            for r in 0..q {
                let m = means[d][r];
                stds[d][r] += s.data[r * s.t..(r + 1) * s.t]
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>();
            }
        }
        for r in 0..q {
            stds[d][r] = (stds[d][r] / count as f64).sqrt();
        }
    }
    Ok((means, stds))
}

/// Z-score every sequence against its own domain's statistics, in place.
pub fn normalize_per_domain(dataset: &mut Dataset, stats: &DomainStats) -> Result<()> {
    dataset.validate()?;
    if stats.feature_mean.len() != dataset.n_domains {
        return Err(Error::ShapeMismatch("stats cover a different domain count".into()));
    }
    for d in 0..dataset.n_domains {
        for (r, s) in stats.feature_std[d].iter().enumerate() {
            if *s <= 1e-12 {
                return Err(Error::DegenerateStats(format!(
                    "domain {} dimension {} has (near-)zero variance",
                    d, r
                )));
            }
        }
    }
    for s in dataset.sequences.iter_mut() {
        let mean = &stats.feature_mean[s.domain];
        let std = &stats.feature_std[s.domain];
        for r in 0..s.q {
            let (m, sd) = (mean[r], std[r]);
            for v in s.data[r * s.t..(r + 1) * s.t].iter_mut() {
                *v = (*v - m) / sd;
            }
        }
    }
    Ok(())
}

/// Log-F0 Gaussian-normalized transform:
/// `y = (x - mu_src) / sigma_src * sigma_tgt + mu_tgt`.
pub fn convert_logf0(
    logf0: &[f64],
    source_stats: (f64, f64),
    target_stats: (f64, f64),
) -> Result<Vec<f64>> {
    let (mu_s, sd_s) = source_stats;
    let (mu_t, sd_t) = target_stats;
    if sd_s <= 0.0 || !sd_s.is_finite() {
        return Err(Error::DegenerateStats(format!(
            "source log-F0 std must be positive, got {}",
            sd_s
        )));
    }
    if !sd_t.is_finite() || !mu_s.is_finite() || !mu_t.is_finite() {
        return Err(Error::DegenerateStats("non-finite log-F0 statistics".into()));
    }
    Ok(logf0
        .iter()
        .map(|x| (x - mu_s) / sd_s * sd_t + mu_t)
        .collect())
}

// ----------------------------------------------------------------------
// binary containers
// ----------------------------------------------------------------------

const AMAT_MAGIC: &[u8; 4] = b"AMAT";
const FSEQ_MAGIC: &[u8; 4] = b"FSEQ";
const CONTAINER_VERSION: u32 = 1;
const MAX_NAME_LEN: usize = 4096;
const MAX_ROWS: u64 = 1 << 24;
const MAX_COLS: u64 = 1 << 40;

/// AMAT container: magic "AMAT", u32 version, u32 rows, u64 cols,
/// length-prefixed UTF-8 layer name, u64 checkpoint iteration, row-major
/// little-endian f64 payload, trailing CRC32.
pub fn amat_to_bytes(m: &ActivationMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(m.data.len() * 8 + 64);
    buf.extend_from_slice(AMAT_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols as u64).to_le_bytes());
    let name = m.layer_name.as_bytes();
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name);
    buf.extend_from_slice(&m.checkpoint_iteration.to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn amat_from_bytes(bytes: &[u8]) -> Result<ActivationMatrix> {
    let mut cur = checked_body(bytes, AMAT_MAGIC)?;
    let rows = cur.u32()? as u64;
    let cols = cur.u64()?;
    if rows == 0 || rows > MAX_ROWS || cols > MAX_COLS {
        return Err(Error::FormatError(format!(
            "implausible dimensions {}x{}",
            rows, cols
        )));
    }
    let name = cur.name()?;
    let iteration = cur.u64()?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::FormatError("dimension overflow".into()))?;
    cur.expect_exact_remaining(count)?;
    let data = cur.f64_block(count as usize)?;
    let m = ActivationMatrix {
        layer_name: name,
        rows: rows as usize,
        cols: cols as usize,
        data,
        checkpoint_iteration: iteration,
    };
    m.validate()?;
    Ok(m)
}

/// FSEQ container: the AMAT layout with magic "FSEQ", the sequence id in the
/// name slot, and a u32 domain index in place of the checkpoint iteration.
pub fn fseq_to_bytes(s: &FeatureSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(s.data.len() * 8 + 64);
    buf.extend_from_slice(FSEQ_MAGIC);
    buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    buf.extend_from_slice(&(s.q as u32).to_le_bytes());
    buf.extend_from_slice(&(s.t as u64).to_le_bytes());
    let id = s.id.as_bytes();
    buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
    buf.extend_from_slice(id);
    buf.extend_from_slice(&(s.domain as u32).to_le_bytes());
    for v in &s.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn fseq_from_bytes(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut cur = checked_body(bytes, FSEQ_MAGIC)?;
    let q = cur.u32()? as u64;
    let t = cur.u64()?;
    if q == 0 || q > MAX_ROWS || t > MAX_COLS {
        return Err(Error::FormatError(format!("implausible dimensions {}x{}", q, t)));
    }
    let id = cur.name()?;
    let domain = cur.u32()? as usize;
    let count = q
        .checked_mul(t)
        .ok_or_else(|| Error::FormatError("dimension overflow".into()))?;
    cur.expect_exact_remaining(count)?;
    let data = cur.f64_block(count as usize)?;
    let s = FeatureSequence {
        q: q as usize,
        t: t as usize,
        data,
        domain,
        id,
    };
    s.validate()?;
    Ok(s)
}

pub fn write_amat(m: &ActivationMatrix, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&amat_to_bytes(m))?;
    Ok(())
}

pub fn read_amat(path: &Path) -> Result<ActivationMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    amat_from_bytes(&bytes)
}

pub fn write_fseq(s: &FeatureSequence, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&fseq_to_bytes(s))?;
    Ok(())
}

pub fn read_fseq(path: &Path) -> Result<FeatureSequence> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    fseq_from_bytes(&bytes)
}

/// CSV debug dump of an activation matrix: one metadata line then one line
/// per row, every float printed with 17 significant digits.
pub fn amat_to_csv_string(m: &ActivationMatrix) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "layer,rows,cols,iteration\n{},{},{},{}\n",
        m.layer_name, m.rows, m.cols, m.checkpoint_iteration
    ));
    for r in 0..m.rows {
        let row: Vec<String> = m.data[r * m.cols..(r + 1) * m.cols]
            .iter()
            .map(|v| format!("{:.16e}", v))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn amat_from_csv_str(text: &str) -> Result<ActivationMatrix> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::FormatError("empty csv".into()))?;
    if header != "layer,rows,cols,iteration" {
        return Err(Error::FormatError("bad csv header".into()));
    }
    let meta = lines
        .next()
        .ok_or_else(|| Error::FormatError("missing metadata line".into()))?;
    let fields: Vec<&str> = meta.split(',').collect();
    if fields.len() != 4 {
        return Err(Error::FormatError("bad metadata line".into()));
    }
    let rows: usize = fields[1]
        .parse()
        .map_err(|_| Error::FormatError("bad row count".into()))?;
    let cols: usize = fields[2]
        .parse()
        .map_err(|_| Error::FormatError("bad col count".into()))?;
    let iteration: u64 = fields[3]
        .parse()
        .map_err(|_| Error::FormatError("bad iteration".into()))?;
    if rows as u64 > MAX_ROWS || cols as u64 > MAX_COLS {
        return Err(Error::FormatError("implausible dimensions".into()));
    }
    let mut data = Vec::with_capacity(rows.saturating_mul(cols));
    for line in lines.take(rows) {
        for field in line.split(',') {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::FormatError("bad float".into()))?;
            data.push(v);
        }
    }
    let m = ActivationMatrix {
        layer_name: fields[0].to_string(),
        rows,
        cols,
        data,
        checkpoint_iteration: iteration,
    };
    m.validate()?;
    Ok(m)
}

struct ContainerCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn checked_body<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<ContainerCursor<'a>> {
    if bytes.len() < 12 {
        return Err(Error::FormatError("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::FormatError("checksum mismatch".into()));
    }
    let mut cur = ContainerCursor { buf: body, pos: 0 };
    if cur.take(4)? != magic {
        return Err(Error::FormatError("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::FormatError(format!("unsupported version {}", version)));
    }
    Ok(cur)
}

impl<'a> ContainerCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::FormatError("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > MAX_NAME_LEN {
            return Err(Error::FormatError("name too long".into()));
        }
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::FormatError("name not utf-8".into()))
    }

    /// The remaining body must hold exactly `count` f64 values.
    fn expect_exact_remaining(&self, count: u64) -> Result<()> {
        let remaining = (self.buf.len() - self.pos) as u64;
        if remaining != count * 8 {
            return Err(Error::FormatError(format!(
                "payload length {} does not match {} declared values",
                remaining, count
            )));
        }
        Ok(())
    }

    fn f64_block(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
