//! Binary files for models, training summaries, and null distributions.
//!
//! All three formats share the same conventions as the record format:
//! a four-byte magic, a little-endian `u32` version, then fixed-width
//! little-endian fields.
//!
//! ```text
//! model   "OODM": family u8 | flags u8 | d u32 | k_or_q u32
//!                 | block table | theta (n u64, n * f64)
//! summary "OODS": param_len u32 | n_train u64 | mean_log_density f64
//!                 | mean_gradient | fim (mode u8, epsilon f64, xi f64, diag)
//! null    "OODN": kind u8 | model_hash u64 | plan (resample u8, n_datasets
//!                 u64, dataset_size u64, seed u64) | sorted values (n u64, n * f64)
//! ```
//!
//! The model block table lists `(name, len)` for each parameter block so a
//! reader can locate blocks without knowing the family; loaders verify it
//! against the reconstructed model. Null files carry the fingerprint of the
//! model that produced them so stale calibrations are detectable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::calibration::{BootstrapPlan, EmpiricalCdf, Resample};
use crate::error::{Error, Result};
use crate::fim::{DiagonalFim, FimMode};
use crate::models::{
    AnyModel, DiagonalGaussian, GaussianMixture, GenerativeModel, ProbabilisticPca,
};
use crate::stats::{StatisticKind, TrainingSummary};

const MODEL_MAGIC: &[u8; 4] = b"OODM";
const SUMMARY_MAGIC: &[u8; 4] = b"OODS";
const NULL_MAGIC: &[u8; 4] = b"OODN";
const VERSION: u32 = 1;

const FAMILY_GAUSSIAN: u8 = 0;
const FAMILY_GMM: u8 = 1;
const FAMILY_PPCA: u8 = 2;
/// Gaussian: mean-only parameterization. PPCA: degenerate fit.
const FLAG_VARIANT: u8 = 1;

fn check_header(input: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    input
        .read_exact(&mut got)
        .map_err(|_| Error::Format("file shorter than its magic number".into()))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {got:?}, expected {magic:?}"
        )));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    Ok(())
}

fn write_header(out: &mut impl Write, magic: &[u8; 4]) -> Result<()> {
    out.write_all(magic)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    Ok(())
}

fn write_f64_slice(out: &mut impl Write, values: &[f64]) -> Result<()> {
    out.write_u64::<LittleEndian>(values.len() as u64)?;
    for v in values {
        out.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_f64_slice(input: &mut impl Read, what: &str) -> Result<Vec<f64>> {
    let n = input.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = input.read_f64::<LittleEndian>()?;
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite {what} entry {v}")));
        }
        out.push(v);
    }
    Ok(out)
}

/// Serializes a model to bytes; the unit the fingerprint is computed over.
pub fn model_to_bytes(model: &AnyModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out, MODEL_MAGIC)?;
    let (family, flags, k_or_q) = match model {
        AnyModel::Gaussian(g) => (
            FAMILY_GAUSSIAN,
            if g.is_mean_only() { FLAG_VARIANT } else { 0 },
            0u32,
        ),
        AnyModel::Mixture(m) => (FAMILY_GMM, 0, m.n_components() as u32),
        AnyModel::Pca(p) => (
            FAMILY_PPCA,
            if p.is_degenerate() { FLAG_VARIANT } else { 0 },
            p.latent_dim() as u32,
        ),
    };
    out.write_u8(family)?;
    out.write_u8(flags)?;
    out.write_u32::<LittleEndian>(model.data_dim() as u32)?;
    out.write_u32::<LittleEndian>(k_or_q)?;

    let layout = model.layout();
    out.write_u32::<LittleEndian>(layout.blocks().len() as u32)?;
    for block in layout.blocks() {
        let name = block.name.as_bytes();
        out.write_u32::<LittleEndian>(name.len() as u32)?;
        out.write_all(name)?;
        out.write_u64::<LittleEndian>(block.len as u64)?;
    }
    write_f64_slice(&mut out, &model.parameters().values)?;
    Ok(out)
}

/// Reconstructs a model from bytes produced by [`model_to_bytes`].
pub fn model_from_bytes(bytes: &[u8]) -> Result<AnyModel> {
    let mut input = bytes;
    check_header(&mut input, MODEL_MAGIC)?;
    let family = input.read_u8()?;
    let flags = input.read_u8()?;
    let d = input.read_u32::<LittleEndian>()? as usize;
    let k_or_q = input.read_u32::<LittleEndian>()? as usize;

    let n_blocks = input.read_u32::<LittleEndian>()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = input.read_u32::<LittleEndian>()? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("implausible block name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("block name is not valid UTF-8".into()))?;
        let len = input.read_u64::<LittleEndian>()? as usize;
        blocks.push((name, len));
    }
    let theta = read_f64_slice(&mut input, "parameter")?;

    let model = match family {
        FAMILY_GAUSSIAN => {
            let mean_only = flags & FLAG_VARIANT != 0;
            if mean_only {
                if theta.len() != d {
                    return Err(Error::Format(format!(
                        "mean-only gaussian expects {d} parameters, file has {}",
                        theta.len()
                    )));
                }
                AnyModel::Gaussian(DiagonalGaussian::new_mean_only(theta)?)
            } else {
                if theta.len() != 2 * d {
                    return Err(Error::Format(format!(
                        "gaussian expects {} parameters, file has {}",
                        2 * d,
                        theta.len()
                    )));
                }
                AnyModel::Gaussian(DiagonalGaussian::new(
                    theta[..d].to_vec(),
                    theta[d..].to_vec(),
                )?)
            }
        }
        FAMILY_GMM => {
            let k = k_or_q;
            if theta.len() != k + 2 * k * d {
                return Err(Error::Format(format!(
                    "mixture expects {} parameters, file has {}",
                    k + 2 * k * d,
                    theta.len()
                )));
            }
            AnyModel::Mixture(GaussianMixture::new(
                theta[..k].to_vec(),
                theta[k..k + k * d].to_vec(),
                theta[k + k * d..].to_vec(),
                d,
            )?)
        }
        FAMILY_PPCA => {
            let q = k_or_q;
            if theta.len() != d + d * q + 1 {
                return Err(Error::Format(format!(
                    "ppca expects {} parameters, file has {}",
                    d + d * q + 1,
                    theta.len()
                )));
            }
            let mut model = ProbabilisticPca::new(
                theta[..d].to_vec(),
                theta[d..d + d * q].to_vec(),
                q,
                theta[d + d * q],
            )?;
            model.set_degenerate(flags & FLAG_VARIANT != 0);
            AnyModel::Pca(model)
        }
        other => {
            return Err(Error::Format(format!("unknown model family tag {other}")));
        }
    };

    // The stored block table must describe the reconstructed model.
    let expected: Vec<(String, usize)> = model
        .layout()
        .blocks()
        .iter()
        .map(|b| (b.name.clone(), b.len))
        .collect();
    if blocks != expected {
        return Err(Error::Format(format!(
            "block table {blocks:?} does not match the {} layout",
            model.family()
        )));
    }
    Ok(model)
}

/// Writes a model file.
pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Reads a model file.
pub fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = std::fs::read(path)?;
    model_from_bytes(&bytes)
}

/// FNV-1a fingerprint of a model's serialized bytes.
pub fn model_fingerprint(model: &AnyModel) -> Result<u64> {
    let bytes = model_to_bytes(model)?;
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    Ok(hash)
}

/// Writes a training summary file.
pub fn save_summary(path: &Path, summary: &TrainingSummary) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, SUMMARY_MAGIC)?;
    out.write_u32::<LittleEndian>(summary.param_len() as u32)?;
    out.write_u64::<LittleEndian>(summary.n_train)?;
    out.write_f64::<LittleEndian>(summary.mean_log_density)?;
    write_f64_slice(&mut out, &summary.mean_gradient)?;
    match summary.fim.mode() {
        FimMode::Identity => out.write_u8(1)?,
        FimMode::Diagonal => out.write_u8(0)?,
    }
    out.write_f64::<LittleEndian>(summary.fim.epsilon())?;
    out.write_f64::<LittleEndian>(summary.fim.xi())?;
    if summary.fim.mode() == FimMode::Diagonal {
        write_f64_slice(&mut out, summary.fim.diagonal())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a training summary file.
pub fn load_summary(path: &Path) -> Result<TrainingSummary> {
    let mut input = BufReader::new(File::open(path)?);
    check_header(&mut input, SUMMARY_MAGIC)?;
    let param_len = input.read_u32::<LittleEndian>()? as usize;
    let n_train = input.read_u64::<LittleEndian>()?;
    let mean_log_density = input.read_f64::<LittleEndian>()?;
    let mean_gradient = read_f64_slice(&mut input, "mean gradient")?;
    if mean_gradient.len() != param_len {
        return Err(Error::Format(format!(
            "summary declares {param_len} parameters but stores {}",
            mean_gradient.len()
        )));
    }
    let mode = input.read_u8()?;
    let epsilon = input.read_f64::<LittleEndian>()?;
    let xi = input.read_f64::<LittleEndian>()?;
    let fim = match mode {
        1 => DiagonalFim::identity(param_len),
        0 => {
            let diag = read_f64_slice(&mut input, "fisher diagonal")?;
            if diag.len() != param_len {
                return Err(Error::Format(format!(
                    "fisher diagonal length {} does not match {param_len} parameters",
                    diag.len()
                )));
            }
            DiagonalFim::new(diag, epsilon, xi)?
        }
        other => return Err(Error::Format(format!("unknown information mode {other}"))),
    };
    TrainingSummary::new(n_train, mean_log_density, mean_gradient, fim)
}

/// A null distribution with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct NullFile {
    pub kind: StatisticKind,
    pub model_hash: u64,
    pub plan: BootstrapPlan,
    pub cdf: EmpiricalCdf,
}

fn kind_tag(kind: StatisticKind) -> u8 {
    StatisticKind::ALL
        .iter()
        .position(|k| *k == kind)
        .expect("every kind is listed") as u8
}

fn resample_tag(resample: Resample) -> u8 {
    match resample {
        Resample::PerExample => 0,
        Resample::WithoutReplacement => 1,
        Resample::WithReplacement => 2,
    }
}

/// Writes a null distribution file.
pub fn save_null(path: &Path, null: &NullFile) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, NULL_MAGIC)?;
    out.write_u8(kind_tag(null.kind))?;
    out.write_u64::<LittleEndian>(null.model_hash)?;
    out.write_u8(resample_tag(null.plan.resample))?;
    out.write_u64::<LittleEndian>(null.plan.n_datasets as u64)?;
    out.write_u64::<LittleEndian>(null.plan.dataset_size as u64)?;
    out.write_u64::<LittleEndian>(null.plan.seed)?;
    write_f64_slice(&mut out, null.cdf.values())?;
    out.flush()?;
    Ok(())
}

/// Reads a null distribution file.
pub fn load_null(path: &Path) -> Result<NullFile> {
    let mut input = BufReader::new(File::open(path)?);
    check_header(&mut input, NULL_MAGIC)?;
    let kind_idx = input.read_u8()? as usize;
    let kind = *StatisticKind::ALL
        .get(kind_idx)
        .ok_or_else(|| Error::Format(format!("unknown statistic tag {kind_idx}")))?;
    let model_hash = input.read_u64::<LittleEndian>()?;
    let resample = match input.read_u8()? {
        0 => Resample::PerExample,
        1 => Resample::WithoutReplacement,
        2 => Resample::WithReplacement,
        other => return Err(Error::Format(format!("unknown resample tag {other}"))),
    };
    let n_datasets = input.read_u64::<LittleEndian>()? as usize;
    let dataset_size = input.read_u64::<LittleEndian>()? as usize;
    let seed = input.read_u64::<LittleEndian>()?;
    let values = read_f64_slice(&mut input, "null")?;
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Format("null sample is not sorted".into()));
    }
    Ok(NullFile {
        kind,
        model_hash,
        plan: BootstrapPlan {
            resample,
            n_datasets,
            dataset_size,
            seed,
        },
        cdf: EmpiricalCdf::from_values(&values)?,
    })
}
