//! Binary serialization: a flat, named, versioned parameter container, and
//! model checkpoints built on top of it.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "RNNPAR01"
//! count   u32
//! entry*  name_len u32 | name utf-8 | rank u32 | extents u64 * rank
//!         | values f64 * product (row-major)
//! ```
//!
//! Checkpoint layout:
//!
//! ```text
//! magic      8 bytes  "STORNC01"
//! kind       u8       0 = srnn, 1 = storn
//! eps_prob   f64
//! likelihood u8       0 = bernoulli, 1 = gaussian
//! sigma_out  f64      (1.0 placeholder for bernoulli)
//! gen_f_h    u8       transfer tag (0 logistic, 1 tanh, 2 identity)
//! gen_f_y    u8
//! storn only:
//!   latent     u32
//!   recog_mode u8     0 causal, 1 causal-lagged, 2 bidirectional
//!   eps_sigma  f64
//!   recog_f_h  u8
//!   recog_f_y  u8
//! has_norm   u8       standardization stats present
//! container           parameters; with stats, extra `norm.mean` and
//!                     `norm.std` entries
//! ```
//!
//! Writing the same model twice yields identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::model::{Likelihood, Recognition, RecognitionMode, SrnnModel, StornModel};
use crate::params::ParamSet;
use crate::rnn::{RnnParams, Transfer};
use crate::tensor::Tensor;

pub const PARAM_MAGIC: &[u8; 8] = b"RNNPAR01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STORNC01";

pub fn write_params<W: Write>(mut w: W, params: &ParamSet) -> Result<()> {
    w.write_all(PARAM_MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &e in tensor.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PARAM_MAGIC {
        return Err(Error::Format(format!(
            "bad parameter container magic {magic:?}"
        )));
    }
    let count = read_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("parameter name length {name_len} too large")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        if n > (1 << 28) {
            return Err(Error::Format(format!("tensor of {n} values too large")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(read_f64(&mut r)?);
        }
        params.push(name, Tensor::from_vec(shape, data)?);
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ModelKind {
    Storn(StornModel),
    Srnn(SrnnModel),
}

impl ModelKind {
    pub fn input_dim(&self) -> usize {
        match self {
            ModelKind::Storn(m) => m.input_dim(),
            ModelKind::Srnn(m) => m.input_dim(),
        }
    }

    pub fn likelihood(&self) -> Likelihood {
        match self {
            ModelKind::Storn(m) => m.likelihood,
            ModelKind::Srnn(m) => m.likelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelKind,
    /// Standardization of the training split, needed to evaluate real data
    /// on the model's scale.
    pub standardization: Option<ChannelStats>,
}

fn transfer_tag(t: Transfer) -> u8 {
    match t {
        Transfer::Logistic => 0,
        Transfer::Tanh => 1,
        Transfer::Identity => 2,
    }
}

fn transfer_from_tag(tag: u8) -> Result<Transfer> {
    match tag {
        0 => Ok(Transfer::Logistic),
        1 => Ok(Transfer::Tanh),
        2 => Ok(Transfer::Identity),
        other => Err(Error::Format(format!("unknown transfer tag {other}"))),
    }
}

fn likelihood_tag(l: Likelihood) -> (u8, f64) {
    match l {
        Likelihood::Bernoulli => (0, 1.0),
        Likelihood::Gaussian { std } => (1, std),
    }
}

fn mode_tag(m: RecognitionMode) -> u8 {
    match m {
        RecognitionMode::Causal => 0,
        RecognitionMode::CausalLagged => 1,
        RecognitionMode::Bidirectional => 2,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let mut params;
    match &ckpt.model {
        ModelKind::Srnn(m) => {
            w.write_all(&[0u8])?;
            w.write_all(&m.eps_prob.to_le_bytes())?;
            let (tag, sigma) = likelihood_tag(m.likelihood);
            w.write_all(&[tag])?;
            w.write_all(&sigma.to_le_bytes())?;
            w.write_all(&[transfer_tag(m.params.f_h), transfer_tag(m.params.f_y)])?;
            params = m.to_params();
        }
        ModelKind::Storn(m) => {
            w.write_all(&[1u8])?;
            w.write_all(&m.eps_prob.to_le_bytes())?;
            let (tag, sigma) = likelihood_tag(m.likelihood);
            w.write_all(&[tag])?;
            w.write_all(&sigma.to_le_bytes())?;
            w.write_all(&[transfer_tag(m.gen.f_h), transfer_tag(m.gen.f_y)])?;
            w.write_all(&(m.latent_dim as u32).to_le_bytes())?;
            w.write_all(&[mode_tag(m.recog.mode())])?;
            w.write_all(&m.eps_sigma.to_le_bytes())?;
            let (r_f_h, r_f_y) = match &m.recog {
                Recognition::Causal(p) | Recognition::CausalLagged(p) => (p.f_h, p.f_y),
                Recognition::Bidirectional { fwd, .. } => (fwd.f_h, fwd.f_y),
            };
            w.write_all(&[transfer_tag(r_f_h), transfer_tag(r_f_y)])?;
            params = m.to_params();
        }
    }
    match &ckpt.standardization {
        None => w.write_all(&[0u8])?,
        Some(stats) => {
            w.write_all(&[1u8])?;
            params.push("norm.mean", Tensor::from_vec(vec![stats.mean.len()], stats.mean.clone())?);
            params.push("norm.std", Tensor::from_vec(vec![stats.std.len()], stats.std.clone())?);
        }
    }
    write_params(&mut w, &params)?;
    w.flush()?;
    Ok(())
}

fn rnn_from_params(params: &ParamSet, prefix: &str, f_h: Transfer, f_y: Transfer) -> Result<RnnParams> {
    Ok(RnnParams {
        w_in: params.take(&format!("{prefix}.w_in"))?,
        w_rec: params.take(&format!("{prefix}.w_rec"))?,
        w_out: params.take(&format!("{prefix}.w_out"))?,
        b_hid: params.take(&format!("{prefix}.b_hid"))?,
        b_out: params.take(&format!("{prefix}.b_out"))?,
        f_h,
        f_y,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
        Error::config(format!("cannot open checkpoint {}: {e}", path.display()))
    })?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let kind = read_u8(&mut r)?;
    let eps_prob = read_f64(&mut r)?;
    let like_tag = read_u8(&mut r)?;
    let sigma_out = read_f64(&mut r)?;
    let likelihood = match like_tag {
        0 => Likelihood::Bernoulli,
        1 => Likelihood::Gaussian { std: sigma_out },
        other => return Err(Error::Format(format!("unknown likelihood tag {other}"))),
    };
    let gen_f_h = transfer_from_tag(read_u8(&mut r)?)?;
    let gen_f_y = transfer_from_tag(read_u8(&mut r)?)?;

    let storn_header = if kind == 1 {
        let latent = read_u32(&mut r)? as usize;
        let mode = read_u8(&mut r)?;
        let eps_sigma = read_f64(&mut r)?;
        let r_f_h = transfer_from_tag(read_u8(&mut r)?)?;
        let r_f_y = transfer_from_tag(read_u8(&mut r)?)?;
        Some((latent, mode, eps_sigma, r_f_h, r_f_y))
    } else if kind == 0 {
        None
    } else {
        return Err(Error::Format(format!("unknown model kind {kind}")));
    };

    let has_norm = read_u8(&mut r)? == 1;
    let params = read_params(&mut r)?;
    let standardization = if has_norm {
        Some(ChannelStats {
            mean: params.take("norm.mean")?.data().to_vec(),
            std: params.take("norm.std")?.data().to_vec(),
        })
    } else {
        None
    };

    let model = match storn_header {
        None => {
            let mut m = SrnnModel::new(
                rnn_from_params(&params, "gen", gen_f_h, gen_f_y)?,
                likelihood,
            )?;
            m.eps_prob = eps_prob;
            m.validate()?;
            ModelKind::Srnn(m)
        }
        Some((latent, mode, eps_sigma, r_f_h, r_f_y)) => {
            let recog = match mode {
                0 => Recognition::Causal(rnn_from_params(&params, "recog", r_f_h, r_f_y)?),
                1 => Recognition::CausalLagged(rnn_from_params(&params, "recog", r_f_h, r_f_y)?),
                2 => Recognition::Bidirectional {
                    fwd: rnn_from_params(&params, "recog.fwd", r_f_h, r_f_y)?,
                    bwd: rnn_from_params(&params, "recog.bwd", r_f_h, r_f_y)?,
                },
                other => return Err(Error::Format(format!("unknown recognition mode tag {other}"))),
            };
            let mut m = StornModel::new(
                rnn_from_params(&params, "gen", gen_f_h, gen_f_y)?,
                params.take("gen.w_lat")?,
                recog,
                latent,
                likelihood,
            )?;
            m.eps_prob = eps_prob;
            m.eps_sigma = eps_sigma;
            m.validate()?;
            ModelKind::Storn(m)
        }
    };
    Ok(Checkpoint {
        model,
        standardization,
    })
}
