//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `CFNN`, version `u32`, then tagged
//! sections until the end tag. The network section stores layer dims,
//! activation tags and raw `f32` parameters, so save/load round-trips are
//! bit-exact. Denoiser checkpoints append schedule, normalization and
//! metadata sections to the same container.

use std::io::{Read, Write};
use std::path::Path;

use super::adamw::AdamW;
use super::network::{Activation, Dense, Layer, Network, NnError, Residual};

pub const MAGIC: &[u8; 4] = b"CFNN";
pub const VERSION: u32 = 1;

const TAG_END: u8 = 0;
const TAG_NET: u8 = 1;
const TAG_OPT: u8 = 2;
const TAG_SCHED: u8 = 3;
const TAG_SCALE: u8 = 4;
const TAG_META: u8 = 5;

/// Normalization constants carried with a denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBlock {
    pub prior_scale: f64,
    pub data_scale: Vec<f64>,
}

/// Conditioning bounds and identity of a denoiser checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaBlock {
    /// Scenario tag (spawn branch index), 255 when not scenario-bound.
    pub scenario: u8,
    /// One-step student variance; NaN for teacher checkpoints.
    pub beta_hat: f64,
    pub rho_bounds: (f64, f64),
    pub s0_bounds: Vec<(f64, f64)>,
    pub k_embed_dim: u32,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub net: Network,
    pub optimizer: Option<AdamW>,
    pub schedule_betas: Option<Vec<f64>>,
    pub scale: Option<ScaleBlock>,
    pub meta: Option<MetaBlock>,
}

impl Checkpoint {
    pub fn of_net(net: Network) -> Self {
        Checkpoint {
            net,
            optimizer: None,
            schedule_betas: None,
            scale: None,
            meta: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());

        buf.push(TAG_NET);
        write_net(&mut buf, &self.net);
        if let Some(opt) = &self.optimizer {
            buf.push(TAG_OPT);
            write_opt(&mut buf, opt);
        }
        if let Some(betas) = &self.schedule_betas {
            buf.push(TAG_SCHED);
            buf.extend_from_slice(&(betas.len() as u32).to_le_bytes());
            for b in betas {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        }
        if let Some(scale) = &self.scale {
            buf.push(TAG_SCALE);
            buf.extend_from_slice(&scale.prior_scale.to_le_bytes());
            buf.extend_from_slice(&(scale.data_scale.len() as u32).to_le_bytes());
            for v in &scale.data_scale {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(meta) = &self.meta {
            buf.push(TAG_META);
            buf.push(meta.scenario);
            buf.extend_from_slice(&meta.beta_hat.to_le_bytes());
            buf.extend_from_slice(&meta.rho_bounds.0.to_le_bytes());
            buf.extend_from_slice(&meta.rho_bounds.1.to_le_bytes());
            buf.extend_from_slice(&(meta.s0_bounds.len() as u32).to_le_bytes());
            for (lo, hi) in &meta.s0_bounds {
                buf.extend_from_slice(&lo.to_le_bytes());
                buf.extend_from_slice(&hi.to_le_bytes());
            }
            buf.extend_from_slice(&meta.k_embed_dim.to_le_bytes());
        }
        buf.push(TAG_END);

        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, NnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { b: &bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(NnError::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                &magic[..],
                MAGIC
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let mut net = None;
        let mut optimizer = None;
        let mut schedule_betas = None;
        let mut scale = None;
        let mut meta = None;
        loop {
            let tag = r.u8()?;
            match tag {
                TAG_END => break,
                TAG_NET => net = Some(read_net(&mut r)?),
                TAG_OPT => optimizer = Some(read_opt(&mut r)?),
                TAG_SCHED => {
                    let k = r.u32()? as usize;
                    let mut betas = Vec::with_capacity(k);
                    for _ in 0..k {
                        betas.push(r.f64()?);
                    }
                    schedule_betas = Some(betas);
                }
                TAG_SCALE => {
                    let prior_scale = r.f64()?;
                    let n = r.u32()? as usize;
                    let mut data_scale = Vec::with_capacity(n);
                    for _ in 0..n {
                        data_scale.push(r.f64()?);
                    }
                    scale = Some(ScaleBlock {
                        prior_scale,
                        data_scale,
                    });
                }
                TAG_META => {
                    let scenario = r.u8()?;
                    let beta_hat = r.f64()?;
                    let rho_bounds = (r.f64()?, r.f64()?);
                    let n = r.u32()? as usize;
                    let mut s0_bounds = Vec::with_capacity(n);
                    for _ in 0..n {
                        s0_bounds.push((r.f64()?, r.f64()?));
                    }
                    let k_embed_dim = r.u32()?;
                    meta = Some(MetaBlock {
                        scenario,
                        beta_hat,
                        rho_bounds,
                        s0_bounds,
                        k_embed_dim,
                    });
                }
                other => {
                    return Err(NnError::Checkpoint(format!("unknown section tag {other}")))
                }
            }
        }
        let net = net.ok_or_else(|| NnError::Checkpoint("missing network section".into()))?;
        Ok(Checkpoint {
            net,
            optimizer,
            schedule_betas,
            scale,
            meta,
        })
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.b.len() {
            return Err(NnError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, NnError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn write_dense(buf: &mut Vec<u8>, d: &Dense) {
    buf.extend_from_slice(&(d.in_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(d.out_dim as u32).to_le_bytes());
    buf.push(d.act.tag());
    for v in &d.w {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &d.b {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_dense(r: &mut Reader) -> Result<Dense, NnError> {
    let in_dim = r.u32()? as usize;
    let out_dim = r.u32()? as usize;
    let act = Activation::from_tag(r.u8()?)
        .ok_or_else(|| NnError::Checkpoint("bad activation tag".into()))?;
    let mut w = Vec::with_capacity(in_dim * out_dim);
    for _ in 0..in_dim * out_dim {
        w.push(r.f32()?);
    }
    let mut b = Vec::with_capacity(out_dim);
    for _ in 0..out_dim {
        b.push(r.f32()?);
    }
    Ok(Dense {
        in_dim,
        out_dim,
        w,
        b,
        act,
    })
}

fn write_net(buf: &mut Vec<u8>, net: &Network) {
    buf.extend_from_slice(&(net.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(net.output_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for l in &net.layers {
        match l {
            Layer::Dense(d) => {
                buf.push(0);
                write_dense(buf, d);
            }
            Layer::Residual(res) => {
                buf.push(1);
                write_dense(buf, &res.fc1);
                write_dense(buf, &res.fc2);
            }
        }
    }
}

fn read_net(r: &mut Reader) -> Result<Network, NnError> {
    let _input_dim = r.u32()?;
    let _output_dim = r.u32()?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        match r.u8()? {
            0 => layers.push(Layer::Dense(read_dense(r)?)),
            1 => layers.push(Layer::Residual(Residual {
                fc1: read_dense(r)?,
                fc2: read_dense(r)?,
            })),
            other => return Err(NnError::Checkpoint(format!("unknown layer kind {other}"))),
        }
    }
    Network::new(layers).map_err(|e| NnError::Checkpoint(format!("inconsistent dims: {e}")))
}

fn write_opt(buf: &mut Vec<u8>, opt: &AdamW) {
    buf.extend_from_slice(&opt.learning_rate.to_le_bytes());
    buf.extend_from_slice(&opt.weight_decay.to_le_bytes());
    buf.extend_from_slice(&opt.beta1.to_le_bytes());
    buf.extend_from_slice(&opt.beta2.to_le_bytes());
    buf.extend_from_slice(&opt.eps.to_le_bytes());
    buf.extend_from_slice(&opt.step.to_le_bytes());
    buf.extend_from_slice(&(opt.m.len() as u32).to_le_bytes());
    for v in &opt.m {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &opt.v {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_opt(r: &mut Reader) -> Result<AdamW, NnError> {
    let learning_rate = r.f64()?;
    let weight_decay = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let step = r.u64()?;
    let n = r.u32()? as usize;
    let mut m = Vec::with_capacity(n);
    for _ in 0..n {
        m.push(r.f64()?);
    }
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(r.f64()?);
    }
    Ok(AdamW {
        learning_rate,
        weight_decay,
        beta1,
        beta2,
        eps,
        step,
        m,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = stream(31, "ckpt", 0);
        let net = Network::residual_mlp(5, 16, 2, 4, Activation::Identity, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.cfnn");
        let ck = Checkpoint {
            net: net.clone(),
            optimizer: Some(AdamW::new(net.param_count(), 1e-3, 1e-5)),
            schedule_betas: Some(vec![0.1, 0.2, 0.999]),
            scale: Some(ScaleBlock {
                prior_scale: 2.5,
                data_scale: vec![1.0, 1.5, 0.25],
            }),
            meta: Some(MetaBlock {
                scenario: 2,
                beta_hat: f64::NAN,
                rho_bounds: (0.0, 1.0),
                s0_bounds: vec![(-1.0, 1.0); 8],
                k_embed_dim: 32,
            }),
        };
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let a = net.params_vec();
        let b = loaded.net.params_vec();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let x = [0.3, -0.2, 0.9, 0.0, 1.0];
        assert_eq!(net.forward(&x).unwrap(), loaded.net.forward(&x).unwrap());
        assert_eq!(loaded.schedule_betas.unwrap(), vec![0.1, 0.2, 0.999]);
        let meta = loaded.meta.unwrap();
        assert_eq!(meta.scenario, 2);
        assert!(meta.beta_hat.is_nan());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut rng = stream(32, "ckpt-bad", 0);
        let net = Network::residual_mlp(3, 8, 1, 2, Activation::Identity, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.cfnn");
        Checkpoint::of_net(net).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn truncation_is_rejected() {
        let mut rng = stream(33, "ckpt-trunc", 0);
        let net = Network::residual_mlp(3, 8, 1, 2, Activation::Identity, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.cfnn");
        Checkpoint::of_net(net).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
