//! Encoder checkpoints.
//!
//! Layout (little-endian): magic `TADLABCK`, `u32` version, `u8` loss-kind
//! code, `u8` network count, then per network `u64` d_in, d_out, hidden,
//! n_blocks and an `f64` dropout; then each network's parameters and
//! batch-norm running means and variances as `f64`; then `u64` count and
//! `f64` loss parameters; finally a `u64`-prefixed JSON block with the task,
//! loss spec, training config and curve.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::loss::{LossKind, LossSpec};
use super::model::EncoderModel;
use super::network::Network;
use super::train::{EpochRecord, TrainConfig, TrainedEncoder};
use crate::error::{Error, Result};
use crate::pretext::PretextTask;

const MAGIC: &[u8; 8] = b"TADLABCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    task: PretextTask,
    loss: LossSpec,
    config: TrainConfig,
    best_val_loss: f64,
    best_epoch: usize,
    curve: Vec<EpochRecord>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(enc: &TrainedEncoder) -> Result<Vec<u8>> {
    let m = &enc.model;
    let nets: Vec<&Network> = std::iter::once(&m.primary).chain(m.secondary.as_ref()).collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(m.loss.kind.code());
    out.push(nets.len() as u8);
    for n in &nets {
        for v in [n.d_in, n.d_out, n.hidden, n.n_blocks] {
            put_u64(&mut out, v as u64);
        }
        out.extend_from_slice(&n.dropout.to_le_bytes());
    }
    for n in &nets {
        put_f64s(&mut out, n.params.iter());
        put_f64s(&mut out, n.running_mean.iter().flat_map(|a| a.iter()));
        put_f64s(&mut out, n.running_var.iter().flat_map(|a| a.iter()));
    }
    put_u64(&mut out, m.loss_params.len() as u64);
    put_f64s(&mut out, m.loss_params.iter());
    let meta = serde_json::to_vec(&Meta {
        task: m.task.clone(),
        loss: m.loss.clone(),
        config: enc.config.clone(),
        best_val_loss: enc.best_val_loss,
        best_epoch: enc.best_epoch,
        curve: enc.curve.clone(),
    })?;
    put_u64(&mut out, meta.len() as u64);
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::Encoding("checkpoint truncated".into()));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainedEncoder> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(Error::Encoding("not an encoder checkpoint".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Encoding(format!("unsupported checkpoint version {version}")));
    }
    let head = r.take(2)?;
    let kind = LossKind::from_code(head[0])
        .ok_or_else(|| Error::Encoding(format!("unknown loss code {}", head[0])))?;
    let count = head[1] as usize;
    if !(1..=2).contains(&count) {
        return Err(Error::Encoding(format!("bad network count {count}")));
    }
    let mut dims = Vec::new();
    for _ in 0..count {
        let d: Vec<usize> = (0..4).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        dims.push((d, r.f64()?));
    }
    let mut nets = Vec::new();
    for (d, dropout) in dims {
        let mut net = Network::new(d[0], d[1], d[2], d[3], dropout, 0)?;
        net.params = r.f64s(net.n_params())?;
        for b in 0..d[3] {
            net.running_mean[b] = r.f64s(d[2])?.into();
        }
        for b in 0..d[3] {
            net.running_var[b] = r.f64s(d[2])?.into();
        }
        nets.push(net);
    }
    let n_loss = r.u64()? as usize;
    let loss_params = r.f64s(n_loss)?;
    let meta_len = r.u64()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
    if meta.loss.kind != kind {
        return Err(Error::Encoding("loss kind in header and metadata disagree".into()));
    }
    let mut nets = nets.into_iter();
    let primary = nets.next().expect("count >= 1");
    Ok(TrainedEncoder {
        model: EncoderModel {
            task: meta.task,
            loss: meta.loss,
            primary,
            secondary: nets.next(),
            loss_params,
        },
        config: meta.config,
        best_val_loss: meta.best_val_loss,
        best_epoch: meta.best_epoch,
        curve: meta.curve,
    })
}

pub fn write<W: Write>(enc: &TrainedEncoder, mut w: W) -> Result<()> {
    w.write_all(&encode(enc)?)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<TrainedEncoder> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}
