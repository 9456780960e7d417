//! Binary checkpoint holding a network, its optimizer state, and a short
//! caller-chosen tag. Little-endian throughout.
//!
//! Layout: 7-byte magic `RLQNET1`, u32 format version, length-prefixed tag,
//! the architecture descriptor (dimensions, conv specs, head shape, batch
//! norm constants), the optimizer step counter, then f32 blobs in canonical
//! order: trainable tensors, batch norm running statistics, Adam first
//! moments, Adam second moments. Exact length; loading rejects anything
//! truncated, oversized, or non-finite.

use std::path::Path;

use super::adam::AdamState;
use super::qnet::{ConvSpec, DuelingAggregation, QNetwork, QNetworkConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"RLQNET1";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_TAG_LEN: usize = 64;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: QNetwork<f32>,
    pub adam: AdamState<f32>,
    pub tag: String,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if ckpt.tag.len() > MAX_TAG_LEN {
        return Err(Error::Input(format!(
            "checkpoint tag {} bytes long, limit {}",
            ckpt.tag.len(),
            MAX_TAG_LEN
        )));
    }
    let cfg = ckpt.net.config();
    let trainable = ckpt.net.trainable();
    if ckpt.adam.m.len() != trainable.len() {
        return Err(Error::Dimension(format!(
            "optimizer tracks {} tensors, network has {}",
            ckpt.adam.m.len(),
            trainable.len()
        )));
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, ckpt.tag.len() as u32);
    out.extend_from_slice(ckpt.tag.as_bytes());
    put_u32(&mut out, cfg.input_h as u32);
    put_u32(&mut out, cfg.input_w as u32);
    put_u32(&mut out, cfg.in_channels as u32);
    put_u32(&mut out, cfg.convs.len() as u32);
    for c in &cfg.convs {
        put_u32(&mut out, c.filters as u32);
        put_u32(&mut out, c.kernel as u32);
        put_u32(&mut out, c.stride as u32);
    }
    put_u32(&mut out, cfg.fc_units as u32);
    put_u32(&mut out, cfg.n_actions as u32);
    put_u32(&mut out, cfg.dueling as u32);
    put_u32(
        &mut out,
        match cfg.aggregation {
            DuelingAggregation::BroadcastSum => 0,
            DuelingAggregation::MeanCentered => 1,
        },
    );
    out.extend_from_slice(&cfg.bn_momentum.to_le_bytes());
    out.extend_from_slice(&cfg.bn_eps.to_le_bytes());
    out.extend_from_slice(&ckpt.adam.t.to_le_bytes());

    for t in &trainable {
        put_f32s(&mut out, t);
    }
    for t in &ckpt.net.running_stats() {
        put_f32s(&mut out, t);
    }
    for t in &ckpt.adam.m {
        put_f32s(&mut out, t);
    }
    for t in &ckpt.adam.v {
        put_f32s(&mut out, t);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(7)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
    }
    let tag_len = r.u32()? as usize;
    if tag_len > MAX_TAG_LEN {
        return Err(Error::Format(format!("tag length {} exceeds limit", tag_len)));
    }
    let tag = std::str::from_utf8(r.take(tag_len)?)
        .map_err(|_| Error::Format("tag is not valid UTF-8".into()))?
        .to_string();

    let input_h = r.u32()? as usize;
    let input_w = r.u32()? as usize;
    let in_channels = r.u32()? as usize;
    let n_convs = r.u32()? as usize;
    if n_convs > 16 {
        return Err(Error::Format(format!("{} conv layers exceeds limit", n_convs)));
    }
    let mut convs = Vec::with_capacity(n_convs);
    for _ in 0..n_convs {
        convs.push(ConvSpec {
            filters: r.u32()? as usize,
            kernel: r.u32()? as usize,
            stride: r.u32()? as usize,
        });
    }
    let fc_units = r.u32()? as usize;
    let n_actions = r.u32()? as usize;
    let dueling = match r.u32()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("dueling flag {} not 0 or 1", v))),
    };
    let aggregation = match r.u32()? {
        0 => DuelingAggregation::BroadcastSum,
        1 => DuelingAggregation::MeanCentered,
        v => return Err(Error::Format(format!("unknown aggregation code {}", v))),
    };
    let bn_momentum = r.f64()?;
    let bn_eps = r.f64()?;
    let adam_t = r.u64()?;

    let cfg = QNetworkConfig {
        input_h,
        input_w,
        in_channels,
        convs,
        fc_units,
        n_actions,
        dueling,
        aggregation,
        bn_momentum,
        bn_eps,
    };
    cfg.validate()
        .map_err(|e| Error::Format(format!("checkpoint descriptor invalid: {}", e)))?;

    let mut net = QNetwork::<f32>::new(cfg, 0)?;
    for dst in net.trainable_mut() {
        r.f32_into(dst)?;
    }
    for dst in net.running_stats_mut() {
        r.f32_into(dst)?;
    }
    let lens: Vec<usize> = net.trainable().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::<f32>::new(&lens);
    adam.t = adam_t;
    for dst in &mut adam.m {
        r.f32_into(dst)?;
    }
    for dst in &mut adam.v {
        r.f32_into(dst)?;
    }
    r.finished()?;
    Ok(Checkpoint { net, adam, tag })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    out.reserve(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32_into(&mut self, dst: &mut [f32]) -> Result<()> {
        let bytes = self.take(dst.len() * 4)?;
        for (i, v) in dst.iter_mut().enumerate() {
            *v = f32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::Format("non-finite value in checkpoint".into()));
            }
        }
        Ok(())
    }

    fn finished(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
