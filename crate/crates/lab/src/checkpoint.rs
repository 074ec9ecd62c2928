//! `FLTC` checkpoint container.
//!
//! A checkpoint is a versioned header followed by named, typed records:
//!
//! ```text
//! magic    4 bytes "FLTC"
//! version  u16
//! count    u32
//! record*  tag u8 | name_len u16 | name | payload_len u64 | payload
//! ```
//!
//! Payloads: tensors carry their shape and little-endian `f32` data, masks are
//! packed bitsets, random streams store `(seed, stream, word position)`.

use std::path::Path;

use float_core::conditioning::NoisyWeight;
use float_core::model::Network;
use float_core::rng::{Stream, StreamState};
use float_core::training::{Granularity, PruneMask, Trainer, TrainerStreams};
use float_core::Tensor;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result, Stage};

pub const MAGIC: &[u8; 4] = b"FLTC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Tensor(Tensor<f32>),
    Bits(Vec<bool>),
    U64(u64),
    F64(f64),
    Text(String),
    Stream(StreamState),
}

impl Value {
    fn tag(&self) -> u8 {
        match self {
            Self::Tensor(_) => 1,
            Self::Bits(_) => 2,
            Self::U64(_) => 3,
            Self::F64(_) => 4,
            Self::Text(_) => 5,
            Self::Stream(_) => 6,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Tensor(_) => "tensor",
            Self::Bits(_) => "bits",
            Self::U64(_) => "u64",
            Self::F64(_) => "f64",
            Self::Text(_) => "text",
            Self::Stream(_) => "stream",
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Self::Tensor(t) => {
                out.push(t.shape().len() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Self::Bits(bits) => {
                out.extend_from_slice(&(bits.len() as u64).to_le_bytes());
                for chunk in bits.chunks(8) {
                    out.push(chunk.iter().enumerate().fold(0u8, |b, (i, &on)| b | (u8::from(on) << i)));
                }
            }
            Self::U64(v) => out.extend_from_slice(&v.to_le_bytes()),
            Self::F64(v) => out.extend_from_slice(&v.to_le_bytes()),
            Self::Text(s) => out.extend_from_slice(s.as_bytes()),
            Self::Stream(s) => {
                out.extend_from_slice(&s.seed.to_le_bytes());
                out.extend_from_slice(&s.stream.to_le_bytes());
                out.extend_from_slice(&s.word_pos.to_le_bytes());
            }
        }
    }

    fn decode(tag: u8, p: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes: p, pos: 0 };
        let v = match tag {
            1 => {
                let ndim = r.u8()? as usize;
                let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                Self::Tensor(Tensor::new(&shape, data).map_err(|e| LabError::Checkpoint(e.to_string()))?)
            }
            2 => {
                let n = r.u64()? as usize;
                let bytes = r.take(n.div_ceil(8))?;
                Self::Bits((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
            }
            3 => Self::U64(r.u64()?),
            4 => Self::F64(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))),
            5 => Self::Text(String::from_utf8(r.take(p.len())?.to_vec()).map_err(|_| LabError::Checkpoint("text record is not UTF-8".into()))?),
            6 => {
                let seed = r.u64()?;
                let stream = r.u64()?;
                let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
                Self::Stream(StreamState { seed, stream, word_pos })
            }
            t => return Err(LabError::Checkpoint(format!("unknown record tag {t}"))),
        };
        if r.pos != p.len() {
            return Err(LabError::Checkpoint(format!("{} stray bytes in {} record", p.len() - r.pos, v.kind())));
        }
        Ok(v)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| LabError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Ordered named records; names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<(String, Value)>,
}

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, value: Value) {
        let name = name.into();
        debug_assert!(self.get(&name).is_none(), "duplicate record {name}");
        self.records.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    fn need(&self, name: &str) -> Result<&Value> {
        self.get(name).ok_or_else(|| LabError::Checkpoint(format!("missing record {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        match self.need(name)? {
            Value::Tensor(t) => Ok(t),
            v => Err(LabError::Checkpoint(format!("{name} is {}, expected tensor", v.kind()))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.need(name)? {
            Value::U64(v) => Ok(*v),
            v => Err(LabError::Checkpoint(format!("{name} is {}, expected u64", v.kind()))),
        }
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        match self.need(name)? {
            Value::F64(v) => Ok(*v),
            v => Err(LabError::Checkpoint(format!("{name} is {}, expected f64", v.kind()))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.need(name)? {
            Value::Text(v) => Ok(v),
            v => Err(LabError::Checkpoint(format!("{name} is {}, expected text", v.kind()))),
        }
    }

    pub fn bits(&self, name: &str) -> Result<&[bool]> {
        match self.need(name)? {
            Value::Bits(v) => Ok(v),
            v => Err(LabError::Checkpoint(format!("{name} is {}, expected bits", v.kind()))),
        }
    }

    pub fn stream(&self, name: &str) -> Result<StreamState> {
        match self.need(name)? {
            Value::Stream(v) => Ok(*v),
            v => Err(LabError::Checkpoint(format!("{name} is {}, expected stream", v.kind()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        let mut payload = Vec::new();
        for (name, value) in &self.records {
            payload.clear();
            value.encode(&mut payload);
            out.push(value.tag());
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(LabError::Checkpoint("missing FLTC magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(LabError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Self::default();
        for _ in 0..count {
            let tag = r.u8()?;
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| LabError::Checkpoint("record name is not UTF-8".into()))?;
            let plen = usize::try_from(r.u64()?).map_err(|_| LabError::Checkpoint("record too large".into()))?;
            let value = Value::decode(tag, r.take(plen)?)?;
            if ck.get(&name).is_some() {
                return Err(LabError::Checkpoint(format!("duplicate record {name}")));
            }
            ck.records.push((name, value));
        }
        if r.pos != bytes.len() {
            return Err(LabError::Checkpoint("trailing bytes after last record".into()));
        }
        Ok(ck)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| LabError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| LabError::io(path, e))?)
    }
}

fn weight_prefixes(net: &Network<f32>) -> Vec<String> {
    (0..net.convs.len()).map(|i| format!("conv{i}")).chain(std::iter::once("fc".to_string())).collect()
}

fn put_weight(ck: &mut Checkpoint, p: &str, w: &NoisyWeight<f32>) {
    ck.insert(format!("{p}.theta"), Value::Tensor(w.theta.value.clone()));
    ck.insert(format!("{p}.theta.momentum"), Value::Tensor(Tensor::new(w.theta.value.shape(), w.theta.momentum.clone()).expect("same shape")));
    ck.insert(format!("{p}.alpha"), Value::F64(f64::from(w.alpha())));
    ck.insert(format!("{p}.alpha.momentum"), Value::F64(f64::from(w.alpha.momentum[0])));
    if let Some(eta) = w.eta() {
        ck.insert(format!("{p}.eta"), Value::Tensor(Tensor::new(w.theta.value.shape(), eta.to_vec()).expect("same shape")));
    }
    ck.insert(format!("{p}.noise_stream"), Value::Stream(w.stream().state()));
}

fn put_vec(ck: &mut Checkpoint, name: String, v: &[f32]) {
    ck.insert(name, Value::Tensor(Tensor::new(&[v.len()], v.to_vec()).expect("non-empty")));
}

/// Everything needed to resume or evaluate a run.
pub fn save_trainer(cfg: &ExperimentConfig, t: &Trainer<f32>) -> Checkpoint {
    let mut ck = Checkpoint::default();
    let net = &t.net;
    ck.insert("config", Value::Text(cfg.to_json()));
    ck.insert("epoch", Value::U64(t.epoch as u64));
    for (k, v) in [("channels", net.arch.in_channels), ("height", net.arch.height), ("width", net.arch.width), ("classes", net.arch.n_classes)] {
        ck.insert(format!("arch.{k}"), Value::U64(v as u64));
    }
    let s = t.streams();
    ck.insert("stream.data", Value::Stream(s.data));
    ck.insert("stream.attack", Value::Stream(s.attack));
    let prefixes = weight_prefixes(net);
    for (p, w) in prefixes.iter().zip(net.noisy_weights()) {
        put_weight(&mut ck, p, w);
    }
    for (i, layer) in net.convs.iter().enumerate() {
        for (wi, dual) in layer.norms.iter().enumerate() {
            for (branch, bn) in [("clean", &dual.clean), ("adversarial", &dual.adversarial)] {
                let p = format!("conv{i}.bn{wi}.{branch}");
                put_vec(&mut ck, format!("{p}.gamma"), bn.gamma.value.data());
                put_vec(&mut ck, format!("{p}.gamma.momentum"), &bn.gamma.momentum);
                put_vec(&mut ck, format!("{p}.beta"), bn.beta.value.data());
                put_vec(&mut ck, format!("{p}.beta.momentum"), &bn.beta.momentum);
                put_vec(&mut ck, format!("{p}.running_mean"), &bn.running_mean);
                put_vec(&mut ck, format!("{p}.running_var"), &bn.running_var);
            }
        }
    }
    put_vec(&mut ck, "fc.bias".into(), net.fc_bias.value.data());
    put_vec(&mut ck, "fc.bias.momentum".into(), &net.fc_bias.momentum);
    if let Some(m) = &t.mask {
        let g = match m.granularity {
            Granularity::Irregular => "irregular",
            Granularity::Channel => "channel",
        };
        ck.insert("mask.granularity", Value::Text(g.into()));
        ck.insert("mask.density", Value::F64(m.density));
        for (p, layer) in prefixes.iter().zip(&m.layers) {
            ck.insert(format!("mask.{p}"), Value::Bits(layer.clone()));
        }
    }
    ck
}

fn copy_into(dst: &mut [f32], src: &Tensor<f32>, name: &str, shape: &[usize]) -> Result<()> {
    if src.shape() != shape {
        return Err(LabError::Checkpoint(format!("{name} has shape {:?}, expected {:?}", src.shape(), shape)));
    }
    dst.copy_from_slice(src.data());
    Ok(())
}

fn read_vec(ck: &Checkpoint, name: &str, dst: &mut [f32]) -> Result<()> {
    let n = dst.len();
    copy_into(dst, ck.tensor(name)?, name, &[n])
}

fn read_weight(ck: &Checkpoint, p: &str, w: &mut NoisyWeight<f32>) -> Result<()> {
    let shape = w.theta.value.shape().to_vec();
    let name = format!("{p}.theta");
    copy_into(w.theta.value.data_mut(), ck.tensor(&name)?, &name, &shape)?;
    let name = format!("{p}.theta.momentum");
    copy_into(&mut w.theta.momentum, ck.tensor(&name)?, &name, &shape)?;
    w.set_alpha(ck.f64(&format!("{p}.alpha"))? as f32);
    w.alpha.momentum[0] = ck.f64(&format!("{p}.alpha.momentum"))? as f32;
    if let Some(Value::Tensor(eta)) = ck.get(&format!("{p}.eta")) {
        if eta.shape() != shape.as_slice() {
            return Err(LabError::Checkpoint(format!("{p}.eta has shape {:?}, expected {shape:?}", eta.shape())));
        }
        w.set_eta(eta.data().to_vec()).stage("checkpoint")?;
    }
    w.set_stream(Stream::restore(ck.stream(&format!("{p}.noise_stream"))?));
    Ok(())
}

/// Rebuilds the config and trainer stored by [`save_trainer`].
pub fn load_trainer(ck: &Checkpoint) -> Result<(ExperimentConfig, Trainer<f32>)> {
    let cfg = ExperimentConfig::from_json(ck.text("config")?)?;
    let dim = |k: &str| ck.u64(&format!("arch.{k}")).map(|v| v as usize);
    let arch = cfg.arch(dim("channels")?, dim("height")?, dim("width")?, dim("classes")?);
    let mut net = Network::<f32>::new(arch, &cfg.slim_factors(), cfg.seed).stage("checkpoint")?;
    let prefixes = weight_prefixes(&net);
    for (p, w) in prefixes.iter().zip(net.noisy_weights_mut()) {
        read_weight(ck, p, w)?;
    }
    for (i, layer) in net.convs.iter_mut().enumerate() {
        for (wi, dual) in layer.norms.iter_mut().enumerate() {
            for (branch, bn) in [("clean", &mut dual.clean), ("adversarial", &mut dual.adversarial)] {
                let p = format!("conv{i}.bn{wi}.{branch}");
                read_vec(ck, &format!("{p}.gamma"), bn.gamma.value.data_mut())?;
                read_vec(ck, &format!("{p}.gamma.momentum"), &mut bn.gamma.momentum)?;
                read_vec(ck, &format!("{p}.beta"), bn.beta.value.data_mut())?;
                read_vec(ck, &format!("{p}.beta.momentum"), &mut bn.beta.momentum)?;
                read_vec(ck, &format!("{p}.running_mean"), &mut bn.running_mean)?;
                read_vec(ck, &format!("{p}.running_var"), &mut bn.running_var)?;
            }
        }
    }
    read_vec(ck, "fc.bias", net.fc_bias.value.data_mut())?;
    read_vec(ck, "fc.bias.momentum", &mut net.fc_bias.momentum)?;
    let mask = match ck.get("mask.granularity") {
        None => None,
        Some(_) => {
            let granularity = match ck.text("mask.granularity")? {
                "irregular" => Granularity::Irregular,
                "channel" => Granularity::Channel,
                g => return Err(LabError::Checkpoint(format!("unknown mask granularity {g:?}"))),
            };
            let shapes: Vec<Vec<usize>> = net.noisy_weights().iter().map(|w| w.theta.value.shape().to_vec()).collect();
            let mut layers = Vec::with_capacity(prefixes.len());
            for (p, shape) in prefixes.iter().zip(&shapes) {
                let bits = ck.bits(&format!("mask.{p}"))?;
                if bits.len() != shape.iter().product::<usize>() {
                    return Err(LabError::Checkpoint(format!("mask.{p} has {} bits for shape {shape:?}", bits.len())));
                }
                layers.push(bits.to_vec());
            }
            Some(PruneMask { layers, shapes, granularity, density: ck.f64("mask.density")? })
        }
    };
    let streams = TrainerStreams { data: ck.stream("stream.data")?, attack: ck.stream("stream.attack")? };
    let epoch = ck.u64("epoch")? as usize;
    let trainer = Trainer::from_parts(net, cfg.train_config(), mask, epoch, streams).stage("checkpoint")?;
    Ok((cfg, trainer))
}
