//! Kernel weights, the seeded initializer and the on-disk container.
//!
//! Container layout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `PSKWTS01` |
//! | 8 | header length `h`, u64 little-endian |
//! | h | UTF-8 JSON `{"config": {...}, "tensors": [{"name", "shape", "offset", "len"}]}` |
//! | rest | float32 little-endian payload; `offset`/`len` count floats from its start |
//!
//! Initialization draws every tensor in canonical order from one ChaCha8
//! stream seeded with `seed_from_u64(seed)`: each value is
//! `(2u - 1) / sqrt(fan_in)` with `u = (next_u32 >> 8) / 2^24`, computed in f32.

use std::io::{Read, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{shape_err, KernelConfig, KernelError, Tensor};
use crate::Real;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"PSKWTS01";

/// `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self { weight: Tensor::zeros(&[out, inp]), bias: Tensor::zeros(&[out]) }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn apply_into(&self, x: &[T], y: &mut [T]) {
        let inp = self.in_dim();
        debug_assert_eq!(x.len(), inp);
        for (o, out) in y.iter_mut().enumerate() {
            let row = self.weight.block(o, inp);
            *out = row.iter().zip(x).fold(self.bias.data()[o], |acc, (&w, &v)| acc + w * v);
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.out_dim()];
        self.apply_into(x, &mut y);
        y
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub l0: Linear<T>,
    pub l1: Linear<T>,
}

impl<T: Real> Mlp<T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let h: Vec<T> = self.l0.apply(x).into_iter().map(|v| v.max(T::zero())).collect();
        self.l1.apply(&h)
    }
}

/// One deformable attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformBlock<T> {
    /// Per-head output projection, `[heads, C, C / heads]`.
    pub w_out: Tensor<T>,
    /// Per-head value projection, `[heads, C / heads, C]`.
    pub w_val: Tensor<T>,
    /// `C -> heads * keys * 2` sampling offsets, ordered head, key, (x, y).
    pub offset: Linear<T>,
    /// `C -> heads * keys` attention logits, ordered head, key.
    pub attn: Linear<T>,
}

impl<T: Real> DeformBlock<T> {
    fn zeros(cfg: &KernelConfig) -> Self {
        let (c, h, k) = (cfg.c, cfg.heads, cfg.keys);
        Self {
            w_out: Tensor::zeros(&[h, c, c / h]),
            w_val: Tensor::zeros(&[h, c / h, c]),
            offset: Linear::zeros(h * k * 2, c),
            attn: Linear::zeros(h * k, c),
        }
    }

    pub fn heads(&self) -> usize {
        self.w_out.shape()[0]
    }

    pub fn keys(&self) -> usize {
        self.attn.out_dim() / self.heads()
    }

    pub fn channels(&self) -> usize {
        self.w_out.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelWeights<T> {
    pub config: KernelConfig,
    pub ego_encoder: Linear<T>,
    /// `[N, T, C]`.
    pub positional_embedding: Tensor<T>,
    /// `C -> hidden -> 3`, absolute `(x, y, heading)`.
    pub proposal_mlp: Mlp<T>,
    pub sa: DeformBlock<T>,
    pub sca: DeformBlock<T>,
    pub query_update: Linear<T>,
    /// `C -> hidden -> 1`, followed by a logistic squash.
    pub score_mlp: Mlp<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: KernelConfig,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn linear_slots<'a, T: Real>(prefix: &str, l: &'a mut Linear<T>, out: &mut Vec<(String, &'a mut Tensor<T>, usize)>) {
    let fan_in = l.weight.shape()[1];
    out.push((format!("{prefix}.weight"), &mut l.weight, fan_in));
    out.push((format!("{prefix}.bias"), &mut l.bias, fan_in));
}

impl<T: Real> KernelWeights<T> {
    pub fn zeros(config: &KernelConfig) -> Result<Self, KernelError> {
        config.validate()?;
        let c = config.c;
        let mlp = |out: usize| Mlp { l0: Linear::zeros(config.hidden, c), l1: Linear::zeros(out, config.hidden) };
        Ok(Self {
            config: config.clone(),
            ego_encoder: Linear::zeros(c, config.status_dim),
            positional_embedding: Tensor::zeros(&[config.n, config.t, c]),
            proposal_mlp: mlp(3),
            sa: DeformBlock::zeros(config),
            sca: DeformBlock::zeros(config),
            query_update: Linear::zeros(c, c),
            score_mlp: mlp(1),
        })
    }

    /// Named tensors in canonical order with their initialization fan-in.
    fn slots_mut(&mut self) -> Vec<(String, &mut Tensor<T>, usize)> {
        let mut out = Vec::new();
        linear_slots("ego_encoder", &mut self.ego_encoder, &mut out);
        let c = self.config.c;
        out.push(("positional_embedding".to_string(), &mut self.positional_embedding, 1));
        linear_slots("proposal_mlp.0", &mut self.proposal_mlp.l0, &mut out);
        linear_slots("proposal_mlp.1", &mut self.proposal_mlp.l1, &mut out);
        for (name, block) in [("sa", &mut self.sa), ("sca", &mut self.sca)] {
            let dh = block.w_out.shape()[2];
            out.push((format!("{name}.w_out"), &mut block.w_out, dh));
            out.push((format!("{name}.w_val"), &mut block.w_val, c));
            linear_slots(&format!("{name}.offset"), &mut block.offset, &mut out);
            linear_slots(&format!("{name}.attn"), &mut block.attn, &mut out);
        }
        linear_slots("query_update", &mut self.query_update, &mut out);
        linear_slots("score_mlp.0", &mut self.score_mlp.l0, &mut out);
        linear_slots("score_mlp.1", &mut self.score_mlp.l1, &mut out);
        out
    }

    pub fn tensor_names(&mut self) -> Vec<String> {
        self.slots_mut().into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn seeded(config: &KernelConfig, seed: u64) -> Result<Self, KernelError> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, tensor, fan_in) in w.slots_mut() {
            let scale = 1.0f32 / (fan_in as f32).sqrt();
            for v in tensor.data_mut() {
                let u = (rng.next_u32() >> 8) as f32 / 16_777_216.0;
                *v = T::lit(((2.0 * u - 1.0) * scale) as f64);
            }
        }
        Ok(w)
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), KernelError> {
        let mut copy = self.clone();
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (name, tensor, _) in copy.slots_mut() {
            entries.push(Entry { name, shape: tensor.shape().to_vec(), offset: payload.len() / 4, len: tensor.len() });
            for v in tensor.data() {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header { config: self.config.clone(), tensors: entries })
            .map_err(|e| KernelError::Format(e.to_string()))?;
        out.write_all(WEIGHTS_MAGIC)?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        out.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, KernelError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(KernelError::Format("bad magic".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| KernelError::Format("header too large".into()))?;
        let mut header = vec![0u8; len];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| KernelError::Format(format!("header: {e}")))?;
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() % 4 != 0 {
            return Err(KernelError::Format("payload is not a whole number of floats".into()));
        }
        let floats: Vec<f32> = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();

        let mut w = Self::zeros(&header.config)?;
        let slots = w.slots_mut();
        if slots.len() != header.tensors.len() {
            return Err(KernelError::Format(format!("expected {} tensors, found {}", slots.len(), header.tensors.len())));
        }
        for (name, tensor, _) in slots {
            let entry = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| KernelError::Format(format!("missing tensor {name}")))?;
            if entry.shape != tensor.shape() || entry.len != tensor.len() {
                return Err(shape_err(name, tensor.shape(), &entry.shape));
            }
            let src = floats
                .get(entry.offset..entry.offset + entry.len)
                .ok_or_else(|| KernelError::Format(format!("tensor {name} runs past the payload")))?;
            for (d, &s) in tensor.data_mut().iter_mut().zip(src) {
                *d = T::lit(s as f64);
            }
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KernelError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KernelError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    pub fn cast<U: Real>(&self) -> KernelWeights<U> {
        let lin = |l: &Linear<T>| Linear { weight: l.weight.cast(), bias: l.bias.cast() };
        let mlp = |m: &Mlp<T>| Mlp { l0: lin(&m.l0), l1: lin(&m.l1) };
        let block = |b: &DeformBlock<T>| DeformBlock { w_out: b.w_out.cast(), w_val: b.w_val.cast(), offset: lin(&b.offset), attn: lin(&b.attn) };
        KernelWeights {
            config: self.config.clone(),
            ego_encoder: lin(&self.ego_encoder),
            positional_embedding: self.positional_embedding.cast(),
            proposal_mlp: mlp(&self.proposal_mlp),
            sa: block(&self.sa),
            sca: block(&self.sca),
            query_update: lin(&self.query_update),
            score_mlp: mlp(&self.score_mlp),
        }
    }
}
