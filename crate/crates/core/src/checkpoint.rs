//! Binary checkpoints: named parameter tensors, Adam moments, the training
//! stream's RNG position and the trace so far.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MBRIDGE\0"
//! version    u32
//! header_len u64
//! header     header_len bytes of JSON
//! payload    f64 values: every parameter in header order, then (when an
//!            optimizer is stored) the first and second moments of each
//!            parameter in the same order
//! ```
//!
//! Re-saving a loaded checkpoint reproduces the original bytes.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::captioner::{CaptionModel, CaptionerConfig, CaptionerDims, CaptionerEpoch, CaptionerTrainer};
use crate::error::{Error, Result};
use crate::numcore::{Adam, AdamState, Module, Tensor};
use crate::scalar::Scalar;
use crate::textae::{AeDims, AeEpoch, AeTrainConfig, AeTrainer, AutoEncoder};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"MBRIDGE\0";
pub const FORMAT_VERSION: u32 = 1;
pub const KIND_AUTOENCODER: &str = "autoencoder";
pub const KIND_CAPTIONER: &str = "captioner";

/// Position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte key as lowercase hex.
    pub seed: String,
    pub stream: u64,
    /// Word position, decimal (it may exceed 64 bits).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Format(format!("malformed rng state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let pos: u128 = self.word_pos.parse().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamEntry {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: Value,
    vocabulary: Vocabulary,
    params: Vec<TensorEntry>,
    adam: Option<Vec<AdamEntry>>,
    rng: Option<RngState>,
    trace: Value,
}

/// In-memory checkpoint. Values are held as `f64` whatever the model's
/// scalar type.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub vocabulary: Vocabulary,
    pub params: Vec<(String, Tensor<f64>)>,
    pub adam: Option<Vec<AdamState<f64>>>,
    pub rng: Option<RngState>,
    pub trace: Value,
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.as_f64()).collect()).expect("same shape")
}

fn from_f64<T: Scalar>(t: &Tensor<f64>) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| T::of(v)).collect()).expect("same shape")
}

fn json<S: Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("checkpoint fields serialize")
}

fn read_exact<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("checkpoint truncated in {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

impl Checkpoint {
    /// Parameter values of `model`, in its parameter order.
    pub fn capture_params<T: Scalar, M: Module<T>>(model: &M) -> Vec<(String, Tensor<f64>)> {
        model.params().into_iter().map(|p| (p.name.clone(), to_f64(&p.value))).collect()
    }

    pub fn capture_adam<T: Scalar>(adam: &Adam<T>) -> Vec<AdamState<f64>> {
        adam.states
            .iter()
            .map(|s| AdamState {
                m: to_f64(&s.m),
                v: to_f64(&s.v),
                step: s.step,
                lr: s.lr,
                beta1: s.beta1,
                beta2: s.beta2,
                eps: s.eps,
            })
            .collect()
    }

    /// Copies stored values into `model`; names and shapes must match exactly.
    pub fn restore_params<T: Scalar, M: Module<T>>(&self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, (name, t)) in params.iter_mut().zip(&self.params) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {name} {:?} does not match model tensor {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = from_f64(t);
        }
        Ok(())
    }

    /// Rebuilds the optimizer for `model` from the stored moments.
    pub fn restore_adam<T: Scalar, M: Module<T>>(&self, model: &M) -> Result<Adam<T>> {
        let states = self.adam.as_ref().ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        let params = model.params();
        if states.len() != params.len() {
            return Err(Error::Format("optimizer state count does not match the model".into()));
        }
        Ok(Adam {
            names: params.iter().map(|p| p.name.clone()).collect(),
            states: states
                .iter()
                .map(|s| AdamState {
                    m: from_f64(&s.m),
                    v: from_f64(&s.v),
                    step: s.step,
                    lr: s.lr,
                    beta1: s.beta1,
                    beta2: s.beta2,
                    eps: s.eps,
                })
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
            params: self.params.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
            adam: self.adam.as_ref().map(|states| {
                states
                    .iter()
                    .map(|s| AdamEntry { step: s.step, lr: s.lr, beta1: s.beta1, beta2: s.beta2, eps: s.eps })
                    .collect()
            }),
            rng: self.rng.clone(),
            trace: self.trace.clone(),
        };
        // through `Value` so that key order is the same on every save
        let header = serde_json::to_vec(&json(&header)).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.payload_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut push = |t: &Tensor<f64>| t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.iter().for_each(|(_, t)| push(t));
        if let Some(states) = &self.adam {
            for s in states {
                push(&s.m);
                push(&s.v);
            }
        }
        out
    }

    fn payload_len(&self) -> usize {
        let p: usize = self.params.iter().map(|(_, t)| t.len()).sum();
        p * if self.adam.is_some() { 3 } else { 1 }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        if read_exact(&mut rest, 8, "magic")? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_exact(&mut rest, 4, "version")?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(read_exact(&mut rest, 8, "header length")?.try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| Error::Format("header length overflows".into()))?;
        let header: Header = serde_json::from_slice(read_exact(&mut rest, len, "header")?)?;
        let mut take = |shape: &[usize], what: &str| -> Result<Tensor<f64>> {
            let n: usize = shape.iter().product();
            let raw = read_exact(&mut rest, 8 * n, what)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Tensor::new(shape.to_vec(), data).map_err(|e| Error::Format(format!("{what}: {e}")))
        };
        let mut params = Vec::with_capacity(header.params.len());
        for e in &header.params {
            params.push((e.name.clone(), take(&e.shape, &e.name)?));
        }
        let adam = match &header.adam {
            None => None,
            Some(entries) => {
                if entries.len() != header.params.len() {
                    return Err(Error::Format("optimizer entries do not match parameters".into()));
                }
                let mut states = Vec::with_capacity(entries.len());
                for (a, e) in entries.iter().zip(&header.params) {
                    let m = take(&e.shape, &e.name)?;
                    let v = take(&e.shape, &e.name)?;
                    states.push(AdamState { m, v, step: a.step, lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps });
                }
                Some(states)
            }
        };
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after payload", rest.len())));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            vocabulary: header.vocabulary,
            params,
            adam,
            rng: header.rng,
            trace: header.trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    fn config_field<D: serde::de::DeserializeOwned>(&self, key: &str) -> Result<D> {
        let v = self.config.get(key).ok_or_else(|| Error::Format(format!("checkpoint config lacks {key:?}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelConfig<D, C> {
    dims: D,
    train: C,
}

impl<T: Scalar> AeTrainer<T> {
    pub fn checkpoint(&self, vocabulary: &Vocabulary) -> Checkpoint {
        Checkpoint {
            kind: KIND_AUTOENCODER.into(),
            config: json(&ModelConfig { dims: self.model.dims, train: self.config }),
            vocabulary: vocabulary.clone(),
            params: Checkpoint::capture_params(&self.model),
            adam: Some(Checkpoint::capture_adam(&self.adam)),
            rng: Some(RngState::capture(&self.rng)),
            trace: json(&self.trace),
        }
    }

    /// Continues from a checkpoint. `epochs` replaces the stored target.
    pub fn resume(ckpt: &Checkpoint, epochs: Option<usize>) -> Result<Self> {
        ckpt.expect_kind(KIND_AUTOENCODER)?;
        let dims: AeDims = ckpt.config_field("dims")?;
        let mut config: AeTrainConfig = ckpt.config_field("train")?;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let mut model = AutoEncoder::zeros(dims)?;
        ckpt.restore_params(&mut model)?;
        let adam = ckpt.restore_adam(&model)?;
        let rng = ckpt.rng.as_ref().ok_or_else(|| Error::Format("checkpoint has no rng state".into()))?.restore()?;
        let trace: Vec<AeEpoch> = serde_json::from_value(ckpt.trace.clone())?;
        Ok(Self { model, adam, rng, config, trace })
    }
}

/// Auto-encoder weights from a checkpoint (optimizer state ignored).
pub fn load_autoencoder<T: Scalar>(ckpt: &Checkpoint) -> Result<AutoEncoder<T>> {
    ckpt.expect_kind(KIND_AUTOENCODER)?;
    let mut model = AutoEncoder::zeros(ckpt.config_field("dims")?)?;
    ckpt.restore_params(&mut model)?;
    Ok(model)
}

impl<T: Scalar> CaptionerTrainer<T> {
    pub fn checkpoint(&self, vocabulary: &Vocabulary) -> Checkpoint {
        Checkpoint {
            kind: KIND_CAPTIONER.into(),
            config: json(&ModelConfig { dims: self.model.dims, train: self.config }),
            vocabulary: vocabulary.clone(),
            params: Checkpoint::capture_params(&self.model),
            adam: Some(Checkpoint::capture_adam(&self.adam)),
            rng: Some(RngState::capture(&self.rng)),
            trace: json(&self.trace),
        }
    }

    pub fn resume(ckpt: &Checkpoint, epochs: Option<usize>) -> Result<Self> {
        ckpt.expect_kind(KIND_CAPTIONER)?;
        let dims: CaptionerDims = ckpt.config_field("dims")?;
        let mut config: CaptionerConfig = ckpt.config_field("train")?;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let mut model = CaptionModel::zeros(dims)?;
        ckpt.restore_params(&mut model)?;
        let adam = ckpt.restore_adam(&model)?;
        let rng = ckpt.rng.as_ref().ok_or_else(|| Error::Format("checkpoint has no rng state".into()))?.restore()?;
        let trace: Vec<CaptionerEpoch> = serde_json::from_value(ckpt.trace.clone())?;
        Ok(Self { model, adam, rng, config, trace })
    }
}

/// Captioner weights and training configuration from a checkpoint.
pub fn load_captioner<T: Scalar>(ckpt: &Checkpoint) -> Result<(CaptionModel<T>, CaptionerConfig)> {
    ckpt.expect_kind(KIND_CAPTIONER)?;
    let mut model = CaptionModel::zeros(ckpt.config_field("dims")?)?;
    ckpt.restore_params(&mut model)?;
    Ok((model, ckpt.config_field("train")?))
}
