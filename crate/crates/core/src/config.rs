//! Run configuration shared by every pipeline stage, read from JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::captioner::CaptionerConfig;
use crate::error::{Error, Result};
use crate::mtm::ModalityLossKind;
use crate::synthdata::CorpusSpec;
use crate::textae::{AeDims, AeTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_scenes: usize,
    pub corpus_seed: u64,
    pub noise_sigma: f64,
    pub d_v: usize,
    pub d_e: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub d_att: usize,
    pub attention: bool,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub init_range: f64,
    pub modality_loss: ModalityLossKind,
    pub use_mtm: bool,
    pub ae_epochs: usize,
    pub ae_batch_size: usize,
    pub ae_lr: f64,
    pub ae_init_range: f64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        let cap = CaptionerConfig::default();
        let ae = AeTrainConfig::default();
        Self {
            n_scenes: corpus.n_scenes,
            corpus_seed: corpus.seed,
            noise_sigma: corpus.noise_sigma,
            d_v: corpus.d_v,
            d_e: 64,
            d_emb: cap.d_emb,
            d_h: cap.d_h,
            d_att: cap.d_att,
            attention: true,
            max_len: cap.max_len,
            epochs: cap.epochs,
            batch_size: cap.batch_size,
            lr: cap.lr,
            lr_decay: cap.lr_decay,
            decay_every: cap.decay_every,
            seed: cap.seed,
            init_range: cap.init_range,
            modality_loss: cap.modality_loss,
            use_mtm: cap.use_mtm,
            ae_epochs: ae.epochs,
            ae_batch_size: ae.batch_size,
            ae_lr: ae.lr,
            ae_init_range: ae.init_range,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_v", self.d_v),
            ("d_e", self.d_e),
            ("d_emb", self.d_emb),
            ("d_h", self.d_h),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
            ("ae_batch_size", self.ae_batch_size),
            ("n_scenes", self.n_scenes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.attention && self.d_att == 0 {
            return Err(Error::Config("attention is on but d_att is 0".into()));
        }
        positive("lr", self.lr)?;
        positive("ae_lr", self.ae_lr)?;
        positive("lr_decay", self.lr_decay)?;
        positive("init_range", self.init_range)?;
        positive("ae_init_range", self.ae_init_range)?;
        if self.lr_decay > 1.0 {
            return Err(Error::Config(format!("lr_decay must be at most 1, got {}", self.lr_decay)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be finite and non-negative, got {}", self.noise_sigma)));
        }
        self.corpus_spec().split_counts()?;
        self.captioner_config().validate()
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec { n_scenes: self.n_scenes, seed: self.corpus_seed, d_v: self.d_v, noise_sigma: self.noise_sigma, ..CorpusSpec::default() }
    }

    pub fn ae_dims(&self, vocab_size: usize) -> AeDims {
        AeDims { vocab_size, d_emb: self.d_emb, d_e: self.d_e, max_len: self.max_len }
    }

    pub fn ae_config(&self) -> AeTrainConfig {
        AeTrainConfig {
            epochs: self.ae_epochs,
            batch_size: self.ae_batch_size,
            lr: self.ae_lr,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
            seed: self.seed,
            init_range: self.ae_init_range,
        }
    }

    pub fn captioner_config(&self) -> CaptionerConfig {
        CaptionerConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
            seed: self.seed,
            init_range: self.init_range,
            modality_loss: self.modality_loss,
            use_mtm: self.use_mtm,
            d_emb: self.d_emb,
            d_h: self.d_h,
            d_att: if self.attention { self.d_att } else { 0 },
            max_len: self.max_len,
        }
    }
}
