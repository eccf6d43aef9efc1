use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batching::length_buckets;
use crate::error::{Error, Result};
use crate::metrics::{bleu, cider, rouge_l, EvalCorpus, MAX_N, ROUGE_BETA};
use crate::mtm::{ModalityLossKind, RegionFeatures};
use crate::numcore::{Adam, AdamConfig, Module, Tensor};
use crate::scalar::Scalar;
use crate::synthdata::CaptionRecord;
use crate::textae::{scheduled_lr, shuffle_rng, AutoEncoder};
use crate::vocab::{TokenSequence, Vocabulary};

use super::{CaptionModel, CaptionerDims, INIT_RANGE};

/// Region features with the content ids of their caption.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionSample<T> {
    pub id: u64,
    pub regions: RegionFeatures<T>,
    pub caption: Vec<usize>,
}

impl<T: Scalar> CaptionSample<T> {
    pub fn from_record(record: &CaptionRecord, vocab: &Vocabulary) -> Result<Self> {
        let seq = vocab.encode(&record.caption);
        Ok(Self {
            id: record.scene_id,
            regions: RegionFeatures::from_rows(&record.features)?,
            caption: seq.content()?.to_vec(),
        })
    }

    pub fn from_records(records: &[CaptionRecord], vocab: &Vocabulary) -> Result<Vec<Self>> {
        records.iter().map(|r| Self::from_record(r, vocab)).collect()
    }
}

/// Training and validation samples plus the frozen auto-encoder's codes of
/// the training captions, computed once.
pub struct TrainData<T> {
    pub train: Vec<CaptionSample<T>>,
    pub codes: Tensor<T>,
    pub val: Vec<CaptionSample<T>>,
}

impl<T: Scalar> TrainData<T> {
    pub fn new(ae: &AutoEncoder<T>, train: Vec<CaptionSample<T>>, val: Vec<CaptionSample<T>>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::input("empty training corpus"));
        }
        if val.len() < 2 {
            return Err(Error::input(format!("validation needs at least 2 samples, got {}", val.len())));
        }
        let captions: Vec<Vec<usize>> = train.iter().map(|s| s.caption.clone()).collect();
        let codes = ae.encode_all(&captions)?;
        Ok(Self { train, codes, val })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub init_range: f64,
    pub modality_loss: ModalityLossKind,
    /// `false` bridges the pooled visual feature directly, with no modality loss.
    pub use_mtm: bool,
    pub d_emb: usize,
    pub d_h: usize,
    /// Attention width; 0 disables attention.
    pub d_att: usize,
    pub max_len: usize,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            lr: 1e-3,
            lr_decay: 0.8,
            decay_every: 50,
            seed: 0,
            init_range: INIT_RANGE,
            modality_loss: ModalityLossKind::Mse,
            use_mtm: true,
            d_emb: 64,
            d_h: 64,
            d_att: 64,
            max_len: 20,
        }
    }
}

impl CaptionerConfig {
    pub fn dims(&self, vocab_size: usize, d_v: usize, d_e: usize) -> CaptionerDims {
        CaptionerDims {
            vocab_size,
            d_emb: self.d_emb,
            d_h: self.d_h,
            d_v,
            d_e,
            use_mtm: self.use_mtm,
            d_att: self.d_att,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return Err(Error::Config(format!("init_range must be positive, got {}", self.init_range)));
        }
        if self.use_mtm && self.modality_loss == ModalityLossKind::Mmd && self.batch_size < 2 {
            return Err(Error::Config("the mmd modality loss needs batch_size >= 2".into()));
        }
        Ok(())
    }
}

/// One row of the captioner training trace. `modality_loss` is absent for
/// the no-transition baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionerEpoch {
    pub epoch: usize,
    pub ce_loss: f64,
    pub modality_loss: Option<f64>,
    pub val_bleu4: f64,
    pub val_rouge_l: f64,
    pub val_cider: f64,
    /// Fraction of validation scenes whose greedy caption equals the reference.
    pub val_exact: f64,
}

/// Greedy-decoding scores on a labelled set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyScores {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub exact: f64,
}

/// Greedy captions of every sample, in input order.
pub fn decode_all<T: Scalar>(model: &CaptionModel<T>, samples: &[CaptionSample<T>]) -> Result<Vec<TokenSequence>> {
    samples.iter().map(|s| model.greedy_decode(&s.regions)).collect()
}

pub fn greedy_scores<T: Scalar>(model: &CaptionModel<T>, samples: &[CaptionSample<T>]) -> Result<GreedyScores> {
    if samples.is_empty() {
        return Err(Error::input("no samples to score"));
    }
    let outputs = decode_all(model, samples)?;
    let mut exact = 0usize;
    let mut items = Vec::with_capacity(samples.len());
    for (s, out) in samples.iter().zip(outputs) {
        if out.content().map(|c| c == s.caption.as_slice()).unwrap_or(false) {
            exact += 1;
        }
        items.push((s.id, out, vec![TokenSequence(s.caption.clone())]));
    }
    let corpus = EvalCorpus::from_sequences(&items)?;
    Ok(GreedyScores {
        bleu4: bleu(&corpus, MAX_N)?[MAX_N - 1],
        rouge_l: rouge_l(&corpus, ROUGE_BETA)?,
        cider: cider(&corpus, MAX_N)?,
        exact: exact as f64 / samples.len() as f64,
    })
}

/// Resumable captioner training state.
pub struct CaptionerTrainer<T> {
    pub model: CaptionModel<T>,
    pub adam: Adam<T>,
    pub rng: ChaCha8Rng,
    pub config: CaptionerConfig,
    pub trace: Vec<CaptionerEpoch>,
}

impl<T: Scalar> CaptionerTrainer<T> {
    pub fn new(config: CaptionerConfig, vocab_size: usize, d_v: usize, d_e: usize) -> Result<Self> {
        config.validate()?;
        let model = CaptionModel::init(config.dims(vocab_size, d_v, d_e), config.seed, config.init_range)?;
        let adam = Adam::new(&model.params(), AdamConfig::with_lr(config.lr));
        Ok(Self { model, adam, rng: shuffle_rng(config.seed), config, trace: Vec::new() })
    }

    pub fn epochs_done(&self) -> usize {
        self.trace.len()
    }

    /// One pass over the training set followed by greedy validation.
    pub fn run_epoch(&mut self, data: &TrainData<T>) -> Result<CaptionerEpoch> {
        if data.codes.dims2() != (data.train.len(), self.model.dims.d_e) {
            return Err(Error::dim(format!(
                "caption codes {:?} for {} samples x d_e {}",
                data.codes.shape(),
                data.train.len(),
                self.model.dims.d_e
            )));
        }
        let epoch = self.trace.len();
        let c = &self.config;
        self.adam.set_lr(scheduled_lr(c.lr, c.lr_decay, c.decay_every, epoch));
        let kind = c.modality_loss;
        let lengths: Vec<usize> = data.train.iter().map(|s| s.caption.len()).collect();
        let batches = length_buckets(&lengths, c.batch_size, &mut self.rng);
        let (mut ce_sum, mut tokens, mut mod_sum, mut rows) = (0.0, 0usize, 0.0, 0usize);
        for batch in batches {
            let regions: Vec<&RegionFeatures<T>> = batch.iter().map(|&i| &data.train[i].regions).collect();
            let captions: Vec<&[usize]> = batch.iter().map(|&i| data.train[i].caption.as_slice()).collect();
            let mut codes = Tensor::zeros(&[batch.len(), self.model.dims.d_e]);
            for (r, &i) in batch.iter().enumerate() {
                codes.row_mut(r).copy_from_slice(data.codes.row(i));
            }
            let (report, trace) = self.model.forward(&regions, &captions, Some(&codes), kind)?;
            self.model.backward(&trace)?;
            self.adam.step(self.model.params_mut())?;
            let t = batch.len() * (captions[0].len() + 1);
            ce_sum += report.ce * t as f64;
            tokens += t;
            mod_sum += report.modality * batch.len() as f64;
            rows += batch.len();
        }
        let val = greedy_scores(&self.model, &data.val)?;
        let row = CaptionerEpoch {
            epoch: epoch + 1,
            ce_loss: ce_sum / tokens as f64,
            modality_loss: self.model.mtm.is_some().then(|| mod_sum / rows as f64),
            val_bleu4: val.bleu4,
            val_rouge_l: val.rouge_l,
            val_cider: val.cider,
            val_exact: val.exact,
        };
        self.trace.push(row);
        Ok(row)
    }

    pub fn train(&mut self, data: &TrainData<T>) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }
}

/// Trains a fresh captioner against a frozen auto-encoder.
pub fn train_captioner<T: Scalar>(
    ae: &AutoEncoder<T>,
    train: Vec<CaptionSample<T>>,
    val: Vec<CaptionSample<T>>,
    vocab_size: usize,
    config: CaptionerConfig,
) -> Result<(CaptionModel<T>, Vec<CaptionerEpoch>)> {
    let d_v = train.first().map(|s| s.regions.dim()).ok_or_else(|| Error::input("empty training corpus"))?;
    let data = TrainData::new(ae, train, val)?;
    let mut trainer = CaptionerTrainer::new(config, vocab_size, d_v, ae.dims.d_e)?;
    trainer.train(&data)?;
    Ok((trainer.model, trainer.trace))
}
