//! Sequence-to-sequence LSTM auto-encoder over captions.
//!
//! The encoder reads the content words of a caption through two stacked
//! LSTM layers; the caption code is the top layer's final hidden state.
//! The decoder starts with that code as the hidden state of both of its
//! layers (cell states zero) and is teacher-forced from `<bos>` to predict
//! every word followed by `<eos>`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batching::{length_buckets, ordered_buckets};
use crate::error::{Error, Result};
use crate::numcore::ops::{argmax, batch_cross_entropy};
use crate::numcore::{embed_rows, scatter_rows, Adam, AdamConfig, CellCache, Linear, LstmParams, Module, Parameter, Tensor};
use crate::scalar::Scalar;
use crate::vocab::{TokenSequence, BOS, EOS};

/// Default uniform initialization half-width of the auto-encoder weights.
///
/// Narrower ranges leave the reconstruction loss on the grammar-only plateau
/// for around a hundred epochs at `d_e = 64`.
pub const INIT_RANGE: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeDims {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_e: usize,
    /// Longest decoder output, counting the closing `<eos>`.
    pub max_len: usize,
}

impl AeDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 || self.d_emb == 0 || self.d_e == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("invalid auto-encoder dimensions {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoEncoder<T> {
    pub dims: AeDims,
    pub embed: Parameter<T>,
    pub enc: [LstmParams<T>; 2],
    pub dec: [LstmParams<T>; 2],
    pub out: Linear<T>,
}

/// Saved encoder activations for backpropagation.
pub struct EncoderTrace<T> {
    inputs: Vec<Vec<usize>>,
    caches: Vec<[CellCache<T>; 2]>,
}

/// Saved teacher-forced decoder activations and logit gradients.
pub struct DecoderTrace<T> {
    inputs: Vec<Vec<usize>>,
    caches: Vec<[CellCache<T>; 2]>,
    tops: Vec<Tensor<T>>,
    dlogits: Vec<Tensor<T>>,
}

/// Outcome of one teacher-forced batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub loss: T,
    pub hits: usize,
    pub tokens: usize,
}

impl<T: Scalar> AutoEncoder<T> {
    pub fn new(dims: AeDims, seed: u64) -> Result<Self> {
        Self::with_init(dims, seed, INIT_RANGE)
    }

    /// Weights drawn from `uniform(-range, range)` with a seeded generator.
    pub fn with_init(dims: AeDims, seed: u64, range: f64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, de, dm) = (dims.vocab_size, dims.d_e, dims.d_emb);
        Ok(Self {
            dims,
            embed: Parameter::new("ae.embed", Tensor::uniform(&[v, dm], range, &mut rng)),
            enc: [
                LstmParams::init("ae.enc0", dm, de, range, &mut rng),
                LstmParams::init("ae.enc1", de, de, range, &mut rng),
            ],
            dec: [
                LstmParams::init("ae.dec0", dm, de, range, &mut rng),
                LstmParams::init("ae.dec1", de, de, range, &mut rng),
            ],
            out: Linear::init("ae.out", de, v, range, &mut rng),
        })
    }

    /// A model whose every weight is zero.
    pub fn zeros(dims: AeDims) -> Result<Self> {
        dims.validate()?;
        let (v, de, dm) = (dims.vocab_size, dims.d_e, dims.d_emb);
        Ok(Self {
            dims,
            embed: Parameter::new("ae.embed", Tensor::zeros(&[v, dm])),
            enc: [LstmParams::zeros("ae.enc0", dm, de), LstmParams::zeros("ae.enc1", de, de)],
            dec: [LstmParams::zeros("ae.dec0", dm, de), LstmParams::zeros("ae.dec1", de, de)],
            out: Linear::zeros("ae.out", de, v),
        })
    }

    fn check_batch(&self, batch: &[&[usize]]) -> Result<usize> {
        let n = batch.first().map(|s| s.len()).ok_or_else(|| Error::input("empty batch"))?;
        if n == 0 {
            return Err(Error::input("empty token sequence"));
        }
        if n > self.dims.max_len {
            return Err(Error::input(format!("sequence of {n} tokens exceeds max_len {}", self.dims.max_len)));
        }
        if batch.iter().any(|s| s.len() != n) {
            return Err(Error::input("batch mixes sequence lengths"));
        }
        Ok(n)
    }

    fn zero_state(&self, rows: usize) -> Tensor<T> {
        Tensor::zeros(&[rows, self.dims.d_e])
    }

    /// Encodes a batch of equal-length content sequences into `[B x d_e]` codes.
    pub fn encoder_forward(&self, batch: &[&[usize]]) -> Result<(Tensor<T>, EncoderTrace<T>)> {
        let n = self.check_batch(batch)?;
        let b = batch.len();
        let mut h = [self.zero_state(b), self.zero_state(b)];
        let mut c = [self.zero_state(b), self.zero_state(b)];
        let mut trace = EncoderTrace { inputs: Vec::with_capacity(n), caches: Vec::with_capacity(n) };
        for t in 0..n {
            let ids: Vec<usize> = batch.iter().map(|s| s[t]).collect();
            let x = embed_rows(&self.embed.value, &ids)?;
            let (h0, c0, k0) = self.enc[0].forward(&x, &h[0], &c[0])?;
            let (h1, c1, k1) = self.enc[1].forward(&h0, &h[1], &c[1])?;
            h = [h0, h1];
            c = [c0, c1];
            trace.inputs.push(ids);
            trace.caches.push([k0, k1]);
        }
        let [_, top] = h;
        Ok((top, trace))
    }

    pub fn encoder_backward(&mut self, trace: &EncoderTrace<T>, du: &Tensor<T>) {
        let b = du.rows();
        let mut dh = [self.zero_state(b), du.clone()];
        let mut dc = [self.zero_state(b), self.zero_state(b)];
        for (ids, [k0, k1]) in trace.inputs.iter().zip(&trace.caches).rev() {
            let (dx1, dh1, dc1) = self.enc[1].backward(k1, &dh[1], &dc[1]);
            let mut d0 = dh[0].clone();
            d0.add_assign(&dx1).expect("matching state shapes");
            let (dx0, dh0, dc0) = self.enc[0].backward(k0, &d0, &dc[0]);
            scatter_rows(&mut self.embed.grad, ids, &dx0);
            dh = [dh0, dh1];
            dc = [dc0, dc1];
        }
    }

    /// Teacher-forced decoding of `batch` conditioned on codes `u`.
    ///
    /// The loss is the mean cross-entropy over all predicted tokens (words
    /// plus `<eos>`); the trace carries the gradient of that mean.
    pub fn decoder_forward(&self, u: &Tensor<T>, batch: &[&[usize]]) -> Result<(BatchStats<T>, DecoderTrace<T>)> {
        let n = self.check_batch(batch)?;
        let b = batch.len();
        if u.dims2() != (b, self.dims.d_e) {
            return Err(Error::dim(format!("codes {:?} for batch {b} x d_e {}", u.shape(), self.dims.d_e)));
        }
        let steps = n + 1;
        let mut h = [u.clone(), u.clone()];
        let mut c = [self.zero_state(b), self.zero_state(b)];
        let mut trace = DecoderTrace {
            inputs: Vec::with_capacity(steps),
            caches: Vec::with_capacity(steps),
            tops: Vec::with_capacity(steps),
            dlogits: Vec::with_capacity(steps),
        };
        let step_scale = T::one() / T::of(steps as f64);
        let mut loss = T::zero();
        let mut hits = 0;
        for t in 0..steps {
            let ids: Vec<usize> = batch.iter().map(|s| if t == 0 { BOS } else { s[t - 1] }).collect();
            let targets: Vec<usize> = batch.iter().map(|s| if t < n { s[t] } else { EOS }).collect();
            let x = embed_rows(&self.embed.value, &ids)?;
            let (h0, c0, k0) = self.dec[0].forward(&x, &h[0], &c[0])?;
            let (h1, c1, k1) = self.dec[1].forward(&h0, &h[1], &c[1])?;
            let logits = self.out.forward(&h1)?;
            let (l, mut dl, hit) = batch_cross_entropy(&logits, &targets)?;
            dl.scale(step_scale);
            loss += l * step_scale;
            hits += hit;
            trace.inputs.push(ids);
            trace.caches.push([k0, k1]);
            trace.tops.push(h1.clone());
            trace.dlogits.push(dl);
            h = [h0, h1];
            c = [c0, c1];
        }
        Ok((BatchStats { loss, hits, tokens: steps * b }, trace))
    }

    /// Backpropagates the decoder loss; returns the gradient w.r.t. the codes.
    pub fn decoder_backward(&mut self, trace: &DecoderTrace<T>) -> Tensor<T> {
        let b = trace.tops[0].rows();
        let mut dh = [self.zero_state(b), self.zero_state(b)];
        let mut dc = [self.zero_state(b), self.zero_state(b)];
        for t in (0..trace.inputs.len()).rev() {
            let [k0, k1] = &trace.caches[t];
            let dtop = self.out.backward(&trace.tops[t], &trace.dlogits[t]);
            dh[1].add_assign(&dtop).expect("matching state shapes");
            let (dx1, dh1, dc1) = self.dec[1].backward(k1, &dh[1], &dc[1]);
            dh[0].add_assign(&dx1).expect("matching state shapes");
            let (dx0, dh0, dc0) = self.dec[0].backward(k0, &dh[0], &dc[0]);
            scatter_rows(&mut self.embed.grad, &trace.inputs[t], &dx0);
            dh = [dh0, dh1];
            dc = [dc0, dc1];
        }
        let [mut du, dtop] = dh;
        du.add_assign(&dtop).expect("matching state shapes");
        du
    }

    /// Forward and backward over one batch; gradients accumulate in the parameters.
    pub fn accumulate_gradients(&mut self, batch: &[&[usize]]) -> Result<BatchStats<T>> {
        let (u, enc) = self.encoder_forward(batch)?;
        let (stats, dec) = self.decoder_forward(&u, batch)?;
        let du = self.decoder_backward(&dec);
        self.encoder_backward(&enc, &du);
        Ok(stats)
    }

    /// Reconstruction loss of one batch without touching gradients.
    pub fn batch_loss(&self, batch: &[&[usize]]) -> Result<BatchStats<T>> {
        let (u, _) = self.encoder_forward(batch)?;
        Ok(self.decoder_forward(&u, batch)?.0)
    }

    /// Caption code of one sequence, shape `[d_e]`.
    pub fn encode(&self, s: &TokenSequence) -> Result<Tensor<T>> {
        let content = s.content()?;
        let (u, _) = self.encoder_forward(&[content])?;
        u.reshape(vec![self.dims.d_e])
    }

    /// Codes for many content sequences, returned in input order as `[n x d_e]`.
    pub fn encode_all(&self, seqs: &[Vec<usize>]) -> Result<Tensor<T>> {
        let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
        let mut out = Tensor::zeros(&[seqs.len().max(1), self.dims.d_e]);
        for batch in ordered_buckets(&lengths, 64) {
            let refs: Vec<&[usize]> = batch.iter().map(|&i| seqs[i].as_slice()).collect();
            let (u, _) = self.encoder_forward(&refs)?;
            for (r, &i) in batch.iter().enumerate() {
                out.row_mut(i).copy_from_slice(u.row(r));
            }
        }
        Ok(out)
    }

    /// Mean per-token teacher-forced cross-entropy of `s` given code `u`.
    pub fn decode_train(&self, u: &Tensor<T>, s: &TokenSequence) -> Result<T> {
        let content = s.content()?;
        let u = Tensor::matrix(1, u.len(), u.data().to_vec())?;
        Ok(self.decoder_forward(&u, &[content])?.0.loss)
    }

    /// Greedy decoding from a code; output starts with `<bos>` and ends with
    /// `<eos>` unless `max_len` tokens were emitted first.
    pub fn reconstruct(&self, u: &Tensor<T>) -> Result<TokenSequence> {
        if u.len() != self.dims.d_e {
            return Err(Error::dim(format!("code of length {} for d_e {}", u.len(), self.dims.d_e)));
        }
        let u = Tensor::matrix(1, u.len(), u.data().to_vec())?;
        let mut h = [u.clone(), u];
        let mut c = [self.zero_state(1), self.zero_state(1)];
        let mut ids = vec![BOS];
        let mut input = BOS;
        for _ in 0..self.dims.max_len {
            let x = embed_rows(&self.embed.value, &[input])?;
            let (h0, c0, _) = self.dec[0].forward(&x, &h[0], &c[0])?;
            let (h1, c1, _) = self.dec[1].forward(&h0, &h[1], &c[1])?;
            let logits = self.out.forward(&h1)?;
            let next = argmax(logits.data());
            ids.push(next);
            h = [h0, h1];
            c = [c0, c1];
            if next == EOS {
                break;
            }
            input = next;
        }
        Ok(TokenSequence(ids))
    }

    /// Greedy reconstruction quality over content sequences: the fraction of
    /// gold tokens (words plus `<eos>`) reproduced at their position, and the
    /// fraction of sequences reproduced exactly.
    pub fn reconstruction_accuracy(&self, seqs: &[Vec<usize>]) -> Result<(f64, f64)> {
        if seqs.is_empty() {
            return Err(Error::input("empty corpus"));
        }
        let codes = self.encode_all(seqs)?;
        let (mut hit, mut total, mut exact) = (0usize, 0usize, 0usize);
        for (i, s) in seqs.iter().enumerate() {
            let code = Tensor::vector(codes.row(i).to_vec());
            let out = self.reconstruct(&code)?;
            let emitted = &out.ids()[1..];
            let gold: Vec<usize> = s.iter().copied().chain([EOS]).collect();
            hit += gold.iter().zip(emitted).filter(|(g, e)| g == e).count();
            total += gold.len();
            exact += usize::from(emitted == gold.as_slice());
        }
        Ok((hit as f64 / total as f64, exact as f64 / seqs.len() as f64))
    }
}

impl<T: Scalar> Module<T> for AutoEncoder<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = vec![&self.embed];
        for l in self.enc.iter().chain(&self.dec) {
            v.extend(l.params());
        }
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = vec![&mut self.embed];
        for l in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            v.extend(l.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}

/// Auto-encoder training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub init_range: f64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 16, lr: 1e-3, lr_decay: 0.8, decay_every: 50, seed: 0, init_range: INIT_RANGE }
    }
}

/// Learning rate in effect during (0-based) `epoch`.
pub fn scheduled_lr(lr: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    if every == 0 {
        lr
    } else {
        lr * decay.powi((epoch / every) as i32)
    }
}

/// One row of the auto-encoder training trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Teacher-forced next-token accuracy accumulated during the epoch.
    pub token_acc: f64,
}

/// Resumable training state: model, optimizer, shuffling stream and trace.
pub struct AeTrainer<T> {
    pub model: AutoEncoder<T>,
    pub adam: Adam<T>,
    pub rng: ChaCha8Rng,
    pub config: AeTrainConfig,
    pub trace: Vec<AeEpoch>,
}

/// Shuffling stream used by training loops (stream 0 initializes weights).
pub(crate) fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl<T: Scalar> AeTrainer<T> {
    pub fn new(dims: AeDims, config: AeTrainConfig) -> Result<Self> {
        let model = AutoEncoder::with_init(dims, config.seed, config.init_range)?;
        let adam = Adam::new(&model.params(), AdamConfig::with_lr(config.lr));
        Ok(Self { model, adam, rng: shuffle_rng(config.seed), config, trace: Vec::new() })
    }

    pub fn epochs_done(&self) -> usize {
        self.trace.len()
    }

    pub fn run_epoch(&mut self, corpus: &[Vec<usize>]) -> Result<AeEpoch> {
        if corpus.is_empty() {
            return Err(Error::input("empty corpus"));
        }
        let epoch = self.trace.len();
        let c = &self.config;
        self.adam.set_lr(scheduled_lr(c.lr, c.lr_decay, c.decay_every, epoch));
        let lengths: Vec<usize> = corpus.iter().map(Vec::len).collect();
        let batches = length_buckets(&lengths, self.config.batch_size, &mut self.rng);
        let (mut loss_sum, mut hits, mut tokens) = (0.0, 0usize, 0usize);
        for batch in batches {
            let refs: Vec<&[usize]> = batch.iter().map(|&i| corpus[i].as_slice()).collect();
            let stats = self.model.accumulate_gradients(&refs)?;
            if !stats.loss.is_finite() {
                return Err(Error::Training { what: "reconstruction loss".into(), detail: "non-finite".into() });
            }
            self.adam.step(self.model.params_mut())?;
            loss_sum += stats.loss.as_f64() * stats.tokens as f64;
            hits += stats.hits;
            tokens += stats.tokens;
        }
        let row = AeEpoch { epoch: epoch + 1, loss: loss_sum / tokens as f64, token_acc: hits as f64 / tokens as f64 };
        self.trace.push(row);
        Ok(row)
    }

    /// Runs epochs until `config.epochs` have completed.
    pub fn train(&mut self, corpus: &[Vec<usize>]) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            self.run_epoch(corpus)?;
        }
        Ok(())
    }
}

/// Trains a fresh auto-encoder; returns the model and the per-epoch trace.
pub fn train_autoencoder<T: Scalar>(
    corpus: &[Vec<usize>],
    dims: AeDims,
    config: AeTrainConfig,
) -> Result<(AutoEncoder<T>, Vec<AeEpoch>)> {
    if corpus.is_empty() {
        return Err(Error::input("empty corpus"));
    }
    let mut trainer = AeTrainer::new(dims, config)?;
    trainer.train(corpus)?;
    Ok((trainer.model, trainer.trace))
}
