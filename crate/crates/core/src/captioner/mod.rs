//! Caption decoder fed by the transited caption code.
//!
//! A one-layer LSTM starts from zero state. Its first input is
//! `bridge(u')`, an affine image of the projected code (or of the pooled
//! visual feature when no transition module is used); later inputs are
//! embeddings of the previous gold (training) or emitted (inference) word.
//! With attention enabled, every step also reads a context vector from the
//! region features, concatenated to the input.

pub mod attention;
pub mod decode;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtm::{modality_loss_batch, pool_regions, ModalityLossKind, Mtm, MtmTrace, RegionFeatures};
use crate::numcore::ops::{batch_cross_entropy, log_softmax};
use crate::numcore::{embed_rows, scatter_rows, CellCache, Linear, LstmParams, Module, Parameter, Tensor};
use crate::scalar::Scalar;
use crate::textae::AutoEncoder;
use crate::vocab::{TokenSequence, BOS, EOS};

pub use attention::Attention;
pub use decode::{beam_search, greedy, Hypothesis, StepDecoder};
pub use train::{greedy_scores, train_captioner, CaptionSample, CaptionerConfig, CaptionerEpoch, CaptionerTrainer, GreedyScores, TrainData};

use attention::AttendCache;

pub const INIT_RANGE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionerDims {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub d_v: usize,
    /// Caption-code width `d_e`; the bridge reads `d_e` inputs with the
    /// transition module and `d_v` without it.
    pub d_e: usize,
    pub use_mtm: bool,
    /// Attention width; 0 disables attention.
    pub d_att: usize,
    pub max_len: usize,
}

impl CaptionerDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 || self.d_emb == 0 || self.d_h == 0 || self.d_v == 0 || self.d_e == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("invalid captioner dimensions {self:?}")));
        }
        Ok(())
    }

    pub fn attention(&self) -> bool {
        self.d_att > 0
    }

    fn bridge_in(&self) -> usize {
        if self.use_mtm {
            self.d_e
        } else {
            self.d_v
        }
    }

    fn lstm_in(&self) -> usize {
        self.d_emb + if self.attention() { self.d_v } else { 0 }
    }
}

/// Decoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Captioner<T> {
    pub embed: Parameter<T>,
    pub bridge: Linear<T>,
    pub lstm: LstmParams<T>,
    pub att: Option<Attention<T>>,
    pub out: Linear<T>,
}

/// Decoder plus the optional transition module in front of it.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel<T> {
    pub dims: CaptionerDims,
    pub decoder: Captioner<T>,
    pub mtm: Option<Mtm<T>>,
}

/// Losses of one training step. `total` is exactly `ce + modality`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub ce: f64,
    pub modality: f64,
    pub total: f64,
}

impl TrainStepReport {
    pub fn new(ce: f64, modality: f64) -> Self {
        Self { ce, modality, total: ce + modality }
    }
}

struct StepTrace<T> {
    ids: Option<Vec<usize>>,
    h_prev: Tensor<T>,
    cell: CellCache<T>,
    h: Tensor<T>,
    dlogits: Tensor<T>,
    att: Vec<AttendCache<T>>,
}

/// Saved forward activations of a training batch.
pub struct CaptionTrace<T> {
    regions: Vec<Tensor<T>>,
    bridge_in: Tensor<T>,
    mtm: Option<(MtmTrace<T>, Option<Tensor<T>>)>,
    steps: Vec<StepTrace<T>>,
}

fn concat_cols<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, ca) = a.dims2();
    let cb = b.cols();
    let mut data = Vec::with_capacity(r * (ca + cb));
    for i in 0..r {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::matrix(r, ca + cb, data)
}

fn split_cols<T: Scalar>(x: &Tensor<T>, left: usize) -> (Tensor<T>, Tensor<T>) {
    let (r, c) = x.dims2();
    let (mut a, mut b) = (Vec::with_capacity(r * left), Vec::with_capacity(r * (c - left)));
    for i in 0..r {
        a.extend_from_slice(&x.row(i)[..left]);
        b.extend_from_slice(&x.row(i)[left..]);
    }
    (Tensor::new(vec![r, left], a).expect("split shape"), Tensor::new(vec![r, c - left], b).expect("split shape"))
}

impl<T: Scalar> CaptionModel<T> {
    /// Weights from `uniform(-range, range)` drawn from stream 0 of `seed`.
    pub fn init(dims: CaptionerDims, seed: u64, range: f64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = &dims;
        let decoder = Captioner {
            embed: Parameter::new("cap.embed", Tensor::uniform(&[d.vocab_size, d.d_emb], range, &mut rng)),
            bridge: Linear::init("cap.bridge", d.bridge_in(), d.d_emb, range, &mut rng),
            lstm: LstmParams::init("cap.lstm", d.lstm_in(), d.d_h, range, &mut rng),
            att: d.attention().then(|| Attention::init(d.d_h, d.d_v, d.d_att, range, &mut rng)),
            out: Linear::init("cap.out", d.d_h, d.vocab_size, range, &mut rng),
        };
        let mtm = d.use_mtm.then(|| Mtm::init(d.d_v, d.d_e, range, &mut rng));
        Ok(Self { dims, decoder, mtm })
    }

    pub fn zeros(dims: CaptionerDims) -> Result<Self> {
        dims.validate()?;
        let d = &dims;
        let decoder = Captioner {
            embed: Parameter::new("cap.embed", Tensor::zeros(&[d.vocab_size, d.d_emb])),
            bridge: Linear::zeros("cap.bridge", d.bridge_in(), d.d_emb),
            lstm: LstmParams::zeros("cap.lstm", d.lstm_in(), d.d_h),
            att: d.attention().then(|| Attention::zeros(d.d_h, d.d_v, d.d_att)),
            out: Linear::zeros("cap.out", d.d_h, d.vocab_size),
        };
        let mtm = d.use_mtm.then(|| Mtm::zeros(d.d_v, d.d_e));
        Ok(Self { dims, decoder, mtm })
    }

    fn check_regions(&self, regions: &[&RegionFeatures<T>]) -> Result<()> {
        if let Some(r) = regions.iter().find(|r| r.dim() != self.dims.d_v) {
            return Err(Error::dim(format!("region features of width {} for d_v {}", r.dim(), self.dims.d_v)));
        }
        Ok(())
    }

    /// Bridge input for a batch: `u'` with the transition module, pooled
    /// features otherwise. Also returns the module's trace.
    fn bridge_input(&self, regions: &[&RegionFeatures<T>]) -> Result<(Tensor<T>, Option<MtmTrace<T>>)> {
        let mut pooled = Tensor::zeros(&[regions.len(), self.dims.d_v]);
        for (i, r) in regions.iter().enumerate() {
            pooled.row_mut(i).copy_from_slice(pool_regions(r).data());
        }
        match &self.mtm {
            Some(m) => {
                let (u, trace) = m.forward(&pooled)?;
                Ok((u, Some(trace)))
            }
            None => Ok((pooled, None)),
        }
    }

    /// Projected caption codes `u'` of a batch, `[B x d_e]`.
    pub fn transit(&self, regions: &[&RegionFeatures<T>]) -> Result<Tensor<T>> {
        if self.mtm.is_none() {
            return Err(Error::Config("model has no modality transition module".into()));
        }
        self.check_regions(regions)?;
        Ok(self.bridge_input(regions)?.0)
    }

    /// Teacher-forced forward pass over a batch of equal-length captions
    /// (content ids). `codes` holds the reference caption codes `[B x d_e]`
    /// and is required when the transition module is present.
    pub fn forward(
        &self,
        regions: &[&RegionFeatures<T>],
        captions: &[&[usize]],
        codes: Option<&Tensor<T>>,
        kind: ModalityLossKind,
    ) -> Result<(TrainStepReport, CaptionTrace<T>)> {
        let b = captions.len();
        let n = captions.first().map(|c| c.len()).ok_or_else(|| Error::input("empty batch"))?;
        if n == 0 || captions.iter().any(|c| c.len() != n) {
            return Err(Error::input("batch captions must be non-empty and of equal length"));
        }
        if n > self.dims.max_len {
            return Err(Error::input(format!("caption of {n} tokens exceeds max_len {}", self.dims.max_len)));
        }
        if regions.len() != b {
            return Err(Error::input(format!("{} region sets for {b} captions", regions.len())));
        }
        self.check_regions(regions)?;
        let dec = &self.decoder;
        let (bridge_in, mtm_trace) = self.bridge_input(regions)?;
        let mut modality = T::zero();
        let mtm = match mtm_trace {
            Some(trace) => {
                let codes = codes.ok_or_else(|| Error::input("reference caption codes are required with the transition module"))?;
                if codes.dims2() != (b, self.dims.d_e) {
                    return Err(Error::dim(format!("codes {:?} for batch {b} x d_e {}", codes.shape(), self.dims.d_e)));
                }
                let (l, g) = modality_loss_batch(kind, &bridge_in, codes)?;
                if !l.is_finite() {
                    return Err(Error::Training { what: "modality loss".into(), detail: format!("{kind} loss is {l}") });
                }
                modality = l;
                Some((trace, Some(g)))
            }
            None => None,
        };
        let x0 = dec.bridge.forward(&bridge_in)?;
        let region_mats: Vec<Tensor<T>> = regions.iter().map(|r| r.matrix().clone()).collect();
        let vproj: Vec<Tensor<T>> = match &dec.att {
            Some(att) => region_mats.iter().map(|v| att.project_regions(v)).collect(),
            None => Vec::new(),
        };

        let steps = n + 1;
        let scale = T::one() / T::of(steps as f64);
        let mut h = Tensor::zeros(&[b, self.dims.d_h]);
        let mut c = Tensor::zeros(&[b, self.dims.d_h]);
        let mut ce = T::zero();
        let mut trace = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids = (t > 0).then(|| captions.iter().map(|s| s[t - 1]).collect::<Vec<_>>());
            let targets: Vec<usize> = captions.iter().map(|s| if t < n { s[t] } else { EOS }).collect();
            let x = match &ids {
                None => x0.clone(),
                Some(ids) => embed_rows(&dec.embed.value, ids)?,
            };
            let mut att_caches = Vec::new();
            let input = match &dec.att {
                Some(att) => {
                    let q = att.query.forward(&h)?;
                    let mut ctx = Tensor::zeros(&[b, self.dims.d_v]);
                    for r in 0..b {
                        let (cv, cache) = att.read(q.row(r), &vproj[r], &region_mats[r]);
                        ctx.row_mut(r).copy_from_slice(&cv);
                        att_caches.push(cache);
                    }
                    concat_cols(&x, &ctx)?
                }
                None => x,
            };
            let (h_new, c_new, cell) = dec.lstm.forward(&input, &h, &c)?;
            let logits = dec.out.forward(&h_new)?;
            let (l, mut dl, _) = batch_cross_entropy(&logits, &targets)?;
            dl.scale(scale);
            ce += l * scale;
            trace.push(StepTrace { ids, h_prev: h, cell, h: h_new.clone(), dlogits: dl, att: att_caches });
            h = h_new;
            c = c_new;
        }
        if !ce.is_finite() {
            return Err(Error::Training { what: "cross-entropy".into(), detail: format!("loss is {ce}") });
        }
        let report = TrainStepReport::new(ce.as_f64(), modality.as_f64());
        Ok((report, CaptionTrace { regions: region_mats, bridge_in, mtm, steps: trace }))
    }

    /// Accumulates the gradient of `ce + modality` into the decoder and the
    /// transition module.
    pub fn backward(&mut self, trace: &CaptionTrace<T>) -> Result<()> {
        let dims = self.dims;
        let dec = &mut self.decoder;
        let b = trace.bridge_in.rows();
        let mut dh = Tensor::zeros(&[b, dims.d_h]);
        let mut dc = Tensor::zeros(&[b, dims.d_h]);
        let mut dvproj: Vec<Tensor<T>> = match &dec.att {
            Some(att) => trace.regions.iter().map(|v| Tensor::zeros(&[v.rows(), att.d_a()])).collect(),
            None => Vec::new(),
        };
        let mut dx0 = None;
        for step in trace.steps.iter().rev() {
            let dtop = dec.out.backward(&step.h, &step.dlogits);
            dh.add_assign(&dtop)?;
            let (dinput, mut dh_prev, dc_prev) = dec.lstm.backward(&step.cell, &dh, &dc);
            let dx = match &mut dec.att {
                Some(att) => {
                    let (dx, dctx) = split_cols(&dinput, dims.d_emb);
                    let mut dq = Tensor::zeros(&[b, att.d_a()]);
                    for r in 0..b {
                        att.read_backward(&step.att[r], &trace.regions[r], dctx.row(r), dq.row_mut(r), &mut dvproj[r]);
                    }
                    let dh_att = att.query.backward(&step.h_prev, &dq);
                    dh_prev.add_assign(&dh_att)?;
                    dx
                }
                None => dinput,
            };
            match &step.ids {
                Some(ids) => scatter_rows(&mut dec.embed.grad, ids, &dx),
                None => dx0 = Some(dx),
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        if let Some(att) = &mut dec.att {
            for (v, dv) in trace.regions.iter().zip(&dvproj) {
                att.regions_backward(v, dv);
            }
        }
        let dx0 = dx0.expect("trace has a first step");
        let mut du = dec.bridge.backward(&trace.bridge_in, &dx0);
        if let (Some(m), Some((mtrace, dmod))) = (&mut self.mtm, &trace.mtm) {
            if let Some(g) = dmod {
                du.add_assign(g)?;
            }
            m.backward(mtrace, &du)?;
        }
        Ok(())
    }

    /// Losses of one sample with its reference code taken from the frozen
    /// auto-encoder. No gradients are accumulated.
    pub fn forward_train(
        &self,
        ae: &AutoEncoder<T>,
        regions: &RegionFeatures<T>,
        caption: &[usize],
        kind: ModalityLossKind,
    ) -> Result<TrainStepReport> {
        let codes = if self.mtm.is_some() {
            let (u, _) = ae.encoder_forward(&[caption])?;
            Some(u)
        } else {
            None
        };
        Ok(self.forward(&[regions], &[caption], codes.as_ref(), kind)?.0)
    }

    /// Step-wise scorer for one scene.
    pub fn session(&self, regions: &RegionFeatures<T>) -> Result<Session<'_, T>> {
        self.check_regions(&[regions])?;
        let (bridge_in, _) = self.bridge_input(&[regions])?;
        let x0 = self.decoder.bridge.forward(&bridge_in)?;
        let vproj = self.decoder.att.as_ref().map(|a| a.project_regions(regions.matrix()));
        Ok(Session { model: self, x0, regions: regions.matrix().clone(), vproj })
    }

    /// Argmax decoding; output starts with `<bos>` and ends with `<eos>`
    /// unless `max_len` tokens were emitted first.
    pub fn greedy_decode(&self, regions: &RegionFeatures<T>) -> Result<TokenSequence> {
        let hyp = greedy(&self.session(regions)?)?;
        Ok(TokenSequence(std::iter::once(BOS).chain(hyp.tokens).collect()))
    }

    pub fn beam_decode(&self, regions: &RegionFeatures<T>, width: usize) -> Result<TokenSequence> {
        let hyp = beam_search(&self.session(regions)?, width)?;
        Ok(TokenSequence(std::iter::once(BOS).chain(hyp.tokens).collect()))
    }
}

impl<T: Scalar> Module<T> for CaptionModel<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let d = &self.decoder;
        let mut v = vec![&d.embed];
        v.extend(d.bridge.params());
        v.extend(d.lstm.params());
        if let Some(a) = &d.att {
            v.extend(a.params());
        }
        v.extend(d.out.params());
        if let Some(m) = &self.mtm {
            v.extend(m.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let Captioner { embed, bridge, lstm, att, out } = &mut self.decoder;
        let mut v = vec![embed];
        v.extend(bridge.params_mut());
        v.extend(lstm.params_mut());
        if let Some(a) = att {
            v.extend(a.params_mut());
        }
        v.extend(out.params_mut());
        if let Some(m) = &mut self.mtm {
            v.extend(m.params_mut());
        }
        v
    }
}

/// Decoding state of one scene: the bridged first input and the regions.
pub struct Session<'a, T> {
    model: &'a CaptionModel<T>,
    x0: Tensor<T>,
    regions: Tensor<T>,
    vproj: Option<Tensor<T>>,
}

impl<'a, T: Scalar> Session<'a, T> {
    /// Attention weights the decoder would use from state `h` (for inspection).
    pub fn attention_weights(&self, h: &Tensor<T>) -> Result<Option<Vec<T>>> {
        let (Some(att), Some(vproj)) = (&self.model.decoder.att, &self.vproj) else {
            return Ok(None);
        };
        let q = att.query.forward(h)?;
        Ok(Some(att.read(q.data(), vproj, &self.regions).1.weights))
    }
}

impl<'a, T: Scalar> StepDecoder for Session<'a, T> {
    type State = (Tensor<T>, Tensor<T>);

    fn max_len(&self) -> usize {
        self.model.dims.max_len
    }

    fn initial(&self) -> Self::State {
        let d = self.model.dims.d_h;
        (Tensor::zeros(&[1, d]), Tensor::zeros(&[1, d]))
    }

    fn advance(&self, state: &Self::State, prev: Option<usize>) -> Result<(Self::State, Vec<f64>)> {
        let dec = &self.model.decoder;
        let (h, c) = state;
        let x = match prev {
            None => self.x0.clone(),
            Some(id) => embed_rows(&dec.embed.value, &[id])?,
        };
        let input = match (&dec.att, &self.vproj) {
            (Some(att), Some(vproj)) => {
                let q = att.query.forward(h)?;
                let (ctx, _) = att.read(q.data(), vproj, &self.regions);
                concat_cols(&x, &Tensor::matrix(1, ctx.len(), ctx)?)?
            }
            _ => x,
        };
        let (h, c, _) = dec.lstm.forward(&input, h, c)?;
        let logits = dec.out.forward(&h)?;
        let logp = log_softmax(logits.data()).into_iter().map(|v| v.as_f64()).collect();
        Ok(((h, c), logp))
    }
}
