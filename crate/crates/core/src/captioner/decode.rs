//! Greedy and beam-search decoding over any step-wise scorer.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::vocab::EOS;

/// A left-to-right scorer: given a state and the previously emitted token
/// (`None` at the first step), returns the next state and the log-probability
/// of every vocabulary entry.
pub trait StepDecoder {
    type State: Clone;

    fn max_len(&self) -> usize;
    fn initial(&self) -> Self::State;
    fn advance(&self, state: &Self::State, prev: Option<usize>) -> Result<(Self::State, Vec<f64>)>;
}

/// Emitted tokens (ending in `<eos>` unless truncated at `max_len`) and
/// their summed log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Length-normalized score: mean log-probability per emitted token.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

/// Index of the largest log-probability; ties go to the lowest id.
fn best_token(logp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logp.iter().enumerate().skip(1) {
        if x > logp[best] {
            best = i;
        }
    }
    best
}

pub fn greedy<D: StepDecoder>(dec: &D) -> Result<Hypothesis> {
    let mut state = dec.initial();
    let mut prev = None;
    let mut hyp = Hypothesis { tokens: Vec::new(), log_prob: 0.0 };
    for _ in 0..dec.max_len() {
        let (next, logp) = dec.advance(&state, prev)?;
        let tok = best_token(&logp);
        hyp.tokens.push(tok);
        hyp.log_prob += logp[tok];
        if tok == EOS {
            break;
        }
        state = next;
        prev = Some(tok);
    }
    Ok(hyp)
}

struct Beam<S> {
    hyp: Hypothesis,
    state: S,
}

struct Candidate {
    beam: usize,
    token: usize,
    step_logp: f64,
    total: f64,
}

/// Candidates ordered by cumulative log-probability, then by the step's own
/// log-probability, then by lower token id and lower beam index.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.total
        .total_cmp(&a.total)
        .then(b.step_logp.total_cmp(&a.step_logp))
        .then(a.token.cmp(&b.token))
        .then(a.beam.cmp(&b.beam))
}

/// Beam search keeping `width` prefixes per step, ranked by cumulative
/// log-probability. Finished hypotheses (those emitting `<eos>` or reaching
/// `max_len`) compete on the length-normalized score; the greedy hypothesis
/// is always among the contenders, so the result never scores below it.
pub fn beam_search<D: StepDecoder>(dec: &D, width: usize) -> Result<Hypothesis> {
    if width < 1 {
        return Err(Error::input(format!("beam width must be at least 1, got {width}")));
    }
    let mut finished = vec![greedy(dec)?];
    let mut alive = vec![Beam { hyp: Hypothesis { tokens: Vec::new(), log_prob: 0.0 }, state: dec.initial() }];
    for step in 0..dec.max_len() {
        let mut cands = Vec::new();
        let mut states = Vec::with_capacity(alive.len());
        for (bi, beam) in alive.iter().enumerate() {
            let (state, logp) = dec.advance(&beam.state, beam.hyp.tokens.last().copied())?;
            for (token, &lp) in logp.iter().enumerate() {
                cands.push(Candidate { beam: bi, token, step_logp: lp, total: beam.hyp.log_prob + lp });
            }
            states.push(state);
        }
        cands.sort_by(rank);
        let last_step = step + 1 == dec.max_len();
        let mut next = Vec::with_capacity(width);
        for c in cands.into_iter().take(width) {
            let mut tokens = alive[c.beam].hyp.tokens.clone();
            tokens.push(c.token);
            let hyp = Hypothesis { tokens, log_prob: c.total };
            if c.token == EOS || last_step {
                finished.push(hyp);
            } else {
                next.push(Beam { hyp, state: states[c.beam].clone() });
            }
        }
        if next.is_empty() {
            break;
        }
        alive = next;
    }
    let mut best = 0;
    for (i, h) in finished.iter().enumerate().skip(1) {
        if h.score() > finished[best].score() {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}
