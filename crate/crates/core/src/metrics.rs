//! Corpus-level caption metrics: BLEU-1..4, ROUGE-L and CIDEr, plus the
//! Spearman rank correlation used to relate training curves.
//!
//! Per-id statistics may be computed on several threads (capped by the
//! `MBRIDGE_THREADS` environment variable); they are always reduced in id
//! order, so results do not depend on the thread count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenSequence, BOS, EOS, PAD};

pub const MAX_N: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SCALE: f64 = 10.0;
pub const THREADS_ENV: &str = "MBRIDGE_THREADS";

/// Special tokens dropped from word-level inputs before scoring.
const SPECIAL_WORDS: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// One scored item: a candidate and its references, as interned token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalEntry {
    pub id: u64,
    pub candidate: Vec<u32>,
    pub references: Vec<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCorpus {
    entries: Vec<EvalEntry>,
}

fn strip_ids(s: &[usize]) -> Vec<u32> {
    s.iter().filter(|&&t| t != PAD && t != BOS && t != EOS).map(|&t| t as u32).collect()
}

impl EvalCorpus {
    pub fn new(entries: Vec<EvalEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id) {
                return Err(Error::input(format!("duplicate id {}", e.id)));
            }
            if e.references.is_empty() {
                return Err(Error::input(format!("id {} has no reference", e.id)));
            }
        }
        Ok(Self { entries })
    }

    /// Builds a corpus from token-id sequences; `<pad>`, `<bos>` and `<eos>` are removed.
    pub fn from_sequences(items: &[(u64, TokenSequence, Vec<TokenSequence>)]) -> Result<Self> {
        Self::new(
            items
                .iter()
                .map(|(id, cand, refs)| EvalEntry {
                    id: *id,
                    candidate: strip_ids(cand.ids()),
                    references: refs.iter().map(|r| strip_ids(r.ids())).collect(),
                })
                .collect(),
        )
    }

    /// Aligns word-level candidates and references by id. Several reference
    /// records may share an id. Every id must appear on both sides.
    pub fn from_words(candidates: &[(u64, Vec<String>)], references: &[(u64, Vec<String>)]) -> Result<Self> {
        let mut interner: HashMap<String, u32> = HashMap::new();
        let mut intern = |words: &[String]| -> Vec<u32> {
            words
                .iter()
                .filter(|w| !SPECIAL_WORDS.contains(&w.as_str()))
                .map(|w| {
                    let next = interner.len() as u32;
                    *interner.entry(w.clone()).or_insert(next)
                })
                .collect()
        };
        let mut refs: BTreeMap<u64, Vec<Vec<u32>>> = BTreeMap::new();
        for (id, words) in references {
            let r = intern(words);
            refs.entry(*id).or_default().push(r);
        }
        let cand_ids: BTreeSet<u64> = candidates.iter().map(|(id, _)| *id).collect();
        let no_ref: Vec<u64> = cand_ids.iter().filter(|id| !refs.contains_key(id)).copied().collect();
        let no_cand: Vec<u64> = refs.keys().filter(|id| !cand_ids.contains(id)).copied().collect();
        if !no_ref.is_empty() || !no_cand.is_empty() {
            return Err(Error::input(format!(
                "ids do not align: missing references for {no_ref:?}, missing candidates for {no_cand:?}"
            )));
        }
        let entries = candidates
            .iter()
            .map(|(id, words)| EvalEntry { id: *id, candidate: intern(words), references: refs[id].clone() })
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[EvalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn non_empty(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::input("empty evaluation corpus"));
        }
        Ok(())
    }
}

/// Worker count for per-id statistics.
pub fn eval_threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => cap.min(avail),
        _ => avail,
    }
}

/// Applies `f` to every entry, returning results in entry order.
fn per_entry<R: Send, F>(entries: &[EvalEntry], f: F) -> Vec<R>
where
    F: Fn(&EvalEntry) -> R + Sync,
{
    let threads = eval_threads().min(entries.len() / 64).max(1);
    if threads == 1 {
        return entries.iter().map(&f).collect();
    }
    let chunk = entries.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = entries
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("metric worker panicked")).collect()
    })
}

fn ngram_counts(tokens: &[u32], n: usize) -> BTreeMap<&[u32], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-entry BLEU statistics: clipped matches and totals per order, and the
/// candidate and closest-reference lengths.
struct BleuStats {
    matches: [usize; MAX_N],
    totals: [usize; MAX_N],
    cand_len: usize,
    ref_len: usize,
}

fn bleu_stats(e: &EvalEntry, max_n: usize) -> BleuStats {
    let mut matches = [0; MAX_N];
    let mut totals = [0; MAX_N];
    for n in 1..=max_n {
        let cand = ngram_counts(&e.candidate, n);
        let mut max_ref: BTreeMap<&[u32], usize> = BTreeMap::new();
        for r in &e.references {
            for (g, c) in ngram_counts(r, n) {
                let m = max_ref.entry(g).or_insert(0);
                *m = (*m).max(c);
            }
        }
        for (g, c) in &cand {
            matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            totals[n - 1] += c;
        }
    }
    let c = e.candidate.len();
    // Closest reference length; the shorter one wins a tie.
    let ref_len = e
        .references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("entries carry references");
    BleuStats { matches, totals, cand_len: c, ref_len }
}

/// Corpus BLEU-1..`max_n` with clipped counts, uniform weights, the brevity
/// penalty and no smoothing. Element `k` holds BLEU-(k+1).
pub fn bleu(corpus: &EvalCorpus, max_n: usize) -> Result<Vec<f64>> {
    corpus.non_empty()?;
    if !(1..=MAX_N).contains(&max_n) {
        return Err(Error::input(format!("BLEU order must be in 1..={MAX_N}, got {max_n}")));
    }
    let stats = per_entry(&corpus.entries, |e| bleu_stats(e, max_n));
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let (mut c, mut r) = (0usize, 0usize);
    for s in &stats {
        for k in 0..max_n {
            matches[k] += s.matches[k];
            totals[k] += s.totals[k];
        }
        c += s.cand_len;
        r += s.ref_len;
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for k in 0..max_n {
        if matches[k] == 0 {
            zero = true;
        } else {
            log_sum += (matches[k] as f64 / totals[k] as f64).ln();
        }
        out.push(if zero { 0.0 } else { bp * (log_sum / (k + 1) as f64).exp() });
    }
    Ok(out)
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_pair(cand: &[u32], reference: &[u32], beta: f64) -> f64 {
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over the corpus of the best per-reference LCS F-measure.
pub fn rouge_l(corpus: &EvalCorpus, beta: f64) -> Result<f64> {
    corpus.non_empty()?;
    let scores = per_entry(&corpus.entries, |e| {
        e.references.iter().map(|r| rouge_pair(&e.candidate, r, beta)).fold(0.0, f64::max)
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

type Ngrams<'a> = BTreeMap<&'a [u32], usize>;
type Weighted<'a> = (BTreeMap<&'a [u32], f64>, f64);

fn tfidf<'a>(counts: &Ngrams<'a>, df: &HashMap<&[u32], usize>, log_docs: f64) -> Weighted<'a> {
    let mut vec = BTreeMap::new();
    let mut norm = 0.0;
    for (g, &c) in counts {
        let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
        let w = c as f64 * (log_docs - d.ln());
        norm += w * w;
        vec.insert(*g, w);
    }
    (vec, norm.sqrt())
}

fn cosine(a: &Weighted<'_>, b: &Weighted<'_>) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().filter_map(|(g, x)| b.0.get(g).map(|y| x * y)).sum();
    dot / (a.1 * b.1)
}

/// Plain CIDEr (TF-IDF cosine averaged over references and orders 1..`max_n`,
/// times 10), averaged over the corpus. Document frequencies count ids whose
/// references contain an n-gram.
pub fn cider(corpus: &EvalCorpus, max_n: usize) -> Result<f64> {
    corpus.non_empty()?;
    if corpus.len() < 2 {
        return Err(Error::input("CIDEr needs at least 2 ids for document frequencies"));
    }
    if !(1..=MAX_N).contains(&max_n) {
        return Err(Error::input(format!("CIDEr order must be in 1..={MAX_N}, got {max_n}")));
    }
    let log_docs = (corpus.len() as f64).ln();
    let mut dfs: Vec<HashMap<&[u32], usize>> = vec![HashMap::new(); max_n];
    for e in &corpus.entries {
        for (n, df) in (1..=max_n).zip(dfs.iter_mut()) {
            let mut present: BTreeSet<&[u32]> = BTreeSet::new();
            for r in &e.references {
                present.extend(ngram_counts(r, n).into_keys());
            }
            for g in present {
                *df.entry(g).or_insert(0) += 1;
            }
        }
    }
    let scores = per_entry(&corpus.entries, |e| {
        let mut total = 0.0;
        for (n, df) in (1..=max_n).zip(&dfs) {
            let c = tfidf(&ngram_counts(&e.candidate, n), df, log_docs);
            let sum: f64 = e.references.iter().map(|r| cosine(&c, &tfidf(&ngram_counts(r, n), df, log_docs))).sum();
            total += sum / e.references.len() as f64;
        }
        CIDER_SCALE * total / max_n as f64
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// BLEU-1..4, ROUGE-L and CIDEr of one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: [f64; MAX_N],
    pub rouge_l: f64,
    pub cider: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "bleu1,bleu2,bleu3,bleu4,rouge_l,cider";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        for b in &self.bleu {
            write!(s, "{b},").expect("write to string");
        }
        write!(s, "{},{}", self.rouge_l, self.cider).expect("write to string");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Computes every metric. CIDEr needs at least two ids; a one-id corpus is an error.
pub fn evaluate(corpus: &EvalCorpus) -> Result<EvalReport> {
    let b = bleu(corpus, MAX_N)?;
    Ok(EvalReport {
        bleu: [b[0], b[1], b[2], b[3]],
        rouge_l: rouge_l(corpus, ROUGE_BETA)?,
        cider: cider(corpus, MAX_N)?,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::input(format!("series lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::input("correlation needs at least 2 points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite value in correlation input"));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::input("correlation undefined for a constant series"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
