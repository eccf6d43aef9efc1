//! Brute-force caption metrics over plain word lists: nested loops, no maps,
//! no shared code with the library.

#[derive(Clone, Debug)]
pub struct Item {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(tokens[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu(items: &[Item], max_n: usize) -> Vec<f64> {
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for it in items {
        for n in 1..=max_n {
            let cg = grams(&it.candidate, n);
            totals[n - 1] += cg.len();
            for g in distinct(&cg) {
                let mut best = 0;
                for r in &it.references {
                    best = best.max(count(&grams(r, n), &g));
                }
                matches[n - 1] += count(&cg, &g).min(best);
            }
        }
        let c = it.candidate.len() as i64;
        let mut chosen = it.references[0].len() as i64;
        for r in &it.references[1..] {
            let l = r.len() as i64;
            if (l - c).abs() < (chosen - c).abs() || ((l - c).abs() == (chosen - c).abs() && l < chosen) {
                chosen = l;
            }
        }
        cand_len += it.candidate.len();
        ref_len += chosen as usize;
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut out = Vec::new();
    for k in 1..=max_n {
        let mut product = 1.0;
        for j in 0..k {
            product *= if totals[j] == 0 { 0.0 } else { matches[j] as f64 / totals[j] as f64 };
        }
        out.push(if product == 0.0 { 0.0 } else { bp * product.powf(1.0 / k as f64) });
    }
    out
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table[a.len()][b.len()]
}

pub fn rouge_l(items: &[Item], beta: f64) -> f64 {
    let mut sum = 0.0;
    for it in items {
        let mut best: f64 = 0.0;
        for r in &it.references {
            let l = lcs(&it.candidate, r) as f64;
            if l > 0.0 {
                let p = l / it.candidate.len() as f64;
                let rec = l / r.len() as f64;
                let f = (1.0 + beta * beta) * p * rec / (rec + beta * beta * p);
                best = best.max(f);
            }
        }
        sum += best;
    }
    sum / items.len() as f64
}

pub fn cider(items: &[Item], max_n: usize) -> f64 {
    let docs = items.len() as f64;
    let mut total = 0.0;
    for it in items {
        let mut score = 0.0;
        for n in 1..=max_n {
            let df = |g: &[String]| -> f64 {
                let mut d = 0usize;
                for other in items {
                    if other.references.iter().any(|r| count(&grams(r, n), g) > 0) {
                        d += 1;
                    }
                }
                d.max(1) as f64
            };
            let cg = grams(&it.candidate, n);
            let mut per_ref = 0.0;
            for r in &it.references {
                let rg = grams(r, n);
                let mut all = cg.clone();
                all.extend(rg.iter().cloned());
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for g in distinct(&all) {
                    let idf = (docs / df(&g)).ln();
                    let a = count(&cg, &g) as f64 * idf;
                    let b = count(&rg, &g) as f64 * idf;
                    dot += a * b;
                    na += a * a;
                    nb += b * b;
                }
                if na > 0.0 && nb > 0.0 {
                    per_ref += dot / (na.sqrt() * nb.sqrt());
                }
            }
            score += per_ref / it.references.len() as f64;
        }
        total += 10.0 * score / max_n as f64;
    }
    total / items.len() as f64
}
