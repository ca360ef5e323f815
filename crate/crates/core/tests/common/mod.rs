//! Brute-force reference implementations and random instance generators
//! shared by the integration tests. Everything here is written from the
//! metric definitions directly, without calling into the library's metric
//! code, so agreement between the two is meaningful.

#![allow(dead_code)]

use cape_core::corpus::Fact;
use cape_core::rng::StreamRng;

/// Exact rational value as (numerator, denominator); None when undefined.
pub type Ratio = Option<(usize, usize)>;

pub fn ratio(num: usize, den: usize) -> Ratio {
    (den > 0).then_some((num, den))
}

pub fn ratio_f64(r: Ratio) -> Option<f64> {
    r.map(|(n, d)| n as f64 / d as f64)
}

fn is_entity(t: &str) -> bool {
    class_index(t, 'E').is_some()
}

fn class_index(t: &str, class: char) -> Option<u32> {
    let rest = t.strip_prefix(class)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if rest.len() > 1 && rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

/// Entity tokens of `counted` (with repeats) that occur anywhere in `other`.
fn entity_overlap(counted: &[String], other: &[String]) -> Ratio {
    let mut hits = 0;
    let mut total = 0;
    for t in counted {
        if !is_entity(t) {
            continue;
        }
        total += 1;
        if other.iter().any(|o| o == t) {
            hits += 1;
        }
    }
    ratio(hits, total)
}

pub fn entity_precision(summary: &[String], source: &[String]) -> Ratio {
    entity_overlap(summary, source)
}

pub fn entity_recall(generated: &[String], reference: &[String]) -> Ratio {
    entity_overlap(reference, generated)
}

/// (errors, arcs): every SEP-delimited non-empty chunk is one arc; it is
/// entailed only when it is exactly `E P E` with distinct entities and that
/// triple is a source fact.
pub fn arcs(summary: &[String], source_facts: &[Fact]) -> (usize, usize) {
    let mut errors = 0;
    let mut total = 0;
    let mut chunk: Vec<&str> = Vec::new();
    let mut close = |chunk: &mut Vec<&str>| {
        if chunk.is_empty() {
            return;
        }
        total += 1;
        let entailed = match chunk[..] {
            [s, p, o] => match (
                class_index(s, 'E'),
                class_index(p, 'P'),
                class_index(o, 'E'),
            ) {
                (Some(s), Some(p), Some(o)) if s != o => source_facts
                    .iter()
                    .any(|f| f.subject == s && f.predicate == p && f.object == o),
                _ => false,
            },
            _ => false,
        };
        if !entailed {
            errors += 1;
        }
        chunk.clear();
    };
    for t in summary {
        if t == "SEP" {
            close(&mut chunk);
        } else {
            chunk.push(t);
        }
    }
    close(&mut chunk);
    (errors, total)
}

fn ngrams(seq: &[String], n: usize) -> Vec<&[String]> {
    if seq.len() < n {
        return Vec::new();
    }
    (0..=seq.len() - n).map(|i| &seq[i..i + n]).collect()
}

/// Clipped match count by repeated pairing: each candidate n-gram consumes
/// one unused equal reference n-gram.
pub fn rouge_n(cand: &[String], reference: &[String], n: usize) -> (Ratio, Ratio) {
    let c = ngrams(cand, n);
    let r = ngrams(reference, n);
    let mut used = vec![false; r.len()];
    let mut matched = 0;
    for g in &c {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *g) {
            used[j] = true;
            matched += 1;
        }
    }
    (ratio(matched, c.len()), ratio(matched, r.len()))
}

fn is_subsequence(sub: &[&String], seq: &[String]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|t| it.any(|s| s == *t))
}

/// Longest common subsequence by enumerating every subsequence of the
/// shorter input. Exponential; keep inputs short.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "oracle LCS input too long");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&String> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &short[i])
            .collect();
        if is_subsequence(&sub, long) {
            best = k;
        }
    }
    best
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> (Ratio, Ratio) {
    let l = lcs(cand, reference);
    (ratio(l, cand.len()), ratio(l, reference.len()))
}

/// (precision, recall, f1) with zero for undefined parts.
pub fn prf(p: Ratio, r: Ratio) -> (f64, f64, f64) {
    let p = ratio_f64(p).unwrap_or(0.0);
    let r = ratio_f64(r).unwrap_or(0.0);
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f)
}

const ALPHABET: [&str; 12] = [
    "E0", "E1", "E2", "E3", "E4", "P0", "P1", "P2", "F0", "F1", "SEP", "SEP",
];

/// Short random token sequence over a small alphabet so collisions are common.
pub fn random_tokens(rng: &mut StreamRng, max_len: usize) -> Vec<String> {
    let n = rng.below(max_len + 1);
    (0..n)
        .map(|_| ALPHABET[rng.below(ALPHABET.len())].to_string())
        .collect()
}

/// Either well-formed fact renderings or free token soup.
pub fn random_summary(rng: &mut StreamRng, max_len: usize) -> Vec<String> {
    if rng.uniform() < 0.5 {
        return random_tokens(rng, max_len);
    }
    let mut out = Vec::new();
    for _ in 0..rng.below(4) {
        let s = rng.below(5);
        let o = rng.below(5);
        out.extend([
            format!("E{s}"),
            format!("P{}", rng.below(3)),
            format!("E{o}"),
            "SEP".into(),
        ]);
    }
    out
}

pub fn random_facts(rng: &mut StreamRng, n: usize) -> Vec<Fact> {
    (0..n)
        .filter_map(|_| {
            let s = rng.below(5) as u32;
            let o = rng.below(5) as u32;
            (s != o).then(|| Fact::new(s, rng.below(3) as u32, o))
        })
        .collect()
}
