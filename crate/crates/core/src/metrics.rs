//! Factuality and overlap metrics.
//!
//! Every ratio whose denominator can be zero is returned as `Option<f64>`;
//! `None` values are left out of corpus means and counted separately.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::hash::Hash;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_facts, Example, Fact, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Class-marked tokens: `E<k>` is an entity, facts can be parsed.
    Synthetic,
    /// Free text: a capitalization/digit heuristic finds entities, no facts.
    Natural,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(ScoreMode::Synthetic),
            "natural" => Ok(ScoreMode::Natural),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "A", "An", "And", "As", "At", "But", "By", "For", "He", "Her", "His", "I", "If", "In", "It",
    "Its", "Mr", "Mrs", "Ms", "Of", "On", "Or", "She", "So", "The", "Their", "There", "They",
    "This", "To", "We", "What", "When", "Who", "With", "You",
];

/// Finds entity tokens in a token sequence.
#[derive(Debug, Clone)]
pub struct EntityExtractor {
    pub mode: ScoreMode,
    pub stopwords: BTreeSet<String>,
}

impl EntityExtractor {
    pub fn synthetic() -> Self {
        EntityExtractor {
            mode: ScoreMode::Synthetic,
            stopwords: BTreeSet::new(),
        }
    }

    pub fn natural() -> Self {
        EntityExtractor {
            mode: ScoreMode::Natural,
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn for_mode(mode: ScoreMode) -> Self {
        match mode {
            ScoreMode::Synthetic => Self::synthetic(),
            ScoreMode::Natural => Self::natural(),
        }
    }

    fn is_entity(&self, token: &str) -> bool {
        match self.mode {
            ScoreMode::Synthetic => Token::is_entity(token),
            ScoreMode::Natural => {
                if self.stopwords.contains(token) {
                    return false;
                }
                let has_digit = token.chars().any(|c| c.is_ascii_digit());
                let capitalized_word = token.chars().next().is_some_and(char::is_uppercase)
                    && token.chars().all(char::is_alphabetic);
                has_digit || capitalized_word
            }
        }
    }

    /// Entity tokens with multiplicity, in order of appearance.
    pub fn extract<'a, S: AsRef<str>>(&self, tokens: &'a [S]) -> EntitySet<'a> {
        EntitySet {
            mode: self.mode,
            tokens: tokens
                .iter()
                .map(AsRef::as_ref)
                .filter(|t| self.is_entity(t))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySet<'a> {
    pub mode: ScoreMode,
    pub tokens: Vec<&'a str>,
}

impl<'a> EntitySet<'a> {
    pub fn distinct(&self) -> BTreeSet<&'a str> {
        self.tokens.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn extract_entities<S: AsRef<str>>(tokens: &[S], mode: ScoreMode) -> Vec<String> {
    EntityExtractor::for_mode(mode)
        .extract(tokens)
        .tokens
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Share of `numerator_side` entity tokens (with multiplicity) that appear
/// in the entity set of `other`.
fn entity_overlap<S: AsRef<str>>(
    numerator_side: &[S],
    other: &[S],
    extractor: &EntityExtractor,
) -> Option<f64> {
    let ents = extractor.extract(numerator_side);
    if ents.is_empty() {
        return None;
    }
    let present = extractor.extract(other).distinct();
    let hits = ents.tokens.iter().filter(|t| present.contains(*t)).count();
    Some(hits as f64 / ents.len() as f64)
}

/// Entity precision against the source (E-P_src).
pub fn entity_precision_src<S: AsRef<str>>(
    summary: &[S],
    source: &[S],
    extractor: &EntityExtractor,
) -> Option<f64> {
    entity_overlap(summary, source, extractor)
}

/// Entity recall of the reference (E-R_ref).
pub fn entity_recall_ref<S: AsRef<str>>(
    generated: &[S],
    reference: &[S],
    extractor: &EntityExtractor,
) -> Option<f64> {
    entity_overlap(reference, generated, extractor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArcCounts {
    pub dae_errors: usize,
    pub arc_total: usize,
}

impl ArcCounts {
    pub fn d_arc(&self) -> Option<f64> {
        (self.arc_total > 0)
            .then(|| (self.arc_total - self.dae_errors) as f64 / self.arc_total as f64)
    }
}

/// Exact claim-level entailment: every parsed fact must be a source fact,
/// and every unparseable span counts as an error.
pub fn fact_arc_entailment<S: AsRef<str>>(summary: &[S], source_facts: &[Fact]) -> ArcCounts {
    let parsed = parse_facts(summary);
    let source: BTreeSet<&Fact> = source_facts.iter().collect();
    let unsupported = parsed.facts.iter().filter(|f| !source.contains(f)).count();
    ArcCounts {
        dae_errors: unsupported + parsed.unparseable_spans,
        arc_total: parsed.facts.len() + parsed.unparseable_spans,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matches: usize, cand_total: usize, ref_total: usize) -> Prf {
        let precision = if cand_total > 0 {
            matches as f64 / cand_total as f64
        } else {
            0.0
        };
        let recall = if ref_total > 0 {
            matches as f64 / ref_total as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts<S: AsRef<str> + Eq + Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n<S: AsRef<str> + Eq + Hash>(candidate: &[S], reference: &[S], n: usize) -> Prf {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, c)| refc.get(g).map_or(0, |r| (*c).min(*r)))
        .sum();
    let total = |len: usize| len.saturating_sub(n - 1);
    Prf::from_counts(matches, total(candidate.len()), total(reference.len()))
}

pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common subsequence.
pub fn rouge_l<S: PartialEq>(candidate: &[S], reference: &[S]) -> Prf {
    let l = lcs_len(candidate, reference);
    Prf::from_counts(l, candidate.len(), reference.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub ep_src: Option<f64>,
    pub er_ref: Option<f64>,
    pub dae_errors: usize,
    pub arc_total: usize,
    pub d_arc: Option<f64>,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub summary_length: usize,
}

/// Corpus means. Macro averages (mean of per-example values) are primary;
/// the `*_micro` fields pool numerators and denominators across examples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub averaging: String,
    pub n_examples: usize,
    pub d_arc: Option<f64>,
    pub d_sum: Option<f64>,
    pub ep_src: Option<f64>,
    pub er_ref: Option<f64>,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub summary_length: f64,
    pub d_arc_absent: usize,
    pub ep_src_absent: usize,
    pub er_ref_absent: usize,
    pub d_arc_micro: Option<f64>,
    pub ep_src_micro: Option<f64>,
    pub er_ref_micro: Option<f64>,
}

impl Aggregates {
    /// Values in report column order: D_arc, D_sum, E-P_src, E-R_ref, R1, R2, RL, len.
    pub fn columns(&self) -> [Option<f64>; 8] {
        [
            self.d_arc,
            self.d_sum,
            self.ep_src,
            self.er_ref,
            Some(self.rouge1.f1),
            Some(self.rouge2.f1),
            Some(self.rouge_l.f1),
            Some(self.summary_length),
        ]
    }
}

pub const AGGREGATE_COLUMNS: [&str; 8] = [
    "D_arc", "D_sum", "E-P_src", "E-R_ref", "R1", "R2", "RL", "len",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: ScoreMode,
    pub examples: Vec<ExampleScore>,
    pub aggregates: Aggregates,
}

impl ScoreReport {
    pub fn get(&self, id: &str) -> Option<&ExampleScore> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Header plus one row of aggregates.
    pub fn to_csv(&self) -> String {
        let mut out = AGGREGATE_COLUMNS.join(",");
        out.push('\n');
        out.push_str(&format_row(&self.aggregates.columns()));
        out.push('\n');
        out
    }
}

pub fn format_value(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn format_row(values: &[Option<f64>]) -> String {
    values
        .iter()
        .map(|v| format_value(*v))
        .collect::<Vec<_>>()
        .join(",")
}

/// A generated summary for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryRecord {
    id: String,
    summary: String,
}

/// Write generated summaries as JSONL lines of `{id, summary}`.
pub fn write_summaries(path: &Path, generated: &[Generated]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in generated {
        let record = SummaryRecord {
            id: g.id.clone(),
            summary: g.tokens.join(" "),
        };
        let line = serde_json::to_string(&record).expect("plain strings serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summaries(path: &Path) -> Result<Vec<Generated>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SummaryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(Generated {
            id: record.id,
            tokens: record
                .summary
                .split_whitespace()
                .map(str::to_string)
                .collect(),
        });
    }
    Ok(out)
}

pub fn score_example(
    example: &Example,
    generated: &[String],
    extractor: &EntityExtractor,
) -> ExampleScore {
    let arcs = match extractor.mode {
        ScoreMode::Synthetic => fact_arc_entailment(generated, &example.source_facts),
        ScoreMode::Natural => ArcCounts::default(),
    };
    ExampleScore {
        id: example.id.clone(),
        ep_src: entity_precision_src(generated, &example.source_tokens, extractor),
        er_ref: entity_recall_ref(generated, &example.summary_tokens, extractor),
        dae_errors: arcs.dae_errors,
        arc_total: arcs.arc_total,
        d_arc: arcs.d_arc(),
        rouge1: rouge_n(generated, &example.summary_tokens, 1),
        rouge2: rouge_n(generated, &example.summary_tokens, 2),
        rouge_l: rouge_l(generated, &example.summary_tokens),
        summary_length: generated.len(),
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut absent) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => absent += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), absent)
}

fn mean_prf(items: &[ExampleScore], f: impl Fn(&ExampleScore) -> Prf) -> Prf {
    if items.is_empty() {
        return Prf::default();
    }
    let n = items.len() as f64;
    let (mut p, mut r, mut f1) = (0.0, 0.0, 0.0);
    for e in items {
        let v = f(e);
        p += v.precision;
        r += v.recall;
        f1 += v.f1;
    }
    Prf {
        precision: p / n,
        recall: r / n,
        f1: f1 / n,
    }
}

fn micro_entity(
    pairs: &[(&Example, &[String])],
    extractor: &EntityExtractor,
    precision: bool,
) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (ex, gen) in pairs {
        let (num_side, other): (&[String], &[String]) = if precision {
            (gen, &ex.source_tokens)
        } else {
            (&ex.summary_tokens, gen)
        };
        let ents = extractor.extract(num_side);
        let present = extractor.extract(other).distinct();
        hits += ents.tokens.iter().filter(|t| present.contains(*t)).count();
        total += ents.len();
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn aggregate(
    mode: ScoreMode,
    scores: Vec<ExampleScore>,
    pairs: &[(&Example, &[String])],
    extractor: &EntityExtractor,
) -> ScoreReport {
    let (d_arc, d_arc_absent) = mean_defined(scores.iter().map(|s| s.d_arc));
    let (ep_src, ep_src_absent) = mean_defined(scores.iter().map(|s| s.ep_src));
    let (er_ref, er_ref_absent) = mean_defined(scores.iter().map(|s| s.er_ref));
    let n = scores.len();
    let d_sum = (mode == ScoreMode::Synthetic && n > 0)
        .then(|| scores.iter().filter(|s| s.dae_errors == 0).count() as f64 / n as f64);
    let (arcs, errs) = scores
        .iter()
        .fold((0, 0), |(a, e), s| (a + s.arc_total, e + s.dae_errors));
    let summary_length = if n > 0 {
        scores.iter().map(|s| s.summary_length as f64).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let aggregates = Aggregates {
        averaging: "macro".to_string(),
        n_examples: n,
        d_arc,
        d_sum,
        ep_src,
        er_ref,
        rouge1: mean_prf(&scores, |s| s.rouge1),
        rouge2: mean_prf(&scores, |s| s.rouge2),
        rouge_l: mean_prf(&scores, |s| s.rouge_l),
        summary_length,
        d_arc_absent,
        ep_src_absent,
        er_ref_absent,
        d_arc_micro: (arcs > 0).then(|| (arcs - errs) as f64 / arcs as f64),
        ep_src_micro: micro_entity(pairs, extractor, true),
        er_ref_micro: micro_entity(pairs, extractor, false),
    };
    ScoreReport {
        mode,
        examples: scores,
        aggregates,
    }
}

/// Score generated summaries against their examples. E-P_src and the arc
/// metrics look at the source; E-R_ref and ROUGE look at the reference.
pub fn score_corpus(
    examples: &[Example],
    generated: &[Generated],
    mode: ScoreMode,
) -> Result<ScoreReport> {
    if examples.len() != generated.len() {
        let index = examples.len().min(generated.len());
        return Err(Error::IdMismatch {
            index,
            expected: examples
                .get(index)
                .map(|e| e.id.clone())
                .unwrap_or_default(),
            found: generated
                .get(index)
                .map(|g| g.id.clone())
                .unwrap_or_default(),
        });
    }
    let extractor = EntityExtractor::for_mode(mode);
    let mut pairs = Vec::with_capacity(examples.len());
    for (index, (ex, gen)) in examples.iter().zip(generated).enumerate() {
        if ex.id != gen.id {
            return Err(Error::IdMismatch {
                index,
                expected: ex.id.clone(),
                found: gen.id.clone(),
            });
        }
        pairs.push((ex, gen.tokens.as_slice()));
    }
    let scores = pairs
        .iter()
        .map(|(ex, gen)| score_example(ex, gen, &extractor))
        .collect();
    Ok(aggregate(mode, scores, &pairs, &extractor))
}

/// Score each example's own reference summary, as data selection does.
pub fn score_references(examples: &[Example], mode: ScoreMode) -> ScoreReport {
    let generated: Vec<Generated> = examples
        .iter()
        .map(|e| Generated {
            id: e.id.clone(),
            tokens: e.summary_tokens.clone(),
        })
        .collect();
    score_corpus(examples, &generated, mode).expect("references align with their examples")
}
