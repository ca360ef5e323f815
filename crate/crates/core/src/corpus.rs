//! Synthetic noisy-summarization corpus.
//!
//! Documents are renderings of fact triples drawn from a seed-derived world
//! of canonical facts; reference summaries re-render a few of those facts,
//! some of them corrupted:
//!
//! * `extrinsic_entity`: one argument is replaced by an entity that does not
//!   occur in the document. Replacements follow the same popularity law as
//!   the documents themselves, so popular entities are hallucinated most.
//! * `intrinsic_swap`: subject and object are swapped, or the predicate is
//!   replaced by another predicate of the document, so every entity is in the
//!   source but the claim is not.
//! * `clean`: a document fact copied verbatim.
//!
//! Entities are split into a subject half and an object half; every world
//! fact takes its subject from the first and its object from the second.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, StreamRng};

pub const BOS: &str = "BOS";
pub const EOS: &str = "EOS";
pub const SEP: &str = "SEP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Bos,
    Eos,
    Sep,
    Entity(u32),
    Predicate(u32),
    Filler(u32),
}

fn parse_index(digits: &str) -> Option<u32> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

impl Token {
    /// Parse a surface form. Returns `None` for anything outside the grammar.
    pub fn parse(surface: &str) -> Option<Token> {
        match surface {
            BOS => return Some(Token::Bos),
            EOS => return Some(Token::Eos),
            SEP => return Some(Token::Sep),
            _ => {}
        }
        let (head, rest) = surface.split_at(surface.chars().next()?.len_utf8());
        let k = parse_index(rest)?;
        match head {
            "E" => Some(Token::Entity(k)),
            "P" => Some(Token::Predicate(k)),
            "F" => Some(Token::Filler(k)),
            _ => None,
        }
    }

    pub fn is_entity(surface: &str) -> bool {
        matches!(Token::parse(surface), Some(Token::Entity(_)))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Bos => f.write_str(BOS),
            Token::Eos => f.write_str(EOS),
            Token::Sep => f.write_str(SEP),
            Token::Entity(k) => write!(f, "E{k}"),
            Token::Predicate(k) => write!(f, "P{k}"),
            Token::Filler(k) => write!(f, "F{k}"),
        }
    }
}

/// Token partitions. Ids are laid out as
/// `[BOS, EOS, SEP, E0.., P0.., F0..]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub entities: u32,
    pub predicates: u32,
    pub fillers: u32,
}

impl Vocabulary {
    pub const BOS_ID: usize = 0;
    pub const EOS_ID: usize = 1;
    pub const SEP_ID: usize = 2;

    pub fn new(entities: u32, predicates: u32, fillers: u32) -> Self {
        Vocabulary {
            entities,
            predicates,
            fillers,
        }
    }

    pub fn size(&self) -> usize {
        3 + (self.entities + self.predicates + self.fillers) as usize
    }

    pub fn id(&self, token: Token) -> Option<usize> {
        let ne = self.entities as usize;
        let np = self.predicates as usize;
        match token {
            Token::Bos => Some(Self::BOS_ID),
            Token::Eos => Some(Self::EOS_ID),
            Token::Sep => Some(Self::SEP_ID),
            Token::Entity(k) if k < self.entities => Some(3 + k as usize),
            Token::Predicate(k) if k < self.predicates => Some(3 + ne + k as usize),
            Token::Filler(k) if k < self.fillers => Some(3 + ne + np + k as usize),
            _ => None,
        }
    }

    pub fn token(&self, id: usize) -> Option<Token> {
        let ne = self.entities as usize;
        let np = self.predicates as usize;
        let nf = self.fillers as usize;
        match id {
            0 => Some(Token::Bos),
            1 => Some(Token::Eos),
            2 => Some(Token::Sep),
            i if i < 3 + ne => Some(Token::Entity((i - 3) as u32)),
            i if i < 3 + ne + np => Some(Token::Predicate((i - 3 - ne) as u32)),
            i if i < 3 + ne + np + nf => Some(Token::Filler((i - 3 - ne - np) as u32)),
            _ => None,
        }
    }

    pub fn encode(&self, surface: &str) -> Result<usize> {
        Token::parse(surface)
            .and_then(|t| self.id(t))
            .ok_or_else(|| Error::UnknownToken(surface.to_string()))
    }

    pub fn encode_all(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.encode(t)).collect()
    }

    pub fn decode_all(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).map(|t| t.to_string()).unwrap_or_default())
            .collect()
    }

    /// Number of entities usable as fact subjects; the rest are objects.
    /// Smallest vocabulary containing every token of `examples`.
    pub fn infer(examples: &[Example]) -> Result<Vocabulary> {
        let mut v = Vocabulary::new(0, 0, 0);
        for e in examples {
            for t in e.source_tokens.iter().chain(&e.summary_tokens) {
                match Token::parse(t) {
                    Some(Token::Entity(k)) => v.entities = v.entities.max(k + 1),
                    Some(Token::Predicate(k)) => v.predicates = v.predicates.max(k + 1),
                    Some(Token::Filler(k)) => v.fillers = v.fillers.max(k + 1),
                    Some(_) => {}
                    None => return Err(Error::UnknownToken(t.clone())),
                }
            }
        }
        Ok(v)
    }

    pub fn subject_entities(&self) -> u32 {
        self.entities / 2
    }
}

/// An atomic claim `(subject, predicate, object)` over entity and predicate
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub subject: u32,
    pub predicate: u32,
    pub object: u32,
}

impl Fact {
    pub fn new(subject: u32, predicate: u32, object: u32) -> Self {
        Fact {
            subject,
            predicate,
            object,
        }
    }

    pub fn entities(&self) -> [u32; 2] {
        [self.subject, self.object]
    }

    fn to_strings(self) -> [String; 3] {
        [
            Token::Entity(self.subject).to_string(),
            Token::Predicate(self.predicate).to_string(),
            Token::Entity(self.object).to_string(),
        ]
    }

    fn from_strings(triple: &[String; 3]) -> Option<Fact> {
        match (
            Token::parse(&triple[0]),
            Token::parse(&triple[1]),
            Token::parse(&triple[2]),
        ) {
            (Some(Token::Entity(s)), Some(Token::Predicate(p)), Some(Token::Entity(o)))
                if s != o =>
            {
                Some(Fact::new(s, p, o))
            }
            _ => None,
        }
    }
}

/// `[subject, predicate, object, SEP]`.
pub fn render_fact(f: &Fact) -> Vec<String> {
    let [s, p, o] = f.to_strings();
    vec![s, p, o, SEP.to_string()]
}

pub fn render_facts(facts: &[Fact]) -> Vec<String> {
    facts.iter().flat_map(render_fact).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedFacts {
    /// Facts in order of appearance, repeats included.
    pub facts: Vec<Fact>,
    pub unparseable_spans: usize,
}

impl ParsedFacts {
    pub fn fact_set(&self) -> BTreeSet<Fact> {
        self.facts.iter().copied().collect()
    }
}

/// Split at `SEP` and read each non-empty span as one claim.
///
/// A span is a fact exactly when it is `entity predicate entity` with two
/// distinct entities; any other non-empty span counts as unparseable.
/// The last span may end at the end of the sequence instead of at `SEP`.
pub fn parse_facts<S: AsRef<str>>(tokens: &[S]) -> ParsedFacts {
    let mut out = ParsedFacts::default();
    let mut span: Vec<Option<Token>> = Vec::with_capacity(3);
    let flush = |span: &mut Vec<Option<Token>>, out: &mut ParsedFacts| {
        if span.is_empty() {
            return;
        }
        match span.as_slice() {
            [Some(Token::Entity(s)), Some(Token::Predicate(p)), Some(Token::Entity(o))]
                if s != o =>
            {
                out.facts.push(Fact::new(*s, *p, *o));
            }
            _ => out.unparseable_spans += 1,
        }
        span.clear();
    };
    for t in tokens {
        let t = t.as_ref();
        if t == SEP {
            flush(&mut span, &mut out);
        } else {
            span.push(Token::parse(t));
        }
    }
    flush(&mut span, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLabel {
    Clean,
    ExtrinsicEntity,
    IntrinsicSwap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub source_tokens: Vec<String>,
    pub summary_tokens: Vec<String>,
    pub source_facts: Vec<Fact>,
    pub summary_facts: Vec<Fact>,
    pub noise_labels: Vec<NoiseLabel>,
}

impl Example {
    pub fn source_entities(&self) -> BTreeSet<u32> {
        self.source_facts.iter().flat_map(Fact::entities).collect()
    }

    pub fn is_fully_clean(&self) -> bool {
        self.noise_labels.iter().all(|l| *l == NoiseLabel::Clean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub fn new(min: usize, max: usize) -> Self {
        IntRange { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_examples: usize,
    pub facts_per_doc: IntRange,
    pub facts_per_summary: IntRange,
    pub p_extrinsic: f64,
    pub p_intrinsic: f64,
    pub entities: u32,
    pub predicates: u32,
    pub fillers: u32,
    pub seed: u64,
    /// Zipf exponent for how often a subject appears in documents.
    /// Documents list their facts in the order the subjects were drawn.
    pub popularity_skew: f64,
    /// Zipf exponent of the "fame" ranking that extrinsic replacements are
    /// drawn from. The ranking is a seeded permutation independent of
    /// document popularity.
    pub fame_skew: f64,
    /// Share of extrinsic errors that replace the subject rather than the object.
    pub extrinsic_subject_share: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_examples: 5000,
            facts_per_doc: IntRange::new(4, 6),
            facts_per_summary: IntRange::new(2, 3),
            p_extrinsic: 0.25,
            p_intrinsic: 0.10,
            entities: 60,
            predicates: 12,
            fillers: 20,
            seed: 17,
            popularity_skew: 1.0,
            fame_skew: 2.0,
            extrinsic_subject_share: 1.0,
        }
    }
}

impl CorpusConfig {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.entities, self.predicates, self.fillers)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCorpusConfig(m));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_extrinsic) || !prob(self.p_intrinsic) || !prob(self.extrinsic_subject_share)
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.p_extrinsic + self.p_intrinsic > 1.0 + 1e-12 {
            return bad("p_extrinsic + p_intrinsic must not exceed 1".into());
        }
        let (d, s) = (self.facts_per_doc, self.facts_per_summary);
        if d.min > d.max || s.min > s.max {
            return bad("fact ranges must be nonempty (min <= max)".into());
        }
        if d.min == 0 || s.min == 0 {
            return bad("fact ranges must start at 1 or more".into());
        }
        if s.max > d.min {
            return bad(format!(
                "facts_per_summary max {} exceeds facts_per_doc min {}",
                s.max, d.min
            ));
        }
        if self.entities < 4 || self.predicates < 2 {
            return bad("need at least 4 entities and 2 predicates".into());
        }
        // Documents use distinct subjects, and extrinsic replacements need
        // entities of both roles outside every document.
        let subjects = (self.entities / 2) as usize;
        if d.max >= subjects || d.max >= self.entities as usize - subjects {
            return bad(format!(
                "facts_per_doc max {} leaves no out-of-source entities among {} entities",
                d.max, self.entities
            ));
        }
        for (name, k) in [
            ("popularity_skew", self.popularity_skew),
            ("fame_skew", self.fame_skew),
        ] {
            if !k.is_finite() || k < 0.0 {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: CorpusConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Canonical facts, one per subject entity, plus sampling weights.
///
/// The first half of the entities act as subjects and the second half as
/// objects. Each subject has exactly one true fact.
#[derive(Debug, Clone)]
pub struct World {
    pub facts: Vec<Fact>,
    document_weights: Vec<f64>,
    subject_fame: Vec<f64>,
    object_fame: Vec<f64>,
    subjects: u32,
}

impl World {
    pub fn build(cfg: &CorpusConfig) -> World {
        let vocab = cfg.vocabulary();
        let subjects = vocab.subject_entities();
        let objects = cfg.entities - subjects;
        let mut rng = StreamRng::derive(cfg.seed, streams::WORLD, 0);
        let facts = (0..subjects)
            .map(|s| {
                let p = rng.below(cfg.predicates as usize) as u32;
                let o = subjects + rng.below(objects as usize) as u32;
                Fact::new(s, p, o)
            })
            .collect();
        let zipf = |n: u32, k: f64| -> Vec<f64> {
            (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(k)).collect()
        };
        let mut subject_fame = zipf(subjects, cfg.fame_skew);
        rng.shuffle(&mut subject_fame);
        let mut object_fame = zipf(objects, cfg.fame_skew);
        rng.shuffle(&mut object_fame);
        World {
            facts,
            document_weights: zipf(subjects, cfg.popularity_skew),
            subject_fame,
            object_fame,
            subjects,
        }
    }

    fn is_subject(&self, e: u32) -> bool {
        e < self.subjects
    }

    /// Fame-weighted entity from the same role as `like`, avoiding every
    /// entity in `exclude`.
    fn replacement(&self, like: u32, exclude: &BTreeSet<u32>, rng: &mut StreamRng) -> u32 {
        let (base, weights) = if self.is_subject(like) {
            (0, &self.subject_fame)
        } else {
            (self.subjects, &self.object_fame)
        };
        let masked: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if exclude.contains(&(base + i as u32)) {
                    0.0
                } else {
                    w
                }
            })
            .collect();
        base + rng.weighted(&masked) as u32
    }
}

fn corrupt_extrinsic(
    world: &World,
    fact: Fact,
    source_entities: &BTreeSet<u32>,
    subject_share: f64,
    rng: &mut StreamRng,
) -> Fact {
    let mut out = fact;
    if rng.uniform() < subject_share {
        out.subject = world.replacement(fact.subject, source_entities, rng);
    } else {
        out.object = world.replacement(fact.object, source_entities, rng);
    }
    out
}

fn corrupt_intrinsic(
    fact: Fact,
    source: &BTreeSet<Fact>,
    source_predicates: &[u32],
    rng: &mut StreamRng,
) -> Option<Fact> {
    for _ in 0..10 {
        let candidate = if rng.uniform() < 0.5 {
            Fact::new(fact.object, fact.predicate, fact.subject)
        } else {
            let p = source_predicates[rng.below(source_predicates.len())];
            Fact::new(fact.subject, p, fact.object)
        };
        if !source.contains(&candidate) {
            return Some(candidate);
        }
    }
    None
}

fn generate_example(cfg: &CorpusConfig, world: &World, index: usize) -> Example {
    let mut rng = StreamRng::derive(cfg.seed, streams::EXAMPLE, index as u64);

    let n_doc = rng.range_inclusive(cfg.facts_per_doc.min, cfg.facts_per_doc.max);
    let mut weights = world.document_weights.clone();
    let mut source_facts = Vec::with_capacity(n_doc);
    for _ in 0..n_doc {
        let s = rng.weighted(&weights);
        weights[s] = 0.0;
        source_facts.push(world.facts[s]);
    }
    let source_set: BTreeSet<Fact> = source_facts.iter().copied().collect();
    let source_entities: BTreeSet<u32> = source_facts.iter().flat_map(Fact::entities).collect();
    let source_predicates: Vec<u32> = source_facts
        .iter()
        .map(|f| f.predicate)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let n_sum = rng.range_inclusive(cfg.facts_per_summary.min, cfg.facts_per_summary.max);
    let mut picked: Vec<usize> = (0..n_doc).collect();
    rng.shuffle(&mut picked);
    picked.truncate(n_sum);
    picked.sort_unstable();

    let mut summary_facts = Vec::with_capacity(n_sum);
    let mut noise_labels = Vec::with_capacity(n_sum);
    for &i in &picked {
        let fact = source_facts[i];
        let u = rng.uniform();
        let (out, label) = if u < cfg.p_extrinsic {
            (
                corrupt_extrinsic(
                    world,
                    fact,
                    &source_entities,
                    cfg.extrinsic_subject_share,
                    &mut rng,
                ),
                NoiseLabel::ExtrinsicEntity,
            )
        } else if u < cfg.p_extrinsic + cfg.p_intrinsic {
            match corrupt_intrinsic(fact, &source_set, &source_predicates, &mut rng) {
                Some(f) => (f, NoiseLabel::IntrinsicSwap),
                None => (
                    corrupt_extrinsic(
                        world,
                        fact,
                        &source_entities,
                        cfg.extrinsic_subject_share,
                        &mut rng,
                    ),
                    NoiseLabel::ExtrinsicEntity,
                ),
            }
        } else {
            (fact, NoiseLabel::Clean)
        };
        summary_facts.push(out);
        noise_labels.push(label);
    }

    Example {
        id: format!("ex{index:06}"),
        source_tokens: render_facts(&source_facts),
        summary_tokens: render_facts(&summary_facts),
        source_facts,
        summary_facts,
        noise_labels,
    }
}

/// Generate `n_examples` examples. Each example draws from its own stream,
/// so the output does not depend on generation order.
pub fn generate(cfg: &CorpusConfig) -> Result<Vec<Example>> {
    cfg.validate()?;
    let world = World::build(cfg);
    Ok((0..cfg.n_examples)
        .map(|i| generate_example(cfg, &world, i))
        .collect())
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// 80/10/10 by index.
pub fn split(mut examples: Vec<Example>) -> Splits {
    let n = examples.len();
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let test = examples.split_off((n_train + n_valid).min(n));
    let valid = examples.split_off(n_train.min(examples.len()));
    Splits {
        train: examples,
        valid,
        test,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    id: String,
    source: String,
    summary: String,
    source_facts: Vec<[String; 3]>,
    summary_facts: Vec<[String; 3]>,
    noise_labels: Vec<NoiseLabel>,
}

fn split_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl From<&Example> for ExampleRecord {
    fn from(e: &Example) -> Self {
        ExampleRecord {
            id: e.id.clone(),
            source: e.source_tokens.join(" "),
            summary: e.summary_tokens.join(" "),
            source_facts: e.source_facts.iter().map(|f| f.to_strings()).collect(),
            summary_facts: e.summary_facts.iter().map(|f| f.to_strings()).collect(),
            noise_labels: e.noise_labels.clone(),
        }
    }
}

impl TryFrom<ExampleRecord> for Example {
    type Error = String;
    fn try_from(r: ExampleRecord) -> std::result::Result<Self, String> {
        let facts = |v: &[[String; 3]]| -> std::result::Result<Vec<Fact>, String> {
            v.iter()
                .map(|t| Fact::from_strings(t).ok_or_else(|| format!("bad fact {t:?}")))
                .collect()
        };
        let source_facts = facts(&r.source_facts)?;
        let summary_facts = facts(&r.summary_facts)?;
        if r.noise_labels.len() != summary_facts.len() && !r.noise_labels.is_empty() {
            return Err(format!(
                "{}: {} noise labels for {} summary facts",
                r.id,
                r.noise_labels.len(),
                summary_facts.len()
            ));
        }
        Ok(Example {
            id: r.id,
            source_tokens: split_tokens(&r.source),
            summary_tokens: split_tokens(&r.summary),
            source_facts,
            summary_facts,
            noise_labels: r.noise_labels,
        })
    }
}

pub fn to_jsonl_line(e: &Example) -> String {
    serde_json::to_string(&ExampleRecord::from(e)).expect("example records always serialize")
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in examples {
        writeln!(w, "{}", to_jsonl_line(e)).map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", lineno + 1),
        };
        let record: ExampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(Example::try_from(record).map_err(parse_err)?);
    }
    Ok(out)
}

/// Write `<stem>.train`, `<stem>.valid` and `<stem>.test` under `dir`.
pub fn write_splits(dir: &Path, stem: &str, splits: &Splits) -> Result<[PathBuf; 3]> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = [
        dir.join(format!("{stem}.train")),
        dir.join(format!("{stem}.valid")),
        dir.join(format!("{stem}.test")),
    ];
    write_jsonl(&paths[0], &splits.train)?;
    write_jsonl(&paths[1], &splits.valid)?;
    write_jsonl(&paths[2], &splits.test)?;
    Ok(paths)
}
