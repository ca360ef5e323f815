//! Experiment pipeline: corpus, selection, training, merging, the alpha
//! sweep and the baseline comparison, plus CSV and SVG reporting.
//!
//! Output directory layout written by [`run_pipeline`]:
//!
//! ```text
//! corpus/corpus.{train,valid,test}
//! scores/train_references.{json,csv}
//! selection/<metric>/{clean.jsonl,noisy.jsonl,selection.json}
//! checkpoints/{base,expert_<metric>,anti_<metric>,cape_<pairing>}.ckpt
//! reports/<model>.<split>.{json,csv}
//! reports/sweep_<pairing>.{csv,svg,json}
//! summary.json
//! ```
//!
//! [`compare_modes`] reads those artifacts and writes `compare/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, average_merge, cape_merge, wise_ft_merge, Alpha, Checkpoint};
use crate::corpus::{self, CorpusConfig, Example, Splits};
use crate::error::{Error, Result};
use crate::metrics::{
    format_row, format_value, score_corpus, score_references, Aggregates, Generated, ScoreMode,
    ScoreReport, AGGREGATE_COLUMNS,
};
use crate::model::{self, ModelParams, Strategy, TrainConfig};
use crate::rng::{streams, StreamRng};
use crate::selection::{self, SelectionMetric, SelectionResult, SelectionThresholds};

/// An inclusive arithmetic grid of mixing coefficients, written `start:stop:step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AlphaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid {
            start: 0.2,
            stop: 1.0,
            step: 0.2,
        }
    }
}

impl AlphaGrid {
    /// Grid points, rounded to 1e-9 so that 0.2 * 3 prints as 0.6.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

impl std::str::FromStr for AlphaGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::InvalidArgument(format!("bad alpha grid {s:?}, expected start:stop:step"));
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(bad());
        }
        if start <= 0.0 || step <= 0.0 || stop < start {
            return Err(Error::InvalidArgument(format!(
                "alpha grid {s:?} must satisfy 0 < start <= stop and step > 0"
            )));
        }
        Ok(AlphaGrid { start, stop, step })
    }
}

impl std::fmt::Display for AlphaGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl From<AlphaGrid> for String {
    fn from(g: AlphaGrid) -> String {
        g.to_string()
    }
}

impl TryFrom<String> for AlphaGrid {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Which selection metric picks the expert's data and which the anti-expert's,
/// written as two letters such as `DD` or `PD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pairing {
    pub expert: SelectionMetric,
    pub anti: SelectionMetric,
}

impl Pairing {
    pub const ALL: [&'static str; 4] = ["DD", "PP", "DP", "PD"];

    pub fn label(&self) -> String {
        format!("{}{}", self.expert.letter(), self.anti.letter())
    }
}

impl std::str::FromStr for Pairing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad pairing {s:?}, expected two of D/P"));
        let mut chars = s.chars();
        let (Some(e), Some(a), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(bad());
        };
        Ok(Pairing {
            expert: e.to_string().parse().map_err(|_| bad())?,
            anti: a.to_string().parse().map_err(|_| bad())?,
        })
    }
}

impl From<Pairing> for String {
    fn from(p: Pairing) -> String {
        p.label()
    }
}

impl TryFrom<String> for Pairing {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Decoding settings shared by every evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub strategy: Strategy,
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            strategy: Strategy::Greedy,
            max_len: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub thresholds: SelectionThresholds,
    pub pairings: Vec<Pairing>,
    pub grid: AlphaGrid,
    /// Largest tolerated relative drop in R1 and E-R_ref when choosing alpha.
    pub constraint_drop: f64,
    pub decode: DecodeOptions,
    /// Size of each random subset in the ensemble baseline, as a fraction of
    /// the training split.
    pub ensemble_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig::finetune_default(),
            thresholds: SelectionThresholds::default(),
            pairings: Pairing::ALL
                .iter()
                .map(|p| p.parse().expect("valid label"))
                .collect(),
            grid: AlphaGrid::default(),
            constraint_drop: 0.01,
            decode: DecodeOptions::default(),
            ensemble_fraction: 0.25,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        self.thresholds.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.pairings.is_empty() {
            return bad("at least one pairing is required");
        }
        if !(0.0..=1.0).contains(&self.constraint_drop) {
            return bad("constraint_drop must lie in [0, 1]");
        }
        if !(self.ensemble_fraction > 0.0 && self.ensemble_fraction <= 1.0) {
            return bad("ensemble_fraction must lie in (0, 1]");
        }
        if self.decode.max_len == 0 {
            return bad("decode.max_len must be at least 1");
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Selection metrics used by any pairing, each once.
    fn metrics(&self) -> BTreeSet<SelectionMetric> {
        self.pairings
            .iter()
            .flat_map(|p| [p.expert, p.anti])
            .collect()
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const FILE: &'static str = ".cape.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Paths inside a pipeline output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn corpus_split(&self, split: &str) -> PathBuf {
        self.corpus_dir().join(format!("corpus.{split}"))
    }

    pub fn selection_dir(&self, metric: SelectionMetric) -> PathBuf {
        self.root.join("selection").join(metric.tag())
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn compare_dir(&self) -> PathBuf {
        self.root.join("compare")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(path, text)
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    checkpoint::save(&params.to_checkpoint(), path)
}

/// Decode every example's source and strip the trailing EOS.
pub fn decode_corpus(
    params: &ModelParams,
    examples: &[Example],
    opts: &DecodeOptions,
) -> Result<Vec<Generated>> {
    examples
        .iter()
        .map(|e| {
            let src = params.vocab.encode_all(&e.source_tokens)?;
            let out = model::strip_eos(model::decode(params, &src, opts.max_len, opts.strategy));
            Ok(Generated {
                id: e.id.clone(),
                tokens: params.vocab.decode_all(&out),
            })
        })
        .collect()
}

/// Decode and score against the references in synthetic mode.
pub fn evaluate(
    params: &ModelParams,
    examples: &[Example],
    opts: &DecodeOptions,
) -> Result<ScoreReport> {
    let generated = decode_corpus(params, examples, opts)?;
    score_corpus(examples, &generated, ScoreMode::Synthetic)
}

fn evaluate_checkpoint(
    ck: &Checkpoint,
    examples: &[Example],
    opts: &DecodeOptions,
) -> Result<Aggregates> {
    Ok(evaluate(&ModelParams::from_checkpoint(ck)?, examples, opts)?.aggregates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub aggregates: Aggregates,
}

/// Scores of one merge strategy across alphas, starting with the base row at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: String,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn base(&self) -> Option<&SweepRow> {
        self.rows.first().filter(|r| r.alpha == 0.0)
    }

    pub fn at(&self, alpha: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| (r.alpha - alpha).abs() < 1e-9)
    }
}

fn check_grid(alphas: &[f64]) -> Result<()> {
    if alphas.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return Err(Error::InvalidArgument(
            "grid alphas must be finite and positive".into(),
        ));
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "grid alphas must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Evaluate `merge(alpha)` at each grid point after a base row at alpha 0.
pub fn sweep_with(
    mode: &str,
    base: &Checkpoint,
    alphas: &[f64],
    valid: &[Example],
    opts: &DecodeOptions,
    merge: impl Fn(Alpha) -> Result<Checkpoint>,
) -> Result<SweepResult> {
    check_grid(alphas)?;
    let mut rows = vec![SweepRow {
        alpha: 0.0,
        aggregates: evaluate_checkpoint(base, valid, opts)?,
    }];
    for &a in alphas {
        let merged = merge(Alpha::new(a)?)?;
        rows.push(SweepRow {
            alpha: a,
            aggregates: evaluate_checkpoint(&merged, valid, opts)?,
        });
    }
    Ok(SweepResult {
        mode: mode.to_string(),
        rows,
    })
}

/// CaPE sweep over `alphas`.
pub fn sweep_alpha(
    base: &Checkpoint,
    expert: &Checkpoint,
    anti: &Checkpoint,
    alphas: &[f64],
    valid: &[Example],
    opts: &DecodeOptions,
) -> Result<SweepResult> {
    base.check_compatible(expert)?;
    base.check_compatible(anti)?;
    sweep_with("cape", base, alphas, valid, opts, |a| {
        cape_merge(base, expert, anti, a)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub alpha: f64,
    pub d_sum: Option<f64>,
    pub ep_src: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub alpha: f64,
    /// Set when no grid alpha met the constraints and the base was kept.
    pub fallback: bool,
    pub constraint_drop: f64,
    pub r1: f64,
    pub er_ref: Option<f64>,
    pub base_r1: f64,
    pub base_er_ref: Option<f64>,
    pub objective: Vec<ObjectivePoint>,
}

fn at_least(value: Option<f64>, base: Option<f64>, factor: f64) -> bool {
    match (value, base) {
        (_, None) => true,
        (Some(v), Some(b)) => v >= factor * b,
        (None, Some(_)) => false,
    }
}

/// Largest alpha whose R1 and E-R_ref stay within `constraint_drop` of the
/// base row; the base itself, flagged, when none does.
pub fn select_alpha(sweep: &SweepResult, constraint_drop: f64) -> Result<AlphaSelection> {
    let base = sweep
        .base()
        .ok_or_else(|| Error::InvalidArgument("sweep has no alpha = 0 base row".into()))?;
    let factor = 1.0 - constraint_drop;
    let b = &base.aggregates;
    let chosen = sweep.rows[1..]
        .iter()
        .filter(|r| {
            r.aggregates.rouge1.f1 >= factor * b.rouge1.f1
                && at_least(r.aggregates.er_ref, b.er_ref, factor)
        })
        .max_by(|x, y| x.alpha.total_cmp(&y.alpha));
    let fallback = chosen.is_none();
    if fallback {
        log::warn!("no alpha in the grid keeps R1 and E-R_ref within the allowed drop; keeping the base model");
    }
    let row = chosen.unwrap_or(base);
    Ok(AlphaSelection {
        alpha: row.alpha,
        fallback,
        constraint_drop,
        r1: row.aggregates.rouge1.f1,
        er_ref: row.aggregates.er_ref,
        base_r1: b.rouge1.f1,
        base_er_ref: b.er_ref,
        objective: sweep
            .rows
            .iter()
            .map(|r| ObjectivePoint {
                alpha: r.alpha,
                d_sum: r.aggregates.d_sum,
                ep_src: r.aggregates.ep_src,
            })
            .collect(),
    })
}

/// Sweep table: `alpha` followed by the aggregate columns.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = format!("alpha,{}\n", AGGREGATE_COLUMNS.join(","));
    for r in &sweep.rows {
        let _ = writeln!(
            out,
            "{},{}",
            format_value(Some(r.alpha)),
            format_row(&r.aggregates.columns())
        );
    }
    out
}

/// Label, (alpha, value) points, and whether the line is dashed.
type Series = (String, Vec<(f64, f64)>, bool);

/// One line per series for one metric panel.
struct Panel<'a> {
    title: &'a str,
    series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

/// Line charts of every aggregate column against alpha, one panel per metric
/// and one polyline per sweep. `flat` series are drawn dashed across the
/// whole alpha range.
pub fn render_svg(sweeps: &[SweepResult], flat: &[(String, Aggregates)]) -> String {
    const COLS: usize = 4;
    const PW: f64 = 240.0;
    const PH: f64 = 180.0;
    const ML: f64 = 46.0;
    const MT: f64 = 24.0;
    const MR: f64 = 12.0;
    const MB: f64 = 28.0;
    let rows = AGGREGATE_COLUMNS.len().div_ceil(COLS);
    let names: Vec<String> = sweeps
        .iter()
        .map(|s| s.mode.clone())
        .chain(flat.iter().map(|(n, _)| n.clone()))
        .collect();
    let legend_h = 20.0 * names.len().max(1) as f64 + 10.0;
    let width = COLS as f64 * PW;
    let height = rows as f64 * PH + legend_h;

    let x_max = sweeps
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| r.alpha))
        .fold(1.0_f64, f64::max);

    let panels: Vec<Panel> = AGGREGATE_COLUMNS
        .iter()
        .enumerate()
        .map(|(m, title)| {
            let mut series: Vec<Series> = sweeps
                .iter()
                .map(|s| {
                    let pts = s
                        .rows
                        .iter()
                        .filter_map(|r| r.aggregates.columns()[m].map(|v| (r.alpha, v)))
                        .collect();
                    (s.mode.clone(), pts, false)
                })
                .collect();
            for (name, agg) in flat {
                let pts = agg.columns()[m]
                    .map(|v| vec![(0.0, v), (x_max, v)])
                    .unwrap_or_default();
                series.push((name.clone(), pts, true));
            }
            Panel { title, series }
        })
        .collect();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="10">"#,
        fmt2(width),
        fmt2(height),
        fmt2(width),
        fmt2(height)
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        let ox = (i % COLS) as f64 * PW;
        let oy = (i / COLS) as f64 * PH;
        let (x0, y0) = (ox + ML, oy + MT);
        let (w, h) = (PW - ML - MR, PH - MT - MB);
        let values: Vec<f64> = panel
            .series
            .iter()
            .flat_map(|(_, pts, _)| pts.iter().map(|p| p.1))
            .collect();
        let (mut lo, mut hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        if values.is_empty() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            lo -= 0.05;
            hi += 0.05;
        }
        let sx = |x: f64| x0 + x / x_max * w;
        let sy = |y: f64| y0 + h - (y - lo) / (hi - lo) * h;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#,
            fmt2(x0 + w / 2.0),
            fmt2(oy + 14.0),
            panel.title
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            fmt2(x0),
            fmt2(y0),
            fmt2(w),
            fmt2(h)
        );
        for (v, anchor_y) in [(lo, y0 + h), (hi, y0)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#,
                fmt2(x0 - 4.0),
                fmt2(anchor_y + 3.0),
            );
        }
        let ticks: BTreeSet<i64> = sweeps
            .iter()
            .flat_map(|s| s.rows.iter().map(|r| (r.alpha * 1e6).round() as i64))
            .collect();
        for t in ticks {
            let a = t as f64 / 1e6;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{a:.1}</text>"#,
                fmt2(sx(a)),
                fmt2(y0 + h + 12.0),
            );
        }
        for (k, (_, pts, dashed)) in panel.series.iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt2(sx(x)), fmt2(sy(y))))
                .collect();
            let dash = if *dashed {
                r#" stroke-dasharray="4 3""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{}/>"#,
                coords.join(" "),
                PALETTE[k % PALETTE.len()],
                dash
            );
        }
    }
    let ly = rows as f64 * PH + 10.0;
    for (k, name) in names.iter().enumerate() {
        let y = ly + 20.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/>"#,
            fmt2(ML),
            fmt2(y + 5.0),
            fmt2(ML + 24.0),
            fmt2(y + 5.0),
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            fmt2(ML + 30.0),
            fmt2(y + 9.0),
            name
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write `<stem>.csv`, `<stem>.svg` and `<stem>.json` for one sweep.
pub fn emit_report(sweep: &SweepResult, dir: &Path, stem: &str) -> Result<()> {
    write_file(&dir.join(format!("{stem}.csv")), sweep_csv(sweep))?;
    write_file(
        &dir.join(format!("{stem}.svg")),
        render_svg(std::slice::from_ref(sweep), &[]),
    )?;
    write_json(&dir.join(format!("{stem}.json")), sweep)
}

fn write_score_report(report: &ScoreReport, dir: &Path, stem: &str) -> Result<()> {
    write_file(&dir.join(format!("{stem}.json")), report.to_json() + "\n")?;
    write_file(&dir.join(format!("{stem}.csv")), report.to_csv())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub metric: SelectionMetric,
    pub clean_size: usize,
    pub noisy_size: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub valid: Aggregates,
    pub test: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingSummary {
    pub pairing: Pairing,
    /// True when the anti-expert's subset was empty and the merge fell back
    /// to interpolating base and expert.
    pub degraded_to_wise_ft: bool,
    pub selection: AlphaSelection,
    pub merged: ModelScores,
}

/// Mean NLL of one subset's references under the expert and the anti-expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCheck {
    pub metric: SelectionMetric,
    pub expert_nll: f64,
    pub anti_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub corpus_sizes: [usize; 3],
    pub train_loss: Vec<f64>,
    pub selections: Vec<SelectionSummary>,
    pub models: BTreeMap<String, ModelScores>,
    pub pairings: Vec<PairingSummary>,
    pub noisy_likelihood: Vec<LikelihoodCheck>,
    pub warnings: Vec<String>,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

fn subset(examples: &[Example], ids: &BTreeSet<String>) -> Vec<Example> {
    examples
        .iter()
        .filter(|e| ids.contains(&e.id))
        .cloned()
        .collect()
}

fn mean_nll(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        let src = params.vocab.encode_all(&e.source_tokens)?;
        let sum = params.vocab.encode_all(&e.summary_tokens)?;
        total += model::sequence_nll(params, &src, &sum);
    }
    Ok(total / examples.len().max(1) as f64)
}

/// CaPE when an anti-expert exists, otherwise interpolation with the expert.
fn merge_pair(
    base: &Checkpoint,
    expert: &Checkpoint,
    anti: Option<&Checkpoint>,
    alpha: Alpha,
) -> Result<Checkpoint> {
    match anti {
        Some(anti) => cape_merge(base, expert, anti, alpha),
        None => wise_ft_merge(base, expert, alpha),
    }
}

/// Write `clean.jsonl`, `noisy.jsonl` and `selection.json` into `dir`.
pub fn write_selection(dir: &Path, train: &[Example], res: &SelectionResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    corpus::write_jsonl(&dir.join("clean.jsonl"), &subset(train, &res.clean_ids))?;
    corpus::write_jsonl(&dir.join("noisy.jsonl"), &subset(train, &res.noisy_ids))?;
    write_json(&dir.join("selection.json"), res)
}

struct Finetuned {
    expert: ModelParams,
    anti: Option<ModelParams>,
    noisy: Vec<Example>,
}

/// Run corpus generation, selection, training, fine-tuning, merging and
/// scoring for every configured pairing, writing everything under `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let _lock = DirLock::acquire(out)?;
    let layout = Layout::new(out);
    let opts = cfg.decode;
    let mut warnings = Vec::new();

    let splits: Splits = stage("corpus", || {
        let sp = corpus::split(corpus::generate(&cfg.corpus)?);
        corpus::write_splits(&layout.corpus_dir(), "corpus", &sp)?;
        Ok(sp)
    })?;
    let vocab = cfg.corpus.vocabulary();

    let refs = stage("score", || {
        let refs = score_references(&splits.train, ScoreMode::Synthetic);
        write_score_report(&refs, &out.join("scores"), "train_references")?;
        Ok(refs)
    })?;

    let selections: BTreeMap<SelectionMetric, SelectionResult> = stage("select", || {
        let mut map = BTreeMap::new();
        for metric in cfg.metrics() {
            let res = selection::select(&refs, metric, &cfg.thresholds)?;
            write_selection(&layout.selection_dir(metric), &splits.train, &res)?;
            map.insert(metric, res);
        }
        Ok(map)
    })?;
    for res in selections.values() {
        warnings.extend(res.warnings.iter().cloned());
    }

    let (base, train_log) = stage("train", || {
        let (params, log) = model::train(vocab, &splits.train, &cfg.train)?;
        let params = params.named("base");
        save_model(&params, &layout.checkpoint("base"))?;
        Ok((params, log))
    })?;
    warnings.extend(train_log.warnings.iter().cloned());

    let tuned: BTreeMap<SelectionMetric, Finetuned> = stage("finetune", || {
        let mut map = BTreeMap::new();
        for (&metric, res) in &selections {
            let clean = subset(&splits.train, &res.clean_ids);
            let noisy = subset(&splits.train, &res.noisy_ids);
            let (expert, _) = model::finetune(&base, &clean, &cfg.finetune)?;
            let expert = expert.named(&format!("expert_{}", metric.tag()));
            save_model(
                &expert,
                &layout.checkpoint(&format!("expert_{}", metric.tag())),
            )?;
            let anti = if noisy.is_empty() {
                None
            } else {
                let (anti, _) = model::finetune(&base, &noisy, &cfg.finetune)?;
                let anti = anti.named(&format!("anti_{}", metric.tag()));
                save_model(&anti, &layout.checkpoint(&format!("anti_{}", metric.tag())))?;
                Some(anti)
            };
            map.insert(
                metric,
                Finetuned {
                    expert,
                    anti,
                    noisy,
                },
            );
        }
        Ok(map)
    })?;

    let mut models = BTreeMap::new();
    stage("evaluate", || {
        let mut named: Vec<(String, &ModelParams)> = vec![("base".into(), &base)];
        for (metric, t) in &tuned {
            named.push((format!("expert_{}", metric.tag()), &t.expert));
            if let Some(anti) = &t.anti {
                named.push((format!("anti_{}", metric.tag()), anti));
            }
        }
        for (name, params) in named {
            let valid = evaluate(params, &splits.valid, &opts)?;
            let test = evaluate(params, &splits.test, &opts)?;
            write_score_report(&valid, &layout.reports_dir(), &format!("{name}.valid"))?;
            write_score_report(&test, &layout.reports_dir(), &format!("{name}.test"))?;
            models.insert(
                name,
                ModelScores {
                    valid: valid.aggregates,
                    test: test.aggregates,
                },
            );
        }
        Ok(())
    })?;

    let noisy_likelihood = tuned
        .iter()
        .filter_map(|(&metric, t)| {
            let anti = t.anti.as_ref()?;
            Some((|| {
                Ok(LikelihoodCheck {
                    metric,
                    expert_nll: mean_nll(&t.expert, &t.noisy)?,
                    anti_nll: mean_nll(anti, &t.noisy)?,
                })
            })())
        })
        .collect::<Result<Vec<_>>>()?;
    for check in &noisy_likelihood {
        if check.anti_nll >= check.expert_nll {
            let w = format!(
                "anti-expert ({}) does not fit noisy references better than the expert: {:.4} >= {:.4}",
                check.metric.tag(),
                check.anti_nll,
                check.expert_nll
            );
            log::warn!("{w}");
            warnings.push(w);
        }
    }

    let base_ck = base.to_checkpoint();
    let alphas = cfg.grid.values();
    let mut pairings = Vec::new();
    for pairing in &cfg.pairings {
        let label = pairing.label();
        let summary = stage(&format!("sweep {label}"), || {
            let expert_ck = tuned[&pairing.expert].expert.to_checkpoint();
            let anti_ck = tuned[&pairing.anti]
                .anti
                .as_ref()
                .map(ModelParams::to_checkpoint);
            let degraded = anti_ck.is_none();
            if degraded {
                let w = format!(
                    "pairing {label}: noisy subset for {} is empty, merging base and expert only",
                    pairing.anti.tag()
                );
                log::warn!("{w}");
                warnings.push(w);
            }
            let mode = if degraded { "wise_ft" } else { "cape" };
            let sweep = sweep_with(mode, &base_ck, &alphas, &splits.valid, &opts, |a| {
                merge_pair(&base_ck, &expert_ck, anti_ck.as_ref(), a)
            })?;
            emit_report(&sweep, &layout.reports_dir(), &format!("sweep_{label}"))?;
            let selection = select_alpha(&sweep, cfg.constraint_drop)?;
            if selection.fallback {
                warnings.push(format!(
                    "pairing {label}: no alpha satisfied the constraints"
                ));
            }
            let mut merged_ck = merge_pair(
                &base_ck,
                &expert_ck,
                anti_ck.as_ref(),
                Alpha::new(selection.alpha)?,
            )?;
            merged_ck.set_meta("name", format!("cape_{label}"));
            checkpoint::save(&merged_ck, &layout.checkpoint(&format!("cape_{label}")))?;
            let merged = ModelParams::from_checkpoint(&merged_ck)?;
            let valid = evaluate(&merged, &splits.valid, &opts)?;
            let test = evaluate(&merged, &splits.test, &opts)?;
            write_score_report(
                &valid,
                &layout.reports_dir(),
                &format!("cape_{label}.valid"),
            )?;
            write_score_report(&test, &layout.reports_dir(), &format!("cape_{label}.test"))?;
            Ok(PairingSummary {
                pairing: *pairing,
                degraded_to_wise_ft: degraded,
                selection,
                merged: ModelScores {
                    valid: valid.aggregates,
                    test: test.aggregates,
                },
            })
        })?;
        pairings.push(summary);
    }

    let summary = PipelineSummary {
        corpus_sizes: [splits.train.len(), splits.valid.len(), splits.test.len()],
        train_loss: train_log.epoch_loss,
        selections: selections
            .values()
            .map(|r| SelectionSummary {
                metric: r.metric,
                clean_size: r.clean_size,
                noisy_size: r.noisy_size,
                warnings: r.warnings.clone(),
            })
            .collect(),
        models,
        pairings,
        noisy_likelihood,
        warnings,
    };
    stage("report", || write_json(&layout.summary(), &summary))?;
    Ok(summary)
}

/// Sweeps of each merge mode for one pairing, plus the ensemble baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pairing: Pairing,
    pub sweeps: Vec<SweepResult>,
    pub ensemble: Aggregates,
    pub warnings: Vec<String>,
}

impl Comparison {
    pub fn sweep(&self, mode: &str) -> Option<&SweepResult> {
        self.sweeps.iter().find(|s| s.mode == mode)
    }

    /// `mode` followed by the sweep columns; the ensemble row has no alpha.
    pub fn to_csv(&self) -> String {
        let mut out = format!("mode,alpha,{}\n", AGGREGATE_COLUMNS.join(","));
        for s in &self.sweeps {
            for r in &s.rows {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    s.mode,
                    format_value(Some(r.alpha)),
                    format_row(&r.aggregates.columns())
                );
            }
        }
        let _ = writeln!(out, "ensemble,,{}", format_row(&self.ensemble.columns()));
        out
    }
}

/// Two seed-derived random subsets of `fraction` of the training split.
pub fn random_subsets(train: &[Example], fraction: f64, seed: u64) -> [Vec<Example>; 2] {
    let m = ((train.len() as f64 * fraction).floor() as usize)
        .max(1)
        .min(train.len());
    std::array::from_fn(|k| {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        StreamRng::derive(seed, streams::SUBSET, k as u64).shuffle(&mut idx);
        let mut picked = idx[..m].to_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| train[i].clone()).collect()
    })
}

fn load_model(layout: &Layout, name: &str) -> Result<Checkpoint> {
    checkpoint::load(require(&layout.checkpoint(name))?)
}

/// Compare merge modes for the first configured pairing using the artifacts
/// that [`run_pipeline`] left in `out`, and write `compare/`.
///
/// Modes: `cape`; `expert_only` (anti-expert replaced by the base, which is
/// interpolation); `anti_only` (expert replaced by the base); `fresh`
/// (CaPE with expert and anti-expert trained from scratch on the same
/// subsets); and the `ensemble` average of the base with two fine-tunes on
/// random subsets.
pub fn compare_modes(cfg: &PipelineConfig, out: &Path) -> Result<Comparison> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let pairing = cfg.pairings[0];
    let label = pairing.label();
    let opts = cfg.decode;
    let alphas = cfg.grid.values();
    let mut warnings = Vec::new();

    let (valid, train, clean, noisy) = stage("load", || {
        let valid = corpus::read_jsonl(require(&layout.corpus_split("valid"))?)?;
        let train = corpus::read_jsonl(require(&layout.corpus_split("train"))?)?;
        let clean = corpus::read_jsonl(require(
            &layout.selection_dir(pairing.expert).join("clean.jsonl"),
        )?)?;
        let noisy = corpus::read_jsonl(require(
            &layout.selection_dir(pairing.anti).join("noisy.jsonl"),
        )?)?;
        Ok((valid, train, clean, noisy))
    })?;
    let base = stage("load", || load_model(&layout, "base"))?;
    let expert = stage("load", || {
        load_model(&layout, &format!("expert_{}", pairing.expert.tag()))
    })?;
    let anti = if noisy.is_empty() {
        let w =
            format!("pairing {label}: no anti-expert, cape and anti_only reduce to the base side");
        log::warn!("{w}");
        warnings.push(w);
        None
    } else {
        Some(stage("load", || {
            load_model(&layout, &format!("anti_{}", pairing.anti.tag()))
        })?)
    };

    let mut sweeps = Vec::new();
    stage("compare", || {
        sweeps.push(sweep_with("cape", &base, &alphas, &valid, &opts, |a| {
            merge_pair(&base, &expert, anti.as_ref(), a)
        })?);
        sweeps.push(sweep_with(
            "expert_only",
            &base,
            &alphas,
            &valid,
            &opts,
            |a| wise_ft_merge(&base, &expert, a),
        )?);
        sweeps.push(sweep_with(
            "anti_only",
            &base,
            &alphas,
            &valid,
            &opts,
            |a| cape_merge(&base, &base, anti.as_ref().unwrap_or(&base), a),
        )?);

        let vocab = ModelParams::from_checkpoint(&base)?.vocab;
        let fresh_expert = model::train(vocab, &clean, &cfg.train)?
            .0
            .named("fresh_expert");
        let fresh_anti = if noisy.is_empty() {
            None
        } else {
            Some(
                model::train(vocab, &noisy, &cfg.train)?
                    .0
                    .named("fresh_anti")
                    .to_checkpoint(),
            )
        };
        let fresh_expert = fresh_expert.to_checkpoint();
        sweeps.push(sweep_with("fresh", &base, &alphas, &valid, &opts, |a| {
            merge_pair(&base, &fresh_expert, fresh_anti.as_ref(), a)
        })?);
        Ok(())
    })?;

    let ensemble = stage("ensemble", || {
        let base_params = ModelParams::from_checkpoint(&base)?;
        let subsets = random_subsets(&train, cfg.ensemble_fraction, cfg.corpus.seed);
        let mut members = Vec::new();
        for (k, sub) in subsets.iter().enumerate() {
            let (p, _) = model::finetune(&base_params, sub, &cfg.finetune)?;
            members.push(p.named(&format!("random_{k}")).to_checkpoint());
        }
        let avg = average_merge(&[&base, &members[0], &members[1]])?;
        evaluate_checkpoint(&avg, &valid, &opts)
    })?;

    let cape = &sweeps[0];
    let expert_only = &sweeps[1];
    if let (Some(c), Some(e)) = (cape.at(0.6), expert_only.at(0.6)) {
        if let (Some(cv), Some(ev)) = (c.aggregates.ep_src, e.aggregates.ep_src) {
            if cv < ev {
                let w = format!("at alpha 0.6 CaPE E-P_src {cv:.4} is below expert-only {ev:.4}");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    let d_sums: Vec<f64> = cape
        .rows
        .iter()
        .filter_map(|r| r.aggregates.d_sum)
        .collect();
    if d_sums.windows(2).any(|w| w[1] + 1e-9 < w[0]) {
        let w = "CaPE D_sum is not non-decreasing in alpha".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }

    let comparison = Comparison {
        pairing,
        sweeps,
        ensemble,
        warnings,
    };
    stage("report", || {
        let dir = layout.compare_dir();
        write_file(&dir.join("comparison.csv"), comparison.to_csv())?;
        write_file(
            &dir.join("comparison.svg"),
            render_svg(
                &comparison.sweeps,
                &[("ensemble".to_string(), comparison.ensemble.clone())],
            ),
        )?;
        write_json(&dir.join("comparison.json"), &comparison)
    })?;
    Ok(comparison)
}

/// The `compare` command: run the pipeline into `out`, then compare modes.
pub fn run_compare(cfg: &PipelineConfig, out: &Path) -> Result<(PipelineSummary, Comparison)> {
    let summary = run_pipeline(cfg, out)?;
    let _lock = DirLock::acquire(out)?;
    let comparison = compare_modes(cfg, out)?;
    Ok((summary, comparison))
}
