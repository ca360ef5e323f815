//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p cape-core --test acceptance --release -- --nocapture`
//! (the output is printed either way).

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cape_core::checkpoint::{
    self, average_merge, cape_merge, wise_ft_merge, Alpha, Checkpoint, Tensor,
};
use cape_core::corpus::{CorpusConfig, Vocabulary};
use cape_core::harness::{run_compare, run_pipeline, Comparison, PipelineConfig, PipelineSummary};
use cape_core::metrics::{self, EntityExtractor, ScoreReport};
use cape_core::model::{sequence_nll, sequence_nll_grad, Init, ModelParams};
use cape_core::rng::StreamRng;
use cape_core::selection::{SelectionMetric, SelectionResult};
use cape_core::Error;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Outcome::check(false, detail)
    }
}

fn random_checkpoint(rng: &mut StreamRng, shapes: &[Vec<usize>]) -> Checkpoint {
    let mut ck = Checkpoint::new();
    for (i, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| (rng.normal() * 3.0) as f32).collect();
        ck.insert(format!("t{i}"), Tensor::new(shape.clone(), data).unwrap())
            .unwrap();
    }
    ck
}

fn max_abs_diff(a: &Checkpoint, b: &Checkpoint) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|((_, ta), (_, tb))| ta.data().iter().zip(tb.data()))
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

fn tensors_bit_eq(a: &Checkpoint, b: &Checkpoint) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
}

fn criterion_1() -> Outcome {
    let mut rng = StreamRng::derive(101, 0, 0);
    let mut worst_wise = 0.0f64;
    let mut worst_avg = 0.0f64;
    for _ in 0..200 {
        let shapes: Vec<Vec<usize>> = (0..1 + rng.below(3))
            .map(|_| (0..rng.below(3)).map(|_| 1 + rng.below(5)).collect())
            .collect();
        let b = random_checkpoint(&mut rng, &shapes);
        let e = random_checkpoint(&mut rng, &shapes);
        let x = random_checkpoint(&mut rng, &shapes);
        let alpha = Alpha::new(rng.uniform() * 2.0 - 0.5).unwrap();

        let zero = cape_merge(&b, &e, &x, Alpha::new(0.0).unwrap()).unwrap();
        if !tensors_bit_eq(&zero, &b) {
            return Outcome::fail("cape_merge at alpha 0 differs from base");
        }
        let cape = cape_merge(&b, &e, &b, alpha).unwrap();
        let wise = wise_ft_merge(&b, &e, alpha).unwrap();
        worst_wise = worst_wise.max(max_abs_diff(&cape, &wise));
        let avg = average_merge(&[&b, &b, &b]).unwrap();
        worst_avg = worst_avg.max(max_abs_diff(&avg, &b));
    }
    Outcome::check(
        worst_wise <= 1e-6 && worst_avg <= 1e-6,
        format!("200 cases; max |cape(b,e,b)-wise_ft| = {worst_wise:.2e}, max |avg(b,b,b)-b| = {worst_avg:.2e}"),
    )
}

fn arb_checkpoint() -> impl Strategy<Value = Checkpoint> {
    let tensor = prop::collection::vec(1usize..4, 0..3).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<u32>(), n).prop_map(move |bits| {
            Tensor::new(
                shape.clone(),
                bits.into_iter().map(f32::from_bits).collect(),
            )
            .unwrap()
        })
    });
    (
        prop::collection::btree_map("[a-z][a-z0-9._]{0,8}", tensor, 0..5),
        prop::collection::btree_map("[ -~]{0,8}", "\\PC{0,12}", 0..4),
    )
        .prop_map(|(tensors, meta)| {
            let mut ck = Checkpoint::new();
            for (name, t) in tensors {
                ck.insert(name, t).unwrap();
            }
            for (k, v) in meta {
                ck.set_meta(k, v);
            }
            ck
        })
}

/// Assemble a container from raw parts so that each field can be broken.
fn container(version: u8, header: &str, data: &[f32], meta: &str) -> Vec<u8> {
    let mut out = b"CAPE".to_vec();
    out.push(version);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(meta.as_bytes());
    out
}

/// Label, file bytes, and the expected error kind.
type MalformedCase = (&'static str, Vec<u8>, fn(&Error) -> bool);

fn malformed_cases() -> Vec<MalformedCase> {
    let good_header = r#"[{"name":"a","shape":[2],"offset":0,"length":2},{"name":"b","shape":[1],"offset":8,"length":1}]"#;
    let good = container(1, good_header, &[1.0, 2.0, 3.0], "{}");
    let mut bad_magic = good.clone();
    bad_magic[3] = b'X';
    let truncated = good[..good.len() - 2 - 6].to_vec();
    let mut long_header = good.clone();
    long_header[5..13].copy_from_slice(&(1u64 << 40).to_le_bytes());
    vec![
        ("bad magic", bad_magic, |e| matches!(e, Error::BadMagic)),
        ("empty file", Vec::new(), |e| matches!(e, Error::BadMagic)),
        (
            "unsupported version",
            container(2, good_header, &[1.0, 2.0, 3.0], "{}"),
            |e| matches!(e, Error::UnsupportedVersion(2)),
        ),
        ("missing header length", b"CAPE\x01\x00\x00".to_vec(), |e| {
            matches!(e, Error::MalformedHeader(_))
        }),
        ("header length past end", long_header, |e| {
            matches!(e, Error::MalformedHeader(_))
        }),
        (
            "header not json",
            container(1, "[{\"name\":", &[], "{}"),
            |e| matches!(e, Error::MalformedHeader(_)),
        ),
        (
            "header unknown field",
            container(
                1,
                r#"[{"name":"a","shape":[],"offset":0,"length":1,"x":1}]"#,
                &[1.0],
                "{}",
            ),
            |e| matches!(e, Error::MalformedHeader(_)),
        ),
        ("truncated data", truncated, |e| {
            matches!(e, Error::TruncatedData { .. })
        }),
        (
            "unsorted names",
            container(
                1,
                r#"[{"name":"b","shape":[1],"offset":0,"length":1},{"name":"a","shape":[1],"offset":4,"length":1}]"#,
                &[1.0, 2.0],
                "{}",
            ),
            |e| matches!(e, Error::MalformedHeader(_)),
        ),
        (
            "duplicate names",
            container(
                1,
                r#"[{"name":"a","shape":[1],"offset":0,"length":1},{"name":"a","shape":[1],"offset":4,"length":1}]"#,
                &[1.0, 2.0],
                "{}",
            ),
            |e| matches!(e, Error::DuplicateName(n) if n == "a"),
        ),
        (
            "shape/length mismatch",
            container(
                1,
                r#"[{"name":"a","shape":[2,2],"offset":0,"length":3}]"#,
                &[1.0, 2.0, 3.0],
                "{}",
            ),
            |e| {
                matches!(
                    e,
                    Error::ShapeMismatch {
                        expected: 4,
                        actual: 3,
                        ..
                    }
                )
            },
        ),
        (
            "offset gap",
            container(
                1,
                r#"[{"name":"a","shape":[1],"offset":0,"length":1},{"name":"b","shape":[1],"offset":8,"length":1}]"#,
                &[1.0, 0.0, 2.0],
                "{}",
            ),
            |e| matches!(e, Error::MalformedHeader(_)),
        ),
        (
            "empty name",
            container(
                1,
                r#"[{"name":"","shape":[],"offset":0,"length":1}]"#,
                &[1.0],
                "{}",
            ),
            |e| matches!(e, Error::InvalidName(_)),
        ),
        (
            "metadata not json",
            container(1, good_header, &[1.0, 2.0, 3.0], "{\"k\":"),
            |e| matches!(e, Error::MalformedMetadata(_)),
        ),
        (
            "metadata not string map",
            container(1, good_header, &[1.0, 2.0, 3.0], "{\"k\":1}"),
            |e| matches!(e, Error::MalformedMetadata(_)),
        ),
    ]
}

fn criterion_2() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let roundtrip = runner.run(&arb_checkpoint(), |ck| {
        let bytes = checkpoint::to_bytes(&ck).unwrap();
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert!(back.bit_eq(&ck));
        prop_assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
        Ok(())
    });
    if let Err(e) = roundtrip {
        return Outcome::fail(format!("round-trip property failed: {e}"));
    }
    let cases = malformed_cases();
    let mut wrong = Vec::new();
    for (label, bytes, expected) in &cases {
        match checkpoint::from_bytes(bytes) {
            Err(e) if expected(&e) => {}
            Err(e) => wrong.push(format!("{label}: got {e}")),
            Ok(_) => wrong.push(format!("{label}: accepted")),
        }
    }
    Outcome::check(
        wrong.is_empty(),
        if wrong.is_empty() {
            format!(
                "1000 round trips bit-exact; {} malformed files rejected with the expected error",
                cases.len()
            )
        } else {
            wrong.join("; ")
        },
    )
}

fn criterion_3() -> Outcome {
    let h = 1e-4;
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let mut rng = StreamRng::derive(303, 0, case);
        let vocab = Vocabulary::new(
            1 + rng.below(3) as u32,
            1 + rng.below(2) as u32,
            rng.below(3) as u32,
        );
        let v = vocab.size();
        assert!(v <= 10);
        let params = ModelParams::init(vocab, Init::Gaussian { sigma: 0.5 }, case);
        let source: Vec<usize> = (0..1 + rng.below(6))
            .map(|_| 2 + rng.below(v - 2))
            .collect();
        let summary: Vec<usize> = (0..rng.below(7)).map(|_| 1 + rng.below(v - 1)).collect();
        let (_, grad) = sequence_nll_grad(&params, &source, &summary);

        let analytic: Vec<f64> = grad.w.iter().chain(&grad.c).copied().collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let bumped = |delta: f64| {
                let mut p = params.clone();
                if k < v * v {
                    p.w[k] += delta;
                } else {
                    p.c[k - v * v] += delta;
                }
                sequence_nll(&p, &source, &summary)
            };
            numeric.push((bumped(h) - bumped(-h)) / (2.0 * h));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = diff / (norm_a + norm_n);
        if !rel.is_finite() {
            return Outcome::fail(format!("case {case}: relative error is {rel}"));
        }
        worst = worst.max(rel);
    }
    Outcome::check(
        worst < 1e-4,
        format!("50 instances, V <= 10, h = {h}; max relative error {worst:.2e}"),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn opt_close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

fn prf_close(got: metrics::Prf, want: (f64, f64, f64)) -> bool {
    close(got.precision, want.0) && close(got.recall, want.1) && close(got.f1, want.2)
}

fn criterion_4() -> Outcome {
    let ex = EntityExtractor::synthetic();
    let mut mismatches = Vec::new();
    for case in 0..500u64 {
        let mut rng = StreamRng::derive(404, 0, case);
        let a = random_summary(&mut rng, 14);
        let b = random_tokens(&mut rng, 14);
        let n_facts = 1 + rng.below(5);
        let facts = random_facts(&mut rng, n_facts);
        let checks = [
            ("rouge1", {
                let (p, r) = rouge_n(&a, &b, 1);
                prf_close(metrics::rouge_n(&a, &b, 1), prf(p, r))
            }),
            ("rouge2", {
                let (p, r) = rouge_n(&a, &b, 2);
                prf_close(metrics::rouge_n(&a, &b, 2), prf(p, r))
            }),
            ("rougeL", {
                let (p, r) = rouge_l(&a, &b);
                prf_close(metrics::rouge_l(&a, &b), prf(p, r))
            }),
            (
                "ep_src",
                opt_close(
                    metrics::entity_precision_src(&a, &b, &ex),
                    ratio_f64(entity_precision(&a, &b)),
                ),
            ),
            (
                "er_ref",
                opt_close(
                    metrics::entity_recall_ref(&a, &b, &ex),
                    ratio_f64(entity_recall(&a, &b)),
                ),
            ),
            ("arcs", {
                let got = metrics::fact_arc_entailment(&a, &facts);
                (got.dae_errors, got.arc_total) == arcs(&a, &facts)
            }),
        ];
        for (name, ok) in checks {
            if !ok {
                mismatches.push(format!("{name} on case {case}"));
            }
        }
    }
    Outcome::check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "500 instances x 6 metrics agree with brute force at 1e-12".to_string()
        } else {
            format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
        },
    )
}

struct PinnedRun {
    dir: PathBuf,
    summary: PipelineSummary,
    comparison: Comparison,
}

fn load_selection(dir: &Path, metric: SelectionMetric) -> Result<SelectionResult, String> {
    let path = dir
        .join("selection")
        .join(metric.tag())
        .join("selection.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn criterion_5(run: &PinnedRun) -> Outcome {
    let refs =
        match ScoreReport::from_json_file(&run.dir.join("scores").join("train_references.json")) {
            Ok(r) => r,
            Err(e) => return Outcome::fail(e.to_string()),
        };
    let mut notes = Vec::new();
    let mut ok = true;
    for metric in [SelectionMetric::Dae, SelectionMetric::EntityPrecision] {
        let sel = match load_selection(&run.dir, metric) {
            Ok(s) => s,
            Err(e) => return Outcome::fail(e),
        };
        let clean_ok = sel.clean_ids.iter().all(|id| match refs.get(id) {
            Some(s) => match metric {
                SelectionMetric::Dae => s.dae_errors == 0,
                SelectionMetric::EntityPrecision => s.ep_src == Some(1.0),
            },
            None => false,
        });
        let disjoint = sel.clean_ids.is_disjoint(&sel.noisy_ids);
        let nonempty = !sel.clean_ids.is_empty() && !sel.noisy_ids.is_empty();
        ok &= clean_ok && disjoint && nonempty;
        notes.push(format!(
            "{}: clean {} noisy {} (clean sound {clean_ok}, disjoint {disjoint})",
            metric.tag(),
            sel.clean_ids.len(),
            sel.noisy_ids.len()
        ));
    }
    Outcome::check(ok, notes.join("; "))
}

fn criterion_6(run: &PinnedRun) -> Outcome {
    let m = &run.summary.models;
    let Some(base) = m.get("base") else {
        return Outcome::fail("no base scores");
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for metric in [SelectionMetric::Dae, SelectionMetric::EntityPrecision] {
        let tag = metric.tag();
        let (Some(expert), Some(anti)) = (
            m.get(&format!("expert_{tag}")),
            m.get(&format!("anti_{tag}")),
        ) else {
            return Outcome::fail(format!("missing expert or anti-expert for {tag}"));
        };
        for (name, get) in [
            (
                "E-P_src",
                (|a: &metrics::Aggregates| a.ep_src) as fn(&metrics::Aggregates) -> Option<f64>,
            ),
            ("D_sum", |a: &metrics::Aggregates| a.d_sum),
        ] {
            let (Some(e), Some(b), Some(a)) =
                (get(&expert.valid), get(&base.valid), get(&anti.valid))
            else {
                return Outcome::fail(format!("{tag} {name} undefined"));
            };
            let good = e - b >= 0.01 && b - a >= 0.01;
            ok &= good;
            notes.push(format!("{tag} {name} {e:.4} > {b:.4} > {a:.4}"));
        }
    }
    Outcome::check(ok, notes.join("; "))
}

fn criterion_7(run: &PinnedRun) -> Outcome {
    let Some(base) = run.summary.models.get("base") else {
        return Outcome::fail("no base scores");
    };
    let b = &base.valid;
    let mut ok = !run.summary.pairings.is_empty();
    let mut notes = Vec::new();
    for p in &run.summary.pairings {
        let m = &p.merged.valid;
        let gt = |x: Option<f64>, y: Option<f64>| matches!((x, y), (Some(x), Some(y)) if x > y);
        let ge99 =
            |x: Option<f64>, y: Option<f64>| matches!((x, y), (Some(x), Some(y)) if x >= 0.99 * y);
        let good = !p.degraded_to_wise_ft
            && p.selection.alpha >= 0.2
            && gt(m.d_sum, b.d_sum)
            && gt(m.ep_src, b.ep_src)
            && ge99(Some(m.rouge1.f1), Some(b.rouge1.f1))
            && ge99(m.er_ref, b.er_ref);
        ok &= good;
        notes.push(format!(
            "{} alpha {} D_sum {:.4} E-P {:.4} R1 {:.4} E-R {:.4}",
            p.pairing.label(),
            p.selection.alpha,
            m.d_sum.unwrap_or(f64::NAN),
            m.ep_src.unwrap_or(f64::NAN),
            m.rouge1.f1,
            m.er_ref.unwrap_or(f64::NAN),
        ));
    }
    notes.insert(
        0,
        format!(
            "base D_sum {:.4} E-P {:.4} R1 {:.4} E-R {:.4}",
            b.d_sum.unwrap_or(f64::NAN),
            b.ep_src.unwrap_or(f64::NAN),
            b.rouge1.f1,
            b.er_ref.unwrap_or(f64::NAN)
        ),
    );
    Outcome::check(ok, notes.join("; "))
}

fn criterion_8(run: &PinnedRun) -> Outcome {
    let c = &run.comparison;
    let at = |mode: &str| {
        c.sweep(mode)
            .and_then(|s| s.at(0.6))
            .and_then(|r| r.aggregates.ep_src)
    };
    match (at("cape"), at("expert_only")) {
        (Some(cape), Some(expert)) => Outcome::check(
            cape >= expert,
            format!(
                "pairing {}: alpha 0.6 E-P_src cape {cape:.4}, expert-only {expert:.4}",
                c.pairing.label()
            ),
        ),
        _ => Outcome::fail("alpha 0.6 missing from the compare sweeps"),
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        corpus: CorpusConfig {
            p_extrinsic: 0.0,
            p_intrinsic: 0.0,
            ..CorpusConfig::default()
        },
        ..PipelineConfig::default()
    };
    let summary = match run_pipeline(&cfg, dir.path()) {
        Ok(s) => s,
        Err(e) => return Outcome::fail(e.to_string()),
    };
    let base_ep = summary.models.get("base").and_then(|m| m.valid.ep_src);
    let noisy_empty = summary.selections.iter().all(|s| s.noisy_size == 0);
    let warned = summary.selections.iter().all(|s| {
        s.warnings
            .iter()
            .any(|w| w == &format!("noisy subset for metric {} is empty", s.metric.tag()))
    });
    let degraded = summary.pairings.iter().all(|p| p.degraded_to_wise_ft);
    Outcome::check(
        base_ep.is_some_and(|ep| ep >= 0.98) && noisy_empty && warned && degraded,
        format!(
            "base E-P_src {:.4}; noisy sizes {:?}; warned {warned}; merge fell back to base+expert {degraded}",
            base_ep.unwrap_or(f64::NAN),
            summary.selections.iter().map(|s| s.noisy_size).collect::<Vec<_>>()
        ),
    )
}

/// Every CSV and SVG under `dir`, keyed by relative path.
fn report_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(
                path.extension().and_then(|e| e.to_str()),
                Some("csv" | "svg")
            ) {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_10(first: &PinnedRun) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    if let Err(e) = run_compare(&PipelineConfig::default(), dir.path()) {
        return Outcome::fail(e.to_string());
    }
    let a = report_files(&first.dir);
    let b = report_files(dir.path());
    let compare_present = [
        Path::new("compare/comparison.csv"),
        Path::new("compare/comparison.svg"),
    ]
    .iter()
    .all(|p| a.contains_key(*p));
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Outcome::check(
        compare_present && differing.is_empty(),
        if differing.is_empty() {
            format!("{} CSV/SVG files byte-identical across two runs", a.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn report(n: usize, started: Instant, outcome: &Outcome) {
    let status = if outcome.pass { "PASS" } else { "FAIL" };
    println!(
        "{status} criterion {n:>2} ({:.1}s): {}",
        started.elapsed().as_secs_f64(),
        outcome.detail
    );
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let mut run = |n: usize, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(n, t, &o);
        results.push(o.pass);
    };
    run(1, &criterion_1);
    run(2, &criterion_2);
    run(3, &criterion_3);
    run(4, &criterion_4);

    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let pinned =
        run_compare(&PipelineConfig::default(), dir.path()).map(|(summary, comparison)| {
            PinnedRun {
                dir: dir.path().to_path_buf(),
                summary,
                comparison,
            }
        });
    println!(
        "pinned compare run finished in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    match &pinned {
        Ok(p) => {
            run(5, &|| criterion_5(p));
            run(6, &|| criterion_6(p));
            run(7, &|| criterion_7(p));
            run(8, &|| criterion_8(p));
        }
        Err(e) => {
            for n in 5..=8 {
                run(n, &|| Outcome::fail(format!("pinned run failed: {e}")));
            }
        }
    }
    run(9, &criterion_9);
    match &pinned {
        Ok(p) => run(10, &|| criterion_10(p)),
        Err(e) => run(10, &|| Outcome::fail(format!("pinned run failed: {e}"))),
    }

    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
