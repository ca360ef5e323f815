//! Clean/noisy training-subset selection over scored reference summaries.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ScoreReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    EntityPrecision,
    Dae,
}

impl SelectionMetric {
    /// Short tag used in file names and pairing labels.
    pub fn tag(self) -> &'static str {
        match self {
            SelectionMetric::EntityPrecision => "ep",
            SelectionMetric::Dae => "dae",
        }
    }

    pub fn letter(self) -> char {
        match self {
            SelectionMetric::EntityPrecision => 'P',
            SelectionMetric::Dae => 'D',
        }
    }
}

impl std::str::FromStr for SelectionMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ep" | "entity_precision" | "P" => Ok(SelectionMetric::EntityPrecision),
            "dae" | "D" => Ok(SelectionMetric::Dae),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Selection thresholds.
///
/// `ep_*` are fractions of entity tokens; `dae_errors_clean` is an error
/// count; `dae_noisy` is the minimum fraction of arcs in error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionThresholds {
    pub ep_clean: f64,
    pub dae_errors_clean: usize,
    pub dae_noisy: f64,
    pub ep_noisy: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        SelectionThresholds {
            ep_clean: 1.0,
            dae_errors_clean: 0,
            dae_noisy: 0.75,
            ep_noisy: 0.5,
        }
    }
}

impl SelectionThresholds {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.ep_clean) || !frac(self.ep_noisy) || !frac(self.dae_noisy) {
            return Err(Error::InvalidThresholds(
                "fractional thresholds must lie in [0, 1]".into(),
            ));
        }
        if self.ep_clean <= self.ep_noisy {
            return Err(Error::InvalidThresholds(format!(
                "ep_clean {} must exceed ep_noisy {}",
                self.ep_clean, self.ep_noisy
            )));
        }
        if self.dae_noisy <= 0.0 {
            return Err(Error::InvalidThresholds(
                "dae_noisy must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: SelectionThresholds = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        t.validate()?;
        Ok(t)
    }
}

/// A selected id set, flagged when empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub ids: BTreeSet<String>,
    pub empty_warning: bool,
}

impl Selected {
    fn new(ids: BTreeSet<String>) -> Self {
        let empty_warning = ids.is_empty();
        Selected { ids, empty_warning }
    }
}

pub fn select_clean(
    scores: &ScoreReport,
    metric: SelectionMetric,
    t: &SelectionThresholds,
) -> Selected {
    let ids = scores
        .examples
        .iter()
        .filter(|s| match metric {
            SelectionMetric::EntityPrecision => s.ep_src.is_some_and(|ep| ep >= t.ep_clean),
            SelectionMetric::Dae => s.arc_total > 0 && s.dae_errors <= t.dae_errors_clean,
        })
        .map(|s| s.id.clone())
        .collect();
    Selected::new(ids)
}

pub fn select_noisy(
    scores: &ScoreReport,
    metric: SelectionMetric,
    t: &SelectionThresholds,
) -> Selected {
    let ids = scores
        .examples
        .iter()
        .filter(|s| match metric {
            SelectionMetric::EntityPrecision => s.ep_src.is_some_and(|ep| ep <= t.ep_noisy),
            SelectionMetric::Dae => {
                s.arc_total > 0
                    && s.dae_errors > t.dae_errors_clean
                    && s.dae_errors as f64 / s.arc_total as f64 >= t.dae_noisy
            }
        })
        .map(|s| s.id.clone())
        .collect();
    Selected::new(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub metric: SelectionMetric,
    pub thresholds: SelectionThresholds,
    pub corpus_size: usize,
    pub clean_ids: BTreeSet<String>,
    pub noisy_ids: BTreeSet<String>,
    pub clean_size: usize,
    pub noisy_size: usize,
    pub clean_fraction: f64,
    pub noisy_fraction: f64,
    pub warnings: Vec<String>,
}

/// Run both selections and check the result is a proper split.
pub fn select(
    scores: &ScoreReport,
    metric: SelectionMetric,
    t: &SelectionThresholds,
) -> Result<SelectionResult> {
    t.validate()?;
    let clean = select_clean(scores, metric, t);
    let noisy = select_noisy(scores, metric, t);
    debug_assert!(clean.ids.is_disjoint(&noisy.ids));
    let n = scores.examples.len();
    let frac = |k: usize| if n > 0 { k as f64 / n as f64 } else { 0.0 };
    let mut warnings = Vec::new();
    if clean.empty_warning {
        warnings.push(format!("clean subset for metric {} is empty", metric.tag()));
    }
    if noisy.empty_warning {
        warnings.push(format!("noisy subset for metric {} is empty", metric.tag()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SelectionResult {
        metric,
        thresholds: *t,
        corpus_size: n,
        clean_size: clean.ids.len(),
        noisy_size: noisy.ids.len(),
        clean_fraction: frac(clean.ids.len()),
        noisy_fraction: frac(noisy.ids.len()),
        clean_ids: clean.ids,
        noisy_ids: noisy.ids,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate, EntityExtractor, ExampleScore, Prf, ScoreMode};

    fn score(id: &str, ep: Option<f64>, errors: usize, arcs: usize) -> ExampleScore {
        ExampleScore {
            id: id.to_string(),
            ep_src: ep,
            er_ref: None,
            dae_errors: errors,
            arc_total: arcs,
            d_arc: (arcs > 0).then(|| (arcs - errors) as f64 / arcs as f64),
            rouge1: Prf::default(),
            rouge2: Prf::default(),
            rouge_l: Prf::default(),
            summary_length: 0,
        }
    }

    fn report(scores: Vec<ExampleScore>) -> ScoreReport {
        aggregate(
            ScoreMode::Synthetic,
            scores,
            &[],
            &EntityExtractor::synthetic(),
        )
    }

    #[test]
    fn entity_thresholds() {
        let r = report(vec![
            score("a", Some(1.0), 0, 2),
            score("b", Some(0.5), 1, 2),
            score("c", Some(0.0), 2, 2),
            score("d", None, 0, 0),
        ]);
        let t = SelectionThresholds::default();
        let clean = select_clean(&r, SelectionMetric::EntityPrecision, &t);
        assert_eq!(clean.ids, BTreeSet::from(["a".to_string()]));
        let noisy = select_noisy(&r, SelectionMetric::EntityPrecision, &t);
        assert_eq!(
            noisy.ids,
            BTreeSet::from(["b".to_string(), "c".to_string()])
        );
        let strict = SelectionThresholds { ep_noisy: 0.0, ..t };
        let noisy = select_noisy(&r, SelectionMetric::EntityPrecision, &strict);
        assert_eq!(noisy.ids, BTreeSet::from(["c".to_string()]));
    }

    #[test]
    fn dae_thresholds() {
        let r = report(vec![
            score("a", Some(1.0), 0, 3),
            score("b", Some(1.0), 1, 3),
            score("c", Some(0.5), 3, 3),
            score("d", None, 0, 0),
        ]);
        let t = SelectionThresholds::default();
        let clean = select_clean(&r, SelectionMetric::Dae, &t);
        assert_eq!(clean.ids, BTreeSet::from(["a".to_string()]));
        // 1/3 < 0.75, so "b" is in neither set.
        let noisy = select_noisy(&r, SelectionMetric::Dae, &t);
        assert_eq!(noisy.ids, BTreeSet::from(["c".to_string()]));
    }

    #[test]
    fn empty_noisy_set_warns() {
        let r = report(vec![score("a", Some(1.0), 0, 2)]);
        let res = select(&r, SelectionMetric::Dae, &SelectionThresholds::default()).unwrap();
        assert_eq!(res.noisy_size, 0);
        assert!(res.warnings.iter().any(|w| w.contains("noisy")));
    }

    #[test]
    fn threshold_validation() {
        let t = SelectionThresholds {
            ep_clean: 0.2,
            ep_noisy: 0.3,
            ..SelectionThresholds::default()
        };
        assert!(t.validate().is_err());
        assert!(SelectionThresholds::default().validate().is_ok());
    }
}
