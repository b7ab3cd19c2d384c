//! Per-rater score tables, subject-level prompt averages and cohort pooling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratings::{dimension_scores, Cohort, DimensionScores, RatingError, RatingRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error("no records to average")]
    Empty,
    #[error("records mix raters or models ({0})")]
    Mixed(String),
    #[error("rater {rater} has no {model} rating for prompt {prompt}")]
    IncompleteBlock { rater: String, model: String, prompt: String },
    #[error("duplicate rating: rater {rater}, prompt {prompt}, model {model}")]
    Duplicate { rater: String, prompt: String, model: String },
    #[error("rater {0} appears in both cohorts")]
    ConflictingCohort(String),
    #[error("pooled standard deviation is undefined with {0} observations")]
    UndefinedSd(usize),
}

/// Count, mean and sample standard deviation of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample SD (n - 1 denominator); 0 for a single observation.
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { n, mean, sd })
    }
}

/// Pools two cohort summaries: group-size weighted mean; variance from
/// within-group sums of squares plus between-group mean adjustment over
/// `n_a + n_e - 1`. Equals the sample SD of the concatenated raters.
pub fn cohort_pool(a: Summary, e: Summary) -> Result<Summary, AggregateError> {
    let n = a.n + e.n;
    if n < 2 {
        return Err(AggregateError::UndefinedSd(n));
    }
    let (na, ne) = (a.n as f64, e.n as f64);
    let mean = (na * a.mean + ne * e.mean) / (na + ne);
    let ss = (na - 1.0).max(0.0) * a.sd.powi(2)
        + (ne - 1.0).max(0.0) * e.sd.powi(2)
        + na * (a.mean - mean).powi(2)
        + ne * (e.mean - mean).powi(2);
    Ok(Summary {
        n,
        mean,
        sd: (ss / (n as f64 - 1.0)).sqrt(),
    })
}

/// Mean dimension scores of one rater for one model across `prompts`.
pub fn subject_prompt_average(
    records: &[RatingRecord],
    prompts: &BTreeSet<String>,
) -> Result<DimensionScores, AggregateError> {
    let first = records.first().ok_or(AggregateError::Empty)?;
    let mut by_prompt: BTreeMap<&str, DimensionScores> = BTreeMap::new();
    for r in records {
        if r.rater_id != first.rater_id || r.model != first.model {
            return Err(AggregateError::Mixed(format!(
                "{}/{} vs {}/{}",
                first.rater_id, first.model, r.rater_id, r.model
            )));
        }
        if by_prompt.insert(&r.prompt, dimension_scores(r)?).is_some() {
            return Err(AggregateError::Duplicate {
                rater: r.rater_id.clone(),
                prompt: r.prompt.clone(),
                model: r.model.clone(),
            });
        }
    }
    if let Some(p) = prompts.iter().find(|p| !by_prompt.contains_key(p.as_str())) {
        return Err(AggregateError::IncompleteBlock {
            rater: first.rater_id.clone(),
            model: first.model.clone(),
            prompt: p.clone(),
        });
    }
    let used: Vec<&DimensionScores> = prompts.iter().map(|p| &by_prompt[p.as_str()]).collect();
    Ok(DimensionScores::from_fn(|d| {
        used.iter().map(|s| s.get(d)).sum::<f64>() / used.len() as f64
    }))
}

/// Key of one table cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub cohort: Cohort,
    pub rater: String,
    pub prompt: String,
    pub model: String,
}

/// Dimension scores per (cohort, rater, prompt, model).
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    cells: BTreeMap<CellKey, DimensionScores>,
    records: Vec<RatingRecord>,
}

impl ScoreTable {
    pub fn build(records: &[RatingRecord]) -> Result<Self, AggregateError> {
        let mut cells = BTreeMap::new();
        let mut cohort_of: BTreeMap<&str, Cohort> = BTreeMap::new();
        for r in records {
            if *cohort_of.entry(&r.rater_id).or_insert(r.cohort) != r.cohort {
                return Err(AggregateError::ConflictingCohort(r.rater_id.clone()));
            }
            let key = CellKey {
                cohort: r.cohort,
                rater: r.rater_id.clone(),
                prompt: r.prompt.clone(),
                model: r.model.clone(),
            };
            if cells.insert(key, dimension_scores(r)?).is_some() {
                return Err(AggregateError::Duplicate {
                    rater: r.rater_id.clone(),
                    prompt: r.prompt.clone(),
                    model: r.model.clone(),
                });
            }
        }
        Ok(ScoreTable {
            cells,
            records: records.to_vec(),
        })
    }

    pub fn get(&self, cohort: Cohort, rater: &str, prompt: &str, model: &str) -> Option<&DimensionScores> {
        self.cells.get(&CellKey {
            cohort,
            rater: rater.to_owned(),
            prompt: prompt.to_owned(),
            model: model.to_owned(),
        })
    }

    pub fn cohorts(&self) -> BTreeSet<Cohort> {
        self.cells.keys().map(|k| k.cohort).collect()
    }

    pub fn raters(&self, cohort: Cohort) -> BTreeSet<&str> {
        self.keys(cohort).map(|k| k.rater.as_str()).collect()
    }

    pub fn prompts(&self, cohort: Cohort) -> BTreeSet<&str> {
        self.keys(cohort).map(|k| k.prompt.as_str()).collect()
    }

    pub fn models(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.model.as_str()).collect()
    }

    fn keys(&self, cohort: Cohort) -> impl Iterator<Item = &CellKey> {
        self.cells.keys().filter(move |k| k.cohort == cohort)
    }

    /// Subject-level prompt averages for one cohort: per (rater, model), the
    /// mean over the cohort's prompts. A rater missing a prompt for a model
    /// is left out of that model; the second value lists those exclusions.
    #[allow(clippy::type_complexity)]
    pub fn subject_averages(
        &self,
        cohort: Cohort,
    ) -> (BTreeMap<(String, String), DimensionScores>, Vec<String>) {
        let prompts: BTreeSet<String> = self.prompts(cohort).into_iter().map(str::to_owned).collect();
        let mut grouped: BTreeMap<(String, String), Vec<RatingRecord>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.cohort == cohort) {
            grouped
                .entry((r.rater_id.clone(), r.model.clone()))
                .or_default()
                .push(r.clone());
        }
        let mut excluded = Vec::new();
        let averages = grouped
            .into_iter()
            .filter_map(|(key, recs)| match subject_prompt_average(&recs, &prompts) {
                Ok(s) => Some((key, s)),
                Err(e) => {
                    log::warn!("excluding {}/{} from subject averages: {e}", key.0, key.1);
                    excluded.push(e.to_string());
                    None
                }
            })
            .collect();
        (averages, excluded)
    }
}
