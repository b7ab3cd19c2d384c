//! The evaluation report: aggregation tables plus the requested tests, laid
//! out as per-prompt (or pooled) rows per cohort and dimension.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{cohort_pool, AggregateError, ScoreTable, Summary};
use crate::compare::{baseline_vs_ours, block_matrix, block_scores, Block, CompareError};
use crate::ratings::{Cohort, Dimension, DimensionScores, RatingRecord};
use crate::stats::{friedman_test, holm_adjust, wilcoxon_signed_rank, Method, StatsError, ZeroMethod};

pub const DEFAULT_BASELINES: [&str; 2] = ["aipai", "video_ocean"];
pub const DEFAULT_OURS: [&str; 3] = ["setting1_flat", "setting2_hier_no_ctx", "setting3_full"];

/// Group label used for tests over rater × prompt blocks.
pub const POOLED: &str = "pooled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Friedman,
    Wilcoxon,
    Bvo,
}

impl std::str::FromStr for TestKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "friedman" => Ok(TestKind::Friedman),
            "wilcoxon" => Ok(TestKind::Wilcoxon),
            "bvo" => Ok(TestKind::Bvo),
            other => Err(format!("unknown test {other:?} (expected friedman, wilcoxon or bvo)")),
        }
    }
}

/// How blocks are formed for the tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    /// One analysis per prompt; blocks are raters.
    #[default]
    Prompt,
    /// One analysis per cohort over all prompts; blocks are rater × prompt.
    Pooled,
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prompt" => Ok(GroupBy::Prompt),
            "pooled" => Ok(GroupBy::Pooled),
            other => Err(format!("unknown grouping {other:?} (expected prompt or pooled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tests: BTreeSet<TestKind>,
    pub group_by: GroupBy,
    pub baselines: Vec<String>,
    pub ours: Vec<String>,
    pub zeros: ZeroMethod,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tests: [TestKind::Friedman, TestKind::Wilcoxon, TestKind::Bvo].into(),
            group_by: GroupBy::Prompt,
            baselines: DEFAULT_BASELINES.iter().map(|s| s.to_string()).collect(),
            ours: DEFAULT_OURS.iter().map(|s| s.to_string()).collect(),
            zeros: ZeroMethod::Drop,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("model {0:?} is not present in the ratings")]
    UnknownModel(String),
    #[error("no ratings")]
    Empty,
}

/// Mean dimension scores of one model on one prompt within a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMeansRow {
    pub cohort: Cohort,
    pub prompt: String,
    pub model: String,
    pub n: usize,
    pub means: DimensionScores,
}

/// One rater's prompt-averaged scores for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub cohort: Cohort,
    pub rater_id: String,
    pub model: String,
    pub scores: DimensionScores,
}

/// Mean ± SD over raters' subject-level averages, per dimension. `cohort`
/// is `audience`, `expert` or `pooled`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cohort: String,
    pub model: String,
    pub dimensions: BTreeMap<Dimension, Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanRow {
    pub cohort: Cohort,
    pub prompt: String,
    pub dimension: Dimension,
    pub chi2: f64,
    pub df: u32,
    pub p: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub models: Vec<String>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub cohort: Cohort,
    pub prompt: String,
    pub dimension: Dimension,
    pub model_a: String,
    pub model_b: String,
    /// W+ of `model_a - model_b`.
    pub statistic: f64,
    pub p: f64,
    /// Holm-adjusted across all pairs of this cohort, group and dimension.
    pub p_holm: f64,
    pub n: usize,
    pub method: Method,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvoRow {
    pub cohort: Cohort,
    pub prompt: String,
    pub dimension: Dimension,
    pub ours_mean: f64,
    pub base_mean: f64,
    pub delta: f64,
    pub p: f64,
    /// Holm-adjusted across the six dimensions of this cohort and group.
    pub p_holm: f64,
    pub n: usize,
    pub method: Method,
    pub degenerate: bool,
    /// Direction when `p < 0.05`.
    pub mark: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_records: usize,
    pub group_by: GroupBy,
    pub prompt_means: Vec<PromptMeansRow>,
    pub subject_averages: Vec<SubjectRow>,
    pub cohort_means: Vec<SummaryRow>,
    pub pooled_means: Vec<SummaryRow>,
    pub friedman: Vec<FriedmanRow>,
    pub wilcoxon: Vec<PairwiseRow>,
    pub bvo: Vec<BvoRow>,
    pub warnings: Vec<String>,
}

/// Builds the full report. Incomplete blocks are excluded from the affected
/// analyses and listed under `warnings`; they never abort the run.
pub fn evaluate(records: &[RatingRecord], opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let table = ScoreTable::build(records)?;
    if opts.tests.contains(&TestKind::Bvo) {
        let present = table.models();
        if let Some(m) = opts.baselines.iter().chain(&opts.ours).find(|m| !present.contains(m.as_str())) {
            return Err(EvalError::UnknownModel(m.clone()));
        }
    }

    let mut report = EvalReport {
        n_records: records.len(),
        group_by: opts.group_by,
        prompt_means: Vec::new(),
        subject_averages: Vec::new(),
        cohort_means: Vec::new(),
        pooled_means: Vec::new(),
        friedman: Vec::new(),
        wilcoxon: Vec::new(),
        bvo: Vec::new(),
        warnings: Vec::new(),
    };
    let models: Vec<String> = table.models().into_iter().map(str::to_owned).collect();

    let mut per_cohort: BTreeMap<Cohort, BTreeMap<String, BTreeMap<Dimension, Summary>>> = BTreeMap::new();
    for cohort in table.cohorts() {
        prompt_means(&table, cohort, &models, &mut report.prompt_means);

        let (averages, excluded) = table.subject_averages(cohort);
        report.warnings.extend(excluded.into_iter().map(|e| format!("{cohort}: {e}")));
        for ((rater, model), scores) in &averages {
            report.subject_averages.push(SubjectRow {
                cohort,
                rater_id: rater.clone(),
                model: model.clone(),
                scores: *scores,
            });
        }
        let summaries = per_cohort.entry(cohort).or_default();
        for model in &models {
            let values: Vec<&DimensionScores> = averages
                .iter()
                .filter(|((_, m), _)| m == model)
                .map(|(_, s)| s)
                .collect();
            let dims: BTreeMap<Dimension, Summary> = Dimension::ALL
                .into_iter()
                .filter_map(|d| Summary::of(&values.iter().map(|s| s.get(d)).collect::<Vec<_>>()).map(|s| (d, s)))
                .collect();
            if !dims.is_empty() {
                report.cohort_means.push(SummaryRow {
                    cohort: cohort.to_string(),
                    model: model.clone(),
                    dimensions: dims.clone(),
                });
                summaries.insert(model.clone(), dims);
            }
        }

        let cohort_records: Vec<RatingRecord> = records.iter().filter(|r| r.cohort == cohort).cloned().collect();
        let groups: Vec<(String, Vec<RatingRecord>)> = match opts.group_by {
            GroupBy::Prompt => table
                .prompts(cohort)
                .into_iter()
                .map(|p| {
                    let recs = cohort_records.iter().filter(|r| r.prompt == p).cloned().collect();
                    (p.to_owned(), recs)
                })
                .collect(),
            GroupBy::Pooled => vec![(POOLED.to_owned(), cohort_records)],
        };
        for (group, recs) in &groups {
            run_tests(cohort, group, recs, &models, opts, &mut report)?;
        }
    }

    for model in &models {
        let a = per_cohort.get(&Cohort::Audience).and_then(|m| m.get(model));
        let e = per_cohort.get(&Cohort::Expert).and_then(|m| m.get(model));
        let mut dims = BTreeMap::new();
        for d in Dimension::ALL {
            let pooled = match (a.and_then(|m| m.get(&d)), e.and_then(|m| m.get(&d))) {
                (Some(a), Some(e)) => Some(cohort_pool(*a, *e)?),
                (Some(s), None) | (None, Some(s)) => Some(*s),
                (None, None) => None,
            };
            if let Some(p) = pooled {
                dims.insert(d, p);
            }
        }
        if !dims.is_empty() {
            report.pooled_means.push(SummaryRow {
                cohort: POOLED.to_owned(),
                model: model.clone(),
                dimensions: dims,
            });
        }
    }
    Ok(report)
}

fn prompt_means(table: &ScoreTable, cohort: Cohort, models: &[String], out: &mut Vec<PromptMeansRow>) {
    let raters = table.raters(cohort);
    for prompt in table.prompts(cohort) {
        for model in models {
            let cells: Vec<&DimensionScores> = raters
                .iter()
                .filter_map(|r| table.get(cohort, r, prompt, model))
                .collect();
            if cells.is_empty() {
                continue;
            }
            out.push(PromptMeansRow {
                cohort,
                prompt: prompt.to_owned(),
                model: model.clone(),
                n: cells.len(),
                means: DimensionScores::from_fn(|d| {
                    cells.iter().map(|s| s.get(d)).sum::<f64>() / cells.len() as f64
                }),
            });
        }
    }
}

fn run_tests(
    cohort: Cohort,
    group: &str,
    records: &[RatingRecord],
    all_models: &[String],
    opts: &EvalOptions,
    report: &mut EvalReport,
) -> Result<(), EvalError> {
    let scores = block_scores(records)?;
    let present: BTreeSet<&str> = records.iter().map(|r| r.model.as_str()).collect();
    let models: Vec<String> = all_models.iter().filter(|m| present.contains(m.as_str())).cloned().collect();
    let mut warned: BTreeSet<Block> = BTreeSet::new();
    let mut warn = |report: &mut EvalReport, excluded: &[Block]| {
        for b in excluded {
            if warned.insert(b.clone()) {
                report
                    .warnings
                    .push(format!("{cohort}/{group}: block {b} lacks a model and is excluded"));
            }
        }
    };

    if opts.tests.contains(&TestKind::Friedman) {
        for d in Dimension::ALL {
            let m = block_matrix(&scores, &models, d);
            warn(report, &m.excluded);
            if m.rows.len() < 2 || models.len() < 2 {
                report.warnings.push(format!(
                    "{cohort}/{group}/{d}: Friedman needs 2+ complete blocks and models, skipped"
                ));
                continue;
            }
            let t = friedman_test(&m.rows)?;
            report.friedman.push(FriedmanRow {
                cohort,
                prompt: group.to_owned(),
                dimension: d,
                chi2: t.statistic,
                df: t.df,
                p: t.p,
                w: t.effect.unwrap_or(0.0),
                n: t.n,
                models: models.clone(),
                degenerate: t.degenerate,
            });
        }
    }

    if opts.tests.contains(&TestKind::Wilcoxon) {
        for d in Dimension::ALL {
            let m = block_matrix(&scores, &models, d);
            warn(report, &m.excluded);
            if m.rows.is_empty() {
                continue;
            }
            let mut rows = Vec::new();
            for i in 0..models.len() {
                for j in i + 1..models.len() {
                    let a: Vec<f64> = m.rows.iter().map(|r| r[i]).collect();
                    let b: Vec<f64> = m.rows.iter().map(|r| r[j]).collect();
                    let t = wilcoxon_signed_rank(&a, &b, opts.zeros)?;
                    rows.push(PairwiseRow {
                        cohort,
                        prompt: group.to_owned(),
                        dimension: d,
                        model_a: models[i].clone(),
                        model_b: models[j].clone(),
                        statistic: t.statistic,
                        p: t.p,
                        p_holm: t.p,
                        n: t.n,
                        method: t.method,
                        degenerate: t.degenerate,
                    });
                }
            }
            let adjusted = holm_adjust(&rows.iter().map(|r| r.p).collect::<Vec<_>>());
            for (r, p) in rows.iter_mut().zip(adjusted) {
                r.p_holm = p;
            }
            report.wilcoxon.extend(rows);
        }
    }

    if opts.tests.contains(&TestKind::Bvo) {
        let mut rows = Vec::new();
        for d in Dimension::ALL {
            match baseline_vs_ours(records, &opts.baselines, &opts.ours, d, opts.zeros) {
                Ok(c) => {
                    warn(report, &c.excluded);
                    let mark = (c.p < 0.05 && c.delta != 0.0).then(|| {
                        if c.delta > 0.0 { "Ours > Baselines" } else { "Baselines > Ours" }.to_owned()
                    });
                    rows.push(BvoRow {
                        cohort,
                        prompt: group.to_owned(),
                        dimension: d,
                        ours_mean: c.ours_mean,
                        base_mean: c.base_mean,
                        delta: c.delta,
                        p: c.p,
                        p_holm: c.p,
                        n: c.n,
                        method: c.test.method,
                        degenerate: c.test.degenerate,
                        mark,
                    });
                }
                Err(CompareError::NoCompleteBlocks) => {
                    report
                        .warnings
                        .push(format!("{cohort}/{group}/{d}: no complete block for baselines vs ours"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let adjusted = holm_adjust(&rows.iter().map(|r| r.p).collect::<Vec<_>>());
        for (r, p) in rows.iter_mut().zip(adjusted) {
            r.p_holm = p;
        }
        report.bvo.extend(rows);
    }
    Ok(())
}
