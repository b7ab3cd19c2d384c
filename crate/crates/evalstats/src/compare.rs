//! Rater-block matrices and the baselines-versus-ours comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratings::{dimension_scores, Dimension, DimensionScores, RatingError, RatingRecord};
use crate::stats::{wilcoxon_signed_rank, StatsError, TestResult, ZeroMethod};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0} model list is empty")]
    NoModels(&'static str),
    #[error("duplicate rating: rater {rater}, prompt {prompt}, model {model}")]
    Duplicate { rater: String, prompt: String, model: String },
    #[error("no rater block has every requested model")]
    NoCompleteBlocks,
}

/// A within-subject block: one rater on one prompt.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Block {
    pub rater: String,
    pub prompt: String,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.rater, self.prompt)
    }
}

/// Dimension scores of `records` per block and model.
pub fn block_scores(
    records: &[RatingRecord],
) -> Result<BTreeMap<Block, BTreeMap<String, DimensionScores>>, CompareError> {
    let mut out: BTreeMap<Block, BTreeMap<String, DimensionScores>> = BTreeMap::new();
    for r in records {
        let block = Block {
            rater: r.rater_id.clone(),
            prompt: r.prompt.clone(),
        };
        if out
            .entry(block)
            .or_default()
            .insert(r.model.clone(), dimension_scores(r)?)
            .is_some()
        {
            return Err(CompareError::Duplicate {
                rater: r.rater_id.clone(),
                prompt: r.prompt.clone(),
                model: r.model.clone(),
            });
        }
    }
    Ok(out)
}

/// Blocks with all of `models`, as a blocks × models matrix of `dimension`
/// scores, plus the blocks left out for missing a model.
pub struct BlockMatrix {
    pub blocks: Vec<Block>,
    pub rows: Vec<Vec<f64>>,
    pub excluded: Vec<Block>,
}

pub fn block_matrix(
    scores: &BTreeMap<Block, BTreeMap<String, DimensionScores>>,
    models: &[String],
    dimension: Dimension,
) -> BlockMatrix {
    let mut m = BlockMatrix {
        blocks: Vec::new(),
        rows: Vec::new(),
        excluded: Vec::new(),
    };
    for (block, by_model) in scores {
        let row: Option<Vec<f64>> = models
            .iter()
            .map(|model| by_model.get(model).map(|s| s.get(dimension)))
            .collect();
        match row {
            Some(row) => {
                m.blocks.push(block.clone());
                m.rows.push(row);
            }
            None => {
                log::warn!("excluding incomplete block {block}");
                m.excluded.push(block.clone());
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub dimension: Dimension,
    pub ours_mean: f64,
    pub base_mean: f64,
    /// `ours_mean - base_mean`.
    pub delta: f64,
    pub p: f64,
    pub n: usize,
    pub test: TestResult,
    pub excluded: Vec<Block>,
}

/// Per block: mean over `ours` and mean over `baselines` (models pooled
/// first), then means over blocks and a paired signed-rank test.
pub fn baseline_vs_ours(
    records: &[RatingRecord],
    baselines: &[String],
    ours: &[String],
    dimension: Dimension,
    zeros: ZeroMethod,
) -> Result<ComparisonResult, CompareError> {
    if baselines.is_empty() {
        return Err(CompareError::NoModels("baseline"));
    }
    if ours.is_empty() {
        return Err(CompareError::NoModels("ours"));
    }
    let models: Vec<String> = baselines.iter().chain(ours).cloned().collect();
    let matrix = block_matrix(&block_scores(records)?, &models, dimension);
    if matrix.rows.is_empty() {
        return Err(CompareError::NoCompleteBlocks);
    }
    let nb = baselines.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let base: Vec<f64> = matrix.rows.iter().map(|r| mean(&r[..nb])).collect();
    let our: Vec<f64> = matrix.rows.iter().map(|r| mean(&r[nb..])).collect();
    let test = wilcoxon_signed_rank(&our, &base, zeros)?;
    let (ours_mean, base_mean) = (mean(&our), mean(&base));
    Ok(ComparisonResult {
        dimension,
        ours_mean,
        base_mean,
        delta: ours_mean - base_mean,
        p: test.p,
        n: matrix.rows.len(),
        test,
        excluded: matrix.excluded,
    })
}
