//! Counterbalancing designs: cyclic Latin squares and Williams squares.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Latin,
    Williams,
}

impl std::str::FromStr for DesignKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "latin" => Ok(DesignKind::Latin),
            "williams" => Ok(DesignKind::Williams),
            other => Err(format!("unknown design {other:?} (expected latin or williams)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub kind: DesignKind,
    pub k: usize,
    /// One treatment order per row.
    pub sequences: Vec<Vec<usize>>,
    /// `carryover[a][b]`: how often `b` immediately follows `a`.
    pub carryover: Vec<Vec<u32>>,
    /// Spread (max - min) of carryover counts over ordered pairs of distinct
    /// treatments; 0 means first-order balanced.
    pub imbalance: u32,
}

/// Builds a `k × k` design. Williams rows interleave `0, 1, k-1, 2, k-2, …`
/// shifted by the row index; for odd `k` a single square cannot balance
/// carryover and `imbalance` says by how much.
pub fn counterbalance_design(k: usize, kind: DesignKind) -> Design {
    let base: Vec<usize> = match kind {
        DesignKind::Latin => (0..k).collect(),
        DesignKind::Williams => {
            let (mut lo, mut hi) = (1, k.saturating_sub(1));
            let mut seq = Vec::with_capacity(k);
            if k > 0 {
                seq.push(0);
            }
            for j in 1..k {
                if j % 2 == 1 {
                    seq.push(lo);
                    lo += 1;
                } else {
                    seq.push(hi);
                    hi -= 1;
                }
            }
            seq
        }
    };
    let sequences: Vec<Vec<usize>> = (0..k)
        .map(|i| base.iter().map(|t| (t + i) % k).collect())
        .collect();
    let carryover = carryover_matrix(k, &sequences);
    let off_diag: Vec<u32> = (0..k)
        .flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| carryover[a][b])
        .collect();
    let imbalance = match (off_diag.iter().max(), off_diag.iter().min()) {
        (Some(max), Some(min)) => max - min,
        _ => 0,
    };
    Design {
        kind,
        k,
        sequences,
        carryover,
        imbalance,
    }
}

pub fn carryover_matrix(k: usize, sequences: &[Vec<usize>]) -> Vec<Vec<u32>> {
    let mut m = vec![vec![0; k]; k];
    for seq in sequences {
        for w in seq.windows(2) {
            m[w[0]][w[1]] += 1;
        }
    }
    m
}
