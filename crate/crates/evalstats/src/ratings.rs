//! Rating records, the twelve questionnaire items and their six dimensions.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Questionnaire items in CSV column order.
pub const ITEMS: [&str; 12] = [
    "SF", "NC", "VQ", "CC", "PLC", "VAQ", "CT", "AVR", "NP", "VAC", "CD", "OQ",
];

/// Exact CSV header accepted by [`read_ratings`].
pub const CSV_HEADER: [&str; 16] = [
    "rater_id", "cohort", "prompt", "model", "SF", "NC", "VQ", "CC", "PLC", "VAQ", "CT", "AVR", "NP",
    "VAC", "CD", "OQ",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Audience,
    Expert,
}

impl Cohort {
    pub const ALL: [Cohort; 2] = [Cohort::Audience, Cohort::Expert];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Audience => "audience",
            Cohort::Expert => "expert",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "audience" => Ok(Cohort::Audience),
            "expert" => Ok(Cohort::Expert),
            other => Err(format!("unknown cohort {other:?} (expected audience or expert)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    NS,
    AT,
    AE,
    RF,
    EE,
    OE,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::NS,
        Dimension::AT,
        Dimension::AE,
        Dimension::RF,
        Dimension::EE,
        Dimension::OE,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::NS => "NS",
            Dimension::AT => "AT",
            Dimension::AE => "AE",
            Dimension::RF => "RF",
            Dimension::EE => "EE",
            Dimension::OE => "OE",
        }
    }

    /// Indices into [`ITEMS`] averaged into this dimension.
    pub fn items(self) -> &'static [usize] {
        match self {
            Dimension::NS => &[0, 1],
            Dimension::AT => &[2, 3, 4, 5],
            Dimension::AE => &[6, 7],
            Dimension::RF => &[8, 9],
            Dimension::EE => &[10],
            Dimension::OE => &[11],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dimension {s:?}"))
    }
}

/// One rater's twelve item scores for one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub cohort: Cohort,
    pub prompt: String,
    pub model: String,
    /// Item scores in [`ITEMS`] order.
    pub items: [u8; 12],
}

impl RatingRecord {
    pub fn item(&self, name: &str) -> Option<u8> {
        ITEMS.iter().position(|i| *i == name).map(|i| self.items[i])
    }
}

/// Six dimension scores, each the unweighted mean of its items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DimensionScores {
    pub NS: f64,
    pub AT: f64,
    pub AE: f64,
    pub RF: f64,
    pub EE: f64,
    pub OE: f64,
}

impl DimensionScores {
    pub fn uniform(v: f64) -> Self {
        DimensionScores::from_fn(|_| v)
    }

    pub fn from_fn(mut f: impl FnMut(Dimension) -> f64) -> Self {
        DimensionScores {
            NS: f(Dimension::NS),
            AT: f(Dimension::AT),
            AE: f(Dimension::AE),
            RF: f(Dimension::RF),
            EE: f(Dimension::EE),
            OE: f(Dimension::OE),
        }
    }

    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::NS => self.NS,
            Dimension::AT => self.AT,
            Dimension::AE => self.AE,
            Dimension::RF => self.RF,
            Dimension::EE => self.EE,
            Dimension::OE => self.OE,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RatingError {
    #[error("item {item} = {value} is outside 1..=5")]
    ItemOutOfRange { item: &'static str, value: u8 },
    #[error("header must be exactly `{}`, found `{found}`", CSV_HEADER.join(","))]
    BadHeader { found: String },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
}

/// Dimension means of a record. Fails on the first item outside 1..=5.
pub fn dimension_scores(r: &RatingRecord) -> Result<DimensionScores, RatingError> {
    for (name, &value) in ITEMS.iter().zip(&r.items) {
        if !(1..=5).contains(&value) {
            return Err(RatingError::ItemOutOfRange { item: name, value });
        }
    }
    Ok(DimensionScores::from_fn(|d| {
        let idx = d.items();
        idx.iter().map(|&i| f64::from(r.items[i])).sum::<f64>() / idx.len() as f64
    }))
}

/// Parses a ratings CSV. Any malformed row aborts the whole read with its
/// line number (the header is line 1).
pub fn read_ratings(reader: impl Read) -> Result<Vec<RatingRecord>, RatingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();

    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(RatingError::Malformed {
                line: 1,
                message: e.to_string(),
            })
        }
        None => return Err(RatingError::BadHeader { found: String::new() }),
    };
    if header.iter().ne(CSV_HEADER) {
        return Err(RatingError::BadHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| RatingError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| RatingError::Malformed { line, message };
        if row.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", CSV_HEADER.len(), row.len())));
        }
        for (i, name) in CSV_HEADER[..4].iter().enumerate() {
            if row[i].is_empty() {
                return Err(bad(format!("empty {name}")));
            }
        }
        let cohort = row[1].parse::<Cohort>().map_err(bad)?;
        let mut items = [0u8; 12];
        for (i, name) in ITEMS.iter().enumerate() {
            let raw = &row[4 + i];
            items[i] = match raw.parse::<u8>() {
                Ok(v) if (1..=5).contains(&v) => v,
                _ => return Err(bad(format!("{name} = {raw:?} is not an integer in 1..=5"))),
            };
        }
        out.push(RatingRecord {
            rater_id: row[0].to_owned(),
            cohort,
            prompt: row[2].to_owned(),
            model: row[3].to_owned(),
            items,
        });
    }
    Ok(out)
}
