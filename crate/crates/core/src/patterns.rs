//! Temporal and spatial patterns, cross-period matching and change summary.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ColumnScale, CountMatrix, Location};
use crate::nmf::{cosine, FactorPair};
use crate::rank::{assign_clusters, FactorSide};

/// Default cosine cutoff below which a pattern counts as having no partner.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.80;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    /// Hour bins × patterns, each column rescaled to unit maximum.
    pub temporal: Array2<f64>,
    /// Locations × patterns, compensated so `spatial · temporalᵀ` is unchanged.
    pub spatial: Array2<f64>,
    pub hours: Vec<u32>,
    pub locations: Vec<Location>,
    pub period: String,
    /// Original maximum of each temporal column.
    pub column_norms: Vec<f64>,
}

impl PatternSet {
    pub fn rank(&self) -> usize {
        self.temporal.ncols()
    }

    /// Hour label of the largest entry of each temporal column.
    pub fn peak_hours(&self) -> Vec<u32> {
        self.temporal
            .columns()
            .into_iter()
            .map(|c| self.hours[argmax(c.iter().copied())])
            .collect()
    }

    /// Dominant pattern index per location.
    pub fn dominant_patterns(&self) -> Vec<usize> {
        assign_clusters(self.spatial.view(), FactorSide::Location).labels
    }

    /// Number of locations whose dominant pattern is each column.
    pub fn dominant_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.rank()];
        for l in self.dominant_patterns() {
            counts[l] += 1;
        }
        counts
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Moves hour loadings of a pair fitted on min-max scaled data back to count
/// units by multiplying each hour row by its column range.
///
/// Two periods scaled independently weight their hours differently; their
/// temporal patterns are only comparable after this. The product becomes the
/// count-scale reconstruction less each column's minimum.
pub fn to_count_scale(pair: &FactorPair, scaling: &[ColumnScale]) -> Result<FactorPair> {
    if scaling.len() != pair.h.nrows() {
        return Err(Error::ShapeMismatch {
            expected: (pair.w.nrows(), scaling.len()),
            found: (pair.w.nrows(), pair.h.nrows()),
        });
    }
    let mut out = pair.clone();
    for (mut row, s) in out.h.rows_mut().into_iter().zip(scaling) {
        let range = s.range();
        row.mapv_inplace(|v| v * range);
    }
    Ok(out)
}

/// Splits a factor pair into labelled temporal and spatial patterns.
pub fn extract_patterns(
    pair: &FactorPair,
    locations: &[Location],
    hours: &[u32],
    period: &str,
) -> Result<PatternSet> {
    let found = (pair.w.nrows(), pair.h.nrows());
    if found != (locations.len(), hours.len()) || pair.w.ncols() != pair.h.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (locations.len(), hours.len()),
            found,
        });
    }
    let mut temporal = pair.h.clone();
    let mut spatial = pair.w.clone();
    let mut column_norms = Vec::with_capacity(temporal.ncols());
    for j in 0..temporal.ncols() {
        let peak = temporal.column(j).iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            temporal.column_mut(j).mapv_inplace(|v| v / peak);
            spatial.column_mut(j).mapv_inplace(|v| v * peak);
        }
        column_norms.push(peak);
    }
    Ok(PatternSet {
        temporal,
        spatial,
        hours: hours.to_vec(),
        locations: locations.to_vec(),
        period: period.to_string(),
        column_norms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMatch {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
    pub threshold: f64,
}

/// Cosine similarity between every temporal column of `a` and of `b`.
pub fn similarity_matrix(a: &PatternSet, b: &PatternSet) -> Array2<f64> {
    Array2::from_shape_fn((a.rank(), b.rank()), |(i, j)| {
        cosine(a.temporal.column(i), b.temporal.column(j))
    })
}

/// Greedy one-to-one matching of temporal patterns by cosine similarity.
///
/// Candidate pairs are taken in descending similarity, ties by lowest
/// `(a, b)`; pairs below `threshold` are never formed.
pub fn match_patterns(a: &PatternSet, b: &PatternSet, threshold: f64) -> Result<PatternMatch> {
    if a.hours != b.hours {
        return Err(Error::HourBinMismatch {
            a: a.hours.clone(),
            b: b.hours.clone(),
        });
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "match threshold {threshold} outside [0, 1]"
        )));
    }
    let sim = similarity_matrix(a, b);
    let mut candidates: Vec<(usize, usize, f64)> = sim
        .indexed_iter()
        .map(|((i, j), &s)| (i, j, s))
        .filter(|c| c.2 >= threshold)
        .collect();
    candidates.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));

    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    let mut pairs = Vec::new();
    for (i, j, s) in candidates {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        pairs.push(MatchedPair {
            a: i,
            b: j,
            similarity: s,
        });
    }
    let free = |used: &[bool]| {
        used.iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(i, _)| i)
            .collect()
    };
    Ok(PatternMatch {
        unmatched_a: free(&used_a),
        unmatched_b: free(&used_b),
        pairs,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternNote {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
    pub peak_hour_a: u32,
    pub peak_hour_b: u32,
    /// `peak_hour_b − peak_hour_a`.
    pub peak_shift_hours: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub period_a: String,
    pub period_b: String,
    pub locations_a: usize,
    pub locations_b: usize,
    pub rank_a: usize,
    pub rank_b: usize,
    pub total_a: f64,
    pub total_b: f64,
    /// `100 · (total_a − total_b) / total_a`, from raw counts.
    pub total_reduction_pct: f64,
    #[serde(rename = "match")]
    pub matching: PatternMatch,
    pub notes: Vec<PatternNote>,
    pub peak_hours_a: Vec<u32>,
    pub peak_hours_b: Vec<u32>,
    /// Locations per dominant pattern.
    pub dominant_counts_a: Vec<usize>,
    pub dominant_counts_b: Vec<usize>,
}

/// Summarizes how two periods differ, given their raw count matrices and
/// pattern sets.
pub fn compare_periods(
    raw_a: &CountMatrix,
    raw_b: &CountMatrix,
    matching: &PatternMatch,
    a: &PatternSet,
    b: &PatternSet,
) -> Result<ComparisonReport> {
    let total_a = raw_a.total();
    let total_b = raw_b.total();
    if total_a == 0.0 {
        return Err(Error::ZeroTotal);
    }
    let peaks_a = a.peak_hours();
    let peaks_b = b.peak_hours();
    let notes = matching
        .pairs
        .iter()
        .map(|p| PatternNote {
            a: p.a,
            b: p.b,
            similarity: p.similarity,
            peak_hour_a: peaks_a[p.a],
            peak_hour_b: peaks_b[p.b],
            peak_shift_hours: peaks_b[p.b] as i64 - peaks_a[p.a] as i64,
        })
        .collect();
    Ok(ComparisonReport {
        period_a: raw_a.period().to_string(),
        period_b: raw_b.period().to_string(),
        locations_a: raw_a.shape().0,
        locations_b: raw_b.shape().0,
        rank_a: a.rank(),
        rank_b: b.rank(),
        total_a,
        total_b,
        total_reduction_pct: 100.0 * (total_a - total_b) / total_a,
        matching: matching.clone(),
        notes,
        peak_hours_a: peaks_a,
        peak_hours_b: peaks_b,
        dominant_counts_a: a.dominant_counts(),
        dominant_counts_b: b.dominant_counts(),
    })
}

/// Plain-text rendering of a report. Patterns are numbered from 1.
pub fn summary_text(r: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "period A: {} ({} locations, rank {})",
        r.period_a, r.locations_a, r.rank_a
    );
    let _ = writeln!(
        s,
        "period B: {} ({} locations, rank {})",
        r.period_b, r.locations_b, r.rank_b
    );
    let _ = writeln!(
        s,
        "total counts: {} -> {} ({:.2}% reduction)",
        r.total_a, r.total_b, r.total_reduction_pct
    );
    let _ = writeln!(s, "matched patterns (cosine >= {}):", r.matching.threshold);
    for n in &r.notes {
        let _ = writeln!(
            s,
            "  A p{} <-> B p{}  cosine {:.4}  peak {:02}:00 -> {:02}:00 ({:+}h)",
            n.a + 1,
            n.b + 1,
            n.similarity,
            n.peak_hour_a,
            n.peak_hour_b,
            n.peak_shift_hours
        );
    }
    let list = |v: &[usize]| {
        if v.is_empty() {
            "none".to_string()
        } else {
            v.iter()
                .map(|i| format!("p{}", i + 1))
                .collect::<Vec<_>>()
                .join(", ")
        }
    };
    let _ = writeln!(
        s,
        "unmatched A patterns (disappeared): {} [{}]",
        r.matching.unmatched_a.len(),
        list(&r.matching.unmatched_a)
    );
    let _ = writeln!(
        s,
        "unmatched B patterns (new): {} [{}]",
        r.matching.unmatched_b.len(),
        list(&r.matching.unmatched_b)
    );
    let _ = writeln!(
        s,
        "locations per dominant pattern, A: {:?}",
        r.dominant_counts_a
    );
    let _ = writeln!(
        s,
        "locations per dominant pattern, B: {:?}",
        r.dominant_counts_b
    );
    s
}
