//! Cluster dispersion measures and rank selection.
//!
//! Points are hard-assigned to the factor column holding their largest
//! loading. Within- and between-cluster scatter are scalarized by trace, and
//! the Calinski–Harabasz ratio uses the usual `(k − 1, n − k)` degrees of
//! freedom with `k` counting non-empty clusters only.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmf::{factorize_best, FactorPair, NmfConfig};

/// Which factor's rows are clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSide {
    /// Rows of `W`, one per location.
    #[default]
    Location,
    /// Rows of `H`, one per hour bin.
    Time,
}

/// Coordinates the dispersion is measured in.
///
/// Input rows give every rank the same point set, so scores are comparable
/// across ranks. Factor rows change dimension with the rank and the
/// Calinski–Harabasz ratio on them drifts toward the smallest rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionSpace {
    /// The matching rows of the input matrix (columns for the time side).
    #[default]
    InputRows,
    /// The clustered factor's own rows, after [`balance_for_side`].
    FactorRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub source: FactorSide,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn non_empty(&self) -> usize {
        self.sizes().iter().filter(|&&s| s > 0).count()
    }
}

/// Row-wise argmax; ties go to the lowest column index.
pub fn assign_clusters(factor: ArrayView2<'_, f64>, source: FactorSide) -> ClusterAssignment {
    let labels = factor
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    ClusterAssignment {
        labels,
        k: factor.ncols(),
        source,
    }
}

fn check_cover(points: ArrayView2<'_, f64>, a: &ClusterAssignment) -> Result<()> {
    if a.labels.len() != points.nrows() {
        return Err(Error::ShapeMismatch {
            expected: (a.labels.len(), points.ncols()),
            found: points.dim(),
        });
    }
    if let Some(&bad) = a.labels.iter().find(|&&l| l >= a.k) {
        return Err(Error::DegenerateClustering(format!(
            "label {bad} not below k = {}",
            a.k
        )));
    }
    Ok(())
}

/// Cluster centroids (k × d) and sizes; empty clusters get a zero centroid.
fn centroids(points: ArrayView2<'_, f64>, a: &ClusterAssignment) -> (Array2<f64>, Vec<usize>) {
    let mut sums = Array2::zeros((a.k, points.ncols()));
    let mut sizes = vec![0usize; a.k];
    for (row, &l) in points.rows().into_iter().zip(&a.labels) {
        let mut s = sums.row_mut(l);
        s += &row;
        sizes[l] += 1;
    }
    for (mut s, &n) in sums.rows_mut().into_iter().zip(&sizes) {
        if n > 0 {
            s /= n as f64;
        }
    }
    (sums, sizes)
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Trace of the pooled within-cluster scatter matrix.
pub fn within_dispersion(points: ArrayView2<'_, f64>, a: &ClusterAssignment) -> Result<f64> {
    check_cover(points, a)?;
    let (c, _) = centroids(points, a);
    Ok(points
        .rows()
        .into_iter()
        .zip(&a.labels)
        .map(|(p, &l)| sq_dist(p, c.row(l)))
        .sum())
}

/// Trace of the size-weighted scatter of centroids about the global centroid.
pub fn between_dispersion(points: ArrayView2<'_, f64>, a: &ClusterAssignment) -> Result<f64> {
    check_cover(points, a)?;
    let (c, sizes) = centroids(points, a);
    let global = global_centroid(points);
    Ok(c.rows()
        .into_iter()
        .zip(&sizes)
        .map(|(cg, &n)| n as f64 * sq_dist(cg, global.view()))
        .sum())
}

fn global_centroid(points: ArrayView2<'_, f64>) -> Array1<f64> {
    points
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(points.ncols()))
}

/// Sum of squared distances to the global centroid.
pub fn total_scatter(points: ArrayView2<'_, f64>) -> f64 {
    let g = global_centroid(points);
    points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, g.view()))
        .sum()
}

/// `(B/(k−1)) / (W/(n−k))`, positive infinity when `W = 0`.
pub fn calinski_harabasz(points: ArrayView2<'_, f64>, a: &ClusterAssignment) -> Result<f64> {
    check_cover(points, a)?;
    let n = points.nrows();
    let k = a.non_empty();
    if k < 2 || n <= k {
        return Err(Error::DegenerateClustering(format!(
            "need at least 2 non-empty clusters and more points than clusters (n = {n}, k = {k})"
        )));
    }
    let w = within_dispersion(points, a)?;
    let b = between_dispersion(points, a)?;
    if w == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((b / (k - 1) as f64) / (w / (n - k) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScanEntry {
    pub rank: usize,
    pub within: f64,
    pub between: f64,
    pub total_scatter: f64,
    /// `None` when the clustering is degenerate (fewer than two occupied clusters).
    pub ch: Option<f64>,
    pub occupied_clusters: usize,
    pub final_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScanResult {
    pub entries: Vec<RankScanEntry>,
    /// Ranks whose factorization failed, with the reason.
    pub failed: Vec<(usize, String)>,
    pub recommended_rank: usize,
    pub side: FactorSide,
    pub space: DispersionSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanOptions {
    pub side: FactorSide,
    pub space: DispersionSpace,
    /// Seeded restarts per rank; the lowest-loss run is scored.
    pub restarts: usize,
}

/// Default restarts per rank.
pub const DEFAULT_RESTARTS: usize = 3;

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            side: FactorSide::default(),
            space: DispersionSpace::default(),
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Seed used for the factorization at `rank` given a base seed.
pub fn rank_seed(base: u64, rank: usize) -> u64 {
    base.wrapping_add(rank as u64)
}

/// Rescales a factor pair so the columns of the factor *not* being clustered
/// have unit maximum, moving the scale into the clustered factor. This pins
/// the per-column scale that multiplicative updates leave free.
pub fn balance_for_side(pair: &FactorPair, side: FactorSide) -> Array2<f64> {
    let (mut target, other) = match side {
        FactorSide::Location => (pair.w.clone(), &pair.h),
        FactorSide::Time => (pair.h.clone(), &pair.w),
    };
    for (j, mut col) in target.columns_mut().into_iter().enumerate() {
        let peak = other.column(j).iter().copied().fold(0.0, f64::max);
        col *= peak;
    }
    target
}

/// Factorizes at every rank and scores the resulting clustering.
///
/// Ranks run in parallel; each uses its own seed so the result matches a
/// serial scan exactly.
pub fn rank_scan(
    x: ArrayView2<'_, f64>,
    ranks: &[usize],
    template: &NmfConfig,
    opts: ScanOptions,
) -> Result<RankScanResult> {
    let outcomes: Vec<(usize, Result<RankScanEntry>)> = ranks
        .par_iter()
        .map(|&rank| (rank, scan_one(x, rank, template, opts)))
        .collect();

    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for (rank, outcome) in outcomes {
        match outcome {
            Ok(e) => entries.push(e),
            Err(e) => failed.push((rank, e.to_string())),
        }
    }
    let recommended_rank = recommend(&entries).ok_or(Error::NoValidRank)?;
    Ok(RankScanResult {
        entries,
        failed,
        recommended_rank,
        side: opts.side,
        space: opts.space,
    })
}

fn scan_one(
    x: ArrayView2<'_, f64>,
    rank: usize,
    template: &NmfConfig,
    opts: ScanOptions,
) -> Result<RankScanEntry> {
    let cfg = NmfConfig {
        rank,
        seed: rank_seed(template.seed, rank),
        ..template.clone()
    };
    let pair = factorize_best(x, &cfg, opts.restarts)?;
    let factor = balance_for_side(&pair, opts.side);
    let assignment = assign_clusters(factor.view(), opts.side);
    let points = match (opts.space, opts.side) {
        (DispersionSpace::FactorRows, _) => factor.view(),
        (DispersionSpace::InputRows, FactorSide::Location) => x,
        (DispersionSpace::InputRows, FactorSide::Time) => x.t(),
    };
    Ok(RankScanEntry {
        rank,
        within: within_dispersion(points, &assignment)?,
        between: between_dispersion(points, &assignment)?,
        total_scatter: total_scatter(points),
        ch: calinski_harabasz(points, &assignment).ok(),
        occupied_clusters: assignment.non_empty(),
        final_loss: pair.final_loss(),
        converged: pair.converged,
    })
}

/// Scores within this relative distance count as tied. A rank whose extra
/// columns are all empty reproduces the smaller rank's partition and its
/// score differs only by rounding.
pub const SCORE_TIE_RTOL: f64 = 1e-9;

/// Highest finite score wins (lowest rank on ties); infinite scores are a
/// fallback, then the lowest scanned rank.
fn recommend(entries: &[RankScanEntry]) -> Option<usize> {
    let mut sorted: Vec<&RankScanEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.rank);
    let finite = sorted
        .iter()
        .filter_map(|e| e.ch.filter(|c| c.is_finite()).map(|c| (e.rank, c)))
        .fold(None, |best: Option<(usize, f64)>, (r, c)| match best {
            Some((_, bc)) if c <= bc + SCORE_TIE_RTOL * bc.abs() => best,
            _ => Some((r, c)),
        });
    finite
        .map(|(r, _)| r)
        .or_else(|| {
            sorted
                .iter()
                .find(|e| e.ch == Some(f64::INFINITY))
                .map(|e| e.rank)
        })
        .or_else(|| sorted.first().map(|e| e.rank))
}
