//! Planted-factor traffic data for validation.
//!
//! Hour profiles are integer-valued bumps with evenly spread peaks; each
//! location loads mainly on one pattern with an occasional weaker second
//! loading. Both factors are integer so the planted product is an exact
//! count matrix, and noise is calibrated to a target relative Frobenius size.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Location, TrafficRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_locations: usize,
    pub n_hours: usize,
    pub first_hour: u32,
    pub planted_rank: usize,
    /// Target `‖noisy − planted‖_F / ‖planted‖_F`.
    pub noise_level: f64,
    pub seed: u64,
    pub period: String,
}

impl SyntheticSpec {
    pub fn new(n_locations: usize, n_hours: usize, planted_rank: usize) -> Self {
        Self {
            n_locations,
            n_hours,
            first_hour: 7,
            planted_rank,
            noise_level: 0.0,
            seed: 0,
            period: "synthetic".into(),
        }
    }

    pub fn with_noise(mut self, level: f64) -> Self {
        self.noise_level = level;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.planted_rank == 0 || self.planted_rank > self.n_locations.min(self.n_hours) {
            return bad(format!(
                "planted rank {} must lie in 1..={}",
                self.planted_rank,
                self.n_locations.min(self.n_hours)
            ));
        }
        if self.noise_level < 0.0 || !self.noise_level.is_finite() {
            return bad(format!("noise level {} must be >= 0", self.noise_level));
        }
        if self.first_hour as usize + self.n_hours > 24 {
            return bad(format!(
                "{} hour bins starting at {} run past 23",
                self.n_hours, self.first_hour
            ));
        }
        Ok(())
    }

    pub fn hours(&self) -> Vec<u32> {
        (self.first_hour..self.first_hour + self.n_hours as u32).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<TrafficRecord>,
    pub locations: Vec<Location>,
    pub hours: Vec<u32>,
    /// Locations × rank.
    pub planted_w: Array2<f64>,
    /// Hours × rank.
    pub planted_h: Array2<f64>,
    pub planted_product: Array2<f64>,
    /// The count matrix the records sum to.
    pub counts: Array2<f64>,
    /// Measured `‖counts − planted_product‖_F / ‖planted_product‖_F`.
    pub measured_noise: f64,
}

const PEAK_HEIGHT: f64 = 20.0;
const FLOOR: f64 = 0.5;
const SECONDARY_DIV: u32 = 10;
const SECONDARY_PROB: f64 = 0.3;

/// Integer hour profiles, one bump per pattern.
fn planted_profiles(n_hours: usize, rank: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let spacing = n_hours as f64 / rank as f64;
    let width = (spacing / 2.0).max(0.75);
    let mut h = Array2::zeros((n_hours, rank));
    for g in 0..rank {
        let peak = (g as f64 + 0.5) * spacing + rng.random_range(-0.2..0.2) * spacing;
        let height = PEAK_HEIGHT * rng.random_range(0.8..1.2);
        for j in 0..n_hours {
            let d = (j as f64 - peak) / width;
            let v = (height * (-0.5 * d * d).exp()).round();
            h[[j, g]] = if v < FLOOR { 0.0 } else { v };
        }
        // every pattern keeps at least its peak bin
        let pj = (peak.round() as usize).min(n_hours - 1);
        if h[[pj, g]] == 0.0 {
            h[[pj, g]] = 1.0;
        }
    }
    h
}

/// Integer location loadings; location `i` is anchored on pattern `i % rank`.
fn planted_loadings(
    n: usize,
    patterns: &[usize],
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let mut w = Array2::zeros((n, width));
    for i in 0..n {
        let main = patterns[i % patterns.len()];
        let load: u32 = rng.random_range(10..=50);
        w[[i, main]] = load as f64;
        if patterns.len() > 1 && rng.random_bool(SECONDARY_PROB) {
            let mut other = patterns[rng.random_range(0..patterns.len())];
            if other == main {
                other = patterns
                    [(patterns.iter().position(|&p| p == main).unwrap() + 1) % patterns.len()];
            }
            w[[i, other]] = rng.random_range(0..=load / SECONDARY_DIV) as f64;
        }
    }
    w
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rounds `planted + s · direction` to nonnegative integers and picks `s` so
/// the relative deviation hits `target`.
fn calibrated_noise(
    planted: &Array2<f64>,
    target: f64,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, f64) {
    let norm = frob(planted);
    if target == 0.0 || norm == 0.0 {
        return (planted.clone(), 0.0);
    }
    let dir = Array2::from_shape_fn(planted.dim(), |_| rng.sample::<f64, _>(StandardNormal));
    let dir_norm = frob(&dir);
    let apply = |s: f64| {
        let noisy = ndarray::Zip::from(planted)
            .and(&dir)
            .map_collect(|&p, &d| (p + s * d / dir_norm).round().max(0.0));
        let dev = frob(&(&noisy - planted)) / norm;
        (noisy, dev)
    };
    // clipping at zero only shrinks the deviation, so grow the scale until
    // it overshoots, then bisect
    let (mut lo, mut hi) = (0.0, target * norm);
    while apply(hi).1 < target && hi < 1e3 * norm {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if apply(mid).1 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    apply(hi)
}

/// Splits every cell into one to three records, then shuffles record order.
fn to_records(
    counts: &Array2<f64>,
    locations: &[Location],
    hours: &[u32],
    period: &str,
    rng: &mut ChaCha8Rng,
) -> Vec<TrafficRecord> {
    let mut out = Vec::new();
    for (i, loc) in locations.iter().enumerate() {
        for (j, &hour) in hours.iter().enumerate() {
            let mut left = counts[[i, j]] as u64;
            let parts: u32 = rng.random_range(1..=3);
            for p in 0..parts {
                let c = if p + 1 == parts {
                    left
                } else {
                    rng.random_range(0..=left)
                };
                left -= c;
                out.push(TrafficRecord {
                    location_id: loc.id.clone(),
                    latitude: loc.latitude,
                    longitude: loc.longitude,
                    hour,
                    count: c,
                    period: period.to_string(),
                });
            }
        }
    }
    out.shuffle(rng);
    out
}

fn make_locations(n: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Vec<Location> {
    (0..n)
        .map(|i| Location {
            id: format!("{prefix}{i:05}"),
            latitude: (rng.random_range(50.0..58.0) * 1e5f64).round() / 1e5,
            longitude: (rng.random_range(-5.0..1.5) * 1e5f64).round() / 1e5,
        })
        .collect()
}

fn assemble(
    spec: &SyntheticSpec,
    planted_w: Array2<f64>,
    planted_h: Array2<f64>,
    locations: Vec<Location>,
    rng: &mut ChaCha8Rng,
) -> SyntheticData {
    let planted_product = planted_w.dot(&planted_h.t());
    let (counts, measured_noise) = calibrated_noise(&planted_product, spec.noise_level, rng);
    let hours = spec.hours();
    let records = to_records(&counts, &locations, &hours, &spec.period, rng);
    SyntheticData {
        records,
        locations,
        hours,
        planted_w,
        planted_h,
        planted_product,
        counts,
        measured_noise,
    }
}

/// Generates one period of planted-factor records.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = planted_profiles(spec.n_hours, spec.planted_rank, &mut rng);
    let all: Vec<usize> = (0..spec.planted_rank).collect();
    let w = planted_loadings(spec.n_locations, &all, spec.planted_rank, &mut rng);
    let locations = make_locations(spec.n_locations, "S", &mut rng);
    Ok(assemble(spec, w, h, locations, &mut rng))
}

/// Two periods sharing hour profiles: the second keeps only `keep` of the
/// first period's patterns and has its grand total scaled by `count_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPairSpec {
    pub a: SyntheticSpec,
    pub n_locations_b: usize,
    pub keep: Vec<usize>,
    pub count_scale: f64,
    pub period_b: String,
}

impl SyntheticPairSpec {
    /// `a` with its last `drop` patterns removed from the second period.
    pub fn dropping(a: SyntheticSpec, drop: usize, count_scale: f64) -> Self {
        let kept = a.planted_rank.saturating_sub(drop);
        Self {
            n_locations_b: a.n_locations,
            keep: (0..kept).collect(),
            count_scale,
            period_b: format!("{}-b", a.period),
            a,
        }
    }
}

pub fn generate_pair(spec: &SyntheticPairSpec) -> Result<(SyntheticData, SyntheticData)> {
    let a_spec = &spec.a;
    a_spec.validate()?;
    if spec.keep.is_empty()
        || spec.keep.iter().any(|&k| k >= a_spec.planted_rank)
        || spec.n_locations_b < spec.keep.len()
    {
        return Err(Error::InvalidConfig(format!(
            "kept patterns {:?} must be a non-empty subset of 0..{} with at most {} entries",
            spec.keep, a_spec.planted_rank, spec.n_locations_b
        )));
    }
    if spec.count_scale.is_nan() || spec.count_scale <= 0.0 {
        return Err(Error::InvalidConfig("count scale must be positive".into()));
    }
    let a = generate(a_spec)?;

    let mut rng = ChaCha8Rng::seed_from_u64(a_spec.seed ^ 0x5EED_B0B0);
    let h_b = a.planted_h.select(ndarray::Axis(1), &spec.keep);
    let all: Vec<usize> = (0..spec.keep.len()).collect();
    let raw_w = planted_loadings(spec.n_locations_b, &all, spec.keep.len(), &mut rng);
    let raw_total = raw_w.dot(&h_b.t()).sum();
    let factor = spec.count_scale * a.planted_product.sum() / raw_total;
    let w_b = raw_w.mapv(|v| (v * factor).round());

    let b_spec = SyntheticSpec {
        n_locations: spec.n_locations_b,
        planted_rank: spec.keep.len(),
        period: spec.period_b.clone(),
        ..a_spec.clone()
    };
    let locations = make_locations(spec.n_locations_b, "T", &mut rng);
    let b = assemble(&b_spec, w_b, h_b, locations, &mut rng);
    Ok((a, b))
}
