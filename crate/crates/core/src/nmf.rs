//! Euclidean NMF, `X ≈ W·Hᵀ`, solved with Lee–Seung multiplicative updates.
//!
//! `W` (rows × rank) holds location loadings and `H` (columns × rank) holds
//! hour-bin loadings, so each column of either factor is one pattern.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::check_nonnegative;

/// Lower clamp for update denominators.
pub const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Uniform in (0, 1], scaled by `sqrt(mean(x) / rank)`.
    #[default]
    RandomUniform,
    /// Nonnegative double SVD (Boutsidis & Gallopoulos).
    Nndsvd,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-uniform" => Ok(Init::RandomUniform),
            "nndsvd" => Ok(Init::Nndsvd),
            _ => Err(Error::InvalidConfig(format!("unknown init `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the relative change of the objective falls below this.
    pub tol: f64,
    pub seed: u64,
    pub init: Init,
}

impl NmfConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iters: 500,
            tol: 1e-5,
            seed: 0,
            init: Init::RandomUniform,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        let max = shape.0.min(shape.1);
        if self.rank == 0 || self.rank > max {
            return Err(Error::InvalidRank {
                rank: self.rank,
                max,
            });
        }
        if self.tol.is_nan() || self.tol <= 0.0 || self.max_iters == 0 {
            return Err(Error::InvalidConfig(format!(
                "need tol > 0 and max_iters >= 1 (got tol={}, max_iters={})",
                self.tol, self.max_iters
            )));
        }
        Ok(())
    }
}

/// Two nonnegative factors plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// Row loadings, rows × rank.
    pub w: Array2<f64>,
    /// Column loadings, columns × rank.
    pub h: Array2<f64>,
    /// Frobenius residual before the first update and after every update.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations_run: usize,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.w.dot(&self.h.t())
    }

    pub fn final_loss(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Factorizes a nonnegative matrix at `cfg.rank`.
///
/// Deterministic for a fixed input, config and seed.
pub fn factorize(x: ArrayView2<'_, f64>, cfg: &NmfConfig) -> Result<FactorPair> {
    cfg.validate(x.dim())?;
    check_nonnegative(&x.to_owned())?;

    let (mut w, mut h) = match cfg.init {
        Init::RandomUniform => random_init(x, cfg.rank, cfg.seed),
        Init::Nndsvd => nndsvd_init(x, cfg.rank)?,
    };

    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    let mut prev = frobenius_residual(x, &w, &h);
    trace.push(prev);
    let mut converged = prev == 0.0;
    let mut iterations_run = 0;

    while !converged && iterations_run < cfg.max_iters {
        update_step(x, &mut w, &mut h);
        iterations_run += 1;

        let loss = frobenius_residual(x, &w, &h);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became {loss} at iteration {iterations_run}"
            )));
        }
        trace.push(loss);
        converged = loss == 0.0 || (prev - loss) / prev < cfg.tol;
        prev = loss;
    }

    Ok(FactorPair {
        w,
        h,
        objective_trace: trace,
        converged,
        iterations_run,
    })
}

/// Seed offset between successive restarts.
pub const RESTART_STRIDE: u64 = 0x9E37_79B9;

/// Runs `restarts` factorizations with seeds `cfg.seed + i · RESTART_STRIDE`
/// and keeps the lowest final loss (earliest on ties).
pub fn factorize_best(
    x: ArrayView2<'_, f64>,
    cfg: &NmfConfig,
    restarts: usize,
) -> Result<FactorPair> {
    let mut best: Option<FactorPair> = None;
    let tries = if cfg.init == Init::Nndsvd {
        1
    } else {
        restarts.max(1)
    };
    for i in 0..tries as u64 {
        let run = NmfConfig {
            seed: cfg.seed.wrapping_add(i.wrapping_mul(RESTART_STRIDE)),
            ..cfg.clone()
        };
        let pair = factorize(x, &run)?;
        if best
            .as_ref()
            .is_none_or(|b| pair.final_loss() < b.final_loss())
        {
            best = Some(pair);
        }
    }
    best.ok_or_else(|| Error::Numerical("no factorization ran".into()))
}

/// One sweep: update `W` with `H` fixed, then `H` with the new `W`.
fn update_step(x: ArrayView2<'_, f64>, w: &mut Array2<f64>, h: &mut Array2<f64>) {
    // W <- W ∘ (X H) / (W HᵀH)
    let numer = x.dot(&*h);
    let denom = w.dot(&h.t().dot(&*h));
    apply_multiplicative(w, &numer, &denom);

    // H <- H ∘ (Xᵀ W) / (H WᵀW)
    let numer = x.t().dot(&*w);
    let denom = h.dot(&w.t().dot(&*w));
    apply_multiplicative(h, &numer, &denom);
}

fn apply_multiplicative(base: &mut Array2<f64>, numer: &Array2<f64>, denom: &Array2<f64>) {
    ndarray::Zip::from(base)
        .and(numer)
        .and(denom)
        .for_each(|b, &n, &d| *b *= n / d.max(DENOM_FLOOR));
}

fn frobenius_residual(x: ArrayView2<'_, f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let approx = w.dot(&h.t());
    ndarray::Zip::from(x)
        .and(&approx)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
        .sqrt()
}

/// `‖x − w·hᵀ‖_F`.
pub fn reconstruction_error(x: ArrayView2<'_, f64>, pair: &FactorPair) -> Result<f64> {
    let expected = (pair.w.nrows(), pair.h.nrows());
    if x.dim() != expected || pair.w.ncols() != pair.h.ncols() {
        return Err(Error::ShapeMismatch {
            expected,
            found: x.dim(),
        });
    }
    Ok(frobenius_residual(x, &pair.w, &pair.h))
}

fn random_init(x: ArrayView2<'_, f64>, rank: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (n, m) = x.dim();
    let mean = x.mean().unwrap_or(0.0);
    let scale = (mean / rank as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 1 - U[0,1) lands in (0, 1]
    let mut draw = |_| scale * (1.0 - rng.random::<f64>());
    let w = Array2::from_shape_fn((n, rank), &mut draw);
    let h = Array2::from_shape_fn((m, rank), &mut draw);
    (w, h)
}

/// NNDSVD: each singular triplet is split into its positive and negative
/// parts and the dominant part seeds one factor column.
fn nndsvd_init(x: ArrayView2<'_, f64>, rank: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, m) = x.dim();
    let dense = nalgebra::DMatrix::from_fn(n, m, |i, j| x[[i, j]]);
    let svd = nalgebra::linalg::SVD::new(dense, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => {
            return Err(Error::Numerical(
                "SVD did not produce singular vectors".into(),
            ))
        }
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut w = Array2::zeros((n, rank));
    let mut h = Array2::zeros((m, rank));
    for (j, &k) in order.iter().take(rank).enumerate() {
        let sigma = svd.singular_values[k];
        let left: Vec<f64> = u.column(k).iter().copied().collect();
        let right: Vec<f64> = vt.row(k).iter().copied().collect();
        if j == 0 {
            // the leading pair of a nonnegative matrix has a single sign
            let s = sigma.sqrt();
            for (i, v) in left.iter().enumerate() {
                w[[i, 0]] = s * v.abs();
            }
            for (i, v) in right.iter().enumerate() {
                h[[i, 0]] = s * v.abs();
            }
            continue;
        }
        let split = |v: &[f64]| -> (Vec<f64>, Vec<f64>) {
            (
                v.iter().map(|a| a.max(0.0)).collect(),
                v.iter().map(|a| (-a).max(0.0)).collect(),
            )
        };
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let (lp, ln) = split(&left);
        let (rp, rn) = split(&right);
        let (nlp, nln, nrp, nrn) = (norm(&lp), norm(&ln), norm(&rp), norm(&rn));
        let (lu, rv, lnorm, rnorm) = if nlp * nrp >= nln * nrn {
            (lp, rp, nlp, nrp)
        } else {
            (ln, rn, nln, nrn)
        };
        let mass = lnorm * rnorm;
        if mass == 0.0 {
            continue;
        }
        let s = (sigma * mass).sqrt();
        for (i, v) in lu.iter().enumerate() {
            w[[i, j]] = s * v / lnorm;
        }
        for (i, v) in rv.iter().enumerate() {
            h[[i, j]] = s * v / rnorm;
        }
    }
    Ok((w, h))
}

/// Cosine similarity between two vectors; zero when either is all zeros.
pub fn cosine(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}
