//! Enflo's amplification `Delta h (x, y) = (h(x), h(y), x ||y|| / sqrt(||x||^2 + ||y||^2))`
//! and certified two-sided estimates of the distance from a homogeneous map
//! to the linear maps.
//!
//! Lower bounds come from zero-sum configurations: for linear `H` and
//! `sum x_i = 0`, `sum (h - H)(x_i) = sum h(x_i)`, so
//! `dist(h, L) >= ||sum h(x_i)|| / sum ||x_i||`. Upper bounds come from an
//! explicit matrix `H` and a regenerable held-out sample set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::maps::{Expr, HomMap};
use crate::spaces::{random_zero_sum_config, sample_sphere, NormKind, NormedSpace, ZeroSumConfig};

/// Largest domain dimension `enflo_iterate` will build.
pub const MAX_DOMAIN_DIM: usize = 1 << 14;

/// Restarts of the minimax solver.
pub const RESTARTS: usize = 5;

/// Allowed recomputation drift when re-verifying a stored estimate.
pub const VERIFY_TOL: f64 = 1e-12;

pub fn enflo_delta(h: &HomMap) -> Result<HomMap> {
    if !h.domain().is_euclidean() {
        return Err(Error::NonEuclidean(format!("delta({h})")));
    }
    let m = h.domain().dim();
    let r = h.codomain().dim();
    HomMap::new(NormedSpace::l2(2 * m), NormedSpace::l2(2 * r + m), Expr::EnfloDelta(Box::new(h.expr().clone())))
}

pub fn enflo_iterate(h0: &HomMap, k: usize) -> Result<HomMap> {
    let dim = u32::try_from(k)
        .ok()
        .and_then(|k| 1usize.checked_shl(k))
        .and_then(|p| p.checked_mul(h0.domain().dim()))
        .unwrap_or(usize::MAX);
    if dim > MAX_DOMAIN_DIM {
        return Err(Error::DimensionOverflow(dim));
    }
    let mut h = h0.clone();
    for _ in 0..k {
        h = enflo_delta(&h)?;
    }
    Ok(h)
}

/// `||sum h(x_i)||_E / sum ||x_i||_F`, summed in order.
pub fn certificate_ratio(h: &HomMap, points: &[Vector]) -> f64 {
    let mut total = h.codomain().zero();
    let mut mass = 0.0;
    for x in points {
        total += h.apply(x);
        mass += h.domain().norm_unchecked(x.as_slice());
    }
    if mass == 0.0 {
        return 0.0;
    }
    h.codomain().norm_unchecked(total.as_slice()) / mass
}

#[derive(Debug, Clone, Serialize)]
pub struct IncreaseReport {
    pub configs: usize,
    pub max_ratio: f64,
    /// Index of the first config attaining `max_ratio`.
    pub argmax: Option<usize>,
    /// Whether some ratio exceeds `1 + 1e-9`.
    pub violated: bool,
}

pub fn check_increase(h: &HomMap, configs: &[ZeroSumConfig]) -> Result<IncreaseReport> {
    for c in configs {
        if c.dim() != h.domain().dim() {
            return Err(Error::DimensionMismatch { expected: h.domain().dim(), got: c.dim() });
        }
    }
    let best =
        configs.par_iter().enumerate().map(|(k, c)| (certificate_ratio(h, c.points()), k)).reduce_with(first_max);
    let (max_ratio, argmax) = best.map_or((0.0, None), |(r, k)| (r, Some(k)));
    Ok(IncreaseReport { configs: configs.len(), max_ratio, argmax, violated: max_ratio > 1.0 + 1e-9 })
}

fn first_max(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn first_min(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Lower bound on `dist(h, L)` with its zero-sum certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    pub certificate: ZeroSumConfig,
}

/// The sample set an upper bound is evaluated on: `count` sphere samples
/// regenerated from `seed`, then `extra` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub seed: u64,
    pub count: usize,
    #[serde(with = "crate::linalg::serde_vectors", default)]
    pub extra: Vec<Vector>,
}

impl HeldOut {
    fn points(&self, space: &NormedSpace) -> Vec<Vector> {
        let mut pts = if self.count > 0 { sample_sphere(space, self.count, self.seed) } else { Vec::new() };
        pts.extend(self.extra.iter().cloned());
        pts
    }
}

/// Upper bound `sup ||h(x) - H x|| / ||x||` over a held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub value: f64,
    #[serde(with = "crate::linalg::serde_matrix")]
    pub witness: Matrix,
    pub held_out: HeldOut,
}

/// Two-sided estimate of `dist(h, L)` carrying everything needed to
/// recompute both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub map: HomMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<LowerBound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<UpperBound>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub lower_stored: Option<f64>,
    pub lower_recomputed: Option<f64>,
    pub upper_stored: Option<f64>,
    pub upper_recomputed: Option<f64>,
    pub max_drift: f64,
    /// Certificate problems other than drift (not zero-sum, wrong dimension).
    pub problems: Vec<String>,
    pub ok: bool,
}

impl DistanceEstimate {
    pub fn lower_value(&self) -> f64 {
        self.lower.as_ref().map_or(0.0, |l| l.value)
    }

    pub fn upper_value(&self) -> f64 {
        self.upper.as_ref().map_or(f64::INFINITY, |u| u.value)
    }

    /// Combines the two halves; certificate points join the held-out set so
    /// that the reported upper bound dominates the certified lower bound.
    pub fn combine(lower: DistanceEstimate, upper: DistanceEstimate) -> Result<DistanceEstimate> {
        if lower.map != upper.map {
            return Err(Error::InvalidConfig("estimates are for different maps".into()));
        }
        let map = lower.map;
        let lower = lower.lower;
        let upper = upper.upper.map(|mut u| {
            if let Some(l) = &lower {
                u.held_out.extra.extend(l.certificate.points().iter().cloned());
                u.value = sup_error(&map, &u.witness, &u.held_out.points(map.domain()));
            }
            u
        });
        Ok(DistanceEstimate { map, lower, upper })
    }

    /// Recomputes both bounds from the stored payload.
    pub fn verify(&self) -> VerifyReport {
        let mut problems = Vec::new();
        let mut drift = 0.0f64;
        let h = &self.map;
        let lower_recomputed = self.lower.as_ref().map(|l| {
            if l.certificate.dim() != h.domain().dim() {
                problems.push("certificate has the wrong dimension".into());
                return f64::NAN;
            }
            if ZeroSumConfig::new(l.certificate.points().to_vec()).is_err() {
                problems.push("certificate is not a zero-sum configuration".into());
            }
            let r = certificate_ratio(h, l.certificate.points());
            drift = drift.max((r - l.value).abs());
            r
        });
        let upper_recomputed = self.upper.as_ref().map(|u| {
            if u.witness.shape() != (h.codomain().dim(), h.domain().dim())
                || u.held_out.extra.iter().any(|x| x.len() != h.domain().dim())
            {
                problems.push("witness or held-out points have the wrong shape".into());
                return f64::NAN;
            }
            let r = sup_error(h, &u.witness, &u.held_out.points(h.domain()));
            drift = drift.max((r - u.value).abs());
            r
        });
        let nan = lower_recomputed.is_some_and(f64::is_nan) || upper_recomputed.is_some_and(f64::is_nan);
        let ok = problems.is_empty() && !nan && drift <= VERIFY_TOL;
        VerifyReport {
            lower_stored: self.lower.as_ref().map(|l| l.value),
            lower_recomputed,
            upper_stored: self.upper.as_ref().map(|u| u.value),
            upper_recomputed,
            max_drift: if nan { f64::INFINITY } else { drift },
            problems,
            ok,
        }
    }
}

/// `max ||h(x) - H x||_E / ||x||_F` over `points`.
pub fn sup_error(h: &HomMap, witness: &Matrix, points: &[Vector]) -> f64 {
    points
        .par_iter()
        .map(|x| {
            let nx = h.domain().norm_unchecked(x.as_slice());
            if nx == 0.0 {
                return 0.0;
            }
            let r = h.apply(x) - witness * x;
            h.codomain().norm_unchecked(r.as_slice()) / nx
        })
        .reduce(|| 0.0, f64::max)
}

/// A unit dual vector `d` with `d . r = ||r||`, used as the subgradient
/// direction of the residual norm.
fn dual_direction(space: &NormedSpace, r: &Vector) -> Vector {
    let (p, weights) = match space.kind() {
        NormKind::P(p) => (*p, None),
        NormKind::WeightedP { p, weights } => (*p, Some(weights.as_slice())),
        _ => (2.0, None),
    };
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let n = space.norm_unchecked(r.as_slice());
    if n == 0.0 {
        return Vector::zeros(r.len());
    }
    if p.is_infinite() {
        let k = (0..r.len()).max_by(|&a, &b| (w(a) * r[a].abs()).total_cmp(&(w(b) * r[b].abs()))).unwrap_or(0);
        let mut d = Vector::zeros(r.len());
        d[k] = w(k) * r[k].signum();
        return d;
    }
    if p == 1.0 {
        return Vector::from_fn(r.len(), |i, _| w(i) * r[i].signum());
    }
    Vector::from_fn(r.len(), |i, _| w(i) * r[i].signum() * (r[i].abs() / n).powf(p - 1.0))
}

fn minimax_objective(h: &HomMap, hm: &Matrix, pts: &[Vector], targets: &[Vector]) -> (f64, usize) {
    pts.iter()
        .zip(targets)
        .enumerate()
        .map(|(k, (x, t))| (h.codomain().norm_unchecked((t - hm * x).as_slice()), k))
        .fold((f64::NEG_INFINITY, 0), first_max)
}

fn subgradient_run(h: &HomMap, pts: &[Vector], targets: &[Vector], start: Matrix, iterations: usize) -> (f64, Matrix) {
    let mut hm = start;
    let (mut value, mut worst) = minimax_objective(h, &hm, pts, targets);
    let mut best = (value, hm.clone());
    let c = 0.5 * value.max(1e-6);
    for t in 1..=iterations {
        let x = &pts[worst];
        let r = &targets[worst] - &hm * x;
        let d = dual_direction(h.codomain(), &r);
        // objective decreases along d x^T
        let g = &d * x.transpose();
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        hm += g * (c / ((t as f64).sqrt() * gn));
        (value, worst) = minimax_objective(h, &hm, pts, targets);
        if value < best.0 {
            best = (value, hm.clone());
        }
    }
    best
}

/// Least-squares fit `H = Y X^T (X X^T)^-1` of `h` on the sample points.
fn least_squares_fit(pts: &[Vector], targets: &[Vector], rows: usize, cols: usize) -> Matrix {
    let x = Matrix::from_columns(pts);
    let y = Matrix::from_columns(targets);
    let gram = &x * x.transpose();
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(&(&x * y.transpose())).transpose(),
        None => Matrix::zeros(rows, cols),
    }
}

/// Minimax fit of a linear `H` to `h` on seeded unit vectors by subgradient
/// descent with `RESTARTS` restarts; the reported bound is re-evaluated on a
/// held-out set generated from a derived seed.
pub fn dist_to_linear_upper(h: &HomMap, sample_count: usize, iterations: usize, seed: u64) -> DistanceEstimate {
    let (rows, cols) = (h.codomain().dim(), h.domain().dim());
    let count = sample_count.max(cols);
    let pts = sample_sphere(h.domain(), count, seed);
    let targets: Vec<Vector> = pts.iter().map(|x| h.apply(x)).collect();
    let fit = least_squares_fit(&pts, &targets, rows, cols);
    let scale =
        h.codomain().norm_unchecked(targets.iter().fold(Vector::zeros(rows), |a, t| a.sup(&t.abs())).as_slice());
    let runs: Vec<(f64, Matrix)> = (0..RESTARTS)
        .into_par_iter()
        .map(|k| {
            let start = if k == 0 {
                fit.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ k as u64);
                let noise = Matrix::from_fn(rows, cols, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * 0.5 * scale / (cols as f64).sqrt()
                });
                &fit + noise
            };
            subgradient_run(h, &pts, &targets, start, iterations)
        })
        .collect();
    let (_, best) = runs.iter().enumerate().map(|(k, r)| (r.0, k)).fold((f64::INFINITY, 0), first_min);
    let witness = runs[best].1.clone();
    let held_out = HeldOut { seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1), count, extra: Vec::new() };
    let value = sup_error(h, &witness, &held_out.points(h.domain()));
    DistanceEstimate { map: h.clone(), lower: None, upper: Some(UpperBound { value, witness, held_out }) }
}

/// Coordinatewise refinement: each round tries `+-s` on every coordinate of
/// every point, re-centers to zero sum and keeps improvements; `s` starts at
/// a tenth of the mean point norm and decays by 0.9 per round.
fn refine_config(h: &HomMap, start: &ZeroSumConfig, rounds: usize) -> (f64, ZeroSumConfig) {
    let mut best_pts = start.points().to_vec();
    let mut best = certificate_ratio(h, &best_pts);
    let mean_norm =
        best_pts.iter().map(|x| h.domain().norm_unchecked(x.as_slice())).sum::<f64>() / best_pts.len() as f64;
    let mut step = 0.1 * mean_norm;
    let floor = 1e-8 * mean_norm;
    for _ in 0..rounds {
        for i in 0..best_pts.len() {
            for j in 0..best_pts[i].len() {
                for sign in [1.0, -1.0] {
                    let mut cand = best_pts.clone();
                    cand[i][j] += sign * step;
                    let Ok(cfg) = ZeroSumConfig::recentered(cand) else { continue };
                    if cfg.points().iter().any(|x| h.domain().norm_unchecked(x.as_slice()) < floor) {
                        continue;
                    }
                    let r = certificate_ratio(h, cfg.points());
                    if r > best {
                        best = r;
                        best_pts = cfg.into_points();
                        break;
                    }
                }
            }
        }
        step *= 0.9;
    }
    let cfg = ZeroSumConfig::new(best_pts).unwrap_or_else(|_| start.clone());
    (certificate_ratio(h, cfg.points()), cfg)
}

/// Best certificate among `configs` after `refine_steps` refinement rounds.
pub fn dist_to_linear_lower(h: &HomMap, configs: &[ZeroSumConfig], refine_steps: usize) -> DistanceEstimate {
    let refined: Vec<(f64, ZeroSumConfig)> =
        configs.par_iter().filter(|c| c.dim() == h.domain().dim()).map(|c| refine_config(h, c, refine_steps)).collect();
    let lower = refined
        .iter()
        .enumerate()
        .map(|(k, r)| (r.0, k))
        .reduce(first_max)
        .map(|(_, k)| LowerBound { value: refined[k].0, certificate: refined[k].1.clone() });
    DistanceEstimate { map: h.clone(), lower, upper: None }
}

/// Search and verification budget for [`enflo_growth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthParams {
    pub k_max: usize,
    /// Random starting configurations per level.
    pub configs: usize,
    pub min_points: usize,
    pub max_points: usize,
    pub refine_steps: usize,
    pub upper_samples: usize,
    pub upper_iterations: usize,
    /// Random zero-sum configurations for the increase check per level.
    pub increase_configs: usize,
}

impl Default for GrowthParams {
    fn default() -> Self {
        Self {
            k_max: 3,
            configs: 96,
            min_points: 3,
            max_points: 12,
            refine_steps: 60,
            upper_samples: 400,
            upper_iterations: 300,
            increase_configs: 10_000,
        }
    }
}

impl GrowthParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_points < 2 || self.max_points < self.min_points {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= min_points <= max_points, got {} and {}",
                self.min_points, self.max_points
            )));
        }
        if self.configs == 0 || self.upper_samples == 0 {
            return Err(Error::InvalidConfig("configs and upper_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthRow {
    pub k: usize,
    pub domain_dim: usize,
    pub estimate: DistanceEstimate,
    pub increase: IncreaseReport,
}

/// Embeds a configuration for `h` into the domain of `Delta h` as `(x_i, 0)`;
/// the certificate ratio is unchanged.
fn embed_first_block(c: &ZeroSumConfig) -> ZeroSumConfig {
    let pts = c
        .points()
        .iter()
        .map(|x| {
            let mut v = Vector::zeros(2 * x.len());
            v.rows_mut(0, x.len()).copy_from(x);
            v
        })
        .collect();
    ZeroSumConfig::new(pts).expect("embedding keeps the zero sum")
}

/// Two-sided distance estimates for `Delta^k h0`, `k = 0..=k_max`. Each level
/// also refines the best certificate of the previous level, embedded.
pub fn enflo_growth(h0: &HomMap, params: &GrowthParams, seed: u64) -> Result<Vec<GrowthRow>> {
    params.validate()?;
    let mut rows: Vec<GrowthRow> = Vec::new();
    let span = params.max_points - params.min_points + 1;
    for k in 0..=params.k_max {
        let h = enflo_iterate(h0, k)?;
        let dom = h.domain().clone();
        let level_seed = seed.wrapping_add(1_000_003 * k as u64);
        let mut configs = (0..params.configs)
            .map(|c| random_zero_sum_config(&dom, params.min_points + c % span, level_seed.wrapping_add(c as u64)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(prev) = rows.last().and_then(|r| r.estimate.lower.as_ref()) {
            configs.insert(0, embed_first_block(&prev.certificate));
        }
        let lower = dist_to_linear_lower(&h, &configs, params.refine_steps);
        let upper = dist_to_linear_upper(&h, params.upper_samples, params.upper_iterations, level_seed);
        let estimate = DistanceEstimate::combine(lower, upper)?;
        let checks = (0..params.increase_configs)
            .map(|c| random_zero_sum_config(&dom, 2 + c % 11, level_seed ^ 0xabcd_0000_0000 ^ c as u64))
            .collect::<Result<Vec<_>>>()?;
        let increase = check_increase(&h, &checks)?;
        rows.push(GrowthRow { k, domain_dim: dom.dim(), estimate, increase });
    }
    Ok(rows)
}
