//! Finite-dimensional real normed spaces and seeded sampling.
//!
//! The p-norm family (optionally weighted) covers every user-facing space.
//! Spaces built by the extension algebra carry composite norms: direct sums
//! with the sum norm, quotients with the induced quotient norm, and subspaces
//! with the restricted norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Tolerance on the componentwise sum of a zero-sum configuration.
pub const ZERO_SUM_TOL: f64 = 1e-12;

/// Maximum number of rejected draws in [`random_zero_sum_config`].
pub const REJECTION_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum NormKind {
    /// `(sum |v_i|^p)^(1/p)`; `p = f64::INFINITY` is the max norm.
    P(f64),
    /// `(sum w_i |v_i|^p)^(1/p)`, or `max w_i |v_i|` for `p = inf`.
    WeightedP { p: f64, weights: Vec<f64> },
    /// Sum norm on a block direct sum.
    DirectSum(Vec<NormedSpace>),
    /// Quotient of `ambient` by the column span of `kernel`; coordinates are
    /// taken along the orthonormal columns of `complement`.
    Quotient { ambient: Box<NormedSpace>, kernel: Matrix, complement: Matrix },
    /// Subspace of `ambient` spanned by the columns of `basis`.
    Subspace { ambient: Box<NormedSpace>, basis: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormedSpace {
    dim: usize,
    kind: NormKind,
}

fn check_p(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidSpace(format!("p must be >= 1, got {p}")));
    }
    Ok(())
}

impl NormedSpace {
    pub fn new(dim: usize, kind: NormKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        match &kind {
            NormKind::P(p) => check_p(*p)?,
            NormKind::WeightedP { p, weights } => {
                check_p(*p)?;
                if weights.len() != dim {
                    return Err(Error::InvalidSpace(format!("{} weights for dimension {dim}", weights.len())));
                }
                if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(Error::InvalidSpace("weights must be positive".into()));
                }
            }
            NormKind::DirectSum(parts) => {
                let total: usize = parts.iter().map(|s| s.dim).sum();
                if total != dim {
                    return Err(Error::InvalidSpace(format!("direct sum blocks total {total}, expected {dim}")));
                }
            }
            NormKind::Quotient { ambient, kernel, complement } => {
                if kernel.nrows() != ambient.dim || complement.nrows() != ambient.dim || complement.ncols() != dim {
                    return Err(Error::InvalidSpace("quotient bases do not fit the ambient space".into()));
                }
            }
            NormKind::Subspace { ambient, basis } => {
                if basis.nrows() != ambient.dim || basis.ncols() != dim {
                    return Err(Error::InvalidSpace("subspace basis does not fit the ambient space".into()));
                }
            }
        }
        Ok(Self { dim, kind })
    }

    /// Euclidean space `l2^dim`.
    pub fn l2(dim: usize) -> Self {
        Self::lp(dim, 2.0).expect("l2 with positive dimension")
    }

    pub fn lp(dim: usize, p: f64) -> Result<Self> {
        Self::new(dim, NormKind::P(p))
    }

    pub fn weighted(dim: usize, p: f64, weights: Vec<f64>) -> Result<Self> {
        Self::new(dim, NormKind::WeightedP { p, weights })
    }

    pub fn direct_sum(parts: Vec<NormedSpace>) -> Self {
        let dim = parts.iter().map(|s| s.dim).sum();
        Self { dim, kind: NormKind::DirectSum(parts) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    /// True for the unweighted 2-norm.
    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, NormKind::P(p) if p == 2.0)
    }

    pub fn check_dim(&self, v: &Vector) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    pub fn norm(&self, v: &Vector) -> Result<f64> {
        self.check_dim(v)?;
        Ok(self.norm_unchecked(v.as_slice()))
    }

    pub(crate) fn norm_unchecked(&self, v: &[f64]) -> f64 {
        match &self.kind {
            NormKind::P(p) => p_norm(v, *p, None),
            NormKind::WeightedP { p, weights } => p_norm(v, *p, Some(weights)),
            NormKind::DirectSum(parts) => {
                let mut offset = 0;
                let mut total = 0.0;
                for part in parts {
                    total += part.norm_unchecked(&v[offset..offset + part.dim]);
                    offset += part.dim;
                }
                total
            }
            NormKind::Quotient { ambient, kernel, complement } => {
                let rep = complement * Vector::from_column_slice(v);
                quotient_norm(ambient, kernel, &rep)
            }
            NormKind::Subspace { ambient, basis } => {
                let w = basis * Vector::from_column_slice(v);
                ambient.norm_unchecked(w.as_slice())
            }
        }
    }

    pub fn zero(&self) -> Vector {
        Vector::zeros(self.dim)
    }
}

fn p_norm(v: &[f64], p: f64, weights: Option<&[f64]>) -> f64 {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    if p.is_infinite() {
        return v.iter().enumerate().fold(0.0, |m, (i, x)| m.max(w(i) * x.abs()));
    }
    if p == 1.0 {
        return v.iter().enumerate().map(|(i, x)| w(i) * x.abs()).sum();
    }
    if p == 2.0 {
        // scaled to avoid overflow
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let s: f64 = v
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let t = x / scale;
                w(i) * t * t
            })
            .sum();
        return scale * s.sqrt();
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().enumerate().map(|(i, x)| w(i) * (x.abs() / scale).powf(p)).sum();
    scale * s.powf(1.0 / p)
}

/// `inf_t ||rep + kernel t||` by cyclic coordinate line search (the objective
/// is convex in `t`). Any evaluated point is an upper bound on the true value.
fn quotient_norm(ambient: &NormedSpace, kernel: &Matrix, rep: &Vector) -> f64 {
    let k = kernel.ncols();
    let eval = |t: &Vector| ambient.norm_unchecked((rep + kernel * t).as_slice());
    // start from the Euclidean projection onto the complement
    let mut t = -(kernel.transpose() * rep);
    if let Some(ok) = (kernel.transpose() * kernel).try_inverse() {
        t = ok * &t;
    }
    let mut best = eval(&t);
    let mut step = best.max(1e-3);
    for _ in 0..60 {
        let mut improved = false;
        for j in 0..k {
            for dir in [1.0, -1.0] {
                loop {
                    let mut cand = t.clone();
                    cand[j] += dir * step;
                    let v = eval(&cand);
                    if v < best {
                        best = v;
                        t = cand;
                        improved = true;
                    } else {
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-12 * best.max(1.0) {
                break;
            }
        }
    }
    best
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn unit_from<R: FnMut() -> Vector>(space: &NormedSpace, mut draw: R) -> Vector {
    loop {
        let v = draw();
        let n = space.norm_unchecked(v.as_slice());
        if n > 1e-300 {
            return v / n;
        }
    }
}

/// Seeded unit vectors: Gaussian draws normalized in the target norm.
pub fn sample_sphere(space: &NormedSpace, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| unit_from(space, || gaussian_vector(&mut rng, space.dim))).collect()
}

/// Points `x_1..x_n` (n >= 2) with `sum x_i = 0` and no zero point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ZeroSumRepr", into = "ZeroSumRepr")]
pub struct ZeroSumConfig {
    points: Vec<Vector>,
}

#[derive(Serialize, Deserialize)]
struct ZeroSumRepr(#[serde(with = "crate::linalg::serde_vectors")] Vec<Vector>);

impl TryFrom<ZeroSumRepr> for ZeroSumConfig {
    type Error = Error;
    fn try_from(r: ZeroSumRepr) -> Result<Self> {
        ZeroSumConfig::new(r.0)
    }
}

impl From<ZeroSumConfig> for ZeroSumRepr {
    fn from(c: ZeroSumConfig) -> Self {
        ZeroSumRepr(c.points)
    }
}

impl ZeroSumConfig {
    pub fn new(points: Vec<Vector>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig("zero-sum configuration needs at least two points".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidConfig("points have different dimensions".into()));
        }
        let sum = points.iter().fold(Vector::zeros(dim), |acc, p| acc + p);
        if sum.amax() > ZERO_SUM_TOL {
            return Err(Error::InvalidConfig(format!("points sum to {:e}, not zero", sum.amax())));
        }
        if points.iter().any(|p| p.iter().all(|x| *x == 0.0)) {
            return Err(Error::InvalidConfig("configuration contains the zero vector".into()));
        }
        Ok(Self { points })
    }

    /// Re-centers the points to sum exactly (up to rounding) to zero.
    pub fn recentered(mut points: Vec<Vector>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("empty configuration".into()));
        }
        let n = points.len() as f64;
        let dim = points[0].len();
        let mean = points.iter().fold(Vector::zeros(dim), |acc, p| acc + p) / n;
        for p in &mut points {
            *p -= &mean;
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn into_points(self) -> Vec<Vector> {
        self.points
    }
}

/// Draws `n - 1` sphere points and closes the configuration with the negated
/// sum, rejecting numerically-zero closures.
pub fn random_zero_sum_config(space: &NormedSpace, n: usize, seed: u64) -> Result<ZeroSumConfig> {
    if n < 2 {
        return Err(Error::InvalidConfig("zero-sum configuration needs n >= 2".into()));
    }
    for attempt in 0..REJECTION_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        let mut points: Vec<Vector> =
            (0..n - 1).map(|_| unit_from(space, || gaussian_vector(&mut rng, space.dim))).collect();
        let last = -points.iter().fold(space.zero(), |acc, p| acc + p);
        if space.norm_unchecked(last.as_slice()) < 1e-8 {
            continue;
        }
        points.push(last);
        if let Ok(cfg) = ZeroSumConfig::new(points) {
            return Ok(cfg);
        }
    }
    Err(Error::RejectionLimit(REJECTION_LIMIT))
}

// ---- serialization: {"dim": n, "norm": "l2" | {"p": x} | {"p": x, "weights": [...]}}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PValue {
    Num(f64),
    Text(String),
}

impl PValue {
    fn from_p(p: f64) -> Self {
        if p.is_infinite() {
            PValue::Text("inf".into())
        } else {
            PValue::Num(p)
        }
    }

    fn to_p(&self) -> std::result::Result<f64, String> {
        match self {
            PValue::Num(p) => Ok(*p),
            PValue::Text(s) if s == "inf" || s == "infinity" => Ok(f64::INFINITY),
            PValue::Text(s) => Err(format!("unrecognized p value {s:?}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NormRepr {
    Name(String),
    P {
        p: PValue,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    Sum {
        sum: Vec<SpaceRepr>,
    },
    Quotient {
        quotient: Box<SpaceRepr>,
        #[serde(with = "crate::linalg::serde_matrix")]
        kernel: Matrix,
        #[serde(with = "crate::linalg::serde_matrix")]
        complement: Matrix,
    },
    Subspace {
        subspace: Box<SpaceRepr>,
        #[serde(with = "crate::linalg::serde_matrix")]
        basis: Matrix,
    },
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr {
    dim: usize,
    norm: NormRepr,
}

impl From<&NormedSpace> for SpaceRepr {
    fn from(s: &NormedSpace) -> Self {
        let norm = match &s.kind {
            NormKind::P(p) if *p == 2.0 => NormRepr::Name("l2".into()),
            NormKind::P(p) => NormRepr::P { p: PValue::from_p(*p), weights: None },
            NormKind::WeightedP { p, weights } => NormRepr::P { p: PValue::from_p(*p), weights: Some(weights.clone()) },
            NormKind::DirectSum(parts) => NormRepr::Sum { sum: parts.iter().map(SpaceRepr::from).collect() },
            NormKind::Quotient { ambient, kernel, complement } => NormRepr::Quotient {
                quotient: Box::new(SpaceRepr::from(ambient.as_ref())),
                kernel: kernel.clone(),
                complement: complement.clone(),
            },
            NormKind::Subspace { ambient, basis } => {
                NormRepr::Subspace { subspace: Box::new(SpaceRepr::from(ambient.as_ref())), basis: basis.clone() }
            }
        };
        SpaceRepr { dim: s.dim, norm }
    }
}

impl TryFrom<SpaceRepr> for NormedSpace {
    type Error = String;
    fn try_from(r: SpaceRepr) -> std::result::Result<Self, String> {
        let kind = match r.norm {
            NormRepr::Name(name) => match name.as_str() {
                "l1" => NormKind::P(1.0),
                "l2" => NormKind::P(2.0),
                "linf" => NormKind::P(f64::INFINITY),
                other => return Err(format!("unknown norm name {other:?}")),
            },
            NormRepr::P { p, weights: None } => NormKind::P(p.to_p()?),
            NormRepr::P { p, weights: Some(weights) } => NormKind::WeightedP { p: p.to_p()?, weights },
            NormRepr::Sum { sum } => {
                NormKind::DirectSum(sum.into_iter().map(NormedSpace::try_from).collect::<std::result::Result<_, _>>()?)
            }
            NormRepr::Quotient { quotient, kernel, complement } => {
                NormKind::Quotient { ambient: Box::new(NormedSpace::try_from(*quotient)?), kernel, complement }
            }
            NormRepr::Subspace { subspace, basis } => {
                NormKind::Subspace { ambient: Box::new(NormedSpace::try_from(*subspace)?), basis }
            }
        };
        NormedSpace::new(r.dim, kind).map_err(|e| e.to_string())
    }
}

impl Serialize for NormedSpace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpaceRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for NormedSpace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SpaceRepr::deserialize(d)?;
        NormedSpace::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn norm_examples() {
        assert_abs_diff_eq!(NormedSpace::l2(2).norm(&v(&[3.0, 4.0])).unwrap(), 5.0, epsilon = 1e-15);
        let l1 = NormedSpace::lp(3, 1.0).unwrap();
        assert_abs_diff_eq!(l1.norm(&v(&[1.0, -2.0, 0.0])).unwrap(), 3.0, epsilon = 1e-15);
        let w = NormedSpace::weighted(2, 2.0, vec![4.0, 1.0]).unwrap();
        // sqrt(4*1 + 1*1)
        assert_abs_diff_eq!(w.norm(&v(&[1.0, 1.0])).unwrap(), 5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn norm_rejects_wrong_dimension() {
        let err = NormedSpace::l2(2).norm(&v(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn invalid_spaces() {
        assert!(NormedSpace::lp(0, 2.0).is_err());
        assert!(NormedSpace::lp(2, 0.5).is_err());
        assert!(NormedSpace::weighted(2, 2.0, vec![1.0, 0.0]).is_err());
        assert!(NormedSpace::weighted(2, 2.0, vec![1.0]).is_err());
    }

    #[test]
    fn sphere_samples_are_unit_and_reproducible() {
        let s = NormedSpace::l2(2);
        let one = sample_sphere(&s, 1, 0);
        assert_eq!(one.len(), 1);
        assert_abs_diff_eq!(s.norm(&one[0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(sample_sphere(&s, 100, 7), sample_sphere(&s, 100, 7));

        let linf = NormedSpace::lp(3, f64::INFINITY).unwrap();
        let pts = sample_sphere(&linf, 50, 1);
        assert_eq!(pts.len(), 50);
        for p in &pts {
            assert_abs_diff_eq!(p.amax(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_sum_examples() {
        let s = NormedSpace::l2(2);
        let two = random_zero_sum_config(&s, 2, 5).unwrap();
        assert_eq!(two.points()[0], -two.points()[1].clone());

        let cfg = random_zero_sum_config(&NormedSpace::l2(3), 5, 3).unwrap();
        let sum = cfg.points().iter().fold(Vector::zeros(3), |a, p| a + p);
        assert!(NormedSpace::l2(3).norm(&sum).unwrap() <= 1e-12);

        assert_eq!(random_zero_sum_config(&s, 3, 9).unwrap(), random_zero_sum_config(&s, 3, 9).unwrap());
        assert!(random_zero_sum_config(&s, 1, 0).is_err());
    }

    #[test]
    fn zero_sum_rejects_bad_points() {
        assert!(ZeroSumConfig::new(vec![v(&[1.0])]).is_err());
        assert!(ZeroSumConfig::new(vec![v(&[1.0]), v(&[-0.5])]).is_err());
        assert!(ZeroSumConfig::new(vec![v(&[1.0]), v(&[-1.0]), v(&[0.0])]).is_err());
    }

    #[test]
    fn direct_sum_is_sum_of_block_norms() {
        let s = NormedSpace::direct_sum(vec![NormedSpace::l2(2), NormedSpace::lp(1, 1.0).unwrap()]);
        assert_abs_diff_eq!(s.norm(&v(&[3.0, 4.0, -2.0])).unwrap(), 7.0, epsilon = 1e-15);
    }

    #[test]
    fn quotient_norm_matches_euclidean_distance() {
        // R^2 / span(1,1): distance of (1,0) to the diagonal is 1/sqrt 2
        let ambient = NormedSpace::l2(2);
        let kernel = Matrix::from_column_slice(2, 1, &[1.0, 1.0]) / 2f64.sqrt();
        let complement = Matrix::from_column_slice(2, 1, &[1.0, -1.0]) / 2f64.sqrt();
        let q = NormedSpace::new(1, NormKind::Quotient { ambient: Box::new(ambient), kernel, complement }).unwrap();
        assert_abs_diff_eq!(q.norm(&v(&[1.0])).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn serde_forms() {
        let l2: NormedSpace = serde_json::from_str(r#"{"dim": 3, "norm": "l2"}"#).unwrap();
        assert_eq!(l2, NormedSpace::l2(3));
        let p: NormedSpace = serde_json::from_str(r#"{"dim": 2, "norm": {"p": 1.5}}"#).unwrap();
        assert_eq!(p, NormedSpace::lp(2, 1.5).unwrap());
        let w: NormedSpace = serde_json::from_str(r#"{"dim": 2, "norm": {"p": 2, "weights": [4, 1]}}"#).unwrap();
        assert_eq!(w, NormedSpace::weighted(2, 2.0, vec![4.0, 1.0]).unwrap());
        let inf: NormedSpace = serde_json::from_str(r#"{"dim": 2, "norm": {"p": "inf"}}"#).unwrap();
        assert_eq!(inf, NormedSpace::lp(2, f64::INFINITY).unwrap());
        assert_eq!(serde_json::to_string(&NormedSpace::l2(2)).unwrap(), r#"{"dim":2,"norm":"l2"}"#);
        assert!(serde_json::from_str::<NormedSpace>(r#"{"dim": 0, "norm": "l2"}"#).is_err());
    }
}
