//! Finite group actions on extensions: the pair (factor system, cocycle)
//! attached to an invariant extension, the checks binding the two, and the
//! reconstruction of the action from the pair.
//!
//! A group element acts on maps `F -> E` by `(g h)(x) = T1(g) h(T2(g)^-1 x)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extops::{solve_congruence, Congruence, Extension, Selection};
use crate::linalg::{
    kron, left_inverse, lstsq, max_abs, min_singular_value, right_inverse, unvec, vec_of, Matrix, Vector,
};
use crate::maps::{FactorSystem, HomMap};
use crate::spaces::{sample_sphere, NormedSpace};
use crate::twisted::{Pair, TwistedSpace};

/// Homomorphism tolerance for representations.
pub const REP_TOL: f64 = 1e-10;

/// Tolerance for recovered coboundary witnesses.
pub const COBOUNDARY_TOL: f64 = 1e-8;

/// Reconstruction fails above this homomorphism residual.
pub const RECONSTRUCT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGroup {
    table: Vec<Vec<usize>>,
    identity: usize,
    inverse: Vec<usize>,
}

impl FiniteGroup {
    /// Validates a multiplication table (`table[a][b] = a b`).
    pub fn new(table: Vec<Vec<usize>>) -> Result<Self> {
        let n = table.len();
        if n == 0 {
            return Err(Error::InvalidGroup("empty table".into()));
        }
        if table.iter().any(|row| row.len() != n || row.iter().any(|&v| v >= n)) {
            return Err(Error::InvalidGroup(format!("table must be {n}x{n} with entries below {n}")));
        }
        for a in 0..n {
            let mut row_seen = vec![false; n];
            let mut col_seen = vec![false; n];
            for b in 0..n {
                row_seen[table[a][b]] = true;
                col_seen[table[b][a]] = true;
            }
            if row_seen.contains(&false) || col_seen.contains(&false) {
                return Err(Error::InvalidGroup(format!("row or column {a} repeats an element")));
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if table[table[a][b]][c] != table[a][table[b][c]] {
                        return Err(Error::InvalidGroup(format!("not associative at ({a}, {b}, {c})")));
                    }
                }
            }
        }
        let identity = (0..n)
            .find(|&e| (0..n).all(|a| table[e][a] == a && table[a][e] == a))
            .ok_or_else(|| Error::InvalidGroup("no identity element".into()))?;
        let inverse = (0..n)
            .map(|a| (0..n).find(|&b| table[a][b] == identity).expect("Latin square row contains the identity"))
            .collect();
        Ok(Self { table, identity, inverse })
    }

    /// `Z_n` with element `k` standing for `r^k`.
    pub fn cyclic(n: usize) -> Result<Self> {
        Self::new((0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect())
    }

    /// Dihedral group of order `2n`; index `f n + k` stands for `s^f r^k`.
    pub fn dihedral(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidGroup("dihedral group needs n >= 1".into()));
        }
        let enc = |f: usize, k: usize| f * n + k;
        let mut table = vec![vec![0; 2 * n]; 2 * n];
        for (a, row) in table.iter_mut().enumerate() {
            let (f1, k1) = (a / n, a % n);
            for (b, cell) in row.iter_mut().enumerate() {
                let (f2, k2) = (b / n, b % n);
                // r^k s = s r^-k
                let k = if f2 == 1 { (n - k1) % n + k2 } else { k1 + k2 } % n;
                *cell = enc((f1 + f2) % 2, k);
            }
        }
        Self::new(table)
    }

    pub fn order(&self) -> usize {
        self.table.len()
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.table[a][b]
    }

    pub fn inv(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn table(&self) -> &[Vec<usize>] {
        &self.table
    }
}

#[derive(Serialize, Deserialize)]
struct GroupRepr {
    order: usize,
    table: Vec<Vec<usize>>,
}

impl Serialize for FiniteGroup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GroupRepr { order: self.order(), table: self.table.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteGroup {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = GroupRepr::deserialize(d)?;
        if r.order != r.table.len() {
            return Err(serde::de::Error::custom(format!("order {} but {} table rows", r.order, r.table.len())));
        }
        FiniteGroup::new(r.table).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    group: FiniteGroup,
    space: NormedSpace,
    #[serde(with = "crate::linalg::serde_matrices")]
    matrices: Vec<Matrix>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RepresentationReport {
    pub identity_residual: f64,
    pub homomorphism_residual: f64,
    /// `(a, b)` attaining the homomorphism residual.
    pub worst_pair: (usize, usize),
    pub min_singular_value: f64,
    pub passed: bool,
}

impl Representation {
    pub fn new(group: FiniteGroup, space: NormedSpace, matrices: Vec<Matrix>) -> Result<Self> {
        let d = space.dim();
        if matrices.len() != group.order() {
            return Err(Error::InvalidRepresentation(format!(
                "{} matrices for a group of order {}",
                matrices.len(),
                group.order()
            )));
        }
        if matrices.iter().any(|m| m.shape() != (d, d)) {
            return Err(Error::InvalidRepresentation(format!("matrices must be {d}x{d}")));
        }
        Ok(Self { group, space, matrices })
    }

    /// Extends generator images multiplicatively: `T(g s) = T(g) T(s)`.
    pub fn from_generators(group: FiniteGroup, space: NormedSpace, generators: &[(usize, Matrix)]) -> Result<Self> {
        let d = space.dim();
        let n = group.order();
        let mut mats: Vec<Option<Matrix>> = vec![None; n];
        mats[group.identity()] = Some(Matrix::identity(d, d));
        let mut frontier = vec![group.identity()];
        while let Some(g) = frontier.pop() {
            for (s, m) in generators {
                let gs = group.mul(g, *s);
                if mats[gs].is_none() {
                    mats[gs] = Some(mats[g].as_ref().expect("visited") * m);
                    frontier.push(gs);
                }
            }
        }
        let matrices = mats
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidRepresentation("generators do not generate the group".into()))?;
        let rep = Self::new(group, space, matrices)?;
        let report = rep.validate();
        if !report.passed {
            return Err(Error::InvalidRepresentation(format!(
                "generator images violate the relations: residual {:e}",
                report.homomorphism_residual
            )));
        }
        Ok(rep)
    }

    /// `T(g) = I` for every `g`.
    pub fn trivial(group: FiniteGroup, space: NormedSpace) -> Self {
        let d = space.dim();
        let matrices = vec![Matrix::identity(d, d); group.order()];
        Self { group, space, matrices }
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn space(&self) -> &NormedSpace {
        &self.space
    }

    pub fn matrix(&self, g: usize) -> &Matrix {
        &self.matrices[g]
    }

    /// `T(g)^-1`, read as `T(g^-1)`.
    pub fn inverse_matrix(&self, g: usize) -> &Matrix {
        &self.matrices[self.group.inv(g)]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn validate(&self) -> RepresentationReport {
        validate_representation(self)
    }
}

pub fn validate_representation(t: &Representation) -> RepresentationReport {
    let g = &t.group;
    let n = g.order();
    let d = t.space.dim();
    let identity_residual = max_abs(&(&t.matrices[g.identity()] - Matrix::identity(d, d)));
    let (homomorphism_residual, worst) = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (k / n, k % n);
            let r = max_abs(&(&t.matrices[g.mul(a, b)] - &t.matrices[a] * &t.matrices[b]));
            (r, k)
        })
        .reduce(|| (0.0, 0), |x, y| if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x });
    let min_sv = t.matrices.iter().map(min_singular_value).fold(f64::INFINITY, f64::min);
    RepresentationReport {
        identity_residual,
        homomorphism_residual,
        worst_pair: (worst / n, worst % n),
        min_singular_value: min_sv,
        passed: identity_residual <= REP_TOL && homomorphism_residual <= REP_TOL && min_sv > REP_TOL,
    }
}

/// Per-element maps `M(g): F -> E`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cocycle {
    group: FiniteGroup,
    values: Vec<HomMap>,
}

impl Cocycle {
    pub fn new(group: FiniteGroup, values: Vec<HomMap>) -> Result<Self> {
        if values.len() != group.order() {
            return Err(Error::InvalidRepresentation(format!(
                "{} cocycle values for a group of order {}",
                values.len(),
                group.order()
            )));
        }
        let (f, e) = (values[0].domain().clone(), values[0].codomain().clone());
        if values.iter().any(|v| v.domain() != &f || v.codomain() != &e) {
            return Err(Error::SpaceMismatch("cocycle values map between different spaces".into()));
        }
        Ok(Self { group, values })
    }

    /// `M(g) = g h - h`.
    pub fn coboundary(h: &HomMap, t1: &Representation, t2: &Representation) -> Result<Self> {
        let values = (0..t1.group.order()).map(|g| act(t1, t2, g, h)?.difference(h)).collect::<Result<_>>()?;
        Self::new(t1.group.clone(), values)
    }

    /// Linear cocycle from matrices.
    pub fn linear(group: FiniteGroup, f: NormedSpace, e: NormedSpace, mats: Vec<Matrix>) -> Result<Self> {
        let values = mats.into_iter().map(|m| HomMap::linear(f.clone(), e.clone(), m)).collect::<Result<_>>()?;
        Self::new(group, values)
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn value(&self, g: usize) -> &HomMap {
        &self.values[g]
    }

    pub fn values(&self) -> &[HomMap] {
        &self.values
    }

    pub fn f_space(&self) -> &NormedSpace {
        self.values[0].domain()
    }

    pub fn e_space(&self) -> &NormedSpace {
        self.values[0].codomain()
    }

    pub fn is_linear(&self) -> bool {
        self.values.iter().all(HomMap::is_linear)
    }
}

#[derive(Serialize, Deserialize)]
struct CocycleRepr {
    group: FiniteGroup,
    #[serde(rename = "E")]
    e: NormedSpace,
    #[serde(rename = "F")]
    f: NormedSpace,
    values: Vec<String>,
}

impl Serialize for Cocycle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CocycleRepr {
            group: self.group.clone(),
            e: self.e_space().clone(),
            f: self.f_space().clone(),
            values: self.values.iter().map(HomMap::to_text).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Cocycle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = CocycleRepr::deserialize(d)?;
        let values = r
            .values
            .iter()
            .map(|t| crate::maps::parse_map(t, r.f.clone(), r.e.clone()))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        Cocycle::new(r.group, values).map_err(D::Error::custom)
    }
}

/// `(g h)(x) = T1(g) h(T2(g)^-1 x)` as a map expression.
pub fn act(t1: &Representation, t2: &Representation, g: usize, h: &HomMap) -> Result<HomMap> {
    h.precompose(t2.inverse_matrix(g).clone(), h.domain().clone())?
        .postcompose(t1.matrix(g).clone(), h.codomain().clone())
}

fn rel_gap(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

/// Seeded sample points of `space` with norms spread over `[0.25, 4]`.
fn scaled_samples(space: &NormedSpace, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667);
    sample_sphere(space, count, seed).into_iter().map(|x| x * rng.random_range(0.25..4.0)).collect()
}

/// Restriction `T1(g) = L T(g) i` and quotient `T2(g) = sigma T(g) p_lin` of
/// an action leaving `im i` invariant.
pub fn invariant_extension(t: &Representation, ext: &Extension) -> Result<(Representation, Representation)> {
    if t.space.dim() != ext.g_space().dim() {
        return Err(Error::SpaceMismatch(format!(
            "representation acts on dimension {}, extension has dim G = {}",
            t.space.dim(),
            ext.g_space().dim()
        )));
    }
    let i = ext.i();
    let l = left_inverse(i);
    let p_lin = right_inverse(ext.sigma());
    let mut t1 = Vec::with_capacity(t.group.order());
    let mut t2 = Vec::with_capacity(t.group.order());
    for (g, m) in t.matrices.iter().enumerate() {
        let moved = m * i;
        let restricted = &l * &moved;
        let residual = max_abs(&(&moved - i * &restricted)) / max_abs(m).max(1.0);
        if residual > REP_TOL {
            return Err(Error::NotInvariant { element: g, residual });
        }
        t1.push(restricted);
        t2.push(ext.sigma() * m * &p_lin);
    }
    let t1 = Representation::new(t.group.clone(), ext.e_space().clone(), t1)?;
    let t2 = Representation::new(t.group.clone(), ext.f_space().clone(), t2)?;
    for (name, r) in [("restriction", &t1), ("quotient", &t2)] {
        let rep = r.validate();
        if !rep.passed {
            return Err(Error::InvalidRepresentation(format!(
                "{name} fails the homomorphism check: residual {:e}",
                rep.homomorphism_residual
            )));
        }
    }
    Ok((t1, t2))
}

#[derive(Debug, Clone, Serialize)]
pub struct CocycleReport {
    /// `max |M(e) x|` relative.
    pub identity_residual: f64,
    /// Max relative residual of `M(g1 g2) = g1 M(g2) + M(g1)`.
    pub cocycle_residual: f64,
    pub coboundary: CoboundaryStatus,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CoboundaryStatus {
    /// `M(g) = g h - h` with the recovered `h`.
    Coboundary { witness: HomMap, residual: f64 },
    /// Linear values; the least-squares residual certifies that no linear
    /// `h` exists.
    NotCoboundary { residual: f64 },
    /// Nonlinear values and the averaged candidate failed.
    Inconclusive { residual: f64 },
}

impl CoboundaryStatus {
    pub fn is_coboundary(&self) -> bool {
        matches!(self, CoboundaryStatus::Coboundary { .. })
    }
}

fn cocycle_spaces(m: &Cocycle, t1: &Representation, t2: &Representation) -> Result<()> {
    if m.e_space().dim() != t1.space.dim() || m.f_space().dim() != t2.space.dim() {
        return Err(Error::SpaceMismatch("cocycle and representations act on different spaces".into()));
    }
    if m.group != t1.group || m.group != t2.group {
        return Err(Error::InvalidGroup("cocycle and representations use different groups".into()));
    }
    Ok(())
}

/// Max relative residual of `M(g) = g h - h` over all `g` and the samples.
fn coboundary_residual(m: &Cocycle, t1: &Representation, t2: &Representation, h: &HomMap, pts: &[Vector]) -> f64 {
    (0..m.group.order())
        .into_par_iter()
        .map(|g| {
            pts.iter()
                .map(|x| {
                    let gh = t1.matrix(g) * h.apply(&(t2.inverse_matrix(g) * x)) - h.apply(x);
                    rel_gap(&m.values[g].apply(x), &gh)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

fn linear_coboundary(m: &Cocycle, t1: &Representation, t2: &Representation) -> CoboundaryStatus {
    let (e, f) = (t1.space.dim(), t2.space.dim());
    let n = m.group.order();
    // vec(T1 h T2^-1 - h) = (T2^-T (x) T1 - I) vec h
    let mut system = Matrix::zeros(n * e * f, e * f);
    let mut target = Vector::zeros(n * e * f);
    for g in 0..n {
        let block = kron(&t2.inverse_matrix(g).transpose(), t1.matrix(g)) - Matrix::identity(e * f, e * f);
        system.view_mut((g * e * f, 0), (e * f, e * f)).copy_from(&block);
        let mg = m.values[g].as_matrix().expect("linear cocycle value");
        target.rows_mut(g * e * f, e * f).copy_from(&vec_of(&mg));
    }
    let h = unvec(&lstsq(&system, &target), e, f);
    let residual = (&system * vec_of(&h) - &target).amax();
    if residual <= COBOUNDARY_TOL {
        let witness = HomMap::linear(m.f_space().clone(), m.e_space().clone(), h).expect("shape fits");
        CoboundaryStatus::Coboundary { witness, residual }
    } else {
        CoboundaryStatus::NotCoboundary { residual }
    }
}

pub fn check_cocycle(
    m: &Cocycle,
    t1: &Representation,
    t2: &Representation,
    samples: usize,
    seed: u64,
) -> Result<CocycleReport> {
    cocycle_spaces(m, t1, t2)?;
    let grp = &m.group;
    let n = grp.order();
    let pts = scaled_samples(m.f_space(), samples.max(1), seed);
    let identity_residual =
        pts.iter().map(|x| m.values[grp.identity()].apply(x).amax() / x.amax().max(1.0)).fold(0.0, f64::max);
    let cocycle_residual = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (k / n, k % n);
            pts.iter()
                .map(|x| {
                    let lhs = m.values[grp.mul(a, b)].apply(x);
                    let moved = t1.matrix(a) * m.values[b].apply(&(t2.inverse_matrix(a) * x));
                    rel_gap(&lhs, &(moved + m.values[a].apply(x)))
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let coboundary = if m.is_linear() {
        linear_coboundary(m, t1, t2)
    } else {
        // averaging: a cocycle of a finite group is the coboundary of -(1/|G|) sum M(g)
        let total = m.values[1..].iter().try_fold(m.values[0].clone(), |acc, v| acc.sum(v))?;
        let witness = total.scale(-1.0 / n as f64)?;
        let residual = coboundary_residual(m, t1, t2, &witness, &pts);
        if residual <= COBOUNDARY_TOL {
            CoboundaryStatus::Coboundary { witness, residual }
        } else {
            CoboundaryStatus::Inconclusive { residual }
        }
    };
    Ok(CocycleReport { identity_residual, cocycle_residual, coboundary })
}

/// `Psi(g)(x) = L (T(g) p(T2(g)^-1 x) - p(x))`.
pub fn psi_cocycle(
    t: &Representation,
    t2: &Representation,
    ext: &Extension,
    p: &Selection,
    check_seed: u64,
) -> Result<Cocycle> {
    let l = left_inverse(ext.i());
    let projector = ext.i() * &l;
    let pm = p.map();
    let pts = scaled_samples(ext.f_space(), 64, check_seed);
    let mut values = Vec::with_capacity(t.group.order());
    for g in 0..t.group.order() {
        let moved = pm
            .precompose(t2.inverse_matrix(g).clone(), ext.f_space().clone())?
            .postcompose(t.matrix(g).clone(), ext.g_space().clone())?;
        let diff = moved.difference(pm)?;
        let residual = pts
            .iter()
            .map(|x| {
                let v = diff.apply(x);
                (&v - &projector * &v).amax() / v.amax().max(1.0)
            })
            .fold(0.0, f64::max);
        if residual > REP_TOL {
            return Err(Error::EscapesSubspace { element: g, residual });
        }
        values.push(diff.postcompose(l.clone(), ext.e_space().clone())?);
    }
    Cocycle::new(t.group.clone(), values)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompatibilityReport {
    pub max_residual: f64,
    /// Element attaining `max_residual`.
    pub worst_element: usize,
}

/// Max relative residual of `dPhi(g) - rho Psi(g) - rho(g h - h)` where
/// `dPhi(g)(x, y) = T1(g) Phi(T2(g)^-1 x, T2(g)^-1 y) - Phi(x, y)`.
pub fn check_compatibility(
    phi: &dyn FactorSystem,
    psi: &Cocycle,
    witness: &HomMap,
    t1: &Representation,
    t2: &Representation,
    samples: usize,
    seed: u64,
) -> Result<CompatibilityReport> {
    cocycle_spaces(psi, t1, t2)?;
    if phi.f_space().dim() != t2.space.dim() || witness.domain().dim() != t2.space.dim() {
        return Err(Error::SpaceMismatch("factor system or witness does not live on F".into()));
    }
    let pts = scaled_samples(psi.f_space(), 2 * samples.max(1), seed);
    let rho = |h: &dyn Fn(&Vector) -> Vector, x: &Vector, y: &Vector| h(&(x + y)) - h(x) - h(y);
    let (max_residual, worst_element) = (0..psi.group.order())
        .into_par_iter()
        .map(|g| {
            let (a, ai) = (t1.matrix(g), t2.inverse_matrix(g));
            let gh = |x: &Vector| a * witness.apply(&(ai * x)) - witness.apply(x);
            let r = pts
                .chunks(2)
                .map(|w| {
                    let (x, y) = (&w[0], &w[1]);
                    let dphi = a * phi.apply(&(ai * x), &(ai * y)) - phi.apply(x, y);
                    let rho_psi = rho(&|v: &Vector| psi.values[g].apply(v), x, y);
                    let rho_gh = rho(&gh, x, y);
                    rel_gap(&dphi, &(rho_psi + rho_gh))
                })
                .fold(0.0, f64::max);
            (r, g)
        })
        .reduce(|| (0.0, 0), |x, y| if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x });
    Ok(CompatibilityReport { max_residual, worst_element })
}

/// The action `T(g)(x, y) = (T1(g) x + Psi(g)(T2(g) y), T2(g) y)` on the
/// twisted sum, plus its matrices in the linear coordinates `(x + k(y), y)`
/// where `Phi = rho k`.
#[derive(Debug, Clone)]
pub struct ReconstructedAction {
    twisted: TwistedSpace,
    t1: Representation,
    t2: Representation,
    psi: Cocycle,
    linear: Representation,
    pub homomorphism_residual: f64,
    /// Failure of additivity of the corner maps, which vanishes when
    /// `(Phi, Psi)` are compatible.
    pub linearity_residual: f64,
}

impl ReconstructedAction {
    pub fn apply(&self, g: usize, z: &Pair) -> Pair {
        let y = self.t2.matrix(g) * &z.y;
        Pair { x: self.t1.matrix(g) * &z.x + self.psi.values[g].apply(&y), y }
    }

    pub fn twisted(&self) -> &TwistedSpace {
        &self.twisted
    }

    /// The split extension `E (+) F` in linear coordinates, carrying the
    /// twisted backing.
    pub fn extension(&self) -> Result<Extension> {
        let e = self.twisted.e_space().clone();
        let f = self.twisted.f_space().clone();
        crate::twisted::extension_from_factor(&e, &f, self.twisted.phi().clone())
    }

    /// The action as matrices on [`Self::extension`].
    pub fn representation(&self) -> &Representation {
        &self.linear
    }
}

pub fn reconstruct(
    t1: &Representation,
    t2: &Representation,
    phi: Arc<dyn FactorSystem>,
    psi: &Cocycle,
    samples: usize,
    seed: u64,
) -> Result<ReconstructedAction> {
    cocycle_spaces(psi, t1, t2)?;
    let k = phi.potential().ok_or(Error::NoPotential)?;
    let twisted = TwistedSpace::new(phi);
    let (e, f) = (t1.space.dim(), t2.space.dim());
    let grp = t1.group.clone();
    let ys = scaled_samples(&t2.space, samples.max(1), seed);
    let xs = scaled_samples(&t1.space, samples.max(1), seed ^ 1);

    // corner N_g(y) = Psi(g)(T2 y) + k(T2 y) - T1 k(y)
    let corner = |g: usize, y: &Vector| {
        let w = t2.matrix(g) * y;
        psi.values[g].apply(&w) + k.apply(&w) - t1.matrix(g) * k.apply(y)
    };
    let mut mats = Vec::with_capacity(grp.order());
    let mut linearity_residual = 0.0f64;
    for g in 0..grp.order() {
        let mut n = Matrix::zeros(e, f);
        for j in 0..f {
            let mut basis = Vector::zeros(f);
            basis[j] = 1.0;
            n.set_column(j, &corner(g, &basis));
        }
        for y in &ys {
            linearity_residual = linearity_residual.max(rel_gap(&corner(g, y), &(&n * y)));
        }
        let mut m = Matrix::zeros(e + f, e + f);
        m.view_mut((0, 0), (e, e)).copy_from(t1.matrix(g));
        m.view_mut((0, e), (e, f)).copy_from(&n);
        m.view_mut((e, e), (f, f)).copy_from(t2.matrix(g));
        mats.push(m);
    }
    let g_space = NormedSpace::direct_sum(vec![t1.space.clone(), t2.space.clone()]);
    let linear = Representation::new(grp.clone(), g_space, mats)?;
    let mut action = ReconstructedAction {
        twisted,
        t1: t1.clone(),
        t2: t2.clone(),
        psi: psi.clone(),
        linear,
        homomorphism_residual: 0.0,
        linearity_residual,
    };
    let n = grp.order();
    let zs: Vec<Pair> = xs.into_iter().zip(ys).map(|(x, y)| Pair { x, y }).collect();
    let hom = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (idx / n, idx % n);
            zs.iter()
                .map(|z| {
                    let lhs = action.apply(grp.mul(a, b), z);
                    let rhs = action.apply(a, &action.apply(b, z));
                    rel_gap(&lhs.x, &rhs.x).max(rel_gap(&lhs.y, &rhs.y))
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    action.homomorphism_residual = hom;
    if hom > RECONSTRUCT_TOL {
        return Err(Error::Incompatible { residual: hom });
    }
    Ok(action)
}

#[derive(Debug, Clone, Serialize)]
pub struct Equivalence {
    pub congruence: Congruence,
    pub equivalent: bool,
}

impl Equivalence {
    pub fn intertwiner(&self) -> Option<&Matrix> {
        self.equivalent.then_some(&self.congruence.candidate)
    }
}

/// Searches for a congruence `h: G_A -> G_B` with `h TA(g) = TB(g) h`.
pub fn equivalent_representations(
    ext_a: &Extension,
    ta: &Representation,
    ext_b: &Extension,
    tb: &Representation,
    tol: f64,
) -> Result<Equivalence> {
    if ta.group != tb.group {
        return Err(Error::InvalidGroup("representations use different groups".into()));
    }
    let actions: Vec<(Matrix, Matrix)> = ta.matrices.iter().cloned().zip(tb.matrices.iter().cloned()).collect();
    let congruence = solve_congruence(ext_a, ext_b, &actions)?;
    let equivalent = congruence.holds(tol);
    Ok(Equivalence { congruence, equivalent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extops::{factor_from_extension, selection_from_extension, SelectionMode};
    use crate::linalg::block_diag;
    use crate::maps::RhoOf;

    fn rot90() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    fn flip() -> Matrix {
        Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])
    }

    fn shear(k: &Matrix) -> Matrix {
        let mut s = Matrix::identity(4, 4);
        s.view_mut((0, 2), (2, 2)).copy_from(k);
        s
    }

    fn k_mat() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.3, -1.1, 0.7, 0.2])
    }

    /// `S diag(R, R) S^-1`, block upper triangular.
    fn z4_block() -> Representation {
        let s = shear(&k_mat());
        let si = s.clone().try_inverse().unwrap();
        let gen = &s * block_diag(&rot90(), &rot90()) * si;
        Representation::from_generators(FiniteGroup::cyclic(4).unwrap(), NormedSpace::l2(4), &[(1, gen)]).unwrap()
    }

    #[test]
    fn groups() {
        let z4 = FiniteGroup::cyclic(4).unwrap();
        assert_eq!(z4.mul(3, 2), 1);
        assert_eq!(z4.inv(1), 3);
        let d4 = FiniteGroup::dihedral(4).unwrap();
        assert_eq!(d4.order(), 8);
        // s r s = r^-1
        assert_eq!(d4.mul(d4.mul(4, 1), 4), 3);
        let mut bad = z4.table().to_vec();
        bad[1][1] = 3;
        assert!(FiniteGroup::new(bad).is_err());
        let json = serde_json::to_string(&z4).unwrap();
        assert!(json.starts_with("{\"order\":4,\"table\""));
        assert_eq!(serde_json::from_str::<FiniteGroup>(&json).unwrap(), z4);
    }

    #[test]
    fn representation_validation() {
        let z4 = FiniteGroup::cyclic(4).unwrap();
        assert!(Representation::trivial(z4.clone(), NormedSpace::l2(3)).validate().passed);
        let rot = Representation::from_generators(z4.clone(), NormedSpace::l2(2), &[(1, rot90())]).unwrap();
        assert!(rot.validate().passed);
        let mut mats = rot.matrices().to_vec();
        mats[2] = Matrix::identity(2, 2);
        let bad = Representation::new(z4.clone(), NormedSpace::l2(2), mats).unwrap();
        let rep = bad.validate();
        assert!(!rep.passed && rep.homomorphism_residual > 0.1);
        assert!(Representation::from_generators(z4, NormedSpace::l2(2), &[(1, flip() * 2.0)]).is_err());
        let d4 = FiniteGroup::dihedral(4).unwrap();
        assert!(Representation::from_generators(d4, NormedSpace::l2(2), &[(1, rot90()), (4, flip())]).is_ok());
    }

    #[test]
    fn invariant_blocks() {
        let t = z4_block();
        let ext = Extension::split(NormedSpace::l2(2), NormedSpace::l2(2));
        let (t1, t2) = invariant_extension(&t, &ext).unwrap();
        for g in 0..4 {
            assert!(max_abs(&(t1.matrix(g) - t.matrix(g).view((0, 0), (2, 2)))) <= 1e-12);
            assert!(max_abs(&(t2.matrix(g) - t.matrix(g).view((2, 2), (2, 2)))) <= 1e-12);
        }
        // lower-triangular action moves E
        let s = shear(&k_mat()).transpose();
        let gen = &s * block_diag(&rot90(), &rot90()) * s.clone().try_inverse().unwrap();
        let low =
            Representation::from_generators(FiniteGroup::cyclic(4).unwrap(), NormedSpace::l2(4), &[(1, gen)]).unwrap();
        assert!(matches!(invariant_extension(&low, &ext), Err(Error::NotInvariant { .. })));
    }

    #[test]
    fn linear_psi_is_the_corner() {
        let t = z4_block();
        let ext = Extension::split(NormedSpace::l2(2), NormedSpace::l2(2));
        let (t1, t2) = invariant_extension(&t, &ext).unwrap();
        let p = selection_from_extension(&ext, SelectionMode::LinearPseudoinverse).unwrap();
        let psi = psi_cocycle(&t, &t2, &ext, &p, 0).unwrap();
        for g in 0..4 {
            let corner = t.matrix(g).view((0, 2), (2, 2)) * t2.inverse_matrix(g);
            assert!(max_abs(&(psi.value(g).as_matrix().unwrap() - corner)) <= 1e-12);
        }
        let rep = check_cocycle(&psi, &t1, &t2, 50, 1).unwrap();
        assert!(rep.cocycle_residual <= 1e-12);
        assert!(rep.coboundary.is_coboundary());

        // block-diagonal action: Psi = 0
        let diag = Representation::from_generators(
            FiniteGroup::cyclic(4).unwrap(),
            NormedSpace::l2(4),
            &[(1, block_diag(&rot90(), &rot90()))],
        )
        .unwrap();
        let psi0 = psi_cocycle(&diag, &t2, &ext, &p, 0).unwrap();
        assert!(psi0.values().iter().all(|v| max_abs(&v.as_matrix().unwrap()) <= 1e-15));
    }

    #[test]
    fn coboundaries_are_recovered() {
        let z4 = FiniteGroup::cyclic(4).unwrap();
        let t1 = Representation::from_generators(z4.clone(), NormedSpace::l2(2), &[(1, rot90())]).unwrap();
        let t2 = Representation::from_generators(z4.clone(), NormedSpace::l2(2), &[(1, flip())]).unwrap();
        let h = HomMap::linear(NormedSpace::l2(2), NormedSpace::l2(2), k_mat()).unwrap();
        let m = Cocycle::coboundary(&h, &t1, &t2).unwrap();
        let rep = check_cocycle(&m, &t1, &t2, 40, 3).unwrap();
        assert!(rep.cocycle_residual <= 1e-10);
        let CoboundaryStatus::Coboundary { witness, .. } = &rep.coboundary else { panic!("{rep:?}") };
        let pts = scaled_samples(&t2.space, 40, 9);
        assert!(coboundary_residual(&m, &t1, &t2, witness, &pts) <= 1e-8);

        let zero =
            Cocycle::linear(z4.clone(), NormedSpace::l2(2), NormedSpace::l2(2), vec![Matrix::zeros(2, 2); 4]).unwrap();
        let rep = check_cocycle(&zero, &t1, &t2, 10, 0).unwrap();
        assert_eq!(rep.cocycle_residual, 0.0);
        assert!(rep.coboundary.is_coboundary());

        // nonlinear coboundary found by averaging
        let kp = HomMap::kalton_peck(NormedSpace::l2(2));
        let m = Cocycle::coboundary(&kp, &t1, &t2).unwrap();
        assert!(check_cocycle(&m, &t1, &t2, 40, 4).unwrap().coboundary.is_coboundary());

        // constant nonzero values break the identity
        let c = Cocycle::linear(z4, NormedSpace::l2(2), NormedSpace::l2(2), vec![Matrix::identity(2, 2); 4]).unwrap();
        let rep = check_cocycle(&c, &t1, &t2, 10, 0).unwrap();
        assert!(rep.cocycle_residual > 0.1 && !rep.coboundary.is_coboundary());
    }

    #[test]
    fn nonlinear_round_trip() {
        let t = z4_block();
        let ext = Extension::split(NormedSpace::l2(2), NormedSpace::l2(2));
        let (t1, t2) = invariant_extension(&t, &ext).unwrap();
        let kp = HomMap::kalton_peck(NormedSpace::l2(2));
        let p = selection_from_extension(&ext, SelectionMode::Nonlinear(kp.clone())).unwrap();
        let psi = psi_cocycle(&t, &t2, &ext, &p, 0).unwrap();
        assert!(!psi.is_linear());
        assert!(check_cocycle(&psi, &t1, &t2, 60, 5).unwrap().cocycle_residual <= 1e-9);
        let phi: Arc<dyn FactorSystem> = Arc::new(factor_from_extension(&ext, &p).unwrap());
        let zero = HomMap::zero(NormedSpace::l2(2), NormedSpace::l2(2));
        assert!(check_compatibility(phi.as_ref(), &psi, &zero, &t1, &t2, 60, 6).unwrap().max_residual <= 1e-9);

        let action = reconstruct(&t1, &t2, phi.clone(), &psi, 40, 7).unwrap();
        assert!(action.homomorphism_residual <= 1e-9 && action.linearity_residual <= 1e-9);
        assert!(action.representation().validate().homomorphism_residual <= 1e-9);
        let eq =
            equivalent_representations(&action.extension().unwrap(), action.representation(), &ext, &t, 1e-8).unwrap();
        assert!(eq.intertwiner().is_some(), "{:?}", eq.congruence);

        // a different quotient action is never equivalent
        let other_t2 = Representation::trivial(t.group.clone(), NormedSpace::l2(2));
        let diag: Vec<Matrix> = (0..4).map(|g| block_diag(t1.matrix(g), other_t2.matrix(g))).collect();
        let tb = Representation::new(t.group.clone(), NormedSpace::l2(4), diag).unwrap();
        assert!(tb.validate().passed);
        let eq = equivalent_representations(&ext, &t, &ext, &tb, 1e-6).unwrap();
        assert!(!eq.equivalent);
    }

    #[test]
    fn selection_change_shifts_by_witness() {
        let t = z4_block();
        let ext = Extension::split(NormedSpace::l2(2), NormedSpace::l2(2));
        let (t1, t2) = invariant_extension(&t, &ext).unwrap();
        let kp = HomMap::kalton_peck(NormedSpace::l2(2));
        let p = selection_from_extension(&ext, SelectionMode::Nonlinear(kp.clone())).unwrap();
        let h = crate::maps::parse_map("scale(0.4,pre([[0,1],[-1,0.5]],kp))", NormedSpace::l2(2), NormedSpace::l2(2))
            .unwrap();
        let q = selection_from_extension(&ext, SelectionMode::Nonlinear(kp.sum(&h).unwrap())).unwrap();
        let psi_p = psi_cocycle(&t, &t2, &ext, &p, 0).unwrap();
        let phi_q = factor_from_extension(&ext, &q).unwrap();
        let rep = check_compatibility(&phi_q, &psi_p, &h, &t1, &t2, 60, 8).unwrap();
        assert!(rep.max_residual <= 1e-9, "{rep:?}");
        let zero = HomMap::zero(NormedSpace::l2(2), NormedSpace::l2(2));
        assert!(check_compatibility(&phi_q, &psi_p, &zero, &t1, &t2, 60, 8).unwrap().max_residual > 1e-3);

        // Psi changes by the coboundary of h
        let psi_q = psi_cocycle(&t, &t2, &ext, &q, 0).unwrap();
        let cob = Cocycle::coboundary(&h, &t1, &t2).unwrap();
        for y in scaled_samples(&t2.space, 30, 2) {
            for g in 0..4 {
                let want = psi_p.value(g).apply(&y) + cob.value(g).apply(&y);
                assert!(rel_gap(&psi_q.value(g).apply(&y), &want) <= 1e-9);
            }
        }
    }

    #[test]
    fn trivial_pair_reconstructs_direct_sum() {
        let z4 = FiniteGroup::cyclic(4).unwrap();
        let t1 = Representation::from_generators(z4.clone(), NormedSpace::l2(2), &[(1, rot90())]).unwrap();
        let t2 = Representation::from_generators(z4.clone(), NormedSpace::l2(2), &[(1, flip())]).unwrap();
        let zero = HomMap::zero(NormedSpace::l2(2), NormedSpace::l2(2));
        let psi = Cocycle::linear(z4, NormedSpace::l2(2), NormedSpace::l2(2), vec![Matrix::zeros(2, 2); 4]).unwrap();
        let action = reconstruct(&t1, &t2, Arc::new(RhoOf::new(zero)), &psi, 10, 0).unwrap();
        for g in 0..4 {
            let want = block_diag(t1.matrix(g), t2.matrix(g));
            assert!(max_abs(&(action.representation().matrix(g) - want)) == 0.0);
        }
        // linear corner gives the block-upper-triangular matrices
        let h = HomMap::linear(NormedSpace::l2(2), NormedSpace::l2(2), k_mat()).unwrap();
        let psi = Cocycle::coboundary(&h, &t1, &t2).unwrap();
        let zero = HomMap::zero(NormedSpace::l2(2), NormedSpace::l2(2));
        let action = reconstruct(&t1, &t2, Arc::new(RhoOf::new(zero)), &psi, 10, 0).unwrap();
        for g in 0..4 {
            let corner = psi.value(g).as_matrix().unwrap() * t2.matrix(g);
            let m = action.representation().matrix(g);
            assert!(max_abs(&(m.view((0, 2), (2, 2)) - corner)) <= 1e-12);
        }
    }

    #[test]
    fn incompatible_pair_is_rejected() {
        let z4 = FiniteGroup::cyclic(4).unwrap();
        let t1 = Representation::from_generators(z4.clone(), NormedSpace::l2(2), &[(1, rot90())]).unwrap();
        let t2 = t1.clone();
        let zero = HomMap::zero(NormedSpace::l2(2), NormedSpace::l2(2));
        let psi = Cocycle::linear(z4, NormedSpace::l2(2), NormedSpace::l2(2), vec![Matrix::identity(2, 2); 4]).unwrap();
        assert!(matches!(
            reconstruct(&t1, &t2, Arc::new(RhoOf::new(zero)), &psi, 10, 0),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn cocycle_serde() {
        let z4 = FiniteGroup::cyclic(4).unwrap();
        let kp = HomMap::kalton_peck(NormedSpace::l2(2));
        let c = Cocycle::new(z4, vec![kp.scale(0.0).unwrap(), kp.clone(), kp.clone(), kp]).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"values\":[\"scale(0,kp)\",\"kp\""));
        assert_eq!(serde_json::from_str::<Cocycle>(&json).unwrap(), c);
    }
}
