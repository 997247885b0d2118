//! Finite-dimensional extensions `0 -> E -i-> G -sigma-> F -> 0` as matrix
//! pairs, their selections and factor systems, and the operations pushout,
//! pullback, Baer sum and congruence.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    complement_basis, hstack, kernel_basis, kron, left_inverse, lstsq, max_abs, min_singular_value, rank,
    right_inverse, unvec, vec_of, vstack, Matrix, Vector, RANK_TOL,
};
use crate::maps::{parse_map, FactorSystem, HomMap, RhoOf};
use crate::spaces::{sample_sphere, NormKind, NormedSpace};
use crate::twisted::{split_matrices, TwistedSpace};

/// Residual and invertibility threshold for congruence witnesses.
pub const CONGRUENCE_TOL: f64 = 1e-8;

/// Tolerance for `rho p` to lie in the image of `i`.
pub const SELECTION_TOL: f64 = 1e-8;

const SELECTION_SAMPLES: usize = 64;

#[derive(Debug, Clone)]
pub struct Extension {
    e_space: NormedSpace,
    g_space: NormedSpace,
    f_space: NormedSpace,
    i: Matrix,
    sigma: Matrix,
    twisted: Option<TwistedSpace>,
}

/// Outcome of the exactness checks on an [`Extension`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub dims_ok: bool,
    pub i_rank: usize,
    pub sigma_rank: usize,
    /// `max |(sigma i)_jk|`
    pub sigma_i_residual: f64,
    /// Rank of `[i | basis of ker sigma]`; equals `dim E` when `ker sigma = im i`.
    pub exactness_rank: usize,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn ensure(&self) -> Result<()> {
        if self.passed {
            Ok(())
        } else {
            Err(Error::InvalidExtension(self.failures.join("; ")))
        }
    }
}

impl Extension {
    pub fn new(e: NormedSpace, g: NormedSpace, f: NormedSpace, i: Matrix, sigma: Matrix) -> Result<Self> {
        if i.shape() != (g.dim(), e.dim()) {
            return Err(Error::InvalidExtension(format!(
                "i is {}x{}, expected {}x{}",
                i.nrows(),
                i.ncols(),
                g.dim(),
                e.dim()
            )));
        }
        if sigma.shape() != (f.dim(), g.dim()) {
            return Err(Error::InvalidExtension(format!(
                "sigma is {}x{}, expected {}x{}",
                sigma.nrows(),
                sigma.ncols(),
                f.dim(),
                g.dim()
            )));
        }
        Ok(Self { e_space: e, g_space: g, f_space: f, i, sigma, twisted: None })
    }

    /// `E (+) F` with `i = [I; 0]`, `sigma = [0 I]` and the sum norm.
    pub fn split(e: NormedSpace, f: NormedSpace) -> Self {
        let (i, sigma) = split_matrices(e.dim(), f.dim());
        let g = NormedSpace::direct_sum(vec![e.clone(), f.clone()]);
        Self { e_space: e, g_space: g, f_space: f, i, sigma, twisted: None }
    }

    pub fn e_space(&self) -> &NormedSpace {
        &self.e_space
    }

    pub fn g_space(&self) -> &NormedSpace {
        &self.g_space
    }

    pub fn f_space(&self) -> &NormedSpace {
        &self.f_space
    }

    pub fn i(&self) -> &Matrix {
        &self.i
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn twisted_backing(&self) -> Option<&TwistedSpace> {
        self.twisted.as_ref()
    }

    pub(crate) fn set_twisted_backing(&mut self, t: TwistedSpace) {
        self.twisted = Some(t);
    }

    pub fn validate(&self) -> ValidationReport {
        validate_extension(self)
    }

    /// The selection `y -> (0, y)` of a twisted-backed extension, written in
    /// the linear coordinates of `G` as `y -> (h(y), y)`.
    pub fn canonical_selection(&self) -> Result<Selection> {
        let t =
            self.twisted.as_ref().ok_or_else(|| Error::InvalidExtension("extension has no twisted backing".into()))?;
        let h = t.phi().potential().ok_or(Error::NoPotential)?;
        selection_from_extension(self, SelectionMode::Nonlinear(h))
    }

    /// Block direct sum `E1 (+) E2 -> G1 (+) G2 -> F1 (+) F2`.
    pub fn direct_sum(a: &Extension, b: &Extension) -> Extension {
        Extension {
            e_space: NormedSpace::direct_sum(vec![a.e_space.clone(), b.e_space.clone()]),
            g_space: NormedSpace::direct_sum(vec![a.g_space.clone(), b.g_space.clone()]),
            f_space: NormedSpace::direct_sum(vec![a.f_space.clone(), b.f_space.clone()]),
            i: crate::linalg::block_diag(&a.i, &b.i),
            sigma: crate::linalg::block_diag(&a.sigma, &b.sigma),
            twisted: None,
        }
    }
}

pub fn validate_extension(ext: &Extension) -> ValidationReport {
    let (e, g, f) = (ext.e_space.dim(), ext.g_space.dim(), ext.f_space.dim());
    let mut failures = Vec::new();
    let dims_ok = g == e + f;
    if !dims_ok {
        failures.push(format!("dim G = {g} but dim E + dim F = {}", e + f));
    }
    let i_rank = rank(&ext.i, RANK_TOL);
    if i_rank != e {
        failures.push(format!("i has rank {i_rank}, not injective on dim E = {e}"));
    }
    let sigma_rank = rank(&ext.sigma, RANK_TOL);
    if sigma_rank != f {
        failures.push(format!("sigma has rank {sigma_rank}, not surjective onto dim F = {f}"));
    }
    let sigma_i_residual = max_abs(&(&ext.sigma * &ext.i));
    if sigma_i_residual > RANK_TOL {
        failures.push(format!("sigma i = 0 violated by {sigma_i_residual:e}"));
    }
    let kernel = kernel_basis(&ext.sigma, RANK_TOL);
    let exactness_rank = rank(&hstack(&ext.i, &kernel), RANK_TOL);
    if exactness_rank != e {
        failures.push(format!("rank [i | ker sigma] = {exactness_rank}, expected {e}"));
    }
    ValidationReport {
        passed: failures.is_empty(),
        dims_ok,
        i_rank,
        sigma_rank,
        sigma_i_residual,
        exactness_rank,
        failures,
    }
}

/// A homogeneous right inverse `p: F -> G` of `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    map: HomMap,
}

impl Selection {
    pub fn new(ext: &Extension, map: HomMap) -> Result<Self> {
        if map.domain().dim() != ext.f_space.dim() || map.codomain().dim() != ext.g_space.dim() {
            return Err(Error::SpaceMismatch(format!(
                "selection maps {} -> {}, extension needs {} -> {}",
                map.domain().dim(),
                map.codomain().dim(),
                ext.f_space.dim(),
                ext.g_space.dim()
            )));
        }
        Ok(Self { map })
    }

    pub fn map(&self) -> &HomMap {
        &self.map
    }

    pub fn apply(&self, y: &Vector) -> Vector {
        self.map.apply(y)
    }

    /// `max ||sigma p(y) - y||_inf` over seeded unit vectors.
    pub fn section_residual(&self, ext: &Extension, samples: usize, seed: u64) -> f64 {
        sample_sphere(&ext.f_space, samples, seed)
            .iter()
            .map(|y| (&ext.sigma * self.apply(y) - y).amax())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub enum SelectionMode {
    /// Minimum-norm linear right inverse `sigma^T (sigma sigma^T)^-1`.
    LinearPseudoinverse,
    /// `p_lin + i h` for a user map `h: F -> E`.
    Nonlinear(HomMap),
}

pub fn selection_from_extension(ext: &Extension, mode: SelectionMode) -> Result<Selection> {
    validate_extension(ext).ensure()?;
    let p_lin = right_inverse(&ext.sigma);
    let lin = HomMap::linear(ext.f_space.clone(), ext.g_space.clone(), p_lin)?;
    let map = match mode {
        SelectionMode::LinearPseudoinverse => lin,
        SelectionMode::Nonlinear(h) => {
            if h.domain().dim() != ext.f_space.dim() || h.codomain().dim() != ext.e_space.dim() {
                return Err(Error::SpaceMismatch(format!(
                    "seed map {} -> {} does not map F to E",
                    h.domain().dim(),
                    h.codomain().dim()
                )));
            }
            let h = HomMap::new(ext.f_space.clone(), ext.e_space.clone(), h.expr().clone())?;
            lin.sum(&h.postcompose(ext.i.clone(), ext.g_space.clone())?)?
        }
    };
    Selection::new(ext, map)
}

/// `phi(y1, y2) = L (p(y1 + y2) - p(y1) - p(y2))` with `L` a left inverse of `i`.
#[derive(Debug, Clone)]
pub struct ExtensionFactor {
    e_space: NormedSpace,
    f_space: NormedSpace,
    left_inverse: Matrix,
    p: HomMap,
    p_lin: Matrix,
    sigma_residual: f64,
}

impl ExtensionFactor {
    /// Largest `||sigma rho p||_inf` seen while validating the selection.
    pub fn sigma_residual(&self) -> f64 {
        self.sigma_residual
    }
}

impl FactorSystem for ExtensionFactor {
    fn f_space(&self) -> &NormedSpace {
        &self.f_space
    }

    fn e_space(&self) -> &NormedSpace {
        &self.e_space
    }

    fn apply(&self, y1: &Vector, y2: &Vector) -> Vector {
        let v = self.p.apply(&(y1 + y2)) - self.p.apply(y1) - self.p.apply(y2);
        &self.left_inverse * v
    }

    /// `L (p - p_lin)`, whose non-additivity is `phi`.
    fn potential(&self) -> Option<HomMap> {
        let g = self.p.codomain().clone();
        let lin = HomMap::linear(self.f_space.clone(), g, self.p_lin.clone()).ok()?;
        self.p.difference(&lin).ok()?.postcompose(self.left_inverse.clone(), self.e_space.clone()).ok()
    }

    fn is_trivial(&self) -> bool {
        self.p.is_linear()
    }
}

pub fn factor_from_extension(ext: &Extension, p: &Selection) -> Result<ExtensionFactor> {
    Selection::new(ext, p.map.clone())?;
    let left_inverse = left_inverse(&ext.i);
    let projector = &ext.i * &left_inverse;
    let pts = sample_sphere(&ext.f_space, 2 * SELECTION_SAMPLES, 0x5e1ec7);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1ec7);
    let mut worst = 0.0f64;
    let mut sigma_residual = 0.0f64;
    for w in pts.chunks(2) {
        let a = &w[0] * rng.random_range(0.25..4.0);
        let b = &w[1] * rng.random_range(0.25..4.0);
        let v = p.apply(&(&a + &b)) - p.apply(&a) - p.apply(&b);
        let scale = v.amax().max(1.0);
        sigma_residual = sigma_residual.max((&ext.sigma * &v).amax() / scale);
        worst = worst.max((&v - &projector * &v).amax() / scale);
    }
    if worst > SELECTION_TOL {
        return Err(Error::NotASelection { residual: worst });
    }
    Ok(ExtensionFactor {
        e_space: ext.e_space.clone(),
        f_space: ext.f_space.clone(),
        left_inverse,
        p: p.map.clone(),
        p_lin: right_inverse(&ext.sigma),
        sigma_residual,
    })
}

fn require_linear(t: &HomMap, what: &str) -> Result<Matrix> {
    t.as_matrix().ok_or_else(|| Error::InvalidConfig(format!("{what} must be a linear map, got `{t}`")))
}

/// Pushout together with the quotient map `pi: G (+) X -> G1`.
#[derive(Debug, Clone)]
pub struct PushoutParts {
    pub extension: Extension,
    /// Orthonormal rows; kernel is the anti-graph `{(i e, -T e)}`.
    pub projection: Matrix,
    g_dim: usize,
}

impl PushoutParts {
    /// `y -> pi(p(y), 0)`.
    pub fn transport(&self, p: &Selection) -> Result<Selection> {
        let top = self.projection.columns(0, self.g_dim).into_owned();
        let map = p.map.postcompose(top, self.extension.g_space.clone())?;
        Selection::new(&self.extension, map)
    }
}

/// Pushout of `ext` along a linear `t: E -> X`.
///
/// `G1 = (G (+) X) / {(i e, -T e)}` with `i1(x) = [(0, x)]` and
/// `sigma1[(g, x)] = sigma g`. The sign in the anti-graph makes the induced
/// factor system `T phi`.
pub fn pushout_parts(t: &HomMap, ext: &Extension) -> Result<PushoutParts> {
    if t.domain().dim() != ext.e_space.dim() {
        return Err(Error::SpaceMismatch(format!(
            "pushout map has domain {}, extension has dim E = {}",
            t.domain().dim(),
            ext.e_space.dim()
        )));
    }
    let tm = require_linear(t, "pushout map")?;
    validate_extension(ext).ensure()?;
    let x = t.codomain().clone();
    let (e, g, xd) = (ext.e_space.dim(), ext.g_space.dim(), x.dim());
    let gamma = vstack(&ext.i, &(-tm));
    let (r, q2) = complement_basis(&gamma, RANK_TOL);
    if r != e {
        return Err(Error::RankDeficient(format!("anti-graph has rank {r}, expected {e}")));
    }
    let pi = q2.transpose();
    let i1 = pi.columns(g, xd).into_owned();
    let sigma1 = &ext.sigma * q2.rows(0, g);
    let ambient = NormedSpace::direct_sum(vec![ext.g_space.clone(), x.clone()]);
    let g1 =
        NormedSpace::new(q2.ncols(), NormKind::Quotient { ambient: Box::new(ambient), kernel: gamma, complement: q2 })?;
    let extension = Extension::new(x, g1, ext.f_space.clone(), i1, sigma1)?;
    Ok(PushoutParts { extension, projection: pi, g_dim: g })
}

pub fn pushout(t: &HomMap, ext: &Extension) -> Result<Extension> {
    Ok(pushout_parts(t, ext)?.extension)
}

/// Pullback together with the inclusion `K: G1 -> G (+) X`.
#[derive(Debug, Clone)]
pub struct PullbackParts {
    pub extension: Extension,
    /// Orthonormal basis of `ker [sigma, -S]`.
    pub inclusion: Matrix,
    s: Matrix,
    g_dim: usize,
}

impl PullbackParts {
    /// `xi -> K^T (p(S xi), xi)`.
    pub fn transport(&self, p: &Selection) -> Result<Selection> {
        let g1 = self.extension.g_space.clone();
        let x = self.extension.f_space.clone();
        let top = self.inclusion.rows(0, self.g_dim).transpose();
        let bottom = self.inclusion.rows(self.g_dim, x.dim()).transpose();
        let through = p.map.precompose(self.s.clone(), x.clone())?.postcompose(top, g1.clone())?;
        let map = through.sum(&HomMap::linear(x, g1, bottom)?)?;
        Selection::new(&self.extension, map)
    }
}

/// Pullback of `ext` along a linear `s: X -> F`:
/// `G1 = {(g, x) : sigma g = S x}` with `i1 e = (i e, 0)` and `sigma1 (g, x) = x`.
pub fn pullback_parts(ext: &Extension, s: &HomMap) -> Result<PullbackParts> {
    if s.codomain().dim() != ext.f_space.dim() {
        return Err(Error::SpaceMismatch(format!(
            "pullback map has codomain {}, extension has dim F = {}",
            s.codomain().dim(),
            ext.f_space.dim()
        )));
    }
    let sm = require_linear(s, "pullback map")?;
    validate_extension(ext).ensure()?;
    let x = s.domain().clone();
    let (e, g, xd) = (ext.e_space.dim(), ext.g_space.dim(), x.dim());
    let k = kernel_basis(&hstack(&ext.sigma, &(-&sm)), RANK_TOL);
    if k.ncols() != e + xd {
        return Err(Error::RankDeficient(format!("fiber product has dimension {}, expected {}", k.ncols(), e + xd)));
    }
    let kt = k.transpose();
    let i1 = kt.columns(0, g) * &ext.i;
    let sigma1 = k.rows(g, xd).into_owned();
    let ambient = NormedSpace::direct_sum(vec![ext.g_space.clone(), x.clone()]);
    let g1 = NormedSpace::new(k.ncols(), NormKind::Subspace { ambient: Box::new(ambient), basis: k.clone() })?;
    let extension = Extension::new(ext.e_space.clone(), g1, x, i1, sigma1)?;
    Ok(PullbackParts { extension, inclusion: k, s: sm, g_dim: g })
}

pub fn pullback(ext: &Extension, s: &HomMap) -> Result<Extension> {
    Ok(pullback_parts(ext, s)?.extension)
}

/// Intermediate stages of a Baer sum.
#[derive(Debug, Clone)]
pub struct BaerParts {
    pub direct: Extension,
    pub pushout: PushoutParts,
    pub pullback: PullbackParts,
}

impl BaerParts {
    pub fn extension(&self) -> &Extension {
        &self.pullback.extension
    }

    /// Carries selections `p1`, `p2` of the summands to the Baer sum.
    pub fn transport(&self, p1: &Selection, p2: &Selection) -> Result<Selection> {
        let direct = direct_sum_selection(&self.direct, p1, p2)?;
        self.pullback.transport(&self.pushout.transport(&direct)?)
    }
}

fn direct_sum_selection(direct: &Extension, p1: &Selection, p2: &Selection) -> Result<Selection> {
    let (f1, f2) = (p1.map.domain().dim(), p2.map.domain().dim());
    let (g1, g2) = (p1.map.codomain().dim(), p2.map.codomain().dim());
    let ff = direct.f_space.clone();
    let gg = direct.g_space.clone();
    let proj1 = Matrix::identity(f1, f1 + f2);
    let mut proj2 = Matrix::zeros(f2, f1 + f2);
    proj2.view_mut((0, f1), (f2, f2)).fill_with_identity();
    let inj1 = Matrix::identity(g1 + g2, g1);
    let mut inj2 = Matrix::zeros(g1 + g2, g2);
    inj2.view_mut((g1, 0), (g2, g2)).fill_with_identity();
    let a = p1.map.precompose(proj1, ff.clone())?.postcompose(inj1, gg.clone())?;
    let b = p2.map.precompose(proj2, ff)?.postcompose(inj2, gg)?;
    Selection::new(direct, a.sum(&b)?)
}

/// `nabla (ext1 (+) ext2) delta`.
pub fn baer_parts(ext1: &Extension, ext2: &Extension) -> Result<BaerParts> {
    if ext1.e_space != ext2.e_space || ext1.f_space != ext2.f_space {
        return Err(Error::SpaceMismatch("Baer sum needs extensions of the same E by the same F".into()));
    }
    let e = ext1.e_space.clone();
    let f = ext1.f_space.clone();
    let (ed, fd) = (e.dim(), f.dim());
    let direct = Extension::direct_sum(ext1, ext2);
    let nabla =
        HomMap::linear(direct.e_space.clone(), e, hstack(&Matrix::identity(ed, ed), &Matrix::identity(ed, ed)))?;
    let diag = HomMap::linear(f, direct.f_space.clone(), vstack(&Matrix::identity(fd, fd), &Matrix::identity(fd, fd)))?;
    let po = pushout_parts(&nabla, &direct)?;
    let pb = pullback_parts(&po.extension, &diag)?;
    Ok(BaerParts { direct, pushout: po, pullback: pb })
}

pub fn baer_sum(ext1: &Extension, ext2: &Extension) -> Result<Extension> {
    Ok(baer_parts(ext1, ext2)?.pullback.extension)
}

/// A least-squares congruence candidate and its residuals.
#[derive(Debug, Clone, Serialize)]
pub struct Congruence {
    #[serde(with = "crate::linalg::serde_matrix")]
    pub candidate: Matrix,
    pub residual_i: f64,
    pub residual_sigma: f64,
    /// Largest `||h A_k - B_k h||` over the extra intertwining constraints.
    pub residual_action: f64,
    pub min_singular_value: f64,
}

impl Congruence {
    pub fn max_residual(&self) -> f64 {
        self.residual_i.max(self.residual_sigma).max(self.residual_action)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.max_residual() <= tol && self.min_singular_value > tol
    }

    /// The witness when it passes at [`CONGRUENCE_TOL`].
    pub fn witness(&self) -> Option<&Matrix> {
        self.holds(CONGRUENCE_TOL).then_some(&self.candidate)
    }
}

/// Solves `h i1 = i2`, `sigma2 h = sigma1` and `h A_k = B_k h` for every
/// `(A_k, B_k)` in `actions`, in the least-squares sense.
pub fn solve_congruence(ext1: &Extension, ext2: &Extension, actions: &[(Matrix, Matrix)]) -> Result<Congruence> {
    if ext1.e_space.dim() != ext2.e_space.dim() || ext1.f_space.dim() != ext2.f_space.dim() {
        return Err(Error::SpaceMismatch("congruence needs extensions of the same E by the same F".into()));
    }
    let (g1, g2) = (ext1.g_space.dim(), ext2.g_space.dim());
    if g1 != g2 {
        return Err(Error::SpaceMismatch(format!("middle spaces have dimensions {g1} and {g2}")));
    }
    let g = g1;
    let id = Matrix::identity(g, g);
    // vec(h X) = (X^T (x) I) vec h,  vec(Y h) = (I (x) Y) vec h
    let mut blocks = vec![kron(&ext1.i.transpose(), &id), kron(&id, &ext2.sigma)];
    let mut rhs = vec![vec_of(&ext2.i), vec_of(&ext1.sigma)];
    for (a, b) in actions {
        if a.shape() != (g, g) || b.shape() != (g, g) {
            return Err(Error::SpaceMismatch("action matrices do not act on G".into()));
        }
        blocks.push(kron(&a.transpose(), &id) - kron(&id, b));
        rhs.push(Vector::zeros(g * g));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut system = Matrix::zeros(rows, g * g);
    let mut target = Vector::zeros(rows);
    let mut offset = 0;
    for (b, r) in blocks.iter().zip(&rhs) {
        system.view_mut((offset, 0), b.shape()).copy_from(b);
        target.rows_mut(offset, r.len()).copy_from(r);
        offset += b.nrows();
    }
    let h = unvec(&lstsq(&system, &target), g, g);
    let residual_action = actions.iter().map(|(a, b)| max_abs(&(&h * a - b * &h))).fold(0.0, f64::max);
    Ok(Congruence {
        residual_i: max_abs(&(&h * &ext1.i - &ext2.i)),
        residual_sigma: max_abs(&(&ext2.sigma * &h - &ext1.sigma)),
        residual_action,
        min_singular_value: min_singular_value(&h),
        candidate: h,
    })
}

pub fn find_congruence(ext1: &Extension, ext2: &Extension) -> Result<Congruence> {
    solve_congruence(ext1, ext2, &[])
}

/// A factor-backed extension written in a random basis of `G`, with the
/// selection carrying its factor system.
#[derive(Debug, Clone)]
pub struct RandomExtension {
    pub extension: Extension,
    pub selection: Selection,
    /// `rho h` for the potential `h = A kp + C` behind the extension.
    pub phi: RhoOf,
}

/// `E_phi` for `phi = rho(A kp + C)` with Gaussian `A, C : F -> E`, pushed
/// through a random basis change `P = I + 0.3 N` of `G`.
pub fn random_factor_extension(e_dim: usize, f_dim: usize, seed: u64) -> Result<RandomExtension> {
    if e_dim == 0 || f_dim == 0 {
        return Err(Error::InvalidConfig("extension dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (es, fs) = (NormedSpace::l2(e_dim), NormedSpace::l2(f_dim));
    let a = gaussian(e_dim, f_dim);
    let c = gaussian(e_dim, f_dim);
    let g = e_dim + f_dim;
    let basis = Matrix::identity(g, g) + gaussian(g, g) * 0.3;
    let h =
        HomMap::kalton_peck(fs.clone()).postcompose(a, es.clone())?.sum(&HomMap::linear(fs.clone(), es.clone(), c)?)?;
    let base = crate::twisted::extension_from_factor(&es, &fs, Arc::new(RhoOf::new(h.clone())))?;
    let p = base.canonical_selection()?;
    let inv =
        basis.clone().try_inverse().ok_or_else(|| Error::RankDeficient("random basis change is singular".into()))?;
    let gs = NormedSpace::l2(g);
    let extension = Extension::new(es, gs.clone(), fs, &basis * base.i(), base.sigma() * inv)?;
    let selection = Selection::new(&extension, p.map().postcompose(basis, gs)?)?;
    Ok(RandomExtension { extension, selection, phi: RhoOf::new(h) })
}

#[derive(Serialize, Deserialize)]
struct ExtensionRepr {
    #[serde(rename = "E")]
    e: NormedSpace,
    #[serde(rename = "F")]
    f: NormedSpace,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    g: Option<NormedSpace>,
    #[serde(with = "crate::linalg::serde_matrix")]
    i: Matrix,
    #[serde(with = "crate::linalg::serde_matrix")]
    sigma: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<String>,
}

impl Serialize for Extension {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let default_g = NormedSpace::direct_sum(vec![self.e_space.clone(), self.f_space.clone()]);
        ExtensionRepr {
            e: self.e_space.clone(),
            f: self.f_space.clone(),
            g: (self.g_space != default_g).then(|| self.g_space.clone()),
            i: self.i.clone(),
            sigma: self.sigma.clone(),
            phi: self.twisted.as_ref().and_then(|t| t.phi().potential()).map(|h| h.to_text()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Extension {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ExtensionRepr::deserialize(d)?;
        let g = r.g.unwrap_or_else(|| NormedSpace::direct_sum(vec![r.e.clone(), r.f.clone()]));
        let mut ext = Extension::new(r.e.clone(), g, r.f.clone(), r.i, r.sigma).map_err(D::Error::custom)?;
        if let Some(text) = r.phi {
            let h = parse_map(&text, r.f, r.e).map_err(D::Error::custom)?;
            ext.twisted = Some(TwistedSpace::new(std::sync::Arc::new(RhoOf::new(h))));
        }
        Ok(ext)
    }
}
