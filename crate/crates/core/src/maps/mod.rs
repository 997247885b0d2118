//! Homogeneous bounded maps between finite-dimensional spaces.
//!
//! Every map is an expression tree over a small set of node kinds, so maps
//! can be printed, parsed and shipped in configs and certificates. The text
//! form is
//!
//! ```text
//! expr   := "zero" | "kp" | "linear(" matrix ")" | "delta(" expr ")"
//!         | "scale(" number "," expr ")" | "sum(" expr "," expr ")"
//!         | "pre(" matrix "," expr ")" | "post(" matrix "," expr ")"
//! matrix := "[[" row ("],[" row)* "]]"
//! ```

mod factor;
mod parse;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::spaces::{sample_sphere, NormedSpace};

pub use factor::{
    axiom5_ratio, check_factor_axioms, factor_norm_lower, rho, rho_triangle_bound, AxiomReport, FactorNormLower,
    FactorSystem, RhoOf,
};
pub use parse::parse_expr;

/// Node kinds of a map expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Zero,
    Linear(Matrix),
    /// `y_i * ln(||y||_2 / |y_i|)`, with 0 for vanishing coordinates.
    KaltonPeck,
    /// `(x, y) -> (h(x), h(y), x ||y|| / sqrt(||x||^2 + ||y||^2))`.
    EnfloDelta(Box<Expr>),
    Scale(f64, Box<Expr>),
    Sum(Box<Expr>, Box<Expr>),
    /// `inner(M x)`
    PreLinear(Matrix, Box<Expr>),
    /// `M inner(x)`
    PostLinear(Matrix, Box<Expr>),
}

impl Expr {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Expr::Zero => "zero",
            Expr::Linear(_) => "linear",
            Expr::KaltonPeck => "kp",
            Expr::EnfloDelta(_) => "delta",
            Expr::Scale(..) => "scale",
            Expr::Sum(..) => "sum",
            Expr::PreLinear(..) => "pre",
            Expr::PostLinear(..) => "post",
        }
    }

    /// Whether the tree is built from linear nodes only.
    pub fn is_linear(&self) -> bool {
        match self {
            Expr::Zero | Expr::Linear(_) => true,
            Expr::KaltonPeck | Expr::EnfloDelta(_) => false,
            Expr::Scale(_, e) | Expr::PreLinear(_, e) | Expr::PostLinear(_, e) => e.is_linear(),
            Expr::Sum(a, b) => a.is_linear() && b.is_linear(),
        }
    }

    fn node_label(&self) -> String {
        let text = self.to_string();
        if text.len() > 60 {
            format!("{}...", &text[..57])
        } else {
            text
        }
    }

    /// Checks that the tree maps `din` to `dout`. `euclidean` says whether
    /// the domain at this node carries the 2-norm.
    fn check(&self, din: usize, dout: usize, euclidean: bool) -> Result<()> {
        let fail = |msg: String| Error::NodeDimension { node: self.node_label(), msg };
        match self {
            Expr::Zero => Ok(()),
            Expr::Linear(m) => {
                if m.shape() != (dout, din) {
                    return Err(fail(format!(
                        "matrix is {}x{} but the node maps {din} -> {dout}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(())
            }
            Expr::KaltonPeck => {
                if din != dout {
                    return Err(fail(format!("kp needs equal dimensions, got {din} -> {dout}")));
                }
                Ok(())
            }
            Expr::EnfloDelta(inner) => {
                if !euclidean {
                    return Err(Error::NonEuclidean(self.node_label()));
                }
                if din % 2 != 0 {
                    return Err(fail(format!("delta needs an even domain dimension, got {din}")));
                }
                let m = din / 2;
                if dout < m || (dout - m) % 2 != 0 {
                    return Err(fail(format!("delta over a {m}-dimensional block cannot produce dimension {dout}")));
                }
                inner.check(m, (dout - m) / 2, true)
            }
            Expr::Scale(c, inner) => {
                if !c.is_finite() {
                    return Err(fail("scale factor must be finite".into()));
                }
                inner.check(din, dout, euclidean)
            }
            Expr::Sum(a, b) => {
                a.check(din, dout, euclidean)?;
                b.check(din, dout, euclidean)
            }
            Expr::PreLinear(m, inner) => {
                if m.ncols() != din {
                    return Err(fail(format!("pre matrix has {} columns but the node domain is {din}", m.ncols())));
                }
                inner.check(m.nrows(), dout, true)
            }
            Expr::PostLinear(m, inner) => {
                if m.nrows() != dout {
                    return Err(fail(format!("post matrix has {} rows but the node codomain is {dout}", m.nrows())));
                }
                inner.check(din, m.ncols(), euclidean)
            }
        }
    }

    /// Evaluates a dimension-checked tree.
    pub(crate) fn eval(&self, x: &Vector, dout: usize) -> Vector {
        match self {
            Expr::Zero => Vector::zeros(dout),
            Expr::Linear(m) => m * x,
            Expr::KaltonPeck => kalton_peck(x),
            Expr::EnfloDelta(inner) => {
                let m = x.len() / 2;
                let r = (dout - m) / 2;
                let a = x.rows(0, m).into_owned();
                let b = x.rows(m, m).into_owned();
                let ha = inner.eval(&a, r);
                let hb = inner.eval(&b, r);
                let na = a.norm();
                let nb = b.norm();
                let denom = na.hypot(nb);
                let third = if denom > 0.0 { a * (nb / denom) } else { Vector::zeros(m) };
                let mut out = Vector::zeros(dout);
                out.rows_mut(0, r).copy_from(&ha);
                out.rows_mut(r, r).copy_from(&hb);
                out.rows_mut(2 * r, m).copy_from(&third);
                out
            }
            Expr::Scale(c, inner) => inner.eval(x, dout) * *c,
            Expr::Sum(a, b) => a.eval(x, dout) + b.eval(x, dout),
            Expr::PreLinear(m, inner) => inner.eval(&(m * x), dout),
            Expr::PostLinear(m, inner) => m * inner.eval(x, m.ncols()),
        }
    }

    fn write_pretty(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        match self {
            Expr::Zero | Expr::KaltonPeck | Expr::Linear(_) => {
                out.push_str(&pad);
                out.push_str(&self.to_string());
                out.push('\n');
            }
            Expr::EnfloDelta(inner) => {
                out.push_str(&format!("{pad}delta(\n"));
                inner.write_pretty(out, depth + 1);
                out.push_str(&format!("{pad})\n"));
            }
            Expr::Scale(c, inner) => {
                out.push_str(&format!("{pad}scale({c},\n"));
                inner.write_pretty(out, depth + 1);
                out.push_str(&format!("{pad})\n"));
            }
            Expr::Sum(a, b) => {
                out.push_str(&format!("{pad}sum(\n"));
                a.write_pretty(out, depth + 1);
                b.write_pretty(out, depth + 1);
                out.push_str(&format!("{pad})\n"));
            }
            Expr::PreLinear(m, inner) | Expr::PostLinear(m, inner) => {
                out.push_str(&format!("{pad}{}({},\n", self.kind_name(), MatrixText(m)));
                inner.write_pretty(out, depth + 1);
                out.push_str(&format!("{pad})\n"));
            }
        }
    }
}

fn kalton_peck(y: &Vector) -> Vector {
    let n = y.norm();
    y.map(|yi| if yi == 0.0 { 0.0 } else { yi * (n / yi.abs()).ln() })
}

struct MatrixText<'a>(&'a Matrix);

impl fmt::Display for MatrixText<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        f.write_str("[")?;
        for i in 0..m.nrows() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str("[")?;
            for j in 0..m.ncols() {
                if j > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", m[(i, j)])?;
            }
            f.write_str("]")?;
        }
        f.write_str("]")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Zero => f.write_str("zero"),
            Expr::KaltonPeck => f.write_str("kp"),
            Expr::Linear(m) => write!(f, "linear({})", MatrixText(m)),
            Expr::EnfloDelta(e) => write!(f, "delta({e})"),
            Expr::Scale(c, e) => write!(f, "scale({c},{e})"),
            Expr::Sum(a, b) => write!(f, "sum({a},{b})"),
            Expr::PreLinear(m, e) => write!(f, "pre({},{e})", MatrixText(m)),
            Expr::PostLinear(m, e) => write!(f, "post({},{e})", MatrixText(m)),
        }
    }
}

/// A continuous, homogeneous, bounded map between two normed spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct HomMap {
    domain: NormedSpace,
    codomain: NormedSpace,
    expr: Expr,
}

impl HomMap {
    pub fn new(domain: NormedSpace, codomain: NormedSpace, expr: Expr) -> Result<Self> {
        expr.check(domain.dim(), codomain.dim(), domain.is_euclidean())?;
        Ok(Self { domain, codomain, expr })
    }

    pub fn zero(domain: NormedSpace, codomain: NormedSpace) -> Self {
        Self { domain, codomain, expr: Expr::Zero }
    }

    pub fn linear(domain: NormedSpace, codomain: NormedSpace, m: Matrix) -> Result<Self> {
        Self::new(domain, codomain, Expr::Linear(m))
    }

    /// The Kalton-Peck map on `space`.
    pub fn kalton_peck(space: NormedSpace) -> Self {
        Self { codomain: space.clone(), domain: space, expr: Expr::KaltonPeck }
    }

    pub fn domain(&self) -> &NormedSpace {
        &self.domain
    }

    pub fn codomain(&self) -> &NormedSpace {
        &self.codomain
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn is_linear(&self) -> bool {
        self.expr.is_linear()
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        self.domain.check_dim(x)?;
        Ok(self.expr.eval(x, self.codomain.dim()))
    }

    /// Evaluation without the dimension check; panics on mismatch.
    pub fn apply(&self, x: &Vector) -> Vector {
        assert_eq!(x.len(), self.domain.dim(), "HomMap::apply dimension mismatch");
        self.expr.eval(x, self.codomain.dim())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::new(self.domain.clone(), self.codomain.clone(), Expr::Scale(c, Box::new(self.expr.clone())))
    }

    pub fn sum(&self, other: &HomMap) -> Result<Self> {
        if other.domain.dim() != self.domain.dim() || other.codomain.dim() != self.codomain.dim() {
            return Err(Error::NodeDimension {
                node: format!("sum({},{})", self.expr.node_label(), other.expr.node_label()),
                msg: "summands have different shapes".into(),
            });
        }
        Self::new(
            self.domain.clone(),
            self.codomain.clone(),
            Expr::Sum(Box::new(self.expr.clone()), Box::new(other.expr.clone())),
        )
    }

    /// `self - other`
    pub fn difference(&self, other: &HomMap) -> Result<Self> {
        self.sum(&other.scale(-1.0)?)
    }

    /// `self(M x)` on a new domain.
    pub fn precompose(&self, m: Matrix, domain: NormedSpace) -> Result<Self> {
        Self::new(domain, self.codomain.clone(), Expr::PreLinear(m, Box::new(self.expr.clone())))
    }

    /// `M self(x)` into a new codomain.
    pub fn postcompose(&self, m: Matrix, codomain: NormedSpace) -> Result<Self> {
        Self::new(self.domain.clone(), codomain, Expr::PostLinear(m, Box::new(self.expr.clone())))
    }

    /// The matrix of a linear map, read off the standard basis.
    pub fn as_matrix(&self) -> Option<Matrix> {
        if !self.is_linear() {
            return None;
        }
        let n = self.domain.dim();
        let mut m = Matrix::zeros(self.codomain.dim(), n);
        for j in 0..n {
            let mut e = Vector::zeros(n);
            e[j] = 1.0;
            m.set_column(j, &self.apply(&e));
        }
        Some(m)
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        self.expr.to_string()
    }

    /// Indented multi-line rendering.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        self.expr.write_pretty(&mut out, 0);
        out
    }
}

impl fmt::Display for HomMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

/// Parses `text` as a map from `domain` to `codomain`.
pub fn parse_map(text: &str, domain: NormedSpace, codomain: NormedSpace) -> Result<HomMap> {
    HomMap::new(domain, codomain, parse_expr(text)?)
}

/// Evaluates `h` at `x`, checking dimensions.
pub fn eval_map(h: &HomMap, x: &Vector) -> Result<Vector> {
    h.eval(x)
}

/// Lower estimate of `sup ||h(x)|| / ||x||` over seeded unit-sphere samples.
pub fn map_norm(h: &HomMap, samples: usize, seed: u64) -> f64 {
    let pts = sample_sphere(h.domain(), samples.max(1), seed);
    pts.par_iter().map(|x| h.codomain().norm_unchecked(h.apply(x).as_slice())).reduce(|| 0.0, f64::max)
}

/// Serialized form: spaces plus DSL text.
#[derive(Serialize, Deserialize)]
struct MapRepr {
    domain: NormedSpace,
    codomain: NormedSpace,
    map: String,
}

impl Serialize for HomMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MapRepr { domain: self.domain.clone(), codomain: self.codomain.clone(), map: self.to_text() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HomMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MapRepr::deserialize(d)?;
        parse_map(&r.map, r.domain, r.codomain).map_err(serde::de::Error::custom)
    }
}
