//! TOML experiment configs: one experiment at the top level, or a batch
//! under `[[experiments]]`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use twistlab_core::linalg::{block_diag, matrix_from_rows, matrix_to_rows};
use twistlab_core::{parse_map, GrowthParams, HomMap, Matrix, NormedSpace};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Kind {
    Axioms,
    TwistedNorm,
    ExtAlgebra,
    EnfloGrowth,
    GrouprepRoundtrip,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Axioms => "axioms",
            Kind::TwistedNorm => "twisted_norm",
            Kind::ExtAlgebra => "ext_algebra",
            Kind::EnfloGrowth => "enflo_growth",
            Kind::GrouprepRoundtrip => "grouprep_roundtrip",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: Kind,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub parameters: toml::Table,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Batch {
    experiments: Vec<ExperimentConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AxiomsParams {
    /// Potential `h`; the experiment checks `phi = rho h`.
    pub map: String,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codomain_dim: Option<usize>,
    pub p: f64,
    pub samples: usize,
    pub norm_configs: usize,
    pub refine_steps: usize,
    pub tol: f64,
}

impl Default for AxiomsParams {
    fn default() -> Self {
        Self {
            map: "kp".into(),
            dim: 2,
            codomain_dim: None,
            p: 2.0,
            samples: 10_000,
            norm_configs: 256,
            refine_steps: 20,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwistedNormParams {
    pub map: String,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codomain_dim: Option<usize>,
    pub p: f64,
    pub samples: usize,
    pub split_depth: usize,
    pub x_scale: f64,
}

impl Default for TwistedNormParams {
    fn default() -> Self {
        Self { map: "kp".into(), dim: 2, codomain_dim: None, p: 2.0, samples: 20, split_depth: 4, x_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtAlgebraParams {
    pub e_dim: usize,
    pub f_dim: usize,
    pub count: usize,
    pub commute_pairs: usize,
    pub tol: f64,
}

impl Default for ExtAlgebraParams {
    fn default() -> Self {
        Self { e_dim: 3, f_dim: 3, count: 10, commute_pairs: 5, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnfloParams {
    pub h0: String,
    pub dim: usize,
    #[serde(flatten)]
    pub growth: GrowthParams,
}

impl Default for EnfloParams {
    fn default() -> Self {
        Self { h0: "zero".into(), dim: 1, growth: GrowthParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Cyclic,
    Dihedral,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub element: usize,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrouprepParams {
    pub group: GroupKind,
    pub n: usize,
    /// Matrices on `G = E + F` leaving the first half invariant; empty means
    /// the sheared rotation (and flip) example.
    pub generators: Vec<Generator>,
    /// Nonlinear part of the selection `y -> (selection(y), y)`.
    pub selection: String,
    /// Added to `selection` for the selection-change check.
    pub shift: String,
    pub samples: usize,
    pub tol: f64,
}

impl Default for GrouprepParams {
    fn default() -> Self {
        Self {
            group: GroupKind::Cyclic,
            n: 4,
            generators: Vec::new(),
            selection: "kp".into(),
            shift: "scale(0.4,kp)".into(),
            samples: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Plan {
    Axioms(AxiomsParams),
    TwistedNorm(TwistedNormParams),
    ExtAlgebra(ExtAlgebraParams),
    EnfloGrowth(EnfloParams),
    GrouprepRoundtrip(GrouprepParams),
}

impl Plan {
    /// The fully resolved parameter table, defaults included.
    pub fn resolved(&self) -> serde_json::Value {
        let v = match self {
            Plan::Axioms(p) => serde_json::to_value(p),
            Plan::TwistedNorm(p) => serde_json::to_value(p),
            Plan::ExtAlgebra(p) => serde_json::to_value(p),
            Plan::EnfloGrowth(p) => serde_json::to_value(p),
            Plan::GrouprepRoundtrip(p) => serde_json::to_value(p),
        };
        v.expect("parameter structs serialize")
    }

    fn to_table(&self) -> toml::Table {
        let v = match self {
            Plan::Axioms(p) => toml::Table::try_from(p),
            Plan::TwistedNorm(p) => toml::Table::try_from(p),
            Plan::ExtAlgebra(p) => toml::Table::try_from(p),
            Plan::EnfloGrowth(p) => toml::Table::try_from(p),
            Plan::GrouprepRoundtrip(p) => toml::Table::try_from(p),
        };
        v.expect("parameter structs serialize")
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub kind: Kind,
    pub seed: u64,
    /// As written in the config.
    pub output_dir_raw: PathBuf,
    /// Resolved against the config file's directory.
    pub output_dir: PathBuf,
    pub plan: Plan,
}

impl Experiment {
    pub fn manifest_config(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "kind": self.kind.name(),
            "seed": self.seed,
            "output_dir": self.output_dir_raw,
            "parameters": self.plan.resolved(),
        })
    }
}

fn parse_table<T: DeserializeOwned>(kind: Kind, table: &toml::Table) -> CliResult<T> {
    table.clone().try_into().map_err(|e| CliError::Config(format!("parameters for `{}`: {}", kind.name(), e.message())))
}

pub fn space(dim: usize, p: f64) -> CliResult<NormedSpace> {
    if dim == 0 {
        return Err(CliError::Config("dimensions must be positive".into()));
    }
    if p == 2.0 {
        Ok(NormedSpace::l2(dim))
    } else {
        NormedSpace::lp(dim, p).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn map_on(text: &str, domain: NormedSpace, codomain: NormedSpace) -> CliResult<HomMap> {
    parse_map(text, domain, codomain).map_err(|e| CliError::Config(format!("map `{text}`: {e}")))
}

fn positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::Config(format!("`{name}` must be positive")));
    }
    Ok(())
}

fn tolerance(v: f64) -> CliResult<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(CliError::Config(format!("tolerance must be positive and finite, got {v}")));
    }
    Ok(())
}

/// `S diag(A, B) S^-1` with the shear `S = [[I, K], [0, I]]`.
fn sheared(a: &Matrix, k: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut s = Matrix::identity(2 * n, 2 * n);
    s.view_mut((0, n), (n, n)).copy_from(k);
    let si = s.clone().try_inverse().expect("shears are invertible");
    &s * block_diag(a, a) * si
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-15 {
        0.0
    } else {
        v
    }
}

pub fn default_generators(group: GroupKind, n: usize) -> Vec<Generator> {
    let k = Matrix::from_row_slice(2, 2, &[0.4, -0.9, 1.3, 0.25]);
    let t = std::f64::consts::TAU / n as f64;
    let (c, s) = (snap(t.cos()), snap(t.sin()));
    let rot = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let mut gens = vec![Generator { element: 1 % n.max(1), matrix: matrix_to_rows(&sheared(&rot, &k)) }];
    if group == GroupKind::Dihedral {
        let flip = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        gens.push(Generator { element: n, matrix: matrix_to_rows(&sheared(&flip, &k)) });
    }
    gens
}

pub fn generator_matrices(gens: &[Generator]) -> CliResult<Vec<(usize, Matrix)>> {
    gens.iter()
        .map(|g| {
            let m =
                matrix_from_rows(&g.matrix).map_err(|e| CliError::Config(format!("generator {}: {e}", g.element)))?;
            Ok((g.element, m))
        })
        .collect()
}

fn validate(kind: Kind, table: &toml::Table) -> CliResult<Plan> {
    match kind {
        Kind::Axioms => {
            let mut p: AxiomsParams = parse_table(kind, table)?;
            let cod = *p.codomain_dim.get_or_insert(p.dim);
            map_on(&p.map, space(p.dim, p.p)?, space(cod, p.p)?)?;
            positive("samples", p.samples)?;
            positive("norm_configs", p.norm_configs)?;
            tolerance(p.tol)?;
            Ok(Plan::Axioms(p))
        }
        Kind::TwistedNorm => {
            let mut p: TwistedNormParams = parse_table(kind, table)?;
            let cod = *p.codomain_dim.get_or_insert(p.dim);
            map_on(&p.map, space(p.dim, p.p)?, space(cod, p.p)?)?;
            positive("samples", p.samples)?;
            positive("split_depth", p.split_depth)?;
            if !p.x_scale.is_finite() {
                return Err(CliError::Config("`x_scale` must be finite".into()));
            }
            Ok(Plan::TwistedNorm(p))
        }
        Kind::ExtAlgebra => {
            let p: ExtAlgebraParams = parse_table(kind, table)?;
            positive("e_dim", p.e_dim)?;
            positive("f_dim", p.f_dim)?;
            positive("count", p.count)?;
            if p.e_dim > 8 || p.f_dim > 8 {
                return Err(CliError::Config("`e_dim` and `f_dim` are limited to 8".into()));
            }
            tolerance(p.tol)?;
            Ok(Plan::ExtAlgebra(p))
        }
        Kind::EnfloGrowth => {
            let mut rest = table.clone();
            let mut p = EnfloParams::default();
            if let Some(v) = rest.remove("h0") {
                p.h0 = v.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("`h0`: {}", e.message())))?;
            }
            if let Some(v) = rest.remove("dim") {
                p.dim =
                    v.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("`dim`: {}", e.message())))?;
            }
            p.growth = parse_table(kind, &rest)?;
            p.growth.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let s = space(p.dim, 2.0)?;
            map_on(&p.h0, s.clone(), s)?;
            Ok(Plan::EnfloGrowth(p))
        }
        Kind::GrouprepRoundtrip => {
            let mut p: GrouprepParams = parse_table(kind, table)?;
            positive("n", p.n)?;
            positive("samples", p.samples)?;
            tolerance(p.tol)?;
            if p.generators.is_empty() {
                p.generators = default_generators(p.group, p.n);
            }
            let gens = generator_matrices(&p.generators)?;
            let g = gens[0].1.nrows();
            if g % 2 != 0 || gens.iter().any(|(_, m)| m.shape() != (g, g)) {
                return Err(CliError::Config("generators must be square of one even size 2m".into()));
            }
            let half = NormedSpace::l2(g / 2);
            map_on(&p.selection, half.clone(), half.clone())?;
            map_on(&p.shift, half.clone(), half)?;
            Ok(Plan::GrouprepRoundtrip(p))
        }
    }
}

fn resolve(cfg: ExperimentConfig, base: &Path) -> CliResult<Experiment> {
    let plan = validate(cfg.kind, &cfg.parameters)?;
    let output_dir = if cfg.output_dir.is_absolute() { cfg.output_dir.clone() } else { base.join(&cfg.output_dir) };
    Ok(Experiment {
        name: cfg.name.unwrap_or_else(|| cfg.kind.name().to_string()),
        kind: cfg.kind,
        seed: cfg.seed,
        output_dir_raw: cfg.output_dir,
        output_dir,
        plan,
    })
}

/// Parses and validates every experiment in `text` before anything runs.
pub fn load_str(text: &str, base: &Path) -> CliResult<Vec<Experiment>> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let configs = if table.contains_key("experiments") {
        let b: Batch = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if b.experiments.is_empty() {
            return Err(CliError::Config("`experiments` is empty".into()));
        }
        b.experiments
    } else {
        vec![table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?]
    };
    let experiments = configs
        .into_iter()
        .enumerate()
        .map(|(k, c)| resolve(c, base).map_err(|e| CliError::Config(format!("experiment {k}: {e}"))))
        .collect::<CliResult<Vec<_>>>()?;
    let mut dirs = BTreeSet::new();
    for e in &experiments {
        if !dirs.insert(e.output_dir.clone()) {
            return Err(CliError::Config(format!("output_dir {} is used twice", e.output_dir.display())));
        }
    }
    Ok(experiments)
}

pub fn load(path: &Path) -> CliResult<Vec<Experiment>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    load_str(&text, &base)
}

/// Reference config for `kind` with every parameter at its default.
pub fn demo(kind: Kind) -> String {
    let plan = validate(kind, &toml::Table::new()).expect("defaults validate");
    let cfg = ExperimentConfig {
        name: None,
        kind,
        seed: 1,
        output_dir: PathBuf::from(format!("out/{}", kind.name())),
        parameters: plan.to_table(),
    };
    toml::to_string(&cfg).expect("configs serialize")
}
