//! One runner per experiment kind, each producing rows, certificates and an
//! optional plot.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;
use twistlab_core::enflo::enflo_growth;
use twistlab_core::extops::{
    baer_parts, factor_from_extension, find_congruence, pullback_parts, pushout_parts, random_factor_extension,
    selection_from_extension,
};
use twistlab_core::grouprep::{
    check_cocycle, check_compatibility, equivalent_representations, invariant_extension, psi_cocycle, reconstruct,
    CoboundaryStatus,
};
use twistlab_core::maps::{check_factor_axioms, factor_norm_lower};
use twistlab_core::spaces::sample_sphere;
use twistlab_core::{
    Extension, FactorSystem, FiniteGroup, HomMap, Matrix, NormedSpace, Pair, Representation, RhoOf, SelectionMode,
    TwistedSpace, Vector,
};

use crate::certificates::Certificate;
use crate::config::{
    generator_matrices, map_on, space, AxiomsParams, EnfloParams, Experiment, ExtAlgebraParams, GroupKind,
    GrouprepParams, Plan, TwistedNormParams,
};
use crate::error::{CliError, CliResult};
use crate::output::{Artifacts, Failure, Row};
use crate::svg::{histogram, line_chart, Series};

pub fn run(exp: &Experiment) -> CliResult<Artifacts> {
    match &exp.plan {
        Plan::Axioms(p) => axioms(exp.seed, p),
        Plan::TwistedNorm(p) => twisted_norm(exp.seed, p),
        Plan::ExtAlgebra(p) => ext_algebra(exp.seed, p),
        Plan::EnfloGrowth(p) => growth(exp.seed, p),
        Plan::GrouprepRoundtrip(p) => grouprep(exp.seed, p),
    }
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn json_text<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("certificates serialize");
    s.push('\n');
    s
}

fn log10_floor(v: f64) -> f64 {
    v.max(1e-18).log10()
}

fn axioms(seed: u64, p: &AxiomsParams) -> CliResult<Artifacts> {
    let f = space(p.dim, p.p)?;
    let e = space(p.codomain_dim.unwrap_or(p.dim), p.p)?;
    let h = map_on(&p.map, f.clone(), e)?;
    let phi = RhoOf::new(h.clone());
    let report = check_factor_axioms(&phi, p.samples, seed);
    let configs: Vec<Vec<Vector>> = (0..p.norm_configs as u64)
        .map(|c| sample_sphere(&f, 2 + (c as usize % 7), seed.wrapping_add(0x5eed).wrapping_add(c)))
        .collect();
    let lower = factor_norm_lower(&phi, &configs, p.refine_steps);
    let cert_path = "certificates/factor_norm_lower.json";
    let cert =
        Certificate::FactorNormLower { map: h, value: lower.value, config: lower.config.iter().map(to_vec).collect() };
    let at = json!({ "samples": report.samples });
    let rows = vec![
        Row::new("axiom1_homogeneity", at.clone(), report.homogeneity),
        Row::new("axiom2_symmetry", at.clone(), report.symmetry),
        Row::new("axiom3_zero_argument", at.clone(), report.zero_argument),
        Row::new("axiom4_cocycle", at, report.cocycle),
        Row::new(
            "axiom5_norm_lower",
            json!({ "configs": p.norm_configs, "refine_steps": p.refine_steps }),
            lower.value,
        )
        .certified(cert_path),
    ];
    let worst = report.homogeneity.max(report.symmetry).max(report.zero_argument).max(report.cocycle);
    let failure = (worst > p.tol).then(|| Failure {
        module: "maps",
        message: format!("axiom residual {worst:e} exceeds {:e}", p.tol),
        report: json!({
            "homogeneity": report.homogeneity,
            "symmetry": report.symmetry,
            "zero_argument": report.zero_argument,
            "cocycle": report.cocycle,
            "antipodal": report.antipodal,
            "axiom5_ratio": report.axiom5_ratio,
        }),
    });
    let logs: Vec<f64> = report.cocycle_residuals.iter().map(|r| log10_floor(*r)).collect();
    Ok(Artifacts {
        rows,
        certificates: vec![(cert_path.into(), json_text(&cert))],
        plot: Some(histogram("cocycle identity residuals", "log10 residual", &logs, 30)),
        failure,
    })
}

fn twisted_norm(seed: u64, p: &TwistedNormParams) -> CliResult<Artifacts> {
    let f = space(p.dim, p.p)?;
    let e = space(p.codomain_dim.unwrap_or(p.dim), p.p)?;
    let h = map_on(&p.map, f.clone(), e.clone())?;
    let t = TwistedSpace::from_rho(h.clone());
    let xs = sample_sphere(&e, p.samples, seed);
    let ys = sample_sphere(&f, p.samples, seed.wrapping_add(0x9e37));
    let bounds = (0..p.samples)
        .into_par_iter()
        .map(|i| {
            let z = Pair::new(&xs[i] * p.x_scale, ys[i].clone());
            let b = t
                .norm_bounds(&z, p.split_depth, seed.wrapping_add(i as u64))
                .map_err(|e| CliError::numerical("twisted", e))?;
            Ok((z, b))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut certificates = Vec::new();
    for (i, (z, b)) in bounds.iter().enumerate() {
        let path = format!("certificates/twisted_{i:03}.json");
        let at = json!({ "sample": i, "split_depth": p.split_depth });
        rows.push(Row::new("norm_upper", at.clone(), b.upper).certified(&path));
        rows.push(Row::new("norm_lower_certified", at.clone(), b.certified_lower).certified(&path));
        let flagged = json!({ "sample": i, "split_depth": p.split_depth, "lower_is_estimate": b.lower_is_estimate });
        rows.push(Row::new("norm_lower", flagged, b.lower).certified(&path));
        let cert = Certificate::TwistedNorm {
            map: h.clone(),
            x: to_vec(&z.x),
            y: to_vec(&z.y),
            pieces: b.pieces.iter().map(to_vec).collect(),
            upper: b.upper,
            certified_lower: b.certified_lower,
            lower: b.lower,
            c_estimate: b.c_estimate,
        };
        certificates.push((path, json_text(&cert)));
    }
    let n = bounds.len().max(1) as f64;
    let mean = |k: usize| bounds.iter().map(|(_, b)| b.upper_by_depth[k]).sum::<f64>() / n;
    let mean_lower = bounds.iter().map(|(_, b)| b.lower).sum::<f64>() / n;
    let depth = p.split_depth.max(1);
    let series = [
        Series { label: "mean upper bound".into(), points: (0..depth).map(|k| ((k + 1) as f64, mean(k))).collect() },
        Series { label: "mean lower bound".into(), points: (0..depth).map(|k| ((k + 1) as f64, mean_lower)).collect() },
    ];
    Ok(Artifacts {
        rows,
        certificates,
        plot: Some(line_chart("hull norm bounds", "split depth", "norm", &series)),
        failure: None,
    })
}

fn identity(s: &NormedSpace) -> HomMap {
    HomMap::linear(s.clone(), s.clone(), Matrix::identity(s.dim(), s.dim())).expect("square identity")
}

fn factor_gap(a: &dyn FactorSystem, b: &dyn FactorSystem, seed: u64) -> f64 {
    sample_sphere(a.f_space(), 100, seed)
        .chunks(2)
        .map(|w| {
            let (u, v) = (a.apply(&w[0], &w[1]), b.apply(&w[0], &w[1]));
            (&u - &v).amax() / u.amax().max(v.amax()).max(1.0)
        })
        .fold(0.0, f64::max)
}

struct ExtCheck {
    rows: Vec<Row>,
    residuals: Vec<f64>,
    missing: Vec<String>,
}

fn congruent(ext_a: &Extension, ext_b: &Extension) -> CliResult<(f64, bool)> {
    let c = find_congruence(ext_a, ext_b).map_err(|e| CliError::numerical("extops", e))?;
    Ok((c.max_residual(), c.witness().is_some()))
}

fn ext_identities(seed: u64, k: usize, p: &ExtAlgebraParams) -> CliResult<ExtCheck> {
    let num = |e| CliError::numerical("extops", e);
    let r = random_factor_extension(p.e_dim, p.f_dim, seed.wrapping_add(k as u64)).map_err(num)?;
    let (es, fs) = (r.extension.e_space().clone(), r.extension.f_space().clone());
    let po = pushout_parts(&identity(&es), &r.extension).map_err(num)?;
    let pb = pullback_parts(&r.extension, &identity(&fs)).map_err(num)?;
    let split = Extension::split(es, fs);
    let zero_sel = selection_from_extension(&split, SelectionMode::LinearPseudoinverse).map_err(num)?;
    let baer = baer_parts(&r.extension, &split).map_err(num)?;
    let mut out = ExtCheck { rows: Vec::new(), residuals: Vec::new(), missing: Vec::new() };
    let at = json!({ "index": k, "e_dim": p.e_dim, "f_dim": p.f_dim });
    for (name, other) in
        [("pushout_identity", &po.extension), ("pullback_identity", &pb.extension), ("baer_split", baer.extension())]
    {
        let (res, found) = congruent(other, &r.extension)?;
        out.rows.push(Row::new(&format!("{name}_residual"), at.clone(), res));
        out.residuals.push(res);
        if !found {
            out.missing.push(format!("{name} #{k}"));
        }
    }
    let transported = [
        factor_from_extension(&po.extension, &po.transport(&r.selection).map_err(num)?).map_err(num)?,
        factor_from_extension(&pb.extension, &pb.transport(&r.selection).map_err(num)?).map_err(num)?,
        factor_from_extension(baer.extension(), &baer.transport(&r.selection, &zero_sel).map_err(num)?).map_err(num)?,
    ];
    let gap = transported.iter().map(|phi| factor_gap(phi, &r.phi, seed ^ k as u64)).fold(0.0, f64::max);
    out.rows.push(Row::new("transported_factor_gap", at, gap));
    Ok(out)
}

fn ext_commute(seed: u64, j: usize, p: &ExtAlgebraParams) -> CliResult<ExtCheck> {
    let num = |e| CliError::numerical("extops", e);
    let base = seed.wrapping_add(1_000_000).wrapping_add(2 * j as u64);
    let a = random_factor_extension(p.e_dim, p.f_dim, base).map_err(num)?;
    let b = random_factor_extension(p.e_dim, p.f_dim, base + 1).map_err(num)?;
    let ab = baer_parts(&a.extension, &b.extension).map_err(num)?;
    let ba = baer_parts(&b.extension, &a.extension).map_err(num)?;
    let (res, found) = congruent(ab.extension(), ba.extension())?;
    let sum_sel = ab.transport(&a.selection, &b.selection).map_err(num)?;
    let sum = factor_from_extension(ab.extension(), &sum_sel).map_err(num)?;
    let want = RhoOf::new(a.phi.map().sum(b.phi.map()).map_err(num)?);
    let at = json!({ "pair": j });
    Ok(ExtCheck {
        rows: vec![
            Row::new("baer_commutativity_residual", at.clone(), res),
            Row::new("baer_factor_gap", at, factor_gap(&sum, &want, base)),
        ],
        residuals: vec![res],
        missing: if found { Vec::new() } else { vec![format!("commutativity #{j}")] },
    })
}

fn ext_algebra(seed: u64, p: &ExtAlgebraParams) -> CliResult<Artifacts> {
    let mut checks = (0..p.count).into_par_iter().map(|k| ext_identities(seed, k, p)).collect::<CliResult<Vec<_>>>()?;
    checks
        .extend((0..p.commute_pairs).into_par_iter().map(|j| ext_commute(seed, j, p)).collect::<CliResult<Vec<_>>>()?);
    let rows: Vec<Row> = checks.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    let residuals: Vec<f64> = checks.iter().flat_map(|c| c.residuals.iter().copied()).collect();
    let missing: Vec<String> = checks.iter().flat_map(|c| c.missing.iter().cloned()).collect();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let gaps = rows.iter().filter(|r| r.quantity.ends_with("_gap")).map(|r| r.value).fold(0.0, f64::max);
    let failure = (worst > p.tol || gaps > p.tol || !missing.is_empty()).then(|| Failure {
        module: "extops",
        message: format!("congruence residual {worst:e}, factor gap {gaps:e}, tolerance {:e}", p.tol),
        report: json!({ "max_residual": worst, "max_factor_gap": gaps, "no_witness": missing }),
    });
    let logs: Vec<f64> = residuals.iter().map(|r| log10_floor(*r)).collect();
    Ok(Artifacts {
        rows,
        certificates: Vec::new(),
        plot: Some(histogram("congruence residuals", "log10 residual", &logs, 20)),
        failure,
    })
}

fn growth(seed: u64, p: &EnfloParams) -> CliResult<Artifacts> {
    let s = space(p.dim, 2.0)?;
    let h0 = map_on(&p.h0, s.clone(), s)?;
    let levels = enflo_growth(&h0, &p.growth, seed).map_err(|e| CliError::numerical("enflo", e))?;
    let mut rows = Vec::new();
    let mut certificates = Vec::new();
    for r in &levels {
        let path = format!("certificates/enflo_k{}.json", r.k);
        let at = json!({ "k": r.k, "domain_dim": r.domain_dim });
        rows.push(Row::new("lower_bound", at.clone(), r.estimate.lower_value()).certified(&path));
        rows.push(Row::new("upper_bound", at, r.estimate.upper_value()).certified(&path));
        rows.push(Row::new("increase_ratio", json!({ "k": r.k, "configs": r.increase.configs }), r.increase.max_ratio));
        certificates.push((path, json_text(&r.estimate)));
    }
    let series = [
        Series {
            label: "certified lower bound".into(),
            points: levels.iter().map(|r| (r.k as f64, r.estimate.lower_value())).collect(),
        },
        Series {
            label: "upper bound".into(),
            points: levels.iter().map(|r| (r.k as f64, r.estimate.upper_value())).collect(),
        },
    ];
    Ok(Artifacts {
        rows,
        certificates,
        plot: Some(line_chart("distance to linear maps", "k", "dist", &series)),
        failure: None,
    })
}

fn grouprep(seed: u64, p: &GrouprepParams) -> CliResult<Artifacts> {
    let cfg = |e: twistlab_core::Error| CliError::Config(e.to_string());
    let num = |e| CliError::numerical("grouprep", e);
    let group = match p.group {
        GroupKind::Cyclic => FiniteGroup::cyclic(p.n),
        GroupKind::Dihedral => FiniteGroup::dihedral(p.n),
    }
    .map_err(cfg)?;
    let gens = generator_matrices(&p.generators)?;
    let g = gens[0].1.nrows();
    let half = NormedSpace::l2(g / 2);
    let t = Representation::from_generators(group, NormedSpace::l2(g), &gens).map_err(cfg)?;
    let ext = Extension::split(half.clone(), half.clone());
    let (t1, t2) = invariant_extension(&t, &ext).map_err(cfg)?;
    let sel = map_on(&p.selection, half.clone(), half.clone())?;
    let shift = map_on(&p.shift, half.clone(), half.clone())?;
    let sel_p = selection_from_extension(&ext, SelectionMode::Nonlinear(sel.clone())).map_err(num)?;
    let moved = sel.sum(&shift).map_err(num)?;
    let sel_q = selection_from_extension(&ext, SelectionMode::Nonlinear(moved)).map_err(num)?;
    let psi = psi_cocycle(&t, &t2, &ext, &sel_p, seed).map_err(num)?;
    let phi: Arc<dyn FactorSystem> = Arc::new(factor_from_extension(&ext, &sel_p).map_err(num)?);
    let phi_q = factor_from_extension(&ext, &sel_q).map_err(num)?;
    let cocycle = check_cocycle(&psi, &t1, &t2, p.samples, seed).map_err(num)?;
    let zero = HomMap::zero(half.clone(), half);
    let compat =
        check_compatibility(phi.as_ref(), &psi, &zero, &t1, &t2, p.samples, seed.wrapping_add(1)).map_err(num)?;
    let change = check_compatibility(&phi_q, &psi, &shift, &t1, &t2, p.samples, seed.wrapping_add(2)).map_err(num)?;
    let action = reconstruct(&t1, &t2, phi, &psi, p.samples, seed.wrapping_add(3)).map_err(num)?;
    let rebuilt = action.extension().map_err(num)?;
    let eq = equivalent_representations(&rebuilt, action.representation(), &ext, &t, p.tol).map_err(num)?;
    let (status, cob_residual) = match &cocycle.coboundary {
        CoboundaryStatus::Coboundary { residual, .. } => ("coboundary", *residual),
        CoboundaryStatus::NotCoboundary { residual } => ("not_coboundary", *residual),
        CoboundaryStatus::Inconclusive { residual } => ("inconclusive", *residual),
    };
    let at = json!({ "group": p.group, "n": p.n, "samples": p.samples });
    let rows = vec![
        Row::new("cocycle_identity_residual", at.clone(), cocycle.identity_residual),
        Row::new("cocycle_residual", at.clone(), cocycle.cocycle_residual),
        Row::new("coboundary_residual", json!({ "status": status }), cob_residual),
        Row::new("compatibility_residual", at.clone(), compat.max_residual),
        Row::new("selection_change_residual", at.clone(), change.max_residual),
        Row::new("homomorphism_residual", at.clone(), action.homomorphism_residual),
        Row::new("linearity_residual", at.clone(), action.linearity_residual),
        Row::new("equivalence_residual", json!({ "tol": p.tol }), eq.congruence.max_residual()),
    ];
    let worst = rows.iter().filter(|r| r.quantity != "coboundary_residual").map(|r| r.value).fold(0.0, f64::max);
    let failure = (!eq.equivalent || worst > p.tol).then(|| Failure {
        module: "grouprep",
        message: format!("round trip residual {worst:e}, equivalent: {}", eq.equivalent),
        report: json!({
            "max_residual": worst,
            "equivalent": eq.equivalent,
            "min_singular_value": eq.congruence.min_singular_value,
            "worst_compatibility_element": compat.worst_element,
        }),
    });
    Ok(Artifacts { rows, certificates: Vec::new(), plot: None, failure })
}
