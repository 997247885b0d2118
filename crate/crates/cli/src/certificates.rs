//! Certificate files and their re-verification. A file is either a bare
//! `DistanceEstimate` or one of the tagged forms below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use twistlab_core::maps::axiom5_ratio;
use twistlab_core::{DistanceEstimate, HomMap, Pair, RhoOf, TwistedSpace, Vector};

use crate::error::{CliError, CliResult};

pub const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "certificate", rename_all = "snake_case", deny_unknown_fields)]
pub enum Certificate {
    /// `||rho h|| >= value`, attained by the axiom-5 ratio of `config`.
    FactorNormLower { map: HomMap, value: f64, config: Vec<Vec<f64>> },
    /// Two-sided bounds on the hull norm of `(x, y)` in `E_{rho h}`.
    TwistedNorm {
        map: HomMap,
        x: Vec<f64>,
        y: Vec<f64>,
        pieces: Vec<Vec<f64>>,
        upper: f64,
        certified_lower: f64,
        lower: f64,
        c_estimate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub quantity: &'static str,
    pub stored: f64,
    pub recomputed: f64,
}

impl Check {
    pub fn ok(&self) -> bool {
        (self.stored - self.recomputed).abs() <= TOL
    }
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn mismatch(msg: impl Into<String>) -> CliError {
    CliError::Mismatch(msg.into())
}

impl Certificate {
    pub fn checks(&self) -> CliResult<Vec<Check>> {
        match self {
            Certificate::FactorNormLower { map, value, config } => {
                let dim = map.domain().dim();
                if config.iter().any(|p| p.len() != dim) {
                    return Err(mismatch("configuration points have the wrong dimension"));
                }
                let pts: Vec<Vector> = config.iter().map(|p| vector(p)).collect();
                let r = axiom5_ratio(&RhoOf::new(map.clone()), &pts);
                Ok(vec![Check { quantity: "factor_norm_lower", stored: *value, recomputed: r }])
            }
            Certificate::TwistedNorm { map, x, y, pieces, upper, certified_lower, lower, c_estimate } => {
                let t = TwistedSpace::from_rho(map.clone());
                let z = Pair::new(vector(x), vector(y));
                let pieces: Vec<Vector> = pieces.iter().map(|p| vector(p)).collect();
                let (u, _) = t.decomposition_upper(&z, &pieces).map_err(|e| mismatch(e.to_string()))?;
                let nx = t.e_space().norm(&z.x).map_err(|e| mismatch(e.to_string()))?;
                let ny = t.f_space().norm(&z.y).map_err(|e| mismatch(e.to_string()))?;
                let c = t.c_estimate();
                let (cert, low) = if t.phi().is_trivial() {
                    let exact = (nx + ny).min(u);
                    (exact, exact)
                } else {
                    (ny.min(u), ny.max((nx / (1.0 + c)).min(u)).min(u))
                };
                Ok(vec![
                    Check { quantity: "upper", stored: *upper, recomputed: u },
                    Check { quantity: "certified_lower", stored: *certified_lower, recomputed: cert },
                    Check { quantity: "lower", stored: *lower, recomputed: low },
                    Check { quantity: "c_estimate", stored: *c_estimate, recomputed: c },
                ])
            }
        }
    }
}

fn estimate_checks(est: &DistanceEstimate) -> CliResult<Vec<Check>> {
    let r = est.verify();
    if !r.problems.is_empty() {
        return Err(mismatch(r.problems.join("; ")));
    }
    let mut out = Vec::new();
    if let (Some(stored), Some(recomputed)) = (r.lower_stored, r.lower_recomputed) {
        out.push(Check { quantity: "lower", stored, recomputed });
    }
    if let (Some(stored), Some(recomputed)) = (r.upper_stored, r.upper_recomputed) {
        out.push(Check { quantity: "upper", stored, recomputed });
    }
    Ok(out)
}

/// Parses a certificate file and recomputes every stored value.
pub fn checks_for(text: &str) -> CliResult<Vec<Check>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("certificate is not JSON: {e}")))?;
    if value.get("certificate").is_some() {
        let c: Certificate =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("malformed certificate: {e}")))?;
        c.checks()
    } else {
        let est: DistanceEstimate =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("malformed distance estimate: {e}")))?;
        estimate_checks(&est)
    }
}

/// Checks a certificate file; `Ok` carries one report line per value.
pub fn verify_file(path: &Path) -> CliResult<Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let checks = checks_for(&text)?;
    let lines: Vec<String> = checks
        .iter()
        .map(|c| {
            format!(
                "{}: stored {:e} recomputed {:e} drift {:e} {}",
                c.quantity,
                c.stored,
                c.recomputed,
                (c.stored - c.recomputed).abs(),
                if c.ok() { "ok" } else { "MISMATCH" }
            )
        })
        .collect();
    if checks.iter().all(Check::ok) {
        Ok(lines)
    } else {
        Err(mismatch(lines.join("\n")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use twistlab_core::NormedSpace;

    #[test]
    fn factor_certificate_round_trip() {
        let s = NormedSpace::l2(2);
        let c = Certificate::FactorNormLower {
            map: HomMap::kalton_peck(s.clone()),
            value: 0.0,
            config: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let stored = c.checks().unwrap()[0].recomputed;
        let c = match c {
            Certificate::FactorNormLower { map, config, .. } => {
                Certificate::FactorNormLower { map, value: stored, config }
            }
            _ => unreachable!(),
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"certificate\":\"factor_norm_lower\""));
        assert!(checks_for(&text).unwrap().iter().all(Check::ok));
        let tampered = text.replace(&format!("{stored:?}"), "0.5");
        assert!(!checks_for(&tampered).unwrap()[0].ok());
    }

    #[test]
    fn linear_estimate_verifies_to_zero() {
        let s = NormedSpace::l2(2);
        let h = HomMap::linear(s.clone(), s, twistlab_core::Matrix::identity(2, 2)).unwrap();
        let cfg = twistlab_core::spaces::random_zero_sum_config(h.domain(), 3, 1).unwrap();
        let est = twistlab_core::enflo::dist_to_linear_lower(&h, &[cfg], 2);
        let checks = checks_for(&serde_json::to_string(&est).unwrap()).unwrap();
        assert_eq!(checks.len(), 1);
        assert!(checks[0].recomputed.abs() < 1e-15);
        assert!(checks[0].ok());
    }

    #[test]
    fn garbage_is_a_config_error() {
        assert_eq!(checks_for("not json").unwrap_err().exit_code(), 2);
        assert_eq!(checks_for(r#"{"certificate":"nope"}"#).unwrap_err().exit_code(), 2);
    }
}
