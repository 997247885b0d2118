//! Artifact files; every write goes through a temp file and a rename.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};
use tempfile::NamedTempFile;

use crate::config::Experiment;
use crate::error::{CliError, CliResult};

pub const CSV_HEADER: [&str; 5] = ["experiment", "quantity", "parameters", "value", "certificate"];

#[derive(Debug, Clone)]
pub struct Row {
    pub quantity: String,
    pub parameters: Value,
    pub value: f64,
    /// Path relative to the output directory.
    pub certificate: Option<String>,
}

impl Row {
    pub fn new(quantity: &str, parameters: Value, value: f64) -> Self {
        Row { quantity: quantity.into(), parameters, value, certificate: None }
    }

    pub fn certified(mut self, path: &str) -> Self {
        self.certificate = Some(path.into());
        self
    }
}

/// A tolerance check that failed after the experiment ran to completion.
#[derive(Debug, Clone)]
pub struct Failure {
    pub module: &'static str,
    pub message: String,
    pub report: Value,
}

#[derive(Debug, Default)]
pub struct Artifacts {
    pub rows: Vec<Row>,
    /// `(relative path, JSON text)`.
    pub certificates: Vec<(String, String)>,
    pub plot: Option<String>,
    pub failure: Option<Failure>,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn csv_bytes(experiment: &str, rows: &[Row]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("writing to memory");
    for r in rows {
        let params = serde_json::to_string(&r.parameters).expect("json values serialize");
        let value = format!("{:e}", r.value);
        w.write_record([experiment, &r.quantity, &params, &value, r.certificate.as_deref().unwrap_or("")])
            .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

fn manifest(exp: &Experiment, a: &Artifacts, error: Option<&CliError>) -> Value {
    let mut outputs = vec![json!("results.csv")];
    if a.plot.is_some() {
        outputs.push(json!("plot.svg"));
    }
    outputs.extend(a.certificates.iter().map(|c| json!(c.0)));
    let status = match (error, &a.failure) {
        (Some(e), _) => json!({ "status": "error", "exit_code": e.exit_code(), "message": e.to_string() }),
        (None, Some(f)) => json!({ "status": "numerical_failure", "module": f.module, "message": f.message }),
        (None, None) => json!({ "status": "ok" }),
    };
    json!({
        "tool": "twistlab",
        "version": env!("CARGO_PKG_VERSION"),
        "config": exp.manifest_config(),
        "result": status,
        "outputs": outputs,
    })
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s.into_bytes()
}

/// Writes all artifacts of one experiment.
pub fn write_outputs(exp: &Experiment, a: &Artifacts) -> CliResult<()> {
    let dir = &exp.output_dir;
    for (rel, text) in &a.certificates {
        write_atomic(&dir.join(rel), text.as_bytes())?;
    }
    write_atomic(&dir.join("results.csv"), &csv_bytes(&exp.name, &a.rows))?;
    if let Some(svg) = &a.plot {
        write_atomic(&dir.join("plot.svg"), svg.as_bytes())?;
    }
    if let Some(f) = &a.failure {
        let report = json!({ "module": f.module, "message": f.message, "report": f.report });
        write_atomic(&dir.join("failure.json"), &pretty(&report))?;
    }
    write_atomic(&dir.join("manifest.json"), &pretty(&manifest(exp, a, None)))
}

/// Records a run that stopped before producing results.
pub fn write_error(exp: &Experiment, err: &CliError) -> CliResult<()> {
    let a = Artifacts::default();
    let report = json!({ "exit_code": err.exit_code(), "message": err.to_string() });
    write_atomic(&exp.output_dir.join("failure.json"), &pretty(&report))?;
    write_atomic(&exp.output_dir.join("manifest.json"), &pretty(&manifest(exp, &a, Some(err))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_json_parameters() {
        let rows = vec![Row::new("lower_bound", json!({"k": 1}), 0.25).certified("certificates/a.json")];
        let text = String::from_utf8(csv_bytes("enflo", &rows)).unwrap();
        assert_eq!(
            text,
            "experiment,quantity,parameters,value,certificate\nenflo,lower_bound,\"{\"\"k\"\":1}\",2.5e-1,certificates/a.json\n"
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
