use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::{sig9, TrajectoryRecord};

/// Machine-readable description of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub repeats: usize,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_sha256: String, seed: u64, repeats: usize) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256,
            seed,
            repeats,
            files: Vec::new(),
            notes: Vec::new(),
        }
    }
}

/// Writes every file and then `manifest.json` listing them. Nothing is
/// written before all contents exist.
pub(crate) fn write_all(dir: &Path, files: &[(String, String)], mut manifest: Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, content) in files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, content)?;
        manifest.files.push(name.clone());
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Per-tick CSV: `t, err_norm, e_1..e_2K, q_1..q_J, qdot_1..qdot_J,
/// status_1..status_K, jac_residual`.
pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let Some(first) = record.rows.first() else {
        return "t,err_norm,jac_residual\n".into();
    };
    let mut header = vec!["t".to_string(), "err_norm".to_string()];
    header.extend((1..=first.errors.len()).map(|i| format!("e_{i}")));
    header.extend((1..=first.q.len()).map(|i| format!("q_{i}")));
    header.extend((1..=first.q_dot.len()).map(|i| format!("qdot_{i}")));
    header.extend((1..=first.status.len()).map(|i| format!("status_{i}")));
    header.push("jac_residual".into());

    let mut out = header.join(",");
    out.push('\n');
    for row in &record.rows {
        let mut cells = vec![sig9(row.t), sig9(row.err_norm)];
        cells.extend(row.errors.iter().map(|&v| sig9(v)));
        cells.extend(row.q.iter().map(|&v| sig9(v)));
        cells.extend(row.q_dot.iter().map(|&v| sig9(v)));
        cells.extend(row.status.iter().map(|s| s.as_str().to_string()));
        cells.push(sig9(row.jac_residual));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
