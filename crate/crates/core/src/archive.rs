//! On-disk archives: a directory with a JSON manifest, a topology edge-list
//! file and one dense row-major CSV per matrix. Floats round-trip exactly
//! (shortest-representation formatting), so archives are byte-stable across
//! runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::disturbance::DisturbanceController;
use crate::error::{Error, Result};
use crate::riccati::{RiccatiMethod, RiccatiSolution};
use crate::systems::{LqrProblem, SedSystemConstants};
use crate::topology::{EdgeListFile, Topology};

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| tok.trim().parse::<f64>().map_err(|e| Error::Parse(format!("bad float '{tok}': {e}"))))
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse("ragged CSV matrix".into()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    matrix_from_csv(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemManifest {
    kind: String,
    agent_count: usize,
    state_dims: Vec<usize>,
    input_dims: Vec<usize>,
    warnings: Vec<String>,
    sed_constants: Option<SedSystemConstants>,
    params: BTreeMap<String, String>,
}

/// Saves a problem as `manifest.json`, `topology.txt` and
/// `A.csv ... S.csv` under `dir` (created if needed).
pub fn save_problem(dir: &Path, prob: &LqrProblem, params: &BTreeMap<String, String>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let topo = prob.topology();
    let manifest = ProblemManifest {
        kind: "lqr-problem".into(),
        agent_count: topo.agent_count(),
        state_dims: topo.state_dims().to_vec(),
        input_dims: topo.input_dims().to_vec(),
        warnings: prob.warnings.clone(),
        sed_constants: prob.sed_constants,
        params: params.clone(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    std::fs::write(dir.join("topology.txt"), topo.to_edge_list_text(None))?;
    write_matrix_csv(&dir.join("A.csv"), prob.a().data())?;
    write_matrix_csv(&dir.join("B.csv"), prob.b().data())?;
    write_matrix_csv(&dir.join("Q.csv"), prob.q().data())?;
    write_matrix_csv(&dir.join("R.csv"), prob.r().data())?;
    write_matrix_csv(&dir.join("S.csv"), prob.s().data())?;
    Ok(())
}

/// Loads a problem archive, re-validating shapes and cost-matrix
/// definiteness.
pub fn load_problem(dir: &Path) -> Result<LqrProblem> {
    let manifest: ProblemManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Parse(format!("bad manifest: {e}")))?;
    if manifest.kind != "lqr-problem" {
        return Err(Error::Parse(format!("expected an lqr-problem archive, got '{}'", manifest.kind)));
    }
    let edge_file = EdgeListFile::read(&dir.join("topology.txt"))?;
    if edge_file.n != manifest.agent_count {
        return Err(Error::Parse("manifest and topology disagree on agent count".into()));
    }
    let topo: Topology =
        edge_file.into_topology(manifest.state_dims.clone(), manifest.input_dims.clone())?;
    let a = read_matrix_csv(&dir.join("A.csv"))?;
    let b = read_matrix_csv(&dir.join("B.csv"))?;
    let q = read_matrix_csv(&dir.join("Q.csv"))?;
    let r = read_matrix_csv(&dir.join("R.csv"))?;
    let s = read_matrix_csv(&dir.join("S.csv"))?;
    let mut prob = LqrProblem::new(topo, a, b, q, r, s)?;
    prob.warnings = manifest.warnings;
    prob.sed_constants = manifest.sed_constants;
    Ok(prob)
}

#[derive(Debug, Serialize, Deserialize)]
struct RiccatiManifest {
    kind: String,
    residual: f64,
    iterations: usize,
    method: RiccatiMethod,
}

/// Saves `K.csv`, `P.csv` and solve diagnostics.
pub fn save_riccati(dir: &Path, sol: &RiccatiSolution) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = RiccatiManifest {
        kind: "riccati-solution".into(),
        residual: sol.residual,
        iterations: sol.iterations,
        method: sol.method,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    write_matrix_csv(&dir.join("K.csv"), sol.k.data())?;
    write_matrix_csv(&dir.join("P.csv"), &sol.p)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ControllerManifest {
    kind: String,
    horizon: usize,
    n_u: usize,
    n_x: usize,
}

/// Saves a disturbance controller as `L_1.csv ... L_H.csv` plus a manifest.
pub fn save_controller(dir: &Path, l: &DisturbanceController) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = ControllerManifest {
        kind: "disturbance-controller".into(),
        horizon: l.horizon,
        n_u: l.topology().n_u(),
        n_x: l.topology().n_x(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    for k in 1..=l.horizon {
        write_matrix_csv(&dir.join(format!("L_{k}.csv")), &l.l_dense(k)?)?;
    }
    Ok(())
}

/// Loads a disturbance controller against a known topology.
pub fn load_controller(dir: &Path, topo: &Topology) -> Result<DisturbanceController> {
    let manifest: ControllerManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Parse(format!("bad manifest: {e}")))?;
    if manifest.kind != "disturbance-controller" {
        return Err(Error::Parse(format!(
            "expected a disturbance-controller archive, got '{}'",
            manifest.kind
        )));
    }
    let mut stacked = DMatrix::<f64>::zeros(manifest.horizon * topo.n_u(), topo.n_x());
    for k in 1..=manifest.horizon {
        let block = read_matrix_csv(&dir.join(format!("L_{k}.csv")))?;
        if block.shape() != (topo.n_u(), topo.n_x()) {
            return Err(Error::ShapeError(format!("L_{k} has shape {:?}", block.shape())));
        }
        stacked.view_mut(((k - 1) * topo.n_u(), 0), (topo.n_u(), topo.n_x())).copy_from(&block);
    }
    DisturbanceController::from_stacked(stacked, manifest.horizon, topo.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::heat_equation_system;

    #[test]
    fn matrix_csv_roundtrip_is_exact() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0) * 1e-7);
        let text = matrix_to_csv(&m);
        let back = matrix_from_csv(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn problem_archive_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let prob = heat_equation_system(6, 0.1, &[1.0; 6], &[1.0; 6], &[2.0; 6]).unwrap();
        let mut params = BTreeMap::new();
        params.insert("eta".into(), "0.1".into());
        save_problem(dir.path(), &prob, &params).unwrap();
        let back = load_problem(dir.path()).unwrap();
        assert_eq!(back.a().data(), prob.a().data());
        assert_eq!(back.r().data(), prob.r().data());
        assert_eq!(back.topology(), prob.topology());
        assert_eq!(back.sed_constants, prob.sed_constants);
    }

    #[test]
    fn controller_archive_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let prob = heat_equation_system(4, 0.1, &[1.0; 4], &[1.0; 4], &[1.0; 4]).unwrap();
        let stacked = DMatrix::from_fn(8, 4, |i, j| (i * 4 + j) as f64 * 0.125);
        let l = DisturbanceController::from_stacked(stacked.clone(), 2, prob.topology().clone())
            .unwrap();
        save_controller(dir.path(), &l).unwrap();
        let back = load_controller(dir.path(), prob.topology()).unwrap();
        assert_eq!(back.stacked(), &stacked);
        assert_eq!(back.horizon, 2);
    }
}
