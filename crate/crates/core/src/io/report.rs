//! Fisher report text documents and sweep CSV tables.

use std::path::Path;

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::fisher::FisherReport;
use crate::scalar::Scalar;
use crate::sim::{SweepPoint, SweepResult};

/// Serialize a Fisher report: scalar diagnostics as `key = value` lines, the
/// matrix and dominance ratios as CSV blocks.
pub fn fisher_report_to_string(rep: &FisherReport<f64>) -> String {
    let mut out = String::new();
    out.push_str("# fisher report v1\n");
    out.push_str(&format!("m = {}\n", rep.dim()));
    out.push_str(&format!("probability_floor = {:e}\n", rep.probability_floor));
    out.push_str(&format!("inv_trace = {:e}\n", rep.inv_trace));
    out.push_str(&format!("effective_rank = {}\n", rep.effective_rank));
    out.push_str(&format!("gershgorin_lower = {:e}\n", rep.gershgorin_lower));
    out.push_str(&format!("trace_lower = {:e}\n", rep.trace_lower));
    out.push_str(&format!("effective_bandwidth = {}\n", rep.effective_bandwidth));
    out.push_str("dominance_ratios = ");
    out.push_str(
        &rep.dominance_ratios
            .iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    out.push_str("matrix =\n");
    for i in 0..rep.dim() {
        let row: Vec<String> = (0..rep.dim()).map(|j| format!("{:e}", rep.matrix[[i, j]])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_fisher_report(rep: &FisherReport<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, fisher_report_to_string(rep))?;
    Ok(())
}

pub fn fisher_report_from_str(text: &str) -> Result<FisherReport<f64>> {
    let mut m = None;
    let mut floor = None;
    let mut inv_trace = None;
    let mut rank = None;
    let mut gersh = None;
    let mut trace_lower = None;
    let mut bandwidth = None;
    let mut ratios: Option<Vec<f64>> = None;
    let mut matrix_rows: Vec<Vec<f64>> = Vec::new();
    let mut in_matrix = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if in_matrix {
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            matrix_rows.push(row.map_err(|e| CoreError::Format(format!("matrix row: {e}")))?);
            continue;
        }
        if line == "matrix =" {
            in_matrix = true;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CoreError::Format(format!("bad line '{line}'")));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "m" => m = Some(value.parse::<usize>().map_err(|e| CoreError::Format(e.to_string()))?),
            "probability_floor" => floor = Some(parse_f64(value)?),
            "inv_trace" => inv_trace = Some(parse_f64(value)?),
            "effective_rank" => {
                rank = Some(value.parse::<usize>().map_err(|e| CoreError::Format(e.to_string()))?)
            }
            "gershgorin_lower" => gersh = Some(parse_f64(value)?),
            "trace_lower" => trace_lower = Some(parse_f64(value)?),
            "effective_bandwidth" => {
                bandwidth =
                    Some(value.parse::<usize>().map_err(|e| CoreError::Format(e.to_string()))?)
            }
            "dominance_ratios" => {
                ratios = Some(
                    value
                        .split(',')
                        .map(parse_f64)
                        .collect::<Result<Vec<f64>>>()?,
                )
            }
            other => return Err(CoreError::Format(format!("unknown key '{other}'"))),
        }
    }
    let m = m.ok_or_else(|| CoreError::Format("missing m".into()))?;
    if matrix_rows.len() != m || matrix_rows.iter().any(|r| r.len() != m) {
        return Err(CoreError::Format("matrix block shape mismatch".into()));
    }
    let mut matrix = Array2::<f64>::zeros((m, m));
    for (i, row) in matrix_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            matrix[[i, j]] = v;
        }
    }
    Ok(FisherReport {
        matrix,
        probability_floor: floor.ok_or_else(|| CoreError::Format("missing probability_floor".into()))?,
        inv_trace: inv_trace.ok_or_else(|| CoreError::Format("missing inv_trace".into()))?,
        effective_rank: rank.ok_or_else(|| CoreError::Format("missing effective_rank".into()))?,
        gershgorin_lower: gersh.ok_or_else(|| CoreError::Format("missing gershgorin_lower".into()))?,
        trace_lower: trace_lower.ok_or_else(|| CoreError::Format("missing trace_lower".into()))?,
        dominance_ratios: ratios.ok_or_else(|| CoreError::Format("missing dominance_ratios".into()))?,
        effective_bandwidth: bandwidth
            .ok_or_else(|| CoreError::Format("missing effective_bandwidth".into()))?,
    })
}

fn parse_f64(v: &str) -> Result<f64> {
    let v = v.trim();
    if v == "inf" {
        return Ok(f64::INFINITY);
    }
    v.parse::<f64>().map_err(|e| CoreError::Format(format!("float '{v}': {e}")))
}

/// Sweep output table: `w_c_um,value,stderr,rank,error` per point.
pub fn sweep_to_csv<T: Scalar>(sweep: &SweepResult<T>) -> String {
    let mut out = String::from("w_c_um,value,stderr,effective_rank,error\n");
    for p in &sweep.points {
        let value = p.value.map_or(String::new(), |v| format!("{v:e}"));
        let stderr = p.stderr.map_or(String::new(), |v| format!("{v:e}"));
        let rank = p.effective_rank.map_or(String::new(), |v| v.to_string());
        let err = p.error.clone().unwrap_or_default().replace(',', ";");
        out.push_str(&format!("{:e},{value},{stderr},{rank},{err}\n", p.w_c_um));
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<SweepResult<f64>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(CoreError::Format(format!("sweep row {i} has {} fields", parts.len())));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(parse_f64(s)?))
            }
        };
        points.push(SweepPoint {
            w_c_um: parse_f64(parts[0])?,
            value: parse_opt(parts[1])?,
            stderr: parse_opt(parts[2])?,
            effective_rank: if parts[3].is_empty() {
                None
            } else {
                Some(parts[3].parse::<usize>().map_err(|e| CoreError::Format(e.to_string()))?)
            },
            error: if parts[4].is_empty() { None } else { Some(parts[4].to_string()) },
        });
    }
    let grid: Vec<f64> = points.iter().map(|p| p.w_c_um).collect();
    let mut argmin = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(v) = p.value {
            if argmin.map_or(true, |j: usize| v < points[j].value.unwrap()) {
                argmin = Some(i);
            }
        }
    }
    let mut monotone = points.iter().all(|p| p.value.is_some());
    if monotone {
        for w in points.windows(2) {
            if w[1].value.unwrap() < w[0].value.unwrap() * (1.0 - 1e-6) {
                monotone = false;
                break;
            }
        }
    }
    Ok(SweepResult { grid, points, argmin, monotone_nonincreasing_toward_small: monotone })
}
