//! CSV artifact writers and readers. Floats are printed with 17 significant
//! digits so every value survives a write/read cycle bitwise; certification
//! of a re-ingested trajectory therefore reproduces the original residuals.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::DVector;

use olpdg_core::lcp::VarKind;
use olpdg_core::smartgrid::{SmartGridReport, SmartGridScenario};
use olpdg_core::{Dims, EquilibriumTrajectory, PipelineOutput};

pub fn fmt_full(x: f64) -> String {
    format!("{x:.16e}")
}

fn trajectory_header(d: &Dims) -> String {
    let mut h = String::from("k");
    let blocks: [(&str, usize); 5] = [
        ("x", d.n),
        ("u", d.m_total()),
        ("v", d.s_total()),
        ("lambda", d.n),
        ("mu", d.l),
    ];
    for (name, len) in blocks {
        for j in 0..len {
            h.push_str(&format!(",{name}{j}"));
        }
    }
    h
}

pub fn write_trajectory_csv(
    path: &Path,
    dims: &Dims,
    traj: &EquilibriumTrajectory,
) -> Result<()> {
    let kk = dims.horizon;
    let mut out = trajectory_header(dims);
    out.push('\n');
    for k in 0..=kk {
        out.push_str(&k.to_string());
        for val in traj.x[k].iter() {
            out.push(',');
            out.push_str(&fmt_full(*val));
        }
        if k < kk {
            for val in traj.u[k].iter() {
                out.push(',');
                out.push_str(&fmt_full(*val));
            }
        } else {
            for _ in 0..dims.m_total() {
                out.push(',');
            }
        }
        for val in traj.v[k].iter().chain(traj.lambda[k].iter()).chain(traj.mu[k].iter()) {
            out.push(',');
            out.push_str(&fmt_full(*val));
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path, dims: &Dims) -> Result<EquilibriumTrajectory> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("trajectory file is empty")?;
    let expected = trajectory_header(dims);
    ensure!(
        header == expected,
        "trajectory header does not match the game dimensions (expected `{expected}`)"
    );

    let kk = dims.horizon;
    let (n, m, s, l) = (dims.n, dims.m_total(), dims.s_total(), dims.l);
    let cols = 1 + n + m + s + n + l;
    let mut traj = EquilibriumTrajectory {
        x: Vec::new(),
        u: Vec::new(),
        v: Vec::new(),
        lambda: Vec::new(),
        mu: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        ensure!(
            cells.len() == cols,
            "row {row}: expected {cols} cells, found {}",
            cells.len()
        );
        let k: usize = cells[0]
            .parse()
            .with_context(|| format!("row {row}: bad stage index `{}`", cells[0]))?;
        ensure!(k == row && k <= kk, "row {row}: unexpected stage index {k}");
        let parse_span = |lo: usize, len: usize| -> Result<DVector<f64>> {
            let mut v = DVector::zeros(len);
            for j in 0..len {
                v[j] = cells[lo + j]
                    .parse()
                    .with_context(|| format!("row {row}, column {}: bad float", lo + j))?;
            }
            Ok(v)
        };
        traj.x.push(parse_span(1, n)?);
        if k < kk {
            traj.u.push(parse_span(1 + n, m)?);
        } else if cells[1 + n..1 + n + m].iter().any(|c| !c.is_empty()) {
            bail!("row {row}: terminal stage must leave the control cells empty");
        }
        traj.v.push(parse_span(1 + n + m, s)?);
        traj.lambda.push(parse_span(1 + n + m + s, n)?);
        traj.mu.push(parse_span(1 + n + m + s + n, l)?);
    }
    ensure!(
        traj.x.len() == kk + 1,
        "expected {} data rows, found {}",
        kk + 1,
        traj.x.len()
    );
    Ok(traj)
}

/// Aggregated LCP solution, one row per index with its stage/variable label.
pub fn write_lcp_csv(path: &Path, out: &PipelineOutput) -> Result<()> {
    let mut text = String::from("index,stage,kind,player,z,w\n");
    for (idx, label) in out.lcp_labels.iter().enumerate() {
        let kind = match label.kind {
            VarKind::V => "v",
            VarKind::Mu => "mu",
        };
        let player = label.player.map(|p| (p + 1).to_string()).unwrap_or_default();
        text.push_str(&format!(
            "{idx},{},{kind},{player},{},{}\n",
            label.stage,
            fmt_full(out.lcp_z[idx]),
            fmt_full(out.lcp_w[idx])
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Scenario-level series: resources, per-activity consumption, battery
/// levels, and the headroom margin per stage. Consumption cells are empty at
/// the terminal stage, matching the control layout of trajectory.csv.
pub fn write_grid_series_csv(
    path: &Path,
    sc: &SmartGridScenario,
    rep: &SmartGridReport,
) -> Result<()> {
    let mut header = String::from("k");
    for j in 1..=sc.resources {
        header.push_str(&format!(",X{j}"));
    }
    for i in 1..=sc.users {
        for a in 1..=sc.activities[i - 1] {
            header.push_str(&format!(",I{i}_{a}"));
        }
    }
    for i in 1..=sc.users {
        header.push_str(&format!(",K{i}"));
    }
    header.push_str(",margin\n");

    let mut text = header;
    let total_cons: usize = sc.activities.iter().sum();
    for k in 0..=sc.horizon {
        text.push_str(&k.to_string());
        for val in rep.resources[k].iter() {
            text.push(',');
            text.push_str(&fmt_full(*val));
        }
        if k < sc.horizon {
            for i in 0..sc.users {
                for val in rep.consumption[k][i].iter() {
                    text.push(',');
                    text.push_str(&fmt_full(*val));
                }
            }
        } else {
            for _ in 0..total_cons {
                text.push(',');
            }
        }
        for i in 0..sc.users {
            text.push(',');
            text.push_str(&fmt_full(rep.storage[k][i]));
        }
        text.push(',');
        text.push_str(&fmt_full(rep.storage_margin[k]));
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One row per sweep point: the scale factor, each user's total stored
/// energy over the horizon, and whether that run certified.
pub fn write_sweep_csv(
    path: &Path,
    users: usize,
    rows: &[(f64, Vec<f64>, bool)],
) -> Result<()> {
    let mut text = String::from("scale");
    for i in 1..=users {
        text.push_str(&format!(",total_storage{i}"));
    }
    text.push_str(",certified\n");
    for (scale, totals, certified) in rows {
        text.push_str(&scale.to_string());
        for t in totals {
            text.push(',');
            text.push_str(&fmt_full(*t));
        }
        text.push_str(if *certified { ",true\n" } else { ",false\n" });
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
