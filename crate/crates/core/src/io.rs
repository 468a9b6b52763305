//! Output files: profile CSVs, `solutions.jsonl`, trajectory JSONL and the run
//! manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{NodalError, Result};
use crate::field::State;
use crate::flow::Trajectory;
use crate::grid::Grid;
use crate::search::{SearchReport, SolutionRecord};

/// `r,u1..uN` with 17 significant digits.
pub fn profile_csv(grid: &Grid, state: &State) -> String {
    let mut s = String::from("r");
    for j in 0..state.n_comp() {
        s.push_str(&format!(",u{}", j + 1));
    }
    s.push('\n');
    for (k, r) in grid.nodes.iter().enumerate() {
        s.push_str(&format!("{r:.16e}"));
        for u in state.components() {
            s.push_str(&format!(",{:.16e}", u[k]));
        }
        s.push('\n');
    }
    s
}

/// Parses a profile CSV and checks its radii against the grid nodes.
pub fn parse_profile_csv(grid: &Grid, text: &str) -> Result<State> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| NodalError::Io("empty profile".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"r") || cols.len() < 2 {
        return Err(NodalError::Io(format!("bad profile header '{header}'")));
    }
    let n = cols.len() - 1;
    let mut comps = vec![Vec::with_capacity(grid.m()); n];
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| NodalError::Io(format!("profile row {}: {e}", i + 2)))?;
        if vals.len() != n + 1 {
            return Err(NodalError::Io(format!("profile row {}: expected {} columns", i + 2, n + 1)));
        }
        if rows >= grid.m() || (vals[0] - grid.nodes[rows]).abs() > 1e-9 * grid.domain.r_outer {
            return Err(NodalError::LengthMismatch {
                expected: grid.m(),
                got: rows + 1,
            });
        }
        for j in 0..n {
            comps[j].push(vals[j + 1]);
        }
        rows += 1;
    }
    if rows != grid.m() {
        return Err(NodalError::LengthMismatch {
            expected: grid.m(),
            got: rows,
        });
    }
    State::from_components(comps)
}

pub fn solutions_jsonl(records: &[SolutionRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| NodalError::Io(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

/// `solutions.jsonl` plus one `profile_<id>.csv` per record.
pub fn write_solutions(dir: &Path, grid: &Grid, records: &[SolutionRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("solutions.jsonl"), solutions_jsonl(records)?)?;
    for r in records {
        fs::write(dir.join(format!("profile_{}.csv", r.id)), profile_csv(grid, &r.state))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DegenerateLine<'a> {
    seed_index: usize,
    #[serde(flatten)]
    event: &'a crate::search::DegenerateEvent,
}

/// Manifest with the resolved config, its text form and a run summary.
/// The timestamp lives only here.
pub fn write_manifest(dir: &Path, config: &RunConfig, report: &SearchReport, workers: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let degenerate: Vec<DegenerateLine> = report
        .degenerate
        .iter()
        .map(|(i, e)| DegenerateLine { seed_index: *i, event: e })
        .collect();
    let m = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
        "workers": workers,
        "config": config,
        "config_text": config.to_text(),
        "summary": {
            "records": report.records.iter().map(|r| &r.id).collect::<Vec<_>>(),
            "seeds_tried": report.seeds_tried,
            "shortfall": report.shortfall,
            "energies": report.energies,
            "failures": report.failures,
            "degenerate": degenerate,
        }
    });
    let text = serde_json::to_string_pretty(&m).map_err(|e| NodalError::Io(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// One JSON object per sample, then a closing line with the fate.
pub fn write_trajectory(out: &mut impl Write, traj: &Trajectory) -> Result<()> {
    for s in &traj.samples {
        let line = json!({
            "t": s.t,
            "energy": s.energy,
            "residual_l2": s.residual_l2,
            "h1": s.h1,
            "l2": s.l2,
            "linf": s.state.linf(),
            "signature": s.signature.counts,
            "bump_l4": s.bump_l4,
        });
        writeln!(out, "{line}")?;
    }
    let end = json!({
        "fate": traj.fate,
        "steps": traj.steps.len(),
        "rejected_steps": traj.rejected_steps,
    });
    writeln!(out, "{end}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, RadialDomain};

    #[test]
    fn profile_round_trip_is_exact() {
        let g = build_grid(RadialDomain::ball(2, 1.0, 40)).unwrap();
        let u: Vec<f64> = g.nodes.iter().map(|r| (1.0 - r * r) / 3.0).collect();
        let v: Vec<f64> = g.nodes.iter().map(|r| (7.0 * r).sin() * 1e-7).collect();
        let s = State::from_components(vec![u, v]).unwrap();
        let text = profile_csv(&g, &s);
        assert!(text.starts_with("r,u1,u2\n"));
        assert_eq!(parse_profile_csv(&g, &text).unwrap(), s);
    }

    #[test]
    fn profile_on_wrong_grid_is_rejected() {
        let g = build_grid(RadialDomain::ball(1, 1.0, 40)).unwrap();
        let h = build_grid(RadialDomain::ball(1, 1.0, 41)).unwrap();
        let s = State::zeros(1, 40);
        assert!(parse_profile_csv(&h, &profile_csv(&g, &s)).is_err());
        assert!(parse_profile_csv(&g, "x,u1\n").is_err());
    }
}
