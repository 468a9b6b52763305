//! Command bodies behind the `nodalflow` binary. Each returns the process exit
//! code and writes its human-readable report to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::Result;
use crate::flow;
use crate::io;
use crate::search::{self, SearchReport};
use crate::system::{self, AssumptionReport};
use crate::verify::{self, SuiteScale};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SHORTFALL: i32 = 3;

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    RunConfig::load(&text)
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "fails"
    }
}

pub fn assumption_table(rep: &AssumptionReport) -> String {
    let m = &rep.margins;
    // adding zero turns -0.0 into +0.0
    let z = |x: f64| x + 0.0;
    let mut s = String::from("condition  status  margin\n");
    s.push_str(&format!("(A)        {}   {:+.6e}\n", mark(rep.holds_a), z(m.a)));
    s.push_str(&format!("(B)        {}   {:+.6e}\n", mark(rep.holds_b), z(m.b)));
    s.push_str(&format!("(C)        {}   {:+.6e}\n", mark(rep.holds_c), z(m.c)));
    s.push_str(&format!("(D)        {}   {:+.6e}\n", mark(rep.holds_d), z(m.d)));
    match m.thm1 {
        Some(t) => s.push_str(&format!("uniform    {}   {:+.6e}  (beta <= -mu/(p-1))\n", mark(rep.holds_thm1), z(t))),
        None => s.push_str("uniform    n/a\n"),
    }
    s.push_str(&format!(
        "multiplicity conditions {}\n",
        if rep.multiplicity_applies() { "satisfied" } else { "not satisfied" }
    ));
    s
}

fn report_error(out: &mut impl Write, e: impl std::fmt::Display) -> i32 {
    let _ = writeln!(out, "error: {e}");
    EXIT_INPUT
}

pub fn cmd_validate(config: &Path, out: &mut impl Write) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return report_error(out, e),
    };
    let rep = match cfg.params().and_then(|p| system::validate(&p, &cfg.block_structure()?)) {
        Ok(r) => r,
        Err(e) => return report_error(out, e),
    };
    let _ = write!(out, "{}", assumption_table(&rep));
    if rep.multiplicity_applies() {
        EXIT_OK
    } else {
        EXIT_HYPOTHESIS
    }
}

/// Runs the seed search and writes its outputs to `dir`.
pub fn run_search(cfg: &RunConfig, dir: &Path, workers: usize) -> Result<SearchReport> {
    let grid = cfg.grid()?;
    let params = cfg.params()?;
    let blocks = cfg.block_structure()?;
    let basis = cfg.basis(&grid)?;
    let report = search::find_multiple(
        &params,
        &grid,
        &blocks,
        &basis,
        cfg.search.count_target,
        cfg.search.budget,
        &cfg.flow,
        &cfg.search_options(),
        cfg.search.rng_seed,
        workers,
    )?;
    io::write_solutions(dir, &grid, &report.records)?;
    io::write_manifest(dir, cfg, &report, workers)?;
    Ok(report)
}

pub fn summary_table(report: &SearchReport) -> String {
    let mut s = format!("{:<16}  {:>16}  {:<12}  {:>10}\n", "id", "J", "signature", "residual");
    for r in &report.records {
        let sig: Vec<String> = r.signature.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!(
            "{:<16}  {:>16.8e}  {:<12}  {:>10.3e}\n",
            r.id,
            r.energy,
            sig.join(","),
            r.residual_l2
        ));
    }
    s
}

pub fn cmd_solve(config: &Path, force: bool, out_dir: Option<PathBuf>, out: &mut impl Write) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return report_error(out, e),
    };
    let rep = match cfg.params().and_then(|p| system::validate(&p, &cfg.block_structure()?)) {
        Ok(r) => r,
        Err(e) => return report_error(out, e),
    };
    if !rep.multiplicity_applies() && !force {
        let _ = write!(out, "{}", assumption_table(&rep));
        let _ = writeln!(out, "refusing to solve without --force");
        return EXIT_HYPOTHESIS;
    }
    let dir = out_dir.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let workers = search::worker_count();
    let report = match run_search(&cfg, &dir, workers) {
        Ok(r) => r,
        Err(e) => return report_error(out, e),
    };
    let _ = write!(out, "{}", summary_table(&report));
    let _ = writeln!(
        out,
        "{} solution(s) from {} seed(s); {} degenerate event(s); {} failed seed(s); output in {}",
        report.records.len(),
        report.seeds_tried,
        report.degenerate.len(),
        report.failures.len(),
        dir.display()
    );
    if report.records.is_empty() || report.shortfall {
        for (i, e) in &report.degenerate {
            let _ = writeln!(out, "  seed {i} round {}: degenerate at t = {:.6e}: {:?}", e.round, e.t_star, e.kind);
        }
        for (i, e) in &report.failures {
            let _ = writeln!(out, "  seed {i}: {e}");
        }
        let _ = writeln!(out, "shortfall: {} of {} requested", report.records.len(), cfg.search.count_target);
        return EXIT_SHORTFALL;
    }
    EXIT_OK
}

pub fn cmd_flow(config: &Path, initial: &Path, traj_out: Option<PathBuf>, out: &mut impl Write) -> i32 {
    let run = || -> Result<(flow::Trajectory, PathBuf)> {
        let cfg = load_config(config)?;
        let grid = cfg.grid()?;
        let params = cfg.params()?;
        let state = io::parse_profile_csv(&grid, &fs::read_to_string(initial)?)?;
        if state.n_comp() != params.n_comp() {
            return Err(crate::NodalError::LengthMismatch {
                expected: params.n_comp(),
                got: state.n_comp(),
            });
        }
        let traj = flow::integrate(&params, &grid, &state, &cfg.flow)?;
        let path = traj_out.unwrap_or_else(|| Path::new(&cfg.output_dir).join("trajectory.jsonl"));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        io::write_trajectory(&mut f, &traj)?;
        f.flush()?;
        Ok((traj, path))
    };
    match run() {
        Ok((traj, path)) => {
            let last = traj.last();
            let _ = writeln!(
                out,
                "fate {:?} at t = {:.6e}; J = {:.8e}; residual = {:.3e}; {} samples written to {}",
                traj.fate,
                last.t,
                last.energy,
                last.residual_l2,
                traj.samples.len(),
                path.display()
            );
            EXIT_OK
        }
        Err(e) => report_error(out, e),
    }
}

pub fn cmd_verify(config: &Path, out: &mut impl Write) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return report_error(out, e),
    };
    let seed = cfg.search.rng_seed;
    let results = verify::run_suite(SuiteScale::full(), seed).and_then(|mut r| {
        r.extend(verify::system_checks(&cfg.params()?, &cfg.grid()?, seed)?);
        Ok(r)
    });
    match results {
        Ok(r) => {
            for p in &r {
                let _ = writeln!(out, "{}", p.line());
            }
            if r.iter().all(|p| p.passed) {
                EXIT_OK
            } else {
                EXIT_HYPOTHESIS
            }
        }
        Err(e) => report_error(out, e),
    }
}
