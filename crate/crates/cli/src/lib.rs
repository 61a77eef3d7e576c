//! Configuration, persistence and subcommands of the `ifol` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod gradcheck;

pub use commands::Options;
pub use error::{CliError, Result};

use export::{Cell, Table};

/// Runs every finite-difference suite, prints one line per check and
/// writes `gradcheck.csv` when an output directory is known.
pub fn cmd_gradcheck(opts: &Options) -> Result<()> {
    let out = match (&opts.out, &opts.config) {
        (Some(o), _) => Some(o.clone()),
        (None, Some(_)) => Some(commands::Run::load(opts)?.out),
        (None, None) => None,
    };
    let results = gradcheck::run_all(20)?;
    let mut table = Table::new(&["suite", "case", "rel_err", "tol", "pass"]);
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {:<20} {:<32} {:.3e} (< {:.0e})", r.suite, r.case, r.rel_err, r.tol);
        table.row(&[Cell::S(&r.suite), Cell::S(&r.case), Cell::F(r.rel_err), Cell::F(r.tol), Cell::S(verdict)]);
    }
    if let Some(dir) = out {
        table.write(&dir.join("gradcheck.csv"))?;
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}
