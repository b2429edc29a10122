//! Command-line front end: flag and config-file parsing, study dispatch and
//! the printed rate table.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use hho_brinkman::harness::{rate_table, run_study, MeshFamily, StudyConfig};
use hho_brinkman::Error;

/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code when at least one level fails to solve.
pub const EXIT_SOLVER: i32 = 1;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Family {
    Triangular,
    Cartesian,
    Hexagonal,
    File,
}

impl From<Family> for MeshFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Triangular => MeshFamily::Triangular,
            Family::Cartesian => MeshFamily::Cartesian,
            Family::Hexagonal => MeshFamily::Hexagonal,
            Family::File => MeshFamily::File,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Convergence study of the HHO scheme for the power-law Brinkman problem
/// against a manufactured solution on the unit square.
#[derive(Debug, Parser)]
#[command(name = "hho-brinkman", version)]
pub struct Args {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    /// Directory of json-poly meshes, one per level in name order.
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Number of refinement levels.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub first_level: Option<usize>,
    /// Polynomial degree (0, 1 or 2).
    #[arg(long)]
    pub k: Option<usize>,
    /// Flow exponent, r > 1.
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub nu: Option<f64>,
    /// Newton tolerance on the Euclidean residual norm [default: 1e-10].
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub continuation: Option<Switch>,
    /// Output directory for errors.csv and the friction CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Args {
    /// Study configuration: file values (if any) overridden by flags.
    pub fn to_config(&self) -> Result<StudyConfig, Error> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => StudyConfig::default(),
        };
        if let Some(f) = self.family {
            c.family = f.into();
        }
        if let Some(d) = &self.mesh_dir {
            c.mesh_dir = Some(d.clone());
        }
        if let Some(v) = self.levels {
            c.levels = v;
        }
        if let Some(v) = self.first_level {
            c.first_level = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.r {
            c.r = v;
        }
        if let Some(v) = self.mu {
            c.mu = v;
        }
        if let Some(v) = self.nu {
            c.nu = v;
        }
        if let Some(v) = self.tol {
            c.solver.tol = v;
        }
        if let Some(v) = self.max_iter {
            c.solver.max_iter = v;
        }
        if let Some(s) = self.continuation {
            c.solver.continuation = matches!(s, Switch::On);
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        Ok(c)
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let config = match args.to_config().and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match run_study(&config) {
        Ok(report) => {
            print!("{}", rate_table(&report));
            if report.all_converged() {
                0
            } else {
                for l in report.levels.iter().filter(|l| !l.converged) {
                    eprintln!(
                        "level {}: {}",
                        l.level,
                        l.failure.as_deref().unwrap_or("solver failure")
                    );
                }
                EXIT_SOLVER
            }
        }
        Err(
            e @ (Error::MeshIo { .. }
            | Error::MeshParse { .. }
            | Error::InvalidMesh(_)
            | Error::InvalidCell { .. }),
        ) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER
        }
    }
}
