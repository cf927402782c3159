use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use stationary_discs::disc_solver::{canonical_disc, solve_disc_through_point, SolverConfig, StationaryDiscSolution, Truncation};
use stationary_discs::fibration::{central_lift, matrix_b, matrix_k, FibrationSystem, SphereConormal};
use stationary_discs::io::{self, CheckFile, DiscFile, MapFile, StructureFile};
use stationary_discs::linalg;
use stationary_discs::parallel;
use stationary_discs::riemann_hilbert::{partial_indices, IndexReport};
use stationary_discs::riemann_map::{
    annulus_samples, build_indicatrix, check_bounds, check_circled, check_foliation, check_indicatrix_pseudoconvex, identity_map,
    map_samples, orbit_directions, riemann_map_eval, shell_samples, verify_equivalence, RiemannMapData,
};
use stationary_discs::structures::{sample_polynomial, sample_pullback, StructureField};
use stationary_discs::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sdisc", version, about = "Stationary discs of deformed unit balls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug, Clone, Default)]
struct SolverArgs {
    /// JSON file with solver settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// analytic truncation M
    #[arg(long, global = true)]
    modes: Option<usize>,
    /// initial continuation step
    #[arg(long, global = true)]
    step: Option<f64>,
    #[arg(long, global = true)]
    boundary_tol: Option<f64>,
    #[arg(long, global = true)]
    update_tol: Option<f64>,
    /// seed for randomised samples
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// write the artifact here instead of stdout
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write structure and map files
    Structure {
        #[command(subcommand)]
        action: StructureAction,
    },
    /// Solve stationary discs
    Disc {
        #[command(subcommand)]
        action: DiscAction,
    },
    /// Partial indices of a fibration along a lifted disc
    Indices(IndicesArgs),
    /// Table of Riemann-map values
    RiemannMap(RiemannMapArgs),
    /// Verification suites
    Check {
        #[command(subcommand)]
        suite: CheckSuite,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Standard,
    Polynomial,
    Pullback,
}

#[derive(Subcommand, Debug)]
enum StructureAction {
    Make {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        /// for pullbacks, also write the ball map
        #[arg(long)]
        phi_output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum DiscAction {
    Solve {
        /// structure file (the standard structure when absent)
        #[arg(long)]
        structure: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// overrides the structure file's parameter
        #[arg(long)]
        lambda: Option<f64>,
        /// tangent direction in real form, comma separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v: Option<Vec<f64>>,
        /// point the disc passes through, real form
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "v")]
        through: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FibrationKind {
    SphereConormal,
}

#[derive(Args, Debug)]
struct IndicesArgs {
    #[arg(long, value_enum, default_value = "sphere-conormal")]
    fibration: FibrationKind,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// lifted disc to evaluate along (the central disc when absent)
    #[arg(long)]
    disc: Option<PathBuf>,
    /// structure the disc belongs to
    #[arg(long)]
    structure: Option<PathBuf>,
    /// boundary grid size
    #[arg(long, default_value_t = 64)]
    points: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum Emit {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct RiemannMapArgs {
    #[arg(long)]
    structure: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// sampled radii lie in `[margin, 1 - margin]`
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    #[arg(long, value_enum, default_value = "csv")]
    emit: Emit,
}

#[derive(Args, Debug, Clone)]
struct CheckCommon {
    #[arg(long)]
    structure: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

#[derive(Subcommand, Debug)]
enum CheckSuite {
    Foliation {
        #[command(flatten)]
        common: CheckCommon,
        /// points whose inverse-map Jacobian is measured
        #[arg(long, default_value_t = 5)]
        jacobians: usize,
        #[arg(long, default_value_t = 1e-7)]
        leaf_tol: f64,
    },
    Circled {
        #[command(flatten)]
        common: CheckCommon,
        #[arg(long, default_value_t = 8)]
        angles: usize,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    Bounds {
        #[command(flatten)]
        common: CheckCommon,
    },
    Equivalence {
        #[command(flatten)]
        common: CheckCommon,
        /// candidate map (the identity when absent)
        #[arg(long)]
        phi: Option<PathBuf>,
        /// image structure (the standard structure when absent)
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    Pseudoconvex {
        #[command(flatten)]
        common: CheckCommon,
        /// angular grid resolution of the indicatrix
        #[arg(long, default_value_t = 8)]
        resolution: usize,
        /// use the Levi form of the deformed structure instead of J0
        #[arg(long)]
        deformed_levi: bool,
    },
}

/// Solver settings read from `--config`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    modes: Option<usize>,
    step: Option<f64>,
    max_step: Option<f64>,
    boundary_tol: Option<f64>,
    update_tol: Option<f64>,
    extension_tol: Option<f64>,
}

fn solver_config(args: &SolverArgs) -> Result<SolverConfig> {
    let file: RunConfig = match &args.config {
        Some(p) => io::read_json(p)?,
        None => RunConfig::default(),
    };
    let modes = args.modes.or(file.modes).unwrap_or(Truncation::default().modes);
    if modes < 8 {
        return Err(Error::Invalid(format!("truncation must be at least 8, got {modes}")));
    }
    let mut cfg = SolverConfig::with_truncation(Truncation::with_modes(modes));
    let set = |target: &mut f64, value: Option<f64>, name: &str| -> Result<()> {
        if let Some(v) = value {
            if !(v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive")));
            }
            *target = v;
        }
        Ok(())
    };
    set(&mut cfg.step, args.step.or(file.step), "step")?;
    set(&mut cfg.max_step, file.max_step, "max_step")?;
    cfg.max_step = cfg.max_step.max(cfg.step);
    set(&mut cfg.boundary_tol, args.boundary_tol.or(file.boundary_tol), "boundary_tol")?;
    set(&mut cfg.update_tol, args.update_tol.or(file.update_tol), "update_tol")?;
    set(&mut cfg.extension_tol, file.extension_tol, "extension_tol")?;
    Ok(cfg)
}

fn load_structure(path: Option<&Path>, n: usize) -> Result<StructureField> {
    match path {
        Some(p) => {
            let file: StructureFile = io::read_json(p)?;
            file.to_structure().map_err(|e| match e {
                Error::Invalid(m) => Error::Invalid(format!("{}: {m}", p.display())),
                other => other,
            })
        }
        None => Ok(StructureField::standard(n)),
    }
}

fn complex_vector(x: &[f64], what: &str) -> Result<Vec<Complex64>> {
    if x.is_empty() || x.len() % 2 != 0 {
        return Err(Error::Invalid(format!("{what} needs an even number of real components")));
    }
    Ok(linalg::complex_form(x))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    emit(path, &io::to_json(value)?)
}

fn emit_check<R: Serialize>(args: &SolverArgs, check: &str, lambda: f64, pass: bool, report: R) -> Result<bool> {
    emit_json(
        args.output.as_deref(),
        &CheckFile {
            check: check.into(),
            pass,
            lambda,
            seed: args.seed,
            report,
        },
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct IndicesOutput {
    fibration: &'static str,
    n: usize,
    #[serde(flatten)]
    report: IndexReport,
}

fn indices(args: &IndicesArgs) -> Result<IndicesOutput> {
    let FibrationKind::SphereConormal = args.fibration;
    let (fib, values, n) = match &args.disc {
        None => (SphereConormal::new(args.n)?, central_lift(args.n, args.points), args.n),
        Some(p) => {
            let disc: DiscFile = io::read_json(p)?;
            let structure = load_structure(args.structure.as_deref(), disc.n)?.with_lambda(disc.lambda);
            let f = disc.f_coeffs.to_disc()?;
            let g = disc.g_coeffs.to_disc()?;
            let mut values = f.boundary_grid(args.points)?;
            values.extend(g.boundary_grid(args.points)?);
            (SphereConormal::deformed(structure)?, values, disc.n)
        }
    };
    debug_assert_eq!(fib.dim(), 2 * n);
    let b = matrix_b(&matrix_k(&fib, &values)?)?;
    Ok(IndicesOutput {
        fibration: "sphere-conormal",
        n,
        report: partial_indices(&b)?,
    })
}

fn disc_solve(
    structure: Option<&Path>,
    n: usize,
    lambda: Option<f64>,
    v: Option<&[f64]>,
    through: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<DiscFile> {
    let mut s = load_structure(structure, n)?;
    if let Some(l) = lambda {
        if !(l >= 0.0) {
            return Err(Error::Invalid("lambda must be nonnegative".into()));
        }
        s = s.with_lambda(l);
    }
    let sol: StationaryDiscSolution = match (v, through) {
        (_, Some(z)) => solve_disc_through_point(&s, &complex_vector(z, "--through")?, None, cfg)?.0,
        (Some(v), None) => canonical_disc(&s, &complex_vector(v, "--v")?, cfg)?,
        (None, None) => return Err(Error::Invalid("disc solve needs --v or --through".into())),
    };
    Ok(DiscFile::from_solution(&sol))
}

fn riemann_map(args: &RiemannMapArgs, solver: &SolverArgs, cfg: &SolverConfig) -> Result<()> {
    let s = load_structure(args.structure.as_deref(), args.n)?;
    let n = s.n();
    let data = RiemannMapData::new(s, cfg.clone());
    let zs = annulus_samples(n, args.points, args.margin, solver.seed);
    let points = parallel::map(&zs, |z| riemann_map_eval(&data, z));
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    match args.emit {
        Emit::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header: Vec<String> = (1..=2 * n).map(|i| format!("z{i}")).collect();
            header.extend((1..=2 * n).map(|i| format!("psi{i}")));
            header.push("r".into());
            header.extend((1..=2 * n).map(|i| format!("v{i}")));
            w.write_record(&header).map_err(|e| Error::Invalid(e.to_string()))?;
            for p in &points {
                let mut row: Vec<f64> = linalg::real_form(&p.z);
                row.extend(linalg::real_form(&p.psi));
                row.push(p.r);
                row.extend(linalg::real_form(&p.v));
                w.write_record(row.iter().map(|x| format!("{x:.16e}")))
                    .map_err(|e| Error::Invalid(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
            emit(solver.output.as_deref(), &String::from_utf8_lossy(&bytes))
        }
        Emit::Json => {
            #[derive(Serialize)]
            struct Row {
                z: Vec<f64>,
                psi: Vec<f64>,
                r: f64,
                v: Vec<f64>,
            }
            let rows: Vec<Row> = points
                .iter()
                .map(|p| Row {
                    z: linalg::real_form(&p.z),
                    psi: linalg::real_form(&p.psi),
                    r: p.r,
                    v: linalg::real_form(&p.v),
                })
                .collect();
            emit_json(solver.output.as_deref(), &rows)
        }
    }
}

fn check(suite: &CheckSuite, solver: &SolverArgs, cfg: &SolverConfig) -> Result<bool> {
    match suite {
        CheckSuite::Foliation { common, jacobians, leaf_tol } => {
            let s = load_structure(common.structure.as_deref(), common.n)?;
            let zs = annulus_samples(s.n(), common.samples, 0.05, solver.seed);
            let report = check_foliation(&s, &zs, *jacobians, cfg)?;
            let pass = report.passes(*leaf_tol);
            emit_check(solver, "foliation", s.lambda(), pass, report)
        }
        CheckSuite::Circled { common, angles, tol } => {
            let s = load_structure(common.structure.as_deref(), common.n)?;
            let dirs: Vec<Vec<Complex64>> = stationary_discs::structures::sphere_samples(2 * s.n(), common.samples, solver.seed)
                .iter()
                .map(|x| linalg::complex_form(x))
                .collect();
            let thetas: Vec<f64> = (1..=*angles)
                .map(|k| 2.0 * std::f64::consts::PI * k as f64 / (*angles as f64 + 1.0))
                .collect();
            let report = check_circled(&s, &dirs, &thetas, cfg)?;
            let pass = report.max_disc_mismatch <= *tol;
            emit_check(solver, "circled", s.lambda(), pass, report)
        }
        CheckSuite::Bounds { common } => {
            let s = load_structure(common.structure.as_deref(), common.n)?;
            let lambda = s.lambda();
            let zs = shell_samples(s.n(), common.samples, &[0.25, 0.5, 0.75], solver.seed);
            let report = check_bounds(&RiemannMapData::new(s, cfg.clone()), &zs)?;
            let pass = report.lower.is_finite() && report.lower > 0.0 && report.upper.is_finite();
            emit_check(solver, "bounds", lambda, pass, report)
        }
        CheckSuite::Equivalence { common, phi, target, tol } => {
            let s = load_structure(common.structure.as_deref(), common.n)?;
            let n = s.n();
            let map = match phi {
                Some(p) => io::read_json::<MapFile>(p)?.to_map()?,
                None => identity_map(n),
            };
            let t = load_structure(target.as_deref(), n)?;
            let zs = map_samples(n, common.samples, 0.9, solver.seed);
            let report = verify_equivalence(&s, &t, &map, &zs, cfg)?;
            let pass = report.max_discrepancy <= *tol;
            emit_check(solver, "equivalence", s.lambda(), pass, report)
        }
        CheckSuite::Pseudoconvex {
            common,
            resolution,
            deformed_levi,
        } => {
            let s = load_structure(common.structure.as_deref(), common.n)?;
            debug_assert!(!orbit_directions(s.n(), *resolution).is_empty());
            let grid = build_indicatrix(&s, *resolution, cfg)?;
            let levi = if *deformed_levi { s.clone() } else { StructureField::standard(s.n()) };
            let report = check_indicatrix_pseudoconvex(&grid, &levi)?;
            let pass = report.min_eigenvalue > 0.0;
            emit_check(solver, "pseudoconvex", s.lambda(), pass, report)
        }
    }
}

fn structure_make(kind: Kind, n: usize, lambda: f64, amplitude: f64, phi_output: Option<&Path>, out: Option<&Path>) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::Invalid("lambda must be nonnegative".into()));
    }
    let s = match kind {
        Kind::Standard => StructureField::standard(n),
        Kind::Polynomial => sample_polynomial(n, lambda, amplitude)?,
        Kind::Pullback => sample_pullback(n, lambda, amplitude)?,
    };
    if let Some(p) = phi_output {
        let map = s
            .ball_map()
            .ok_or_else(|| Error::Invalid("--phi-output needs --kind pullback".into()))?;
        io::write_json(p, &MapFile::from_map(&map))?;
    }
    emit_json(out, &StructureFile::from_structure(&s)?)
}

fn run(cli: &Cli) -> Result<bool> {
    parallel::init_from_env();
    let cfg = solver_config(&cli.solver)?;
    let out = cli.solver.output.as_deref();
    match &cli.command {
        Command::Structure {
            action:
                StructureAction::Make {
                    kind,
                    n,
                    lambda,
                    amplitude,
                    phi_output,
                },
        } => structure_make(*kind, *n, *lambda, *amplitude, phi_output.as_deref(), out).map(|_| true),
        Command::Disc {
            action:
                DiscAction::Solve {
                    structure,
                    n,
                    lambda,
                    v,
                    through,
                },
        } => {
            let file = disc_solve(structure.as_deref(), *n, *lambda, v.as_deref(), through.as_deref(), &cfg)?;
            emit_json(out, &file).map(|_| true)
        }
        Command::Indices(args) => emit_json(out, &indices(args)?).map(|_| true),
        Command::RiemannMap(args) => riemann_map(args, &cli.solver, &cfg).map(|_| true),
        Command::Check { suite } => check(suite, &cli.solver, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("sdisc: {e}");
            ExitCode::from(2)
        }
    }
}
