//! Command-line front end.
//!
//! Exit codes: 0 success (converged, accepted, member, oracle agreement),
//! 1 negative verdict (rejected, non-member, oracle disagreement), 2 invalid
//! input, 3 solver non-convergence or an inconclusive verdict.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vecbeck::beckmann::{check_optimality, oracle_1d, solve_beckmann, SolveReport, SolverParams};
use vecbeck::cones::{monotone_membership, monotone_witness_check, sobolev_cone_check, tangent_cone_check, Verdict};
use vecbeck::error::{Error, Result};
use vecbeck::generate::{lq_separable, psd_field, random_balanced, rng_from_seed, two_dirac};
use vecbeck::grid::{discrete_gradient, lp_field_norm, GridSpec, MatrixField, VectorField, VectorMeasure};
use vecbeck::io::{read_matrix, FieldTable, Instance, InstanceFile};
use vecbeck::lq::{check_optifun, neumann_oracle, solve_lq, LqInstance, OptifunResiduals};
use vecbeck::schatten::{
    certify_equality_pq, certify_equality_q1, holder_slack, pairing, EqualityCertificate, Exponent,
};
use vecbeck::FORMAT_VERSION;

/// Relative tolerance of the `oracle` subcommand.
const ORACLE_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "vecbeck", version, about = "Beckmann transport of vector measures on grids")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Instance file to read.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Report file to write (stdout when absent). Field dumps are written
    /// next to it as `<stem>.<name>.csv`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    tol_gap: Option<f64>,
    #[arg(long, global = true)]
    tol_feas: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Expected format tag; anything other than the supported one is rejected.
    #[arg(long, global = true)]
    format_version: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Solve the Beckmann or L^q problem of an instance.
    Solve,
    /// Check the equality case of the matrix Hölder inequality for A and B.
    Certify(CertifyArgs),
    /// Polar-cone membership of the instance measure.
    Polar(PolarArgs),
    /// Compare the solver with a closed-form oracle.
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    TwoDirac,
    RandomBalanced,
    PsdField,
    LqSeparable,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    /// Space dimension.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Components per cell (defaults to 1 for two-dirac and n otherwise).
    #[arg(long)]
    m: Option<usize>,
    /// Cells per axis on the unit box.
    #[arg(long, default_value_t = 32)]
    cells: usize,
    /// Point a (one value is repeated along every axis).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    a: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    b: Vec<f64>,
    /// Mass vector of the two-Dirac measure (defaults to e₁).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    v: Vec<f64>,
    /// Fraction of nonzero cells for random-balanced.
    #[arg(long, default_value_t = 0.1)]
    fill: f64,
    /// Number of bumps for psd-field.
    #[arg(long, num_args = 0..=1, default_value_t = 2, default_missing_value = "1")]
    bump: usize,
    /// Random positive semi-definite weights instead of the identity.
    #[arg(long)]
    anisotropic: bool,
    /// Exponent for lq-separable.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
}

#[derive(Args)]
struct CertifyArgs {
    a: PathBuf,
    b: PathBuf,
    /// Exponent of A; `1` and `inf` select the trace-norm case.
    #[arg(long, default_value = "1")]
    p: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarMode {
    Monotone,
    TangentC1,
    Sobolev,
}

#[derive(Args)]
struct PolarArgs {
    #[arg(long, value_enum)]
    mode: PolarMode,
    /// Potential: `identity`, `neumann` (Neumann solve, rescaled), `optimal`
    /// (L^q solver potential) or a field CSV file.
    #[arg(long, default_value = "identity")]
    f: String,
    /// Overrides the exponent of an L^q instance.
    #[arg(long)]
    p: Option<f64>,
    /// Sampled witness maps.
    #[arg(long, default_value_t = 20)]
    witnesses: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("VECBECK_THREADS") {
        match v.parse::<usize>() {
            Ok(t) if t > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            _ => {
                eprintln!("error: VECBECK_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    if let Some(tag) = &g.format_version {
        if tag != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {tag:?}, this build writes {FORMAT_VERSION:?}"
            )));
        }
    }
    match &cli.command {
        Command::Gen(args) => cmd_gen(g, args),
        Command::Solve => cmd_solve(g),
        Command::Certify(args) => cmd_certify(g, args),
        Command::Polar(args) => cmd_polar(g, args),
        Command::Oracle => cmd_oracle(g),
    }
}

fn params(g: &Global, base: SolverParams) -> Result<SolverParams> {
    let mut p = base;
    if let Some(t) = g.tol_gap {
        p.gap_tol = t;
    }
    if let Some(t) = g.tol_feas {
        p.feas_tol = t;
    }
    if let Some(k) = g.max_iters {
        p.max_iters = k;
    }
    p.validate()?;
    Ok(p)
}

fn read_instance(g: &Global) -> Result<InstanceFile> {
    let path = g
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("--input is required".into()))?;
    InstanceFile::read(path)
}

fn emit_text(g: &Global, text: &str) -> Result<()> {
    match &g.output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn emit<T: Serialize>(g: &Global, value: &T) -> Result<()> {
    emit_text(g, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{name}.csv"))
}

/// Writes field dumps next to the report; nothing is dumped to stdout.
fn dump(g: &Global, fields: &[(&str, FieldTable)]) -> Result<()> {
    if let Some(path) = &g.output {
        for (name, table) in fields {
            table.write(&sibling(path, name))?;
        }
    }
    Ok(())
}

fn point(values: &[f64], n: usize, default: f64, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        0 => Ok(vec![default; n]),
        1 => Ok(vec![values[0]; n]),
        k if k == n => Ok(values.to_vec()),
        k => Err(Error::InvalidInput(format!("--{what} has {k} entries, expected 1 or {n}"))),
    }
}

fn cmd_gen(g: &Global, a: &GenArgs) -> Result<u8> {
    let grid = GridSpec::unit_box(&vec![a.cells; a.n])?;
    let mut rng = rng_from_seed(g.seed);
    let kind = a.kind.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let mut meta = serde_json::Map::new();
    meta.insert("generator".into(), kind.into());
    meta.insert("seed".into(), g.seed.into());
    let instance = match a.kind {
        GenKind::TwoDirac => {
            let m = a.m.unwrap_or(1);
            let pa = point(&a.a, a.n, 0.25, "a")?;
            let pb = point(&a.b, a.n, 0.75, "b")?;
            let v = if a.v.is_empty() {
                let mut e = vec![0.0; m];
                if m > 0 {
                    e[0] = 1.0;
                }
                e
            } else if a.v.len() == m {
                a.v.clone()
            } else {
                return Err(Error::InvalidInput(format!("--v has {} entries, expected m = {m}", a.v.len())));
            };
            meta.insert("a".into(), pa.clone().into());
            meta.insert("b".into(), pb.clone().into());
            meta.insert("v".into(), v.clone().into());
            Instance::Beckmann(two_dirac(grid, &pa, &pb, &v)?)
        }
        GenKind::RandomBalanced => {
            meta.insert("fill".into(), a.fill.into());
            Instance::Beckmann(random_balanced(grid, a.m.unwrap_or(a.n), a.fill, &mut rng)?)
        }
        GenKind::PsdField => {
            if a.m.is_some_and(|m| m != a.n) {
                return Err(Error::InvalidInput("psd-field instances have m = n".into()));
            }
            meta.insert("bumps".into(), a.bump.into());
            meta.insert("isotropic".into(), (!a.anisotropic).into());
            let s = psd_field(grid, a.bump, !a.anisotropic, &mut rng)?;
            Instance::Beckmann(vecbeck::cones::psd_field_to_measure(&s)?)
        }
        GenKind::LqSeparable => {
            let m = a.m.unwrap_or(a.n);
            let d = lq_separable(grid.clone(), m, &mut rng)?;
            Instance::Lq(LqInstance::from_density(grid, m, d, Exponent::new(a.p)?)?)
        }
    };
    let file = InstanceFile {
        instance,
        meta: meta.into_iter().collect(),
    };
    emit_text(g, &file.to_json()?)?;
    Ok(0)
}

#[derive(Serialize)]
struct SolveOutput {
    format: &'static str,
    problem: &'static str,
    #[serde(flatten)]
    report: SolveReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimality_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optifun: Option<OptifunResiduals>,
}

fn converged_code(report: &SolveReport) -> u8 {
    if report.converged {
        0
    } else {
        3
    }
}

fn cmd_solve(g: &Global) -> Result<u8> {
    let file = read_instance(g)?;
    match &file.instance {
        Instance::Beckmann(mu) => {
            let (flux, u, report) = solve_beckmann(mu, &params(g, SolverParams::default())?)?;
            let out = SolveOutput {
                format: FORMAT_VERSION,
                problem: "beckmann",
                optimality_residual: if mu.is_zero() { None } else { Some(check_optimality(&flux, &u)?) },
                optifun: None,
                report,
            };
            emit(g, &out)?;
            dump(g, &[("M", FieldTable::from(&flux)), ("u", FieldTable::from(&u))])?;
            Ok(converged_code(&out.report))
        }
        Instance::Lq(inst) => {
            let (f, h, report) = solve_lq(inst, &params(g, SolverParams::lq_default())?)?;
            let out = SolveOutput {
                format: FORMAT_VERSION,
                problem: "lq",
                optimality_residual: None,
                optifun: if inst.measure().is_zero() { None } else { Some(check_optifun(&f, &h, inst.q())?) },
                report,
            };
            emit(g, &out)?;
            dump(g, &[("H", FieldTable::from(&h)), ("f", FieldTable::from(&f))])?;
            Ok(converged_code(&out.report))
        }
    }
}

#[derive(Serialize)]
struct CertifyOutput {
    format: &'static str,
    mode: &'static str,
    p: f64,
    pairing: f64,
    holder_slack: f64,
    #[serde(flatten)]
    certificate: EqualityCertificate,
}

fn cmd_certify(g: &Global, args: &CertifyArgs) -> Result<u8> {
    let a = read_matrix(&args.a)?;
    let b = read_matrix(&args.b)?;
    let p = match args.p.as_str() {
        "inf" | "infinity" => Exponent::INFINITY,
        s => Exponent::new(
            s.parse()
                .map_err(|_| Error::InvalidInput(format!("bad exponent {s:?}")))?,
        )?,
    };
    let (mode, certificate) = if p == Exponent::ONE {
        ("q1", certify_equality_q1(&a, &b)?)
    } else if p == Exponent::INFINITY {
        ("q1", certify_equality_q1(&b, &a)?)
    } else {
        ("pq", certify_equality_pq(&a, &b, p)?)
    };
    let out = CertifyOutput {
        format: FORMAT_VERSION,
        mode,
        p: p.value().min(f64::MAX),
        pairing: pairing(&a, &b)?,
        holder_slack: holder_slack(&a, &b, p)?,
        certificate,
    };
    emit(g, &out)?;
    Ok(if out.certificate.accepted { 0 } else { 1 })
}

/// Rescales `f` to `‖Df‖_{L^p} = 1`.
fn unit_potential(f: VectorField, p: Exponent) -> Result<VectorField> {
    let norm = lp_field_norm(&discrete_gradient(&f), p)?;
    if norm == 0.0 {
        return Err(Error::Degenerate("the potential is constant".into()));
    }
    Ok(f.scaled(1.0 / norm))
}

fn potential(spec: &str, mu: &VectorMeasure, lq: Option<(&LqInstance, &SolverParams)>) -> Result<VectorField> {
    let grid = mu.grid().clone();
    match spec {
        "identity" => {
            if mu.m() != grid.dim() {
                return Err(Error::InvalidInput("the identity potential needs m = n".into()));
            }
            Ok(VectorField::coordinates(grid))
        }
        "neumann" => {
            let (f, _) = neumann_oracle(mu)?;
            match lq {
                Some((inst, _)) => unit_potential(f, inst.p()),
                None => Ok(f),
            }
        }
        "optimal" => {
            let (inst, params) =
                lq.ok_or_else(|| Error::InvalidInput("--f optimal needs an L^q instance".into()))?;
            let (f, _, _) = solve_lq(inst, params)?;
            unit_potential(f, inst.p())
        }
        path => FieldTable::read(Path::new(path))?.to_vector_field(),
    }
}

fn cmd_polar(g: &Global, args: &PolarArgs) -> Result<u8> {
    let file = read_instance(g)?;
    let mu = file.instance.measure();
    let report = match args.mode {
        PolarMode::Monotone => {
            let mut r = monotone_membership(mu, &params(g, SolverParams::default())?)?;
            r.witness = Some(monotone_witness_check(mu, args.witnesses, g.seed)?);
            r
        }
        PolarMode::TangentC1 => {
            let f = potential(&args.f, mu, None)?;
            tangent_cone_check(mu, &f, &params(g, SolverParams::default())?)?
        }
        PolarMode::Sobolev => {
            let Instance::Lq(inst) = &file.instance else {
                return Err(Error::InvalidInput("sobolev mode needs a density instance with an exponent".into()));
            };
            let inst = match args.p {
                Some(p) => LqInstance::new(inst.measure().clone(), Exponent::new(p)?)?,
                None => inst.clone(),
            };
            let params = params(g, SolverParams::lq_default())?;
            let f = potential(&args.f, inst.measure(), Some((&inst, &params)))?;
            sobolev_cone_check(&inst, &f, &params, args.witnesses, g.seed)?
        }
    };
    emit(g, &report)?;
    let mut fields: Vec<(&str, FieldTable)> = Vec::new();
    if let Some(c) = &report.certificate {
        fields.push((if c.kind() == vecbeck::grid::FieldKind::Density { "H" } else { "M" }, FieldTable::from(c)));
    }
    if let Some(u) = &report.potential {
        fields.push(("u", FieldTable::from(u)));
    }
    if let Some(s) = report.psd_certificate.as_ref().and_then(|c| c.field.as_ref()) {
        fields.push(("S", FieldTable::from(s)));
    }
    dump(g, &fields)?;
    Ok(match report.verdict {
        Verdict::Member => 0,
        Verdict::NonMember => 1,
        Verdict::Inconclusive => 3,
    })
}

#[derive(Serialize)]
struct OracleOutput {
    format: &'static str,
    oracle: &'static str,
    oracle_value: f64,
    solver: SolveReport,
    relative_error: f64,
    tolerance: f64,
    agree: bool,
}

fn cmd_oracle(g: &Global) -> Result<u8> {
    let file = read_instance(g)?;
    let (oracle, value, solver, fields): (_, _, _, Vec<(&str, FieldTable)>) = match &file.instance {
        Instance::Beckmann(mu) => {
            if mu.grid().dim() != 1 {
                return Err(Error::InvalidInput("the transport oracle is one-dimensional".into()));
            }
            let (value, flux): (f64, MatrixField) = oracle_1d(mu)?;
            let (_, _, report) = solve_beckmann(mu, &params(g, SolverParams::default())?)?;
            ("1d", value, report, vec![("oracle.M", FieldTable::from(&flux))])
        }
        Instance::Lq(inst) => {
            if inst.p() != Exponent::TWO {
                return Err(Error::InvalidInput("the Neumann oracle needs p = 2".into()));
            }
            let (f, value) = neumann_oracle(inst.measure())?;
            let (_, _, report) = solve_lq(inst, &params(g, SolverParams::lq_default())?)?;
            ("neumann", value, report, vec![("oracle.f", FieldTable::from(&f))])
        }
    };
    let relative_error = (solver.primal - value).abs() / value.abs().max(f64::MIN_POSITIVE);
    let relative_error = if value == 0.0 && solver.primal == 0.0 { 0.0 } else { relative_error };
    let out = OracleOutput {
        format: FORMAT_VERSION,
        oracle,
        oracle_value: value,
        agree: relative_error <= ORACLE_TOL,
        solver,
        relative_error,
        tolerance: ORACLE_TOL,
    };
    emit(g, &out)?;
    dump(g, &fields)?;
    Ok(if !out.solver.converged {
        3
    } else if out.agree {
        0
    } else {
        1
    })
}
