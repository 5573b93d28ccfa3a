use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use meshtensor::autodiff::{gradients, GradError, GradientMap};
use meshtensor::check::CheckError;
use meshtensor::cost::{estimate_for, rank_layouts, render_table, HardwareProfile};
use meshtensor::gradcheck::{grad_check, Tolerance};
use meshtensor::layout::{enumerate_layouts, validate_layout};
use meshtensor::program::{Program, ProgramFile};
use meshtensor::report::{run_program, RunOptions};
use meshtensor::{lower_for, CwOp, Graph, NodeId};

macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Lay out, lower, simulate and cost named-dimension tensor programs.
#[derive(Parser)]
#[command(name = "meshtensor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the layout against the graph and mesh.
    Validate { file: PathBuf },
    /// Execute the program on the simulated mesh.
    Run(RunArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Estimate per-processor FLOPs, communication and memory.
    Cost(CostArgs),
    /// Print the lowered SPMD program as JSON.
    Lower {
        file: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// Also run the single-device reference and compare every node.
    #[arg(long)]
    check_against_reference: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Replace every seeded binding's seed, counting up from this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Put the wall time in the report. Without it the time goes to stderr,
    /// keeping reports byte-for-byte reproducible.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    file: PathBuf,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Relative tolerance per element.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Negate the gradient of this parameter before checking.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct CostArgs {
    file: PathBuf,
    /// Rank every legal layout of the graph on the file's mesh.
    #[arg(long)]
    enumerate: bool,
    /// Seconds per FLOP and per communicated element, as "gamma,beta".
    #[arg(long, value_parser = parse_hardware)]
    hardware: Option<HardwareProfile>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_hardware(s: &str) -> Result<HardwareProfile, String> {
    let (gamma, beta) = s.split_once(',').ok_or("expected gamma,beta")?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    HardwareProfile::new(num(gamma)?, num(beta)?).map_err(|e| e.to_string())
}

/// A failed command and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }

    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }

    fn numerical(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }
}

impl From<CheckError> for Failure {
    fn from(e: CheckError) -> Self {
        match e {
            CheckError::Lower(_) => Failure::invalid(e),
            _ => Failure::numerical(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load(path: &Path, seed: Option<u64>) -> Result<Program, Failure> {
    let mut file = ProgramFile::read(path).map_err(Failure::io)?;
    if let Some(s) = seed {
        file.reseed(s);
    }
    let program = file.load().map_err(|e| Failure::io(anyhow!("{}: {e}", path.display())))?;
    Ok(program)
}

fn require_legal(p: &Program) -> Outcome {
    validate_layout(&p.graph, &p.layout, &p.mesh).map_err(|violations| {
        for v in &violations {
            outln!("{v}");
        }
        Failure::invalid(anyhow!("layout {} is illegal on mesh {} ({} violations)", p.layout, p.mesh, violations.len()))
    })
}

fn require_bound(p: &Program) -> Outcome {
    let missing = p.unbound();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Failure::io(anyhow!("no bindings for {}", missing.join(", "))))
    }
}

fn emit(json: &str, path: Option<&Path>) -> Outcome {
    match path {
        Some(path) => std::fs::write(path, format!("{json}\n"))
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(Failure::io),
        None => match writeln!(std::io::stdout().lock(), "{json}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::io(e)),
            _ => Ok(()),
        },
    }
}

fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn validate(file: &Path) -> Outcome {
    let p = load(file, None)?;
    require_legal(&p)?;
    outln!("layout {} is legal on mesh {}", p.layout, p.mesh);
    Ok(())
}

fn run(args: &RunArgs) -> Outcome {
    let p = load(&args.file, args.seed)?;
    require_legal(&p)?;
    require_bound(&p)?;
    let start = Instant::now();
    let opts = RunOptions { check_against_reference: args.check_against_reference, timing: args.timing };
    let report = run_program(&p, opts)?;
    if !args.timing {
        eprintln!("wall time: {:.3}s", start.elapsed().as_secs_f64());
    }
    emit(&report.to_json(), args.report.as_deref())?;
    if args.report.is_some() {
        let c = &report.communication.busiest_processor;
        outln!(
            "{} instructions, {} collectives; per processor: allreduce {}, allgather {}, alltoall {} elements",
            report.instructions, report.collectives, c.allreduce, c.allgather, c.alltoall
        );
    }
    match &report.reference {
        Some(check) if !check.passed => Err(Failure::numerical(anyhow!(
            "max relative error {:e} exceeds {:e}",
            check.max_error,
            check.tolerance
        ))),
        Some(check) => {
            if args.report.is_some() {
                outln!("matches the reference: max relative error {:e}", check.max_error);
            }
            Ok(())
        }
        None => Ok(()),
    }
}

fn grad_check_cmd(args: &GradCheckArgs) -> Outcome {
    let p = load(&args.file, args.seed)?;
    require_bound(&p)?;
    let loss = p.loss.ok_or_else(|| Failure::io(anyhow!("{}: no loss given", args.file.display())))?;
    if p.wrt.is_empty() {
        return Err(Failure::io(anyhow!("{}: wrt is empty", args.file.display())));
    }
    let tol = Tolerance { eps: args.eps, rel_tol: args.tol, ..Tolerance::default() };
    let corrupt = match &args.corrupt {
        Some(name) => Some(
            p.forward
                .find(name)
                .ok_or_else(|| Failure::io(anyhow!("no node named {name:?}")))?,
        ),
        None => None,
    };
    let build = |g: &Graph, loss: NodeId, wrt: &[NodeId]| -> Result<(Graph, GradientMap), GradError> {
        let (mut g, mut map) = gradients(g, loss, wrt)?;
        if let Some(target) = corrupt.filter(|t| map.contains_key(t)) {
            let negated = g.componentwise("grad/corrupted", CwOp::Neg, &[map[&target]])?;
            map.insert(target, negated);
        }
        Ok((g, map))
    };
    let report = grad_check(&p.forward, loss, &p.wrt, &p.bindings, tol, &build).map_err(Failure::numerical)?;
    for param in &report.params {
        outln!(
            "{} {}: {} elements, max abs error {:.3e}, max rel error {:.3e}",
            if param.passed { "PASS" } else { "FAIL" },
            param.name,
            param.elements,
            param.max_abs_error,
            param.max_rel_error
        );
    }
    if let Some(path) = &args.report {
        emit(&to_json(&report), Some(path))?;
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.params.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        Err(Failure::numerical(anyhow!("gradient check failed for {}", failed.join(", "))))
    }
}

fn cost(args: &CostArgs) -> Outcome {
    let p = load(&args.file, None)?;
    let profile = args.hardware.as_ref();
    if args.enumerate {
        let candidates = enumerate_layouts(&p.graph, &p.mesh).map_err(Failure::invalid)?;
        let mut ranked = rank_layouts(&p.graph, &p.mesh, &candidates, &p.outputs).map_err(Failure::invalid)?;
        if let Some(profile) = profile {
            for r in &mut ranked {
                r.report = estimate_for(&p.graph, &r.layout, &p.mesh, &p.outputs, Some(profile)).map_err(Failure::invalid)?;
            }
        }
        let reports: Vec<_> = ranked.iter().map(|r| &r.report).collect();
        outln!("{} legal layouts on mesh {}, best first", ranked.len(), p.mesh);
        out!("{}", render_table(&reports));
        for (i, r) in ranked.iter().enumerate().filter(|(_, r)| r.inefficient) {
            outln!("#{} {} repeats work:", i + 1, r.layout);
            for w in &r.warnings {
                outln!("  {w}");
            }
        }
        if let Some(path) = &args.report {
            emit(&to_json(&ranked), Some(path))?;
        }
        return Ok(());
    }
    require_legal(&p)?;
    let report = estimate_for(&p.graph, &p.layout, &p.mesh, &p.outputs, profile).map_err(Failure::invalid)?;
    out!("{}", render_table(&[&report]));
    let s = &report.symbolic;
    outln!("flops per processor: {} = {}", report.flops_per_processor, s.flops.total());
    outln!("communicated elements per processor: {} = {}", report.comm_total, s.comm.total());
    outln!("peak memory per processor: {} (forward only: {})", report.peak_memory_elements_per_processor, report.peak_memory_forward);
    if let Some(sec) = &report.seconds {
        outln!("time: {:e}s compute + {:e}s communication = {:e}s", sec.compute, sec.communication, sec.total);
    }
    if let Some(path) = &args.report {
        emit(&to_json(&report), Some(path))?;
    }
    Ok(())
}

fn lower_cmd(file: &Path, report: Option<&Path>) -> Outcome {
    let p = load(file, None)?;
    require_legal(&p)?;
    let program = lower_for(&p.graph, &p.layout, &p.mesh, &p.outputs).map_err(Failure::invalid)?;
    emit(&program.to_json(), report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Validate { file } => validate(file),
        Command::Run(args) => run(args),
        Command::GradCheck(args) => grad_check_cmd(args),
        Command::Cost(args) => cost(args),
        Command::Lower { file, report } => lower_cmd(file, report.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
