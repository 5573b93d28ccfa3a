//! Acceptance gate: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use meshtensor::autodiff::gradients;
use meshtensor::check::compare;
use meshtensor::corpus::standard_corpus;
use meshtensor::gradcheck::{grad_check, Tolerance};
use meshtensor::layout::{enumerate_layouts, validate_layout, Violation};
use meshtensor::models::{transformer_block, transformer_layout, two_layer, two_layer_layouts, TransformerSizes};
use meshtensor::program::{Program, ProgramFile};
use meshtensor::report::{run_program, RunOptions};
use meshtensor::rng::random_bindings;
use meshtensor::spmd::{CollectiveOp, Instruction};
use meshtensor::{execute, lower_for, ComputationLayout, Mesh, NodeId};

const ORACLE_TOL: f64 = 1e-9;
const RUNTIME_BUDGET: Duration = Duration::from_secs(10);
const SIZES: (usize, usize, usize) = (8, 8, 16);

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn load(name: &str) -> Result<Program, String> {
    let file = ProgramFile::read(&corpus_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
    file.load().map_err(|e| format!("{name}: {e}"))
}

fn mesh_names(rank: usize) -> &'static [&'static str] {
    if rank == 1 {
        &["all"]
    } else {
        &["rows", "cols", "planes"][..rank]
    }
}

/// The five network layouts expressed on a mesh of the given shape; a
/// layout that needs more mesh dimensions than the mesh has is skipped.
fn layouts_for(shape: &[usize]) -> Vec<(&'static str, ComputationLayout, Mesh)> {
    let names = mesh_names(shape.len());
    let dims: Vec<(&str, usize)> = names.iter().copied().zip(shape.iter().copied()).collect();
    let mesh = Mesh::of(&dims).unwrap();
    let mut out = vec![
        ("replicated", ComputationLayout::empty()),
        ("data-parallel", ComputationLayout::of(&[("batch", names[0])]).unwrap()),
        ("model-parallel", ComputationLayout::of(&[("hidden", names[0])]).unwrap()),
    ];
    if shape.len() >= 2 {
        out.push(("2d", ComputationLayout::of(&[("batch", names[0]), ("hidden", names[1])]).unwrap()));
    }
    if shape.len() >= 3 {
        out.push((
            "3d",
            ComputationLayout::of(&[("batch", names[0]), ("hidden", names[1]), ("io", names[2])]).unwrap(),
        ));
    }
    out.into_iter().map(|(n, l)| (n, l, mesh.clone())).collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (b, d_io, d_h) = SIZES;
    let net = two_layer(b, d_io, d_h).map_err(|e| e.to_string())?;
    let bindings = random_bindings(&net.graph, 1, -1.0, 1.0);
    let outputs = net.outputs();
    let mut runs = 0;
    let mut worst: f64 = 0.0;
    for shape in [&[1][..], &[2], &[4], &[2, 2], &[2, 2, 2]] {
        for (name, layout, mesh) in layouts_for(shape) {
            let cmp = compare(&net.graph, &layout, &mesh, &outputs, &bindings)
                .map_err(|e| format!("{name} on {mesh}: {e}"))?;
            ensure(cmp.max_error() <= ORACLE_TOL, || {
                format!("{name} on {mesh}: max relative error {:e}", cmp.max_error())
            })?;
            worst = worst.max(cmp.max_error());
            runs += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < RUNTIME_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{runs} layout/mesh runs, max error {worst:e}, {:.2}s", elapsed.as_secs_f64()))
}

fn allreduced(layout: &ComputationLayout, mesh: &Mesh) -> Result<u64, String> {
    let (b, d_io, d_h) = SIZES;
    let net = two_layer(b, d_io, d_h).map_err(|e| e.to_string())?;
    let bindings = random_bindings(&net.graph, 2, -1.0, 1.0);
    let cmp = compare(&net.graph, layout, mesh, &net.outputs(), &bindings).map_err(|e| e.to_string())?;
    ensure(cmp.max_error() <= ORACLE_TOL, || format!("{layout} on {mesh} disagrees with the reference"))?;
    let entries = cmp.execution.ledger.entries(mesh);
    ensure(entries.windows(2).all(|w| w[0].total == w[1].total), || {
        format!("{layout} on {mesh}: processors communicate unequal amounts")
    })?;
    let counts = entries[0].total;
    ensure(counts.allgather == 0 && counts.alltoall == 0, || format!("{layout} on {mesh}: unexpected collectives"))?;
    Ok(counts.allreduce)
}

fn data_parallel_comm() -> Outcome {
    let (_, d_io, d_h) = SIZES;
    let want = (d_io * d_h + d_h + d_h * d_io) as u64;
    for n in [2, 4] {
        let got = allreduced(&ComputationLayout::of(&[("batch", "all")]).unwrap(), &Mesh::of(&[("all", n)]).unwrap())?;
        ensure(got == want, || format!("n={n}: {got} elements, expected {want}"))?;
    }
    Ok(format!("{want} elements per processor at n=2,4"))
}

fn model_parallel_comm() -> Outcome {
    let (b, d_io, _) = SIZES;
    let want = (2 * b * d_io) as u64;
    for n in [2, 4] {
        let got = allreduced(&ComputationLayout::of(&[("hidden", "all")]).unwrap(), &Mesh::of(&[("all", n)]).unwrap())?;
        ensure(got == want, || format!("n={n}: {got} elements, expected {want}"))?;
    }
    Ok(format!("{want} elements per processor at n=2,4"))
}

fn two_dimensional_comm() -> Outcome {
    let (b, d_io, d_h) = SIZES;
    let mut detail = Vec::new();
    for (r, c) in [(2, 2), (2, 4)] {
        let layout = ComputationLayout::of(&[("batch", "rows"), ("hidden", "cols")]).unwrap();
        let got = allreduced(&layout, &Mesh::of(&[("rows", r), ("cols", c)]).unwrap())?;
        let activations_and_weights = (2 * b * d_io / r + 2 * d_io * d_h / c) as u64;
        // The bias gradient is allreduced as well.
        let bias = (d_h / c) as u64;
        ensure(got == activations_and_weights + bias, || {
            format!("(r,c)=({r},{c}): {got} elements, expected {activations_and_weights} + {bias} for the bias")
        })?;
        detail.push(format!("({r},{c}): {activations_and_weights}+{bias}"));
    }
    Ok(detail.join(", "))
}

fn table_reproduction() -> Outcome {
    let failures = common::table_failures();
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!(
        "{} rows symbolic, {} settings within {}%",
        common::expected_rows().len(),
        common::SETTINGS.len(),
        common::NUMERIC_TOL * 100.0
    ))
}

fn legality() -> Outcome {
    let p = load("two_layer_illegal.json")?;
    let violations = validate_layout(&p.graph, &p.layout, &p.mesh).err().unwrap_or_default();
    ensure(
        violations
            .iter()
            .any(|v| matches!(v, Violation::DoubleSplit { tensor, mesh_dim, .. } if tensor == "h" && mesh_dim == "all")),
        || format!("illegal layout not rejected with DoubleSplit on h: {violations:?}"),
    )?;

    let p = load("two_layer_not_divisible.json")?;
    let violations = validate_layout(&p.graph, &p.layout, &p.mesh).err().unwrap_or_default();
    ensure(
        !violations.is_empty() && violations.iter().all(|v| matches!(v, Violation::NotDivisible { .. })),
        || format!("non-divisible sizes not rejected: {violations:?}"),
    )?;

    let net = two_layer(SIZES.0, SIZES.1, SIZES.2).map_err(|e| e.to_string())?;
    let mut legal = 0;
    for n in [1, 2, 4] {
        for nl in two_layer_layouts(n, 2, 2, 2).map_err(|e| e.to_string())? {
            validate_layout(&net.graph, &nl.layout, &nl.mesh)
                .map_err(|v| format!("{} on {} rejected: {v:?}", nl.name, nl.mesh))?;
            legal += 1;
        }
    }
    Ok(format!("DoubleSplit on h over \"all\", NotDivisible, {legal} legal layouts accepted"))
}

fn reshape_patterns() -> Outcome {
    let mut detail = Vec::new();
    for (file, want) in [
        ("reshape_allgather.json", "Allgather"),
        ("reshape_slice.json", "LocalSlice"),
        ("reshape_alltoall.json", "Alltoall"),
    ] {
        let p = load(file)?;
        let cmp = compare(&p.graph, &p.layout, &p.mesh, &p.outputs, &p.bindings).map_err(|e| format!("{file}: {e}"))?;
        ensure(cmp.max_error() <= ORACLE_TOL, || format!("{file}: error {:e}", cmp.max_error()))?;
        let steps: Vec<&str> = cmp
            .program
            .instructions
            .iter()
            .filter_map(|inst| match inst {
                Instruction::Collective { collective: CollectiveOp::Allgather { .. }, .. } => Some("Allgather"),
                Instruction::Collective { collective: CollectiveOp::Alltoall { .. }, .. } => Some("Alltoall"),
                Instruction::Collective { collective: CollectiveOp::Allreduce { .. }, .. } => Some("Allreduce"),
                Instruction::LocalSlice { .. } => Some("LocalSlice"),
                _ => None,
            })
            .collect();
        ensure(steps == [want], || format!("{file}: data movement {steps:?}, expected [{want}]"))?;
        detail.push(want);
    }
    Ok(detail.join(", "))
}

fn gradient_correctness() -> Outcome {
    let tol = Tolerance::default();
    let (b, d_io, d_h) = SIZES;
    let net = two_layer(b, d_io, d_h).map_err(|e| e.to_string())?;
    let bindings = random_bindings(&net.graph, 3, -1.0, 1.0);
    let wrt = [net.w, net.bias, net.v, net.x];
    let report = grad_check(&net.graph, net.loss, &wrt, &bindings, tol, &gradients).map_err(|e| e.to_string())?;
    ensure(report.passed, || format!("two-layer finite differences: {:?}", report.params))?;

    let t = transformer_block(TransformerSizes::default()).map_err(|e| e.to_string())?;
    let t_bindings = random_bindings(&t.graph, 4, -1.0, 1.0);
    let report = grad_check(&t.graph, t.loss, &t.wrt, &t_bindings, tol, &gradients).map_err(|e| e.to_string())?;
    ensure(report.passed, || format!("transformer finite differences: {:?}", report.params))?;

    let grads: Vec<NodeId> = net.grads.values().copied().collect();
    let mut layouts = 0;
    for mesh in [Mesh::of(&[("all", 2)]).unwrap(), Mesh::of(&[("rows", 2), ("cols", 2)]).unwrap()] {
        for layout in enumerate_layouts(&net.graph, &mesh).map_err(|e| e.to_string())? {
            let cmp = compare(&net.graph, &layout, &mesh, &grads, &bindings)
                .map_err(|e| format!("{layout} on {mesh}: {e}"))?;
            ensure(cmp.max_error() <= ORACLE_TOL, || format!("{layout} on {mesh}: error {:e}", cmp.max_error()))?;
            layouts += 1;
        }
    }
    let (tg, t_grads) = gradients(&t.graph, t.loss, &t.wrt).map_err(|e| e.to_string())?;
    let t_bindings = random_bindings(&tg, 4, -1.0, 1.0);
    let t_outputs: Vec<NodeId> = t_grads.values().copied().collect();
    let mesh2 = Mesh::of(&[("all", 2)]).unwrap();
    let mut t_cases: Vec<(ComputationLayout, Mesh)> = enumerate_layouts(&t.graph, &mesh2)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|l| (l, mesh2.clone()))
        .collect();
    t_cases.push((transformer_layout(), Mesh::of(&[("all", 4)]).unwrap()));
    for (layout, mesh) in t_cases {
        let cmp = compare(&tg, &layout, &mesh, &t_outputs, &t_bindings)
            .map_err(|e| format!("transformer {layout} on {mesh}: {e}"))?;
        ensure(cmp.max_error() <= ORACLE_TOL, || {
            format!("transformer {layout} on {mesh}: error {:e}", cmp.max_error())
        })?;
        layouts += 1;
    }
    Ok(format!(
        "finite differences pass (eps {}, tol {}), {layouts} SPMD gradient runs within {ORACLE_TOL:e}",
        tol.eps, tol.rel_tol
    ))
}

fn sgd_step() -> Outcome {
    let p = load("sgd_step_data_parallel.json")?;
    ensure(p.mesh.num_processors() == 4, || format!("mesh {} is not 4 processors", p.mesh))?;
    ensure(!p.updates.is_empty(), || "no parameter updates".into())?;
    let updated: Vec<NodeId> = p.updates.values().copied().collect();
    let names: Vec<String> = updated.iter().map(|id| p.graph.node(*id).name.clone()).collect();

    let cmp = compare(&p.graph, &p.layout, &p.mesh, &updated, &p.bindings).map_err(|e| e.to_string())?;
    ensure(cmp.max_error() <= ORACLE_TOL, || format!("differs from single device: {:e}", cmp.max_error()))?;

    let program = lower_for(&p.graph, &p.layout, &p.mesh, &updated).map_err(|e| e.to_string())?;
    let bits = || -> Result<Vec<Vec<u64>>, String> {
        let run = execute(&program, &p.bindings).map_err(|e| e.to_string())?;
        names
            .iter()
            .map(|n| {
                run.assembled(&program, n)
                    .map(|v| v.data().iter().map(|x| x.to_bits()).collect())
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let first = bits()?;
    for _ in 0..3 {
        ensure(bits()? == first, || "parameters differ between runs".into())?;
    }
    Ok(format!("{} parameters updated, error {:e}, bitwise stable over 4 runs", names.len(), cmp.max_error()))
}

fn determinism() -> Outcome {
    let opts = RunOptions { check_against_reference: true, timing: false };
    let mut runs = 0;
    for (name, _) in standard_corpus() {
        for seed in [None, Some(7)] {
            let report = || -> Result<Option<String>, String> {
                let mut file = ProgramFile::read(&corpus_dir().join(&name)).map_err(|e| e.to_string())?;
                if let Some(s) = seed {
                    file.reseed(s);
                }
                let p = file.load().map_err(|e| e.to_string())?;
                if validate_layout(&p.graph, &p.layout, &p.mesh).is_err() {
                    return Ok(None);
                }
                run_program(&p, opts).map(|r| Some(r.to_json())).map_err(|e| e.to_string())
            };
            let a = report().map_err(|e| format!("{name}: {e}"))?;
            let b = report().map_err(|e| format!("{name}: {e}"))?;
            ensure(a == b, || format!("{name} with seed {seed:?}: reports differ"))?;
            runs += a.is_some() as usize;
        }
    }
    Ok(format!("{runs} corpus runs repeated with byte-identical reports"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("data-parallel communication", data_parallel_comm),
        ("model-parallel communication", model_parallel_comm),
        ("2D-layout communication", two_dimensional_comm),
        ("layout cost table", table_reproduction),
        ("legality", legality),
        ("reshape patterns", reshape_patterns),
        ("gradient correctness", gradient_correctness),
        ("data-parallel SGD step", sgd_step),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
