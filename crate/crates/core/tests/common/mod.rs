//! Expected asymptotic costs of the two-layer network and helpers shared by
//! the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;

use meshtensor::cost::{estimate_for, CostReport, Monomial, Poly, Symbol};
use meshtensor::models::{two_layer, two_layer_layouts};

/// Leading monomials of one row: flops, comm, forward memory and ratio.
pub struct Row {
    pub name: &'static str,
    pub flops: Vec<Monomial>,
    pub comm: Vec<Monomial>,
    pub memory: Vec<Monomial>,
    pub ratio: Vec<Monomial>,
}

fn m(dims: &[&str], mesh: &[(&str, i32)]) -> Monomial {
    let d: Vec<(&str, i32)> = dims.iter().map(|d| (*d, 1)).collect();
    Monomial::new(&d, mesh)
}

/// The asymptotic cost table for the five standard layouts, written in
/// terms of the dimension names `batch`, `io`, `hidden` and the mesh
/// dimensions `all`, `rows`, `cols`, `planes`.
pub fn expected_rows() -> Vec<Row> {
    let bih = ["batch", "io", "hidden"];
    vec![
        Row {
            name: "replicated",
            flops: vec![m(&bih, &[])],
            comm: vec![],
            memory: vec![m(&["batch", "io"], &[]), m(&["batch", "hidden"], &[]), m(&["io", "hidden"], &[])],
            ratio: vec![],
        },
        Row {
            name: "data-parallel",
            flops: vec![m(&bih, &[("all", -1)])],
            comm: vec![m(&["io", "hidden"], &[])],
            memory: vec![
                m(&["batch", "io"], &[("all", -1)]),
                m(&["batch", "hidden"], &[("all", -1)]),
                m(&["io", "hidden"], &[]),
            ],
            ratio: vec![Monomial::new(&[("batch", -1)], &[("all", 1)])],
        },
        Row {
            name: "model-parallel",
            flops: vec![m(&bih, &[("all", -1)])],
            comm: vec![m(&["batch", "io"], &[])],
            memory: vec![
                m(&["batch", "io"], &[]),
                m(&["batch", "hidden"], &[("all", -1)]),
                m(&["io", "hidden"], &[("all", -1)]),
            ],
            ratio: vec![Monomial::new(&[("hidden", -1)], &[("all", 1)])],
        },
        Row {
            name: "2d",
            flops: vec![m(&bih, &[("rows", -1), ("cols", -1)])],
            comm: vec![m(&["batch", "io"], &[("rows", -1)]), m(&["io", "hidden"], &[("cols", -1)])],
            memory: vec![
                m(&["batch", "io"], &[("rows", -1)]),
                m(&["batch", "hidden"], &[("rows", -1), ("cols", -1)]),
                m(&["io", "hidden"], &[("cols", -1)]),
            ],
            ratio: vec![
                Monomial::new(&[("hidden", -1)], &[("cols", 1)]),
                Monomial::new(&[("batch", -1)], &[("rows", 1)]),
            ],
        },
        Row {
            name: "3d",
            flops: vec![m(&bih, &[("rows", -1), ("cols", -1), ("planes", -1)])],
            comm: vec![
                m(&["batch", "io"], &[("rows", -1), ("planes", -1)]),
                m(&["batch", "hidden"], &[("rows", -1), ("cols", -1)]),
                m(&["io", "hidden"], &[("planes", -1), ("cols", -1)]),
            ],
            memory: vec![
                m(&["batch", "io"], &[("rows", -1), ("planes", -1)]),
                m(&["batch", "hidden"], &[("rows", -1), ("cols", -1)]),
                m(&["io", "hidden"], &[("planes", -1), ("cols", -1)]),
            ],
            ratio: vec![
                Monomial::new(&[("hidden", -1)], &[("cols", 1)]),
                Monomial::new(&[("io", -1)], &[("planes", 1)]),
                Monomial::new(&[("batch", -1)], &[("rows", 1)]),
            ],
        },
    ]
}

fn set(p: &Poly) -> BTreeSet<Monomial> {
    p.monomials().cloned().collect()
}

fn compare_set(what: &str, row: &str, got: &Poly, want: &[Monomial], failures: &mut Vec<String>) {
    let want: BTreeSet<Monomial> = want.iter().cloned().collect();
    if set(got) != want {
        let w: Vec<String> = want.iter().map(|m| m.to_string()).collect();
        failures.push(format!("{row}: {what} leading terms {got} differ from {{{}}}", w.join(", ")));
    }
}

/// Parameter settings `(b, d_io, d_h, n, r, c, p)` for the numeric checks.
pub const SETTINGS: [(usize, usize, usize, usize, usize, usize, usize); 3] =
    [(64, 64, 128, 4, 2, 2, 2), (128, 64, 64, 2, 2, 4, 2), (64, 128, 256, 8, 4, 2, 2)];

/// Largest tolerated share of lower-order terms in a numeric estimate.
pub const NUMERIC_TOL: f64 = 0.05;

fn value_of(r: &CostReport, b: usize, d_io: usize, d_h: usize) -> impl Fn(&Symbol) -> f64 + '_ {
    move |s| match s {
        Symbol::Dim(d) => match d.as_str() {
            "batch" => b as f64,
            "io" => d_io as f64,
            "hidden" => d_h as f64,
            _ => f64::NAN,
        },
        Symbol::Mesh(m) => r.mesh.size(m).map_or(f64::NAN, |s| s as f64),
    }
}

fn near(what: &str, row: &str, leading: f64, exact: f64, failures: &mut Vec<String>) {
    let dev = if exact == 0.0 { leading.abs() } else { (leading - exact).abs() / exact };
    if dev > NUMERIC_TOL {
        failures.push(format!("{row}: {what} leading value {leading} vs exact {exact} ({:.2}% off)", dev * 100.0));
    }
}

/// Checks every row symbolically at the first setting and numerically at
/// all of them. Returns one message per mismatch.
pub fn table_failures() -> Vec<String> {
    let mut failures = Vec::new();
    let rows = expected_rows();
    for (k, &(b, d_io, d_h, n, r, c, p)) in SETTINGS.iter().enumerate() {
        let net = two_layer(b, d_io, d_h).expect("network builds");
        let layouts = two_layer_layouts(n, r, c, p).expect("layouts build");
        for (row, nl) in rows.iter().zip(&layouts) {
            assert_eq!(row.name, nl.name);
            let rep = match estimate_for(&net.graph, &nl.layout, &nl.mesh, &net.outputs(), None) {
                Ok(rep) => rep,
                Err(e) => {
                    failures.push(format!("{}: {e}", row.name));
                    continue;
                }
            };
            let s = &rep.symbolic;
            if k == 0 {
                compare_set("flops", row.name, &s.flops.leading, &row.flops, &mut failures);
                compare_set("comm", row.name, &s.comm.leading, &row.comm, &mut failures);
                compare_set("memory", row.name, &s.memory_forward.asymptotic, &row.memory, &mut failures);
                match &s.ratio {
                    Some(ratio) => compare_set("ratio", row.name, ratio, &row.ratio, &mut failures),
                    None => failures.push(format!("{}: no single-term flop count", row.name)),
                }
            }
            let val = value_of(&rep, b, d_io, d_h);
            let at = format!("{} at b={b} d_io={d_io} d_h={d_h}", row.name);
            near("flops", &at, s.flops.leading.eval(&val), rep.flops_per_processor as f64, &mut failures);
            near("comm", &at, s.comm.leading.eval(&val), rep.comm_total as f64, &mut failures);
            near("memory", &at, s.memory_forward.at_peak.leading.eval(&val), rep.peak_memory_forward as f64, &mut failures);
            if (s.flops.total().eval(&val) - rep.flops_per_processor as f64).abs() > 0.5
                || (s.comm.total().eval(&val) - rep.comm_total as f64).abs() > 0.5
                || (s.memory_forward.at_peak.total().eval(&val) - rep.peak_memory_forward as f64).abs() > 0.5
            {
                failures.push(format!("{at}: symbolic totals disagree with exact counts"));
            }
        }
    }
    failures
}
