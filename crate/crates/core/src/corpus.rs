//! The example programs shipped in `corpus/`, built from code so the JSON
//! files can be regenerated and checked for drift.

use crate::ir::{Graph, Shape};
use crate::layout::{ComputationLayout, Mesh};
use crate::models::{transformer_block, transformer_layout, two_layer_forward, two_layer_layouts, TransformerSizes};
use crate::program::{ProgramFile, Train};

/// Sizes of the two-layer network in the corpus: `b`, `d_io`, `d_h`.
pub const TWO_LAYER_SIZES: (usize, usize, usize) = (8, 8, 16);

fn two_layer_file(mesh: &Mesh, layout: &ComputationLayout) -> ProgramFile {
    let (b, d_io, d_h) = TWO_LAYER_SIZES;
    let g = two_layer_forward(b, d_io, d_h).expect("valid sizes");
    let mut f = ProgramFile::from_graph(&g, mesh, layout, 1);
    f.outputs = Some(vec!["y".into()]);
    f.loss = Some("loss".into());
    f.wrt = ["w", "bias", "v", "x"].map(String::from).to_vec();
    f
}

fn reshape_file(out_dims: &[(&str, usize)], layout: &[(&str, &str)]) -> ProgramFile {
    let mut g = Graph::new();
    let x = g.input("x", Shape::of(&[("a", 4), ("b", 6)]).unwrap()).unwrap();
    g.reshape("y", x, Shape::of(out_dims).unwrap()).unwrap();
    let mesh = Mesh::of(&[("all", 2)]).unwrap();
    ProgramFile::from_graph(&g, &mesh, &ComputationLayout::of(layout).unwrap(), 1)
}

fn transformer_file(n: usize) -> ProgramFile {
    let t = transformer_block(TransformerSizes::default()).expect("valid sizes");
    let mesh = Mesh::of(&[("all", n)]).unwrap();
    let mut f = ProgramFile::from_graph(&t.graph, &mesh, &transformer_layout(), 1);
    f.outputs = Some(vec!["loss".into()]);
    f.loss = Some("loss".into());
    f.wrt = t.wrt.iter().map(|w| t.graph.node(*w).name.clone()).collect();
    f
}

/// Every corpus file, by file name.
pub fn standard_corpus() -> Vec<(String, ProgramFile)> {
    let mut out = Vec::new();
    for nl in two_layer_layouts(4, 2, 2, 2).expect("valid meshes") {
        out.push((format!("two_layer_{}.json", nl.name.replace('-', "_")), two_layer_file(&nl.mesh, &nl.layout)));
    }
    let all4 = Mesh::of(&[("all", 4)]).unwrap();
    out.push((
        "two_layer_illegal.json".into(),
        two_layer_file(&all4, &ComputationLayout::of(&[("batch", "all"), ("hidden", "all")]).unwrap()),
    ));
    out.push((
        "two_layer_not_divisible.json".into(),
        two_layer_file(&Mesh::of(&[("all", 3)]).unwrap(), &ComputationLayout::of(&[("batch", "all")]).unwrap()),
    ));
    out.push((
        "two_layer_single_processor.json".into(),
        two_layer_file(&Mesh::of(&[("all", 1)]).unwrap(), &ComputationLayout::of(&[("batch", "all")]).unwrap()),
    ));

    let mut sgd = two_layer_file(&all4, &ComputationLayout::of(&[("batch", "all")]).unwrap());
    sgd.outputs = Some(Vec::new());
    sgd.wrt = ["w", "bias", "v"].map(String::from).to_vec();
    sgd.train = Some(Train { learning_rate: 0.1 });
    out.push(("sgd_step_data_parallel.json".into(), sgd));

    out.push(("reshape_allgather.json".into(), reshape_file(&[("e", 24)], &[("a", "all")])));
    out.push(("reshape_slice.json".into(), reshape_file(&[("e", 24)], &[("e", "all")])));
    out.push(("reshape_alltoall.json".into(), reshape_file(&[("c", 4), ("d", 6)], &[("a", "all"), ("d", "all")])));

    out.push(("transformer_mesh2.json".into(), transformer_file(2)));
    out.push(("transformer_mesh4.json".into(), transformer_file(4)));
    out
}
