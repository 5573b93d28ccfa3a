//! Central finite-difference checks of analytic gradients.

use serde::Serialize;

use crate::autodiff::{GradError, GradientMap};
use crate::ir::{reference_execute_for, Bindings, Graph, IrError, NodeId};

/// Per-element acceptance: `|analytic - numeric| <= max(rel_tol * scale, abs_tol)`
/// where `scale` is the larger magnitude of the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerance {
    pub eps: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { eps: 1e-5, rel_tol: 1e-4, abs_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Row-major index of the element with the largest relative error.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: Tolerance,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

/// Builds gradient nodes; [`crate::autodiff::gradients`] in normal use.
pub type GradientBuilder<'a> = &'a dyn Fn(&Graph, NodeId, &[NodeId]) -> Result<(Graph, GradientMap), GradError>;

/// Compares analytic gradients of `loss` with central differences, one
/// element at a time. Every `wrt` node must be bound in `bindings`.
pub fn grad_check(
    graph: &Graph,
    loss: NodeId,
    wrt: &[NodeId],
    bindings: &Bindings,
    tol: Tolerance,
    build: GradientBuilder,
) -> Result<GradCheckReport, GradError> {
    let (grad_graph, grads) = build(graph, loss, wrt)?;
    let grad_ids: Vec<NodeId> = wrt.iter().map(|w| grads[w]).collect();
    let analytic = reference_execute_for(&grad_graph, bindings, &grad_ids)?;
    let loss_at = |b: &Bindings| -> Result<f64, IrError> {
        let v = reference_execute_for(graph, b, &[loss])?;
        Ok(v[&loss].data()[0])
    };

    let mut params = Vec::new();
    for (w, gid) in wrt.iter().zip(&grad_ids) {
        let name = graph.node(*w).name.clone();
        let base = bindings.get(&name).ok_or_else(|| IrError::MissingBinding(name.clone()))?;
        let a = &analytic[gid];
        let mut check = ParamCheck {
            name: name.clone(),
            elements: base.len(),
            max_abs_error: 0.0,
            max_rel_error: 0.0,
            worst_index: 0,
            passed: true,
        };
        let mut probe = bindings.clone();
        for i in 0..base.len() {
            let x0 = base.data()[i];
            probe.get_mut(&name).expect("bound").data_mut()[i] = x0 + tol.eps;
            let up = loss_at(&probe)?;
            probe.get_mut(&name).expect("bound").data_mut()[i] = x0 - tol.eps;
            let down = loss_at(&probe)?;
            probe.get_mut(&name).expect("bound").data_mut()[i] = x0;

            let numeric = (up - down) / (2.0 * tol.eps);
            let exact = a.data()[i];
            let abs = (exact - numeric).abs();
            let scale = exact.abs().max(numeric.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            if abs > (tol.rel_tol * scale).max(tol.abs_tol) {
                check.passed = false;
            }
            check.max_abs_error = check.max_abs_error.max(abs);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
        }
        params.push(check);
    }
    let passed = params.iter().all(|p| p.passed);
    Ok(GradCheckReport { tolerance: tol, params, passed })
}
