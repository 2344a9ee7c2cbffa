//! Central finite-difference checking of analytic gradients.

use crate::diff::graph::{Graph, NodeId};
use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare the analytic gradient of a scalar-valued computation against
/// central finite differences over every coordinate of every input.
///
/// `build` reconstructs the computation from leaf nodes each time it is
/// called; the harness calls it once for the analytic pass and twice per
/// input coordinate for the numeric probes. Returns the maximum relative
/// error `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::ContractViolation("grad_check step must be > 0".into()));
    }
    for t in inputs {
        if !t.all_finite() {
            return Err(Error::InvalidData("grad_check inputs must be finite".into()));
        }
    }

    // analytic pass
    let mut graph = Graph::new();
    let nodes: Vec<NodeId> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let loss = build(&mut graph, &nodes)?;
    if graph.value(loss).len() != 1 {
        return Err(Error::ContractViolation(
            "grad_check expects a scalar-valued computation".into(),
        ));
    }
    let grads = graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = nodes
        .iter()
        .zip(inputs)
        .map(|(&n, t)| {
            grads
                .by_node(n)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ns: Vec<NodeId> = probe.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &ns)?;
        Ok(g.value(out).item())
    };

    let mut max_rel = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ci in 0..t.len() {
            let orig = t.data()[ci];
            probe[ti].data_mut()[ci] = orig + step;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[ci] = orig - step;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[ti][ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
