use std::collections::{HashMap, HashSet};

use ndarray::IxDyn;

use crate::tensor::{with_grad_mode, Array, Tensor};

/// Nodes reachable from `root` that require grad, parents before children.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, children already pushed)
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !node.requires_grad() || !seen.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in &node.0.parents {
            if p.requires_grad() && !seen.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Gradients of `output` with respect to each of `inputs`.
///
/// The seed is a tensor of ones shaped like `output`, so for a scalar output
/// this is the ordinary gradient. Inputs that `output` does not depend on get
/// zeros. With `create_graph` the returned gradients are themselves recorded
/// and can be differentiated again.
pub fn grad(output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    let order = topo_order(output);
    let mut grads: HashMap<usize, Tensor> = HashMap::new();
    if output.requires_grad() {
        grads.insert(output.id(), Tensor::constant(Array::ones(IxDyn(output.shape()))));
    }
    let wanted: HashSet<usize> = inputs.iter().map(|t| t.id()).collect();

    with_grad_mode(create_graph, || {
        for node in order.iter().rev() {
            let Some(op) = node.0.op.as_ref() else { continue };
            let g = match grads.get(&node.id()) {
                Some(g) => g.clone(),
                None => continue,
            };
            // intermediate gradients are no longer needed once propagated
            if !wanted.contains(&node.id()) {
                grads.remove(&node.id());
            }
            let parent_grads = op.backward(node, &g, &node.0.parents);
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                let acc = match grads.remove(&parent.id()) {
                    Some(prev) => prev.add(&pg),
                    None => pg,
                };
                grads.insert(parent.id(), acc);
            }
        }
    });

    inputs.iter().map(|t| grads.get(&t.id()).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect()
}
