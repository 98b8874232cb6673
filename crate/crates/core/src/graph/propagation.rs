use crate::tensor::Tensor;

use super::{DocumentGraph, GraphError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeDirection {
    In,
    Out,
    SelfLoop,
}

impl EdgeDirection {
    pub const ALL: [EdgeDirection; 3] = [EdgeDirection::In, EdgeDirection::Out, EdgeDirection::SelfLoop];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeDirection::In => "in",
            EdgeDirection::Out => "out",
            EdgeDirection::SelfLoop => "self",
        }
    }
}

/// Adjacency, degree and normalized propagation matrix for one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionMatrices {
    pub adjacency: Tensor,
    /// Diagonal of the degree matrix.
    pub degree: Vec<f64>,
    pub normalized: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrices {
    pub inward: DirectionMatrices,
    pub outward: DirectionMatrices,
    pub self_loop: DirectionMatrices,
}

impl PropagationMatrices {
    pub fn get(&self, dir: EdgeDirection) -> &DirectionMatrices {
        match dir {
            EdgeDirection::In => &self.inward,
            EdgeDirection::Out => &self.outward,
            EdgeDirection::SelfLoop => &self.self_loop,
        }
    }

    pub fn node_count(&self) -> usize {
        self.self_loop.degree.len()
    }
}

fn normalize(adjacency: Tensor) -> DirectionMatrices {
    let n = adjacency.rows();
    // Column sums: D(i,i) = Σ_j A(j,i).
    let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| adjacency.get(j, i)).sum()).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let mut normalized = adjacency.clone();
    for i in 0..n {
        for j in 0..n {
            let a = adjacency.get(i, j);
            if a != 0.0 {
                normalized.set(i, j, inv_sqrt[i] * a * inv_sqrt[j]);
            }
        }
    }
    DirectionMatrices {
        adjacency,
        degree,
        normalized,
    }
}

/// Direction-split propagation matrices with relation labels merged.
///
/// `A_out(i,j) = 1` iff some edge `i → j` exists, `A_in = A_outᵀ`,
/// `A_self = I`, and each `P_t = D_t^{-1/2} A_t D_t^{-1/2}` with zero-degree
/// nodes contributing zero.
pub fn propagation_matrices(graph: &DocumentGraph) -> Result<PropagationMatrices, GraphError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let mut out = Tensor::zeros(vec![n, n]);
    for e in graph.edges() {
        let i = graph.local_index(e.src).expect("edge endpoints are nodes");
        let j = graph.local_index(e.dst).expect("edge endpoints are nodes");
        out.set(i, j, 1.0);
    }
    let inward = out.transpose();
    Ok(PropagationMatrices {
        inward: normalize(inward),
        outward: normalize(out),
        self_loop: normalize(Tensor::identity(n)),
    })
}
