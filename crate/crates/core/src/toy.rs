//! The three-unit worked example used throughout the docs and tests.
//!
//! Units 0 and 1 influence each other; unit 2 is isolated. With every unit
//! treated with probability 1/2 the outcomes are
//! `Y_0 = z_0 + z_1`, `Y_1 = -2 + z_0 + z_1`, `Y_2 = -1/2 + z_2`,
//! and the scalar covariate is `X = (1/2, 0, -1/2)`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::estimators::Dataset;
use crate::graph::Graph;
use crate::moments::Design;
use crate::outcome::InteractionModel;
use crate::subset::Subset;

pub fn graph() -> Graph {
    Graph::from_in_neighbors(vec![vec![1], vec![0], vec![]]).expect("valid toy graph")
}

/// The toy model, its covariate column and the design.
pub fn model() -> (InteractionModel, DMatrix<f64>, Design) {
    blocks(1)
}

/// `m` disjoint copies of the toy block.
pub fn blocks(m: usize) -> (InteractionModel, DMatrix<f64>, Design) {
    let g = Arc::new(Graph::replicate(&graph(), m));
    let mut entries = Vec::with_capacity(8 * m);
    for c in 0..m {
        let (a, b, d) = (3 * c, 3 * c + 1, 3 * c + 2);
        entries.extend([
            (a, Subset::empty(), 0.0),
            (a, Subset::from([a]), 1.0),
            (a, Subset::from([b]), 1.0),
            (b, Subset::empty(), -2.0),
            (b, Subset::from([a]), 1.0),
            (b, Subset::from([b]), 1.0),
            (d, Subset::empty(), -0.5),
            (d, Subset::from([d]), 1.0),
        ]);
    }
    let model = InteractionModel::from_entries(g, 1, entries).expect("valid toy model");
    let x = DMatrix::from_fn(3 * m, 1, |i, _| [0.5, 0.0, -0.5][i % 3]);
    let design = Design::uniform(3 * m, 0.5).expect("valid design");
    (model, x, design)
}

/// The dataset observed under assignment `z`.
pub fn dataset(model: &InteractionModel, x: &DMatrix<f64>, design: &Design, z: Vec<bool>) -> Dataset {
    let y = model.evaluate_potential(&z);
    Dataset::new(model.graph_arc().clone(), design.clone(), model.beta(), z, y, x.clone()).expect("consistent toy data")
}
