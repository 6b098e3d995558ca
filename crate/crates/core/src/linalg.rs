//! Small dense solves with a conditioning guard.

use nalgebra::{DMatrix, DVector};

/// Systems whose condition number exceeds this are solved by pseudo-inverse.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Ratio of the largest to the smallest singular value; infinite when singular.
    pub condition: f64,
    pub pseudo_inverse: bool,
}

/// Solves `a x = b` through the SVD of `a`. Well-conditioned systems get the
/// exact solution; otherwise singular values below `σ_max / CONDITION_LIMIT`
/// are dropped, which yields the minimum-norm least-squares solution.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Solution {
    let d = a.nrows();
    if d == 0 {
        return Solution { x: DVector::zeros(0), condition: 1.0, pseudo_inverse: false };
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let pseudo_inverse = !(condition <= CONDITION_LIMIT);
    let eps = if pseudo_inverse { smax / CONDITION_LIMIT } else { 0.0 };
    let x = if smax == 0.0 { DVector::zeros(a.ncols()) } else { svd.solve(b, eps).expect("both singular vector sets were computed") };
    Solution { x, condition, pseudo_inverse }
}
