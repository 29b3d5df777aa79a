//! Clamped B-spline basis with a difference penalty (P-spline).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotRule {
    /// Breakpoints at equally spaced quantiles of the data.
    Quantile,
    /// Breakpoints equally spaced over the x-range.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineSpec {
    /// Number of knot intervals; the basis has `knots + degree` columns and
    /// the penalty has rank `knots`.
    pub knots: usize,
    /// Polynomial degree, also the order of the difference penalty.
    pub degree: usize,
    pub rule: KnotRule,
    /// Explicit x-range; defaults to the data range.
    pub range: Option<(f64, f64)>,
    /// Data used to place quantile knots; defaults to the fitted x.
    #[serde(skip)]
    pub knot_data: Option<Vec<f64>>,
}

impl Default for SplineSpec {
    fn default() -> Self {
        Self { knots: 5, degree: 2, rule: KnotRule::Quantile, range: None, knot_data: None }
    }
}

impl SplineSpec {
    pub fn new(knots: usize, degree: usize) -> Self {
        Self { knots, degree, ..Default::default() }
    }

    pub fn n_basis(&self) -> usize {
        self.knots + self.degree
    }
}

/// The spline (or intercept-only) function space used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasisKind {
    Spline { degree: usize, knots: Vec<f64> },
    Intercept,
}

#[derive(Debug, Clone)]
pub struct BasisBundle {
    pub kind: BasisKind,
    /// Row-major `n x p` design matrix.
    pub matrix: Vec<f64>,
    pub n_rows: usize,
    pub n_basis: usize,
    /// Difference penalty `D'D`, `p x p`.
    pub penalty: DMatrix<f64>,
    pub penalty_rank: usize,
    /// Ridge added to the penalty only inside the sampler.
    pub ridge: f64,
    pub range: (f64, f64),
}

/// `order`-th difference operator on `p` coefficients, `(p - order) x p`.
pub fn difference_matrix(p: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(p, p);
    for _ in 0..order {
        let rows = d.nrows();
        d = DMatrix::from_fn(rows - 1, p, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

/// Numerical rank: singular values above `1e-8 * max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-8 * max).count()
}

fn find_span(knots: &[f64], degree: usize, n_basis: usize, x: f64) -> usize {
    if x >= knots[n_basis] {
        return n_basis - 1;
    }
    // largest span s in [degree, n_basis - 1] with knots[s] <= x
    let mut lo = degree;
    let mut hi = n_basis;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if knots[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Nonzero B-spline values at `x` (Cox-de Boor), written into `row`.
fn eval_spline_row(knots: &[f64], degree: usize, x: f64, row: &mut [f64]) {
    let n_basis = row.len();
    row.iter_mut().for_each(|v| *v = 0.0);
    let span = find_span(knots, degree, n_basis, x);
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (j, v) in n.into_iter().enumerate() {
        row[span - degree + j] = v;
    }
}

impl BasisBundle {
    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.n_basis..(i + 1) * self.n_basis]
    }

    /// Basis row at a new point; points outside the basis range are rejected.
    pub fn eval_row(&self, x: f64) -> Result<Vec<f64>> {
        let (a, b) = self.range;
        let tol = 1e-12 * (b - a).abs().max(1.0);
        if !(x >= a - tol && x <= b + tol) {
            return Err(Error::InvalidParameter(format!(
                "x = {x} lies outside the basis range [{a}, {b}]"
            )));
        }
        let mut row = vec![0.0; self.n_basis];
        match &self.kind {
            BasisKind::Intercept => row[0] = 1.0,
            BasisKind::Spline { degree, knots } => eval_spline_row(knots, *degree, x.clamp(a, b), &mut row),
        }
        Ok(row)
    }

    /// Intercept-only design: a single constant column and a zero penalty.
    pub fn intercept_only(n: usize) -> Self {
        Self {
            kind: BasisKind::Intercept,
            matrix: vec![1.0; n],
            n_rows: n,
            n_basis: 1,
            penalty: DMatrix::zeros(1, 1),
            penalty_rank: 0,
            ridge: 0.0,
            range: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// `theta' Q theta` with the reported (ridge-free) penalty.
    pub fn penalty_quadratic(&self, theta: &[f64]) -> f64 {
        let t = nalgebra::DVector::from_column_slice(theta);
        (t.transpose() * &self.penalty * &t)[(0, 0)]
    }

    /// Eigen-decomposition of the penalty, eigenvalues clamped at zero.
    pub fn penalty_eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.penalty.clone());
        (eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect(), eig.eigenvectors)
    }
}

pub fn build_basis(x: &[f64], spec: &SplineSpec) -> Result<BasisBundle> {
    if spec.knots < 2 || spec.degree < 1 {
        return Err(Error::InvalidParameter(format!(
            "need knots >= 2 and degree >= 1, got knots = {}, degree = {}",
            spec.knots, spec.degree
        )));
    }
    let p = spec.n_basis();
    if x.len() < p {
        return Err(Error::InvalidParameter(format!("need at least {p} observations, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite x".into()));
    }
    let knot_source: &[f64] = spec.knot_data.as_deref().unwrap_or(x);
    let mut sorted = knot_source.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (a, b) = spec.range.unwrap_or((sorted[0], sorted[sorted.len() - 1]));
    if !(b > a) {
        return Err(Error::InvalidParameter("degenerate x: all values equal".into()));
    }
    if x.iter().any(|&v| v < a || v > b) {
        return Err(Error::InvalidParameter(format!("data outside basis range [{a}, {b}]")));
    }
    let interior: Vec<f64> = (1..spec.knots)
        .map(|j| {
            let f = j as f64 / spec.knots as f64;
            match spec.rule {
                KnotRule::Quantile => quantile_sorted(&sorted, f),
                KnotRule::Uniform => a + f * (b - a),
            }
        })
        .collect();
    let mut knots = vec![a; spec.degree + 1];
    knots.extend(interior.iter().copied());
    knots.extend(std::iter::repeat_n(b, spec.degree + 1));
    if knots[spec.degree..knots.len() - spec.degree].windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("knots are not strictly increasing; too few distinct x values".into()));
    }
    let mut matrix = vec![0.0; x.len() * p];
    for (i, &xi) in x.iter().enumerate() {
        eval_spline_row(&knots, spec.degree, xi, &mut matrix[i * p..(i + 1) * p]);
    }
    let d = difference_matrix(p, spec.degree);
    let penalty = d.transpose() * &d;
    let ridge = 1e-8 * penalty.trace() / p as f64;
    Ok(BasisBundle {
        kind: BasisKind::Spline { degree: spec.degree, knots },
        matrix,
        n_rows: x.len(),
        n_basis: p,
        penalty_rank: spec.knots,
        penalty,
        ridge,
        range: (a, b),
    })
}
