//! Clamped uniform B-spline bases on `[-A, A]` and the coefficient spaces used
//! to parameterize drift and squared-diffusion candidates.
//!
//! A basis of degree `M` with `D` uniform intervals has `D + M` functions and
//! the knot vector
//!
//! ```text
//! -A (M+1 times), -A + 2A/D, ..., A - 2A/D, A (M+1 times)
//! ```
//!
//! Every function vanishes outside `[-A, A]`; inside, at most `M + 1` of them
//! are nonzero and they sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

/// Largest supported spline degree.
pub const MAX_ORDER: usize = 15;

/// Clamped uniform B-spline basis of degree `order` on `[-halfwidth, halfwidth]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisMeta", into = "BasisMeta")]
pub struct SplineBasis {
    order: usize,
    dim: usize,
    halfwidth: f64,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisMeta {
    order: usize,
    dim: usize,
    halfwidth: f64,
}

impl TryFrom<BasisMeta> for SplineBasis {
    type Error = Error;

    fn try_from(m: BasisMeta) -> Result<Self> {
        SplineBasis::new(m.order, m.dim, m.halfwidth)
    }
}

impl From<SplineBasis> for BasisMeta {
    fn from(b: SplineBasis) -> Self {
        BasisMeta {
            order: b.order,
            dim: b.dim,
            halfwidth: b.halfwidth,
        }
    }
}

impl SplineBasis {
    /// Builds the clamped basis of degree `order` with `dim` uniform intervals
    /// on `[-halfwidth, halfwidth]`.
    pub fn new(order: usize, dim: usize, halfwidth: f64) -> Result<Self> {
        if order == 0 {
            return param_err("spline order M must be at least 1");
        }
        if order > MAX_ORDER {
            return param_err(format!("spline order M must be at most {MAX_ORDER}"));
        }
        if dim == 0 {
            return param_err("spline dimension D must be at least 1");
        }
        if !(halfwidth > 0.0) || !halfwidth.is_finite() {
            return param_err(format!("support halfwidth must be finite and > 0, got {halfwidth}"));
        }
        let mut knots = Vec::with_capacity(dim + 2 * order + 1);
        knots.extend(std::iter::repeat(-halfwidth).take(order + 1));
        for l in 1..dim {
            knots.push(-halfwidth + 2.0 * l as f64 * halfwidth / dim as f64);
        }
        knots.extend(std::iter::repeat(halfwidth).take(order + 1));
        Ok(Self {
            order,
            dim,
            halfwidth,
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `D + M`.
    pub fn len(&self) -> usize {
        self.dim + self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Evaluates the (at most `M + 1`) nonzero basis functions at `x`.
    ///
    /// Writes `M + 1` values into `out` and returns the index of the basis
    /// function that `out[0]` belongs to, or `None` when `|x| > A` (in which
    /// case `out` is left untouched).
    pub fn eval_nonzero(&self, x: f64, out: &mut [f64]) -> Option<usize> {
        let p = self.order;
        debug_assert!(out.len() > p);
        if !(x.abs() <= self.halfwidth) {
            return None;
        }
        // Span i satisfies knots[i] <= x < knots[i+1], with x = A folded into
        // the last nonempty span.
        let interior = &self.knots[p + 1..p + self.dim];
        let span = p + interior.partition_point(|&u| u <= x);

        let mut left = [0.0f64; MAX_ORDER + 1];
        let mut right = [0.0f64; MAX_ORDER + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        Some(span - p)
    }

    /// Dense evaluation of all `D + M` basis functions at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut dense = vec![0.0; self.len()];
        let mut local = vec![0.0; self.order + 1];
        if let Some(first) = self.eval_nonzero(x, &mut local) {
            dense[first..first + local.len()].copy_from_slice(&local);
        }
        dense
    }

    /// `Σ_l c_l B_l(x)`; zero outside the support.
    pub fn combine(&self, coeffs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coeffs.len(), self.len());
        let mut local = [0.0f64; MAX_ORDER + 1];
        let p = self.order;
        match self.eval_nonzero(x, &mut local[..=p]) {
            Some(first) => local[..=p]
                .iter()
                .zip(&coeffs[first..=first + p])
                .map(|(b, c)| b * c)
                .sum(),
            None => 0.0,
        }
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return param_err(format!(
                "coefficient length {got} does not match basis size {}",
                self.len()
            ));
        }
        Ok(())
    }
}

/// Squared radius `(D + M) log³(N)` of the coefficient ball for a basis built
/// for a training sample of size `n_samples`.
pub fn coefficient_radius2(basis: &SplineBasis, n_samples: usize) -> f64 {
    let ln = (n_samples as f64).ln();
    basis.len() as f64 * ln * ln * ln
}

/// B-spline coefficients of one drift candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DriftCoeffs(pub Vec<f64>);

impl DriftCoeffs {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }
}

/// Coefficients of the untruncated squared diffusion `σ̃²` together with the
/// positive floor applied after evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCoeffs {
    pub alpha: Vec<f64>,
    pub floor: f64,
}

impl DiffusionCoeffs {
    pub fn new(alpha: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) || !floor.is_finite() {
            return param_err(format!("diffusion floor must be finite and > 0, got {floor}"));
        }
        Ok(Self { alpha, floor })
    }

    /// Floor `1 / log(N)` for a training sample of size `n_samples`.
    pub fn floor_for(n_samples: usize) -> f64 {
        1.0 / (n_samples as f64).ln()
    }

    pub fn norm2(&self) -> f64 {
        self.alpha.iter().map(|a| a * a).sum()
    }
}

pub fn eval_drift(basis: &SplineBasis, c: &DriftCoeffs, x: f64) -> Result<f64> {
    basis.check_len(c.0.len())?;
    Ok(basis.combine(&c.0, x))
}

/// Evaluates `max(σ̃²(x), floor)`.
pub fn eval_diffusion(basis: &SplineBasis, c: &DiffusionCoeffs, x: f64) -> Result<f64> {
    basis.check_len(c.alpha.len())?;
    Ok(basis.combine(&c.alpha, x).max(c.floor))
}

/// Radial projection onto `{c : ‖c‖² ≤ radius2}`.
pub fn project_ball(c: &[f64], radius2: f64) -> Vec<f64> {
    let mut out = c.to_vec();
    project_ball_in_place(&mut out, radius2);
    out
}

/// In-place variant of [`project_ball`]; returns whether `c` was rescaled.
pub fn project_ball_in_place(c: &mut [f64], radius2: f64) -> bool {
    let norm2: f64 = c.iter().map(|v| v * v).sum();
    if norm2 <= radius2 {
        return false;
    }
    let scale = (radius2 / norm2).sqrt();
    for v in c.iter_mut() {
        *v *= scale;
    }
    true
}
