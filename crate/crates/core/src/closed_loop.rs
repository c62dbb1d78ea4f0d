//! The autonomous closed loop `ẋ = Ax + B u(x)` and exact control derivatives
//! along its solutions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{mat_apply, FeedbackDescriptor};
use crate::io;
use crate::jet::{Jet, Scalar, MAX_ORDER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    #[serde(with = "io::matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "io::matrix_rows")]
    pub b: DMatrix<f64>,
    pub feedback: FeedbackDescriptor,
}

impl ClosedLoop {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, feedback: FeedbackDescriptor) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::DimensionMismatch(format!("A is {:?}, B is {:?}", a.shape(), b.shape())));
        }
        if feedback.state_dim() != n || feedback.input_count() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "feedback maps {} states to {} inputs, plant has {} states and {} inputs",
                feedback.state_dim(),
                feedback.input_count(),
                n,
                b.ncols()
            )));
        }
        Ok(ClosedLoop { a, b, feedback })
    }

    /// Single-input convenience constructor.
    pub fn single(a: DMatrix<f64>, b: &DVector<f64>, feedback: FeedbackDescriptor) -> Result<Self> {
        let b = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        ClosedLoop::new(a, b, feedback)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `Ax + B u(x)` on any [`Scalar`].
    pub fn field<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        let u = self.feedback.control(x)?;
        let mut f = mat_apply(&self.a, x);
        for (r, fr) in f.iter_mut().enumerate() {
            for (c, uc) in u.iter().enumerate() {
                let w = self.b[(r, c)];
                if w != 0.0 {
                    *fr = fr.clone() + uc.scale(w);
                }
            }
        }
        Ok(f)
    }

    /// Plain evaluation with an additive disturbance, writing into `out`.
    pub fn field_into(&self, x: &[f64], e: Option<&[f64]>, out: &mut [f64]) -> Result<()> {
        let f = self.field(x)?;
        out.copy_from_slice(&f);
        if let Some(e) = e {
            for (o, ei) in out.iter_mut().zip(e) {
                *o += ei;
            }
        }
        Ok(())
    }

    pub fn control(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.feedback.control(x)
    }

    /// Taylor coefficients of the solution through `x0`, via
    /// `x_{[j+1]} = f(x)_{[j]} / (j + 1)`.
    pub fn state_jet(&self, x0: &[f64], order: usize) -> Result<Vec<Jet>> {
        if order > MAX_ORDER {
            return Err(Error::OrderTooHigh { requested: order, max: MAX_ORDER });
        }
        let mut x: Vec<Jet> = x0.iter().map(|&v| Jet::constant(v, order)).collect();
        for j in 0..order {
            let truncated: Vec<Jet> = x.iter().map(|c| c.truncate(j)).collect();
            let f = self.field(&truncated)?;
            for (xi, fi) in x.iter_mut().zip(&f) {
                xi.coeffs[j + 1] = fi.coeffs[j] / (j + 1) as f64;
            }
        }
        Ok(x)
    }

    /// `Df(0)`, read off first-order jets along each coordinate direction.
    pub fn jacobian_at_origin(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let x: Vec<Jet> = (0..n)
                .map(|i| Jet::from_coeffs(vec![0.0, if i == c { 1.0 } else { 0.0 }]))
                .collect();
            for (r, fr) in self.field(&x)?.iter().enumerate() {
                jac[(r, c)] = fr.coeffs[1];
            }
        }
        Ok(jac)
    }
}

/// Jets of every control channel at `x0`, giving `U(t), U'(t), …, U⁽ᴷ⁾(t)`
/// along the undisturbed closed loop.
pub fn control_jet(x0: &[f64], closed_loop: &ClosedLoop, order: usize) -> Result<Vec<Jet>> {
    let x = closed_loop.state_jet(x0, order)?;
    closed_loop.feedback.control(&x)
}

/// Derivatives `[input][k]` for `k = 0..=order`.
pub fn control_derivatives(x0: &[f64], closed_loop: &ClosedLoop, order: usize) -> Result<Vec<Vec<f64>>> {
    Ok(control_jet(x0, closed_loop, order)?.iter().map(Jet::derivatives).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::synthesize;
    use crate::feedback::{GainSchedule, Saturation};
    use approx::assert_abs_diff_eq;

    fn scalar_loop(a1: f64) -> ClosedLoop {
        let g = GainSchedule::new(vec![a1]).unwrap();
        let a = DMatrix::zeros(1, 1);
        let b = DVector::from_vec(vec![1.0]);
        let syn = synthesize(&a, &b, &g, None).unwrap();
        ClosedLoop::single(a, &b, FeedbackDescriptor::CanonicalSingle { gains: g, canonical: syn.canonical }).unwrap()
    }

    #[test]
    fn scalar_jet_at_equilibrium() {
        let d = control_derivatives(&[0.0], &scalar_loop(1.0), 4).unwrap();
        assert!(d[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_jet_by_hand() {
        let d = control_derivatives(&[1.0], &scalar_loop(1.0), 2).unwrap();
        assert_abs_diff_eq!(d[0][0], -(0.5f64).sqrt(), epsilon = 1e-15);
        // U' = −ẏ (1 + y²)^{−3/2}, ẏ = −1/√2
        assert_abs_diff_eq!(d[0][1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_of_saturated_loop() {
        let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let fd = FeedbackDescriptor::SaturatedLinear { k: [1.0, 2.0], saturation: Saturation::Tanh, scale: 1.0 };
        let cl = ClosedLoop::single(a0, &DVector::from_vec(vec![0.0, 1.0]), fd).unwrap();
        let j = cl.jacobian_at_origin().unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -3.0, -2.0]));
    }

    #[test]
    fn dimension_checks() {
        let fd = FeedbackDescriptor::SaturatedLinear { k: [1.0, 2.0], saturation: Saturation::Tanh, scale: 1.0 };
        assert!(ClosedLoop::single(DMatrix::zeros(3, 3), &DVector::zeros(3), fd).is_err());
        assert!(matches!(
            scalar_loop(1.0).state_jet(&[1.0], 99),
            Err(Error::OrderTooHigh { .. })
        ));
    }
}
