//! Central-difference gradient checking.
//!
//! An operation under test supplies a forward map `f: inputs -> output` and
//! a vector-Jacobian product `vjp: (inputs, cotangent) -> input cotangents`.
//! For a fixed cotangent `w`, the scalar `g(x) = <f(x), w>` has gradient
//! equal to the VJP, so each coordinate can be probed with
//! `(g(x + eps*e) - g(x - eps*e)) / (2*eps)` and compared against the
//! analytic value.

use crate::error::{CheckFailure, Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Worst observed coordinate for one input tensor.
#[derive(Debug, Clone)]
pub struct InputReport {
    pub input: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Relative error with a unit floor: small absolute noise on a near-zero
/// gradient does not fail the check, large gradients are compared relatively.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

pub struct GradCheck<'a> {
    pub forward: &'a dyn Fn(&[Tensor]) -> Result<Tensor>,
    pub vjp: &'a dyn Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>,
    pub eps: f64,
    pub tolerance: f64,
}

impl<'a> GradCheck<'a> {
    /// Check all coordinates of all inputs. Errors with the offending
    /// coordinates if any relative error exceeds the tolerance.
    pub fn run(&self, op: &str, inputs: &[Tensor]) -> Result<GradCheckReport> {
        for (i, t) in inputs.iter().enumerate() {
            if !t.all_finite() {
                return Err(Error::Numeric(format!("gradcheck input {i} not finite")));
            }
        }
        let y0 = (self.forward)(inputs)?;
        // Fixed pseudo-random cotangent, bounded away from zero so no output
        // coordinate is silently ignored.
        let mut rng = SplitMix64::new(0xC07A_4E47);
        let cot = rng.uniform_tensor(y0.shape(), 0.5, 1.5);
        let analytic = (self.vjp)(inputs, &cot)?;
        if analytic.len() != inputs.len() {
            return Err(Error::Dim(format!(
                "vjp returned {} cotangents for {} inputs",
                analytic.len(),
                inputs.len()
            )));
        }

        let mut reports = Vec::new();
        let mut failures = Vec::new();
        let mut work: Vec<Tensor> = inputs.to_vec();
        for i in 0..inputs.len() {
            if analytic[i].shape() != inputs[i].shape() {
                return Err(Error::Dim(format!(
                    "vjp cotangent {i} shape {:?} vs input {:?}",
                    analytic[i].shape(),
                    inputs[i].shape()
                )));
            }
            let mut report = InputReport {
                input: i,
                max_rel_err: 0.0,
                worst_coord: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for coord in 0..inputs[i].len() {
                let orig = inputs[i].data()[coord];
                work[i].data_mut()[coord] = orig + self.eps;
                let up = dot(&(self.forward)(&work)?, &cot);
                work[i].data_mut()[coord] = orig - self.eps;
                let dn = dot(&(self.forward)(&work)?, &cot);
                work[i].data_mut()[coord] = orig;
                let numeric = (up - dn) / (2.0 * self.eps);
                let a = analytic[i].data()[coord];
                let e = rel_err(a, numeric);
                if e > report.max_rel_err {
                    report.max_rel_err = e;
                    report.worst_coord = coord;
                    report.analytic = a;
                    report.numeric = numeric;
                }
                if e > self.tolerance {
                    failures.push(CheckFailure {
                        input: i,
                        coord,
                        analytic: a,
                        numeric,
                        rel_err: e,
                    });
                }
            }
            reports.push(report);
        }
        if failures.is_empty() {
            Ok(GradCheckReport {
                op: op.to_string(),
                inputs: reports,
            })
        } else {
            Err(Error::CheckFailed {
                op: op.to_string(),
                failures,
            })
        }
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
