//! Target functions `R^{d×n} → R^{d×n}` (or pairs of sequences for cross attention).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

type SingleFn = Arc<dyn Fn(&Matrix) -> Matrix + Send + Sync>;
type PairFn = Arc<dyn Fn(&Matrix, &Matrix) -> Matrix + Send + Sync>;

#[derive(Clone)]
enum Evaluator {
    Single(SingleFn),
    Pair(PairFn),
}

/// A pure, deterministic target with its shape and reproducibility descriptor.
///
/// The bound `b0` on `‖f‖_∞` is optional: when absent the constructors calibrate
/// it from the values they observe (see [`calibrated_b0`]).
#[derive(Clone)]
pub struct TargetFunction {
    name: String,
    seed: u64,
    d: usize,
    n: usize,
    evaluator: Evaluator,
    bound_b0: Option<f64>,
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFunction")
            .field("name", &self.name)
            .field("seed", &self.seed)
            .field("d", &self.d)
            .field("n", &self.n)
            .field("pair", &self.is_pair())
            .field("bound_b0", &self.bound_b0)
            .finish()
    }
}

/// Inflates an observed sup of `|f|` into a strict bound: `max((1 + 1e-3)·sup, 1e-6)`.
pub fn calibrated_b0(observed_sup: f64) -> f64 {
    ((1.0 + 1e-3) * observed_sup).max(1e-6)
}

impl TargetFunction {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        n: usize,
        f: impl Fn(&Matrix) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            seed: 0,
            d,
            n,
            evaluator: Evaluator::Single(Arc::new(f)),
            bound_b0: None,
        }
    }

    /// A target over pairs `(Z_K, Z_Q)`, both `d × n`.
    pub fn new_pair(
        name: impl Into<String>,
        d: usize,
        n: usize,
        f: impl Fn(&Matrix, &Matrix) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            seed: 0,
            d,
            n,
            evaluator: Evaluator::Pair(Arc::new(f)),
            bound_b0: None,
        }
    }

    /// Constant target `f ≡ c`.
    pub fn constant(c: f64, d: usize, n: usize) -> Self {
        Self::new(format!("const:{c}"), d, n, move |_| Matrix::zeros(d, n).map(|_| c).unwrap())
    }

    /// Constant pair target `f ≡ c`.
    pub fn constant_pair(c: f64, d: usize, n: usize) -> Self {
        Self::new_pair(format!("const:{c}"), d, n, move |_, _| {
            Matrix::zeros(d, n).map(|_| c).unwrap()
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Fixes `b0` instead of calibrating it; every checked evaluation must stay strictly below it.
    pub fn with_bound(mut self, b0: f64) -> Self {
        self.bound_b0 = Some(b0);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bound_b0(&self) -> Option<f64> {
        self.bound_b0
    }

    pub fn is_pair(&self) -> bool {
        matches!(self.evaluator, Evaluator::Pair(_))
    }

    fn check_input(&self, z: &Matrix) -> Result<()> {
        if z.shape() != (self.d, self.n) {
            return Err(Error::ShapeMismatch {
                op: "target input",
                left: z.shape(),
                right: (self.d, self.n),
            });
        }
        Ok(())
    }

    fn check_output(&self, out: Matrix) -> Result<Matrix> {
        if out.shape() != (self.d, self.n) {
            return Err(Error::ShapeMismatch {
                op: "target output",
                left: out.shape(),
                right: (self.d, self.n),
            });
        }
        if let Some(b0) = self.bound_b0 {
            let m = out.max_abs();
            if m >= b0 {
                return Err(Error::BoundViolation { value: m, bound: b0 });
            }
        }
        Ok(out)
    }

    pub fn eval(&self, z: &Matrix) -> Result<Matrix> {
        let Evaluator::Single(f) = &self.evaluator else {
            return Err(Error::WrongKind {
                expected: "single-input",
                got: "pair",
            });
        };
        self.check_input(z)?;
        self.check_output(f(z))
    }

    pub fn eval_pair(&self, z_k: &Matrix, z_q: &Matrix) -> Result<Matrix> {
        let Evaluator::Pair(f) = &self.evaluator else {
            return Err(Error::WrongKind {
                expected: "pair",
                got: "single-input",
            });
        };
        self.check_input(z_k)?;
        self.check_input(z_q)?;
        self.check_output(f(z_k, z_q))
    }

    /// The bound used by a construction whose center values have sup `observed_sup`.
    pub(crate) fn resolve_b0(&self, observed_sup: f64) -> Result<f64> {
        match self.bound_b0 {
            Some(b0) if b0 <= 0.0 || !b0.is_finite() => {
                Err(Error::invalid(format!("b0 must be positive and finite, got {b0}")))
            }
            Some(b0) if observed_sup >= b0 => Err(Error::BoundViolation {
                value: observed_sup,
                bound: b0,
            }),
            Some(b0) => Ok(b0),
            None => Ok(calibrated_b0(observed_sup)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_inflates_and_floors() {
        assert_eq!(calibrated_b0(0.0), 1e-6);
        assert!((calibrated_b0(2.0) - 2.002).abs() < 1e-15);
    }

    #[test]
    fn checked_evaluation() {
        let f = TargetFunction::new("double", 1, 2, |z| z.scale(2.0).unwrap()).with_bound(1.0);
        let ok = Matrix::from_rows(&[[0.1, -0.2]]).unwrap();
        assert_eq!(f.eval(&ok).unwrap().row(0), &[0.2, -0.4]);
        let big = Matrix::from_rows(&[[0.5, 0.0]]).unwrap();
        assert!(matches!(f.eval(&big), Err(Error::BoundViolation { .. })));
        assert!(matches!(f.eval(&Matrix::zeros(2, 2)), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(f.eval_pair(&ok, &ok), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn explicit_bound_must_exceed_observed_values() {
        let f = TargetFunction::constant(0.5, 1, 1).with_bound(0.5);
        assert!(matches!(f.resolve_b0(0.5), Err(Error::BoundViolation { .. })));
        assert_eq!(TargetFunction::constant(0.5, 1, 1).resolve_b0(0.5).unwrap(), 0.5005);
    }
}
