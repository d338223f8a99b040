//! Max-affine functions and the partitions they induce.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `x ↦ max_i (a_i·x + b_i)` over a nonempty list of affine components.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxAffine {
    dim: usize,
    slopes: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
}

/// Where a point sits in the partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionReport {
    pub value: f64,
    /// Smallest index attaining the maximum.
    pub cell_index: usize,
    /// Largest minus second-largest component value; 0 with a single component.
    pub margin: f64,
}

impl MaxAffine {
    pub fn new(components: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::invalid("a max-affine function needs at least one component"));
        };
        let dim = first.0.len();
        let mut slopes = Vec::with_capacity(components.len());
        let mut intercepts = Vec::with_capacity(components.len());
        for (a, b) in components {
            if a.len() != dim {
                return Err(Error::LengthMismatch {
                    what: "affine slope",
                    expected: dim,
                    got: a.len(),
                });
            }
            if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("MaxAffine::new"));
            }
            slopes.push(a);
            intercepts.push(b);
        }
        Ok(Self {
            dim,
            slopes,
            intercepts,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components `N_ma`.
    pub fn len(&self) -> usize {
        self.intercepts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn slope(&self, i: usize) -> &[f64] {
        &self.slopes[i]
    }

    pub fn intercept(&self, i: usize) -> f64 {
        self.intercepts[i]
    }

    /// Multiplies every coefficient by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(
            self.slopes
                .iter()
                .zip(&self.intercepts)
                .map(|(a, b)| (a.iter().map(|v| v * lambda).collect(), b * lambda))
                .collect(),
        )
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::LengthMismatch {
                what: "max-affine input",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Values `a_i·x + b_i` of every component.
    pub fn component_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self
            .slopes
            .iter()
            .zip(&self.intercepts)
            .map(|(a, b)| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() + b)
            .collect())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<PartitionReport> {
        let values = self.component_values(x)?;
        let mut best = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if v > values[best] {
                best = i;
            }
        }
        let value = values[best];
        let runner_up = values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = if runner_up.is_finite() {
            value - runner_up
        } else {
            0.0
        };
        Ok(PartitionReport {
            value,
            cell_index: best,
            margin,
        })
    }

    /// One-hot vector of the active cell.
    pub fn indicator(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cell = self.evaluate(x)?.cell_index;
        let mut e = vec![0.0; self.len()];
        e[cell] = 1.0;
        Ok(e)
    }
}

/// Seeded random instance with coefficients uniform in `[-coeff_range, coeff_range]`.
pub fn random_maxaffine(seed: u64, n_ma: usize, dim: usize, coeff_range: f64) -> Result<MaxAffine> {
    if n_ma == 0 {
        return Err(Error::invalid("N_ma must be at least 1"));
    }
    if !(coeff_range >= 0.0 && coeff_range.is_finite()) {
        return Err(Error::invalid(format!("coeff_range must be finite and nonnegative, got {coeff_range}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        if coeff_range == 0.0 {
            0.0
        } else {
            rng.gen_range(-coeff_range..=coeff_range)
        }
    };
    let components = (0..n_ma)
        .map(|_| {
            let a = (0..dim).map(|_| draw(&mut rng)).collect();
            (a, draw(&mut rng))
        })
        .collect();
    MaxAffine::new(components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_lines() -> MaxAffine {
        MaxAffine::new(vec![(vec![1.0], 0.0), (vec![-1.0], 0.0)]).unwrap()
    }

    fn three_lines() -> MaxAffine {
        MaxAffine::new(vec![(vec![2.0], 1.0), (vec![-1.0], 0.0), (vec![0.0], 0.5)]).unwrap()
    }

    // Brute force: sort the component values.
    fn sorted_values(ma: &MaxAffine, x: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = (0..ma.len())
            .map(|i| ma.slope(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ma.intercept(i))
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn evaluate_examples() {
        let r = two_lines().evaluate(&[0.5]).unwrap();
        assert_eq!((r.value, r.cell_index, r.margin), (0.5, 0, 1.0));

        let r = two_lines().evaluate(&[0.0]).unwrap();
        assert_eq!((r.value, r.cell_index, r.margin), (0.0, 0, 0.0));

        // Values at x = -1: (-1, 1, 0.5).
        let r = three_lines().evaluate(&[-1.0]).unwrap();
        let sorted = sorted_values(&three_lines(), &[-1.0]);
        assert_eq!(r.value, sorted[2]);
        assert_eq!(r.cell_index, 1);
        assert_abs_diff_eq!(r.margin, sorted[2] - sorted[1], epsilon = 1e-15);
        assert_abs_diff_eq!(r.margin, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn indicator_examples() {
        let single = MaxAffine::new(vec![(vec![3.0, -1.0], 2.0)]).unwrap();
        assert_eq!(single.indicator(&[0.3, 9.0]).unwrap(), vec![1.0]);
        assert_eq!(single.evaluate(&[0.3, 9.0]).unwrap().margin, 0.0);
        assert_eq!(two_lines().indicator(&[0.5]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(three_lines().indicator(&[-1.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            two_lines().evaluate(&[1.0, 2.0]),
            Err(Error::LengthMismatch { expected: 1, got: 2, .. })
        ));
        assert!(MaxAffine::new(vec![]).is_err());
        assert!(MaxAffine::new(vec![(vec![1.0], 0.0), (vec![1.0, 2.0], 0.0)]).is_err());
    }

    #[test]
    fn random_instances() {
        let a = random_maxaffine(7, 5, 2, 1.5).unwrap();
        assert_eq!(a, random_maxaffine(7, 5, 2, 1.5).unwrap());
        assert_eq!(a.len(), 5);
        assert!((0..5).all(|i| a.slope(i).len() == 2));
        assert!((0..5).all(|i| a.slope(i).iter().all(|v| v.abs() <= 1.5)));

        let flat = random_maxaffine(1, 4, 3, 0.0).unwrap();
        assert_eq!(flat.evaluate(&[0.2, -4.0, 1.0]).unwrap().cell_index, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn partition_is_total_and_margin_matches_sort(
            seed in any::<u64>(),
            n_ma in 1usize..8,
            x in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let ma = random_maxaffine(seed, n_ma, 3, 2.0).unwrap();
            let r = ma.evaluate(&x).unwrap();
            let values = ma.component_values(&x).unwrap();
            prop_assert_eq!(values[r.cell_index], r.value);
            prop_assert!(values[..r.cell_index].iter().all(|&v| v < r.value));
            let sorted = sorted_values(&ma, &x);
            let expected = if n_ma == 1 { 0.0 } else { sorted[n_ma - 1] - sorted[n_ma - 2] };
            prop_assert!((r.margin - expected).abs() <= 1e-12);

            let e = ma.indicator(&x).unwrap();
            prop_assert_eq!(e.iter().filter(|&&v| v != 0.0).count(), 1);
            prop_assert_eq!(e[r.cell_index], 1.0);
        }

        #[test]
        fn positive_scaling_keeps_the_cell(
            seed in any::<u64>(),
            lambda in 0.01f64..100.0,
            x in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let ma = random_maxaffine(seed, 6, 2, 1.0).unwrap();
            let r = ma.evaluate(&x).unwrap();
            prop_assume!(r.margin > 1e-9);
            prop_assert_eq!(ma.scaled(lambda).unwrap().evaluate(&x).unwrap().cell_index, r.cell_index);
        }
    }
}
