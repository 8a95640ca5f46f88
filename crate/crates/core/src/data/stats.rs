use crate::error::{Error, Result};
use crate::Scalar;

/// Min-max bounds fitted on one column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMax<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> MinMax<T> {
    pub fn fit(values: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::arg("min-max normalization of an empty list"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite value {v} in min-max input")));
        }
        let min = values.iter().copied().fold(T::infinity(), T::min);
        let max = values.iter().copied().fold(T::neg_infinity(), T::max);
        Ok(MinMax { min, max })
    }

    /// Maps `x` into `[0, 1]`; a constant column maps to 0.5.
    pub fn apply(&self, x: T) -> T {
        if self.max == self.min {
            T::of(0.5)
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }
}

pub fn minmax_normalize<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let mm = MinMax::fit(values)?;
    Ok(values.iter().map(|&v| mm.apply(v)).collect())
}

pub fn mean<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    values.iter().copied().sum::<T>() / T::of_usize(values.len())
}

/// Variance with denominator n; a single value has variance zero.
pub fn population_variance<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let m = mean(values);
    values.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::of_usize(values.len())
}

pub fn pearson_correlation<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::arg("pearson correlation needs at least 3 pairs"));
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::UndefinedCorrelation("zero variance input".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worktime_range_endpoints() {
        let out = minmax_normalize(&[5.0, 297.4, 10477.0]).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 1.0);
    }

    #[test]
    fn fixed_bounds() {
        let mm = MinMax { min: 60.0, max: 100.0 };
        assert_eq!(mm.apply(80.0), 0.5);
    }

    #[test]
    fn constant_column_is_neutral() {
        assert_eq!(minmax_normalize(&[7.0f32, 7.0, 7.0]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(matches!(minmax_normalize::<f64>(&[]), Err(Error::Argument(_))));
        assert!(matches!(minmax_normalize(&[1.0, f64::NAN]), Err(Error::Argument(_))));
    }

    #[test]
    fn pearson_identity_and_negation() {
        let x = [1.0f64, 2.5, 3.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_correlation(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_hand_computed() {
        // means 2.5 and 5; deviations (-1.5,-.5,.5,1.5) and (-3,-1,0,4)
        // sxy = 4.5+0.5+0+6 = 11, sxx = 5, syy = 26
        let expected = 11.0 / (5.0f64.sqrt() * 26.0f64.sqrt());
        let r = pearson_correlation(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 5.0, 9.0]).unwrap();
        assert!((r - expected).abs() < 1e-15);
    }

    #[test]
    fn pearson_zero_variance() {
        let r = pearson_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(r, Err(Error::UndefinedCorrelation(_))));
    }

    proptest! {
        #[test]
        fn minmax_monotone_and_bounded(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let out = minmax_normalize(&v).unwrap();
            for i in 0..v.len() {
                prop_assert!((0.0..=1.0).contains(&out[i]));
                for j in 0..v.len() {
                    if v[i] <= v[j] {
                        prop_assert!(out[i] <= out[j]);
                    }
                }
            }
            let again = minmax_normalize(&out).unwrap();
            if out.iter().any(|&x| x != out[0]) {
                for (a, b) in out.iter().zip(&again) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn pearson_affine_sign(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -10.0f64..10.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson_correlation(&x, &y) {
                let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let r2 = pearson_correlation(&ax, &y).unwrap();
                prop_assert!((r2 - a.signum() * r).abs() < 1e-9);
            }
        }
    }
}
