use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg;

/// Smallest singular value accepted for the lift after a refresh.
pub const MIN_SINGULAR_VALUE: f64 = 1e-8;

/// Trainable tall matrix `A: m×n` with a cached pseudo-inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftMatrix {
    a: Array2<f64>,
    pinv: Array2<f64>,
    stale: bool,
}

impl LiftMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (m, n) = a.dim();
        if m < n {
            return Err(Error::InvalidArgument(format!("lift must be at least square, got {m}×{n}")));
        }
        let mut lift = Self { pinv: Array2::zeros((n, m)), a, stale: true };
        lift.refresh_pseudo_inverse()?;
        Ok(lift)
    }

    /// `[I_n; 0]`.
    pub fn identity(n: usize, m: usize) -> Result<Self> {
        Self::new(Array2::from_shape_fn((m, n), |(i, j)| if i == j { 1.0 } else { 0.0 }))
    }

    /// `[I_n; G]` with `G` entries drawn from `N(0, std²)`.
    pub fn perturbed_identity<R: Rng + ?Sized>(n: usize, m: usize, std: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let a = Array2::from_shape_fn((m, n), |(i, j)| {
            if i < n {
                if i == j { 1.0 } else { 0.0 }
            } else {
                normal.sample(rng)
            }
        });
        Self::new(a)
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn pseudo_inverse(&self) -> &Array2<f64> {
        debug_assert!(!self.stale, "stale pseudo-inverse used");
        &self.pinv
    }

    /// Overwrites `A` from a row-major slice; the cache goes stale.
    pub fn set_entries(&mut self, values: &[f64]) {
        self.a.as_slice_mut().expect("standard layout").copy_from_slice(values);
        self.stale = true;
    }

    /// Recomputes `A⁺` from the normal equations and checks conditioning.
    pub fn refresh_pseudo_inverse(&mut self) -> Result<()> {
        let pinv = linalg::pseudo_inverse(self.a.view())?;
        let smin = linalg::min_singular_value(self.a.view());
        if !(smin >= MIN_SINGULAR_VALUE) {
            return Err(Error::RankDeficient { pivot: smin });
        }
        self.pinv = pinv;
        self.stale = false;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_lift_pinv() {
        let l = LiftMatrix::identity(3, 5).unwrap();
        let expected = Array2::from_shape_fn((3, 5), |(i, j)| if i == j { 1.0 } else { 0.0 });
        assert_eq!(l.pseudo_inverse(), &expected);
    }

    #[test]
    fn scaled_lift_pinv() {
        let a = Array2::from_shape_fn((5, 3), |(i, j)| if i == j { 2.0 } else { 0.0 });
        let l = LiftMatrix::new(a).unwrap();
        let expected = Array2::from_shape_fn((3, 5), |(i, j)| if i == j { 0.5 } else { 0.0 });
        assert_eq!(l.pseudo_inverse(), &expected);
    }

    #[test]
    fn random_tall_lift_left_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a = Array2::from_shape_fn((64, 3), |_| normal.sample(&mut rng));
        let l = LiftMatrix::new(a).unwrap();
        let prod = l.pseudo_inverse().dot(l.matrix());
        for ((i, j), v) in prod.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }

    #[test]
    fn wide_and_rank_deficient_rejected() {
        assert!(LiftMatrix::new(Array2::zeros((2, 3))).is_err());
        let sq = LiftMatrix::new(Array2::eye(3)).unwrap();
        assert_eq!(sq.pseudo_inverse(), &Array2::<f64>::eye(3));
        let a = Array2::from_shape_fn((4, 2), |(i, _)| i as f64);
        assert!(matches!(LiftMatrix::new(a), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn updates_mark_cache_stale() {
        let mut l = LiftMatrix::identity(2, 4).unwrap();
        l.set_entries(&[2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(l.is_stale());
        l.refresh_pseudo_inverse().unwrap();
        assert!(!l.is_stale());
        assert_eq!(l.pseudo_inverse()[[0, 0]], 0.5);
    }
}
