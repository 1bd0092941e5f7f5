use std::ops::Range;

use rand::Rng;

use super::mlp::Mlp;
use crate::autodiff::Scalar;

/// Split of the latent coordinates into the conditioning half `a` and the
/// transformed half `b`. Both halves are contiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub a: Range<usize>,
    pub b: Range<usize>,
}

impl Mask {
    /// Layer `index` of a stack over `m` coordinates. Even layers condition
    /// on the leading coordinates, odd layers on the trailing ones; with odd
    /// `m` the conditioning half gets the extra coordinate.
    pub fn alternating(m: usize, index: usize) -> Self {
        let big = m.div_ceil(2);
        if index % 2 == 0 {
            Self { a: 0..big, b: big..m }
        } else {
            Self { a: m - big..m, b: 0..m - big }
        }
    }
}

/// Affine coupling `y_a = x_a`, `y_b = x_b ⊙ exp(c·tanh(s(x_a)/c)) + t(x_a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    pub mask: Mask,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
    pub clamp: f64,
}

impl CouplingLayer {
    pub fn new<R: Rng + ?Sized>(m: usize, index: usize, width: usize, depth: usize, clamp: f64, rng: &mut R) -> Self {
        let mask = Mask::alternating(m, index);
        let (na, nb) = (mask.a.len(), mask.b.len());
        Self {
            scale_net: Mlp::new(na, width, depth, nb, rng),
            shift_net: Mlp::new(na, width, depth, nb, rng),
            mask,
            clamp,
        }
    }

    pub fn zeros(m: usize, index: usize, width: usize, depth: usize, clamp: f64) -> Self {
        let mask = Mask::alternating(m, index);
        let (na, nb) = (mask.a.len(), mask.b.len());
        Self {
            scale_net: Mlp::zeros(na, width, depth, nb),
            shift_net: Mlp::zeros(na, width, depth, nb),
            mask,
            clamp,
        }
    }

    pub fn param_count(&self) -> usize {
        self.scale_net.param_count() + self.shift_net.param_count()
    }

    /// Clamped log-scale and shift for the conditioning half `xa`.
    fn scale_shift<T: Scalar>(&self, xa: &[T]) -> (Vec<T>, Vec<T>) {
        let c = self.clamp;
        let s = self.scale_net.apply(xa).into_iter().map(|r| (r / c).tanh() * c).collect();
        (s, self.shift_net.apply(xa))
    }

    pub fn forward<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (s, t) = self.scale_shift(&x[self.mask.a.clone()]);
        let mut y = x.to_vec();
        for (k, j) in self.mask.b.clone().enumerate() {
            y[j] = x[j] * s[k].exp() + t[k];
        }
        y
    }

    pub fn inverse<T: Scalar>(&self, y: &[T]) -> Vec<T> {
        let (s, t) = self.scale_shift(&y[self.mask.a.clone()]);
        let mut x = y.to_vec();
        for (k, j) in self.mask.b.clone().enumerate() {
            x[j] = (y[j] - t[k]) * (-s[k]).exp();
        }
        x
    }

    /// Clamped log-scales at `x` (diagnostic).
    pub fn log_scales(&self, x: &[f64]) -> Vec<f64> {
        self.scale_shift(&x[self.mask.a.clone()]).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{jvp, Dual};
    use crate::net::mlp::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomized(m: usize, index: usize, seed: u64) -> CouplingLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = CouplingLayer::new(m, index, 8, 2, 5.0, &mut rng);
        for net in [&mut layer.scale_net, &mut layer.shift_net] {
            let last = net.layers.len() - 1;
            let (i, o) = (net.layers[last].input(), net.layers[last].output());
            net.layers[last] = Dense::uniform(i, o, 1.0, &mut rng);
        }
        layer
    }

    #[test]
    fn masks_alternate_and_cover() {
        assert_eq!(Mask::alternating(6, 0), Mask { a: 0..3, b: 3..6 });
        assert_eq!(Mask::alternating(6, 1), Mask { a: 3..6, b: 0..3 });
        assert_eq!(Mask::alternating(7, 0), Mask { a: 0..4, b: 4..7 });
        assert_eq!(Mask::alternating(7, 1), Mask { a: 3..7, b: 0..3 });
    }

    #[test]
    fn inverse_undoes_forward() {
        let layer = randomized(7, 1, 2);
        let x = [0.3, -2.0, 1.5, 0.0, 4.0, -0.7, 2.2];
        let back = layer.inverse(&layer.forward(&x));
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_bounds_log_scale() {
        let mut layer = randomized(4, 0, 5);
        let last = layer.scale_net.layers.len() - 1;
        layer.scale_net.layers[last].bias.fill(1e3);
        for s in layer.log_scales(&[1.0, -1.0, 0.5, 0.2]) {
            assert!(s.abs() <= 5.0);
        }
    }

    #[test]
    fn tangent_on_conditioning_half() {
        let layer = randomized(4, 0, 9);
        let x = [0.2, -0.4, 1.0, 0.5];
        let w = [1.0, -0.5, 0.0, 0.0];
        let out = jvp(|xs: &[Dual]| layer.forward(xs), &x, &w).unwrap();
        // untouched half passes the tangent through
        assert_eq!(&out[..2], &w[..2]);
        // transformed half: x_b ⊙ e^{S} ⊙ dS + dt, with dS, dt from the subnets
        let ds = jvp(|xs: &[Dual]| layer.scale_shift(xs).0, &x[..2], &w[..2]).unwrap();
        let dt = jvp(|xs: &[Dual]| layer.scale_shift(xs).1, &x[..2], &w[..2]).unwrap();
        let s = layer.log_scales(&x);
        for k in 0..2 {
            let expected = x[2 + k] * s[k].exp() * ds[k] + dt[k];
            assert!((out[2 + k] - expected).abs() < 1e-14);
        }
    }
}
