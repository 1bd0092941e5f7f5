use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::Scalar;

/// Affine map `y = W x + b` with `W: out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Array2::zeros((output, input)), bias: Array1::zeros(output) }
    }

    /// Entries uniform in `±scale/√input`.
    pub fn uniform<R: Rng + ?Sized>(input: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (input.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            weight: Array2::from_shape_simple_fn((output, input), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(output, || dist.sample(rng)),
        }
    }

    pub fn input(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        self.weight
            .rows()
            .into_iter()
            .zip(self.bias.iter())
            .map(|(row, &b)| row.iter().zip(x).fold(T::from_f64(b), |acc, (&w, &xi)| acc + xi * w))
            .collect()
    }
}

/// Multilayer perceptron with SiLU after every hidden layer and a linear
/// output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `depth` hidden layers of `width` units; the output layer starts at zero.
    pub fn new<R: Rng + ?Sized>(input: usize, width: usize, depth: usize, output: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = input;
        for _ in 0..depth {
            layers.push(Dense::uniform(fan_in, width, 1.0, rng));
            fan_in = width;
        }
        layers.push(Dense::zeros(fan_in, output));
        Self { layers }
    }

    pub fn zeros(input: usize, width: usize, depth: usize, output: usize) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = input;
        for _ in 0..depth {
            layers.push(Dense::zeros(fan_in, width));
            fan_in = width;
        }
        layers.push(Dense::zeros(fan_in, output));
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut h = x.to_vec();
        for layer in hidden {
            h = layer.apply(&h).into_iter().map(Scalar::silu).collect();
        }
        last.apply(&h)
    }
}
