use num_complex::Complex64;

use super::{CallCounter, DomainBox, OdeSystem};
use crate::autodiff::{Dual, Scalar};
use crate::error::Result;

/// Three-state linear benchmark with eigenvalues −20 and −2 ± i.
pub const BENCHMARK_MATRIX: [[f64; 3]; 3] = [[33.0, 17.0, -70.0], [42.0, 18.0, -80.0], [37.0, 18.0, -75.0]];

/// `ẋ = M x` with a closed-form solution from the eigendecomposition of `M`.
#[derive(Debug)]
pub struct LinearSystem {
    matrix: [[f64; 3]; 3],
    eigenvalues: [Complex64; 3],
    eigvecs: [[Complex64; 3]; 3],
    eigvecs_inv: [[Complex64; 3]; 3],
    domain: DomainBox,
    horizon: f64,
    counter: CallCounter,
}

impl LinearSystem {
    pub fn new(matrix: [[f64; 3]; 3], half_width: f64, horizon: f64) -> Self {
        let eigenvalues = eigenvalues_3x3(&matrix);
        let mut eigvecs = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (k, lam) in eigenvalues.iter().enumerate() {
            let v = null_vector(&matrix, *lam);
            for r in 0..3 {
                eigvecs[r][k] = v[r];
            }
        }
        let eigvecs_inv = invert_3x3(&eigvecs);
        Self {
            matrix,
            eigenvalues,
            eigvecs,
            eigvecs_inv,
            domain: DomainBox::symmetric(3, half_width),
            horizon,
            counter: CallCounter::default(),
        }
    }

    /// The benchmark matrix on the box `[−1, 1]³` with horizon 2 s.
    pub fn benchmark() -> Self {
        Self::new(BENCHMARK_MATRIX, 1.0, 2.0)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> [Complex64; 3] {
        self.eigenvalues
    }

    fn apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (m, v)| acc + *v * *m))
            .collect()
    }

    /// `e^{Mt} x0`.
    pub fn solution(&self, x0: &[f64], t: f64) -> Vec<f64> {
        let c: Vec<Complex64> = (0..3)
            .map(|r| (0..3).map(|k| self.eigvecs_inv[r][k] * x0[k]).sum())
            .collect();
        (0..3)
            .map(|r| {
                (0..3)
                    .map(|k| self.eigvecs[r][k] * (self.eigenvalues[k] * t).exp() * c[k])
                    .sum::<Complex64>()
                    .re
            })
            .collect()
    }
}

impl OdeSystem for LinearSystem {
    fn name(&self) -> &str {
        "linear"
    }

    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.counter.tick();
        Ok(self.apply(x))
    }

    fn rhs_dual(&self, x: &[Dual]) -> Result<Vec<Dual>> {
        self.counter.tick();
        Ok(self.apply(x))
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn exact(&self, x0: &[f64], t: f64) -> Option<Vec<f64>> {
        Some(self.solution(x0, t))
    }

    fn calls(&self) -> u64 {
        self.counter.get()
    }
}

/// Roots of the characteristic polynomial, polished by complex Newton steps.
fn eigenvalues_3x3(m: &[[f64; 3]; 3]) -> [Complex64; 3] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let minors = m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
        + m[1][1] * m[2][2]
        - m[1][2] * m[2][1];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    // λ³ + a λ² + b λ + c
    let (a, b, c) = (-tr, minors, -det);
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = Complex64::new(q * q / 4.0 + p * p * p / 27.0, 0.0).sqrt();
    let mut u = (Complex64::new(-q / 2.0, 0.0) + disc).powf(1.0 / 3.0);
    if u.norm() < 1e-300 {
        u = (Complex64::new(-q / 2.0, 0.0) - disc).powf(1.0 / 3.0);
    }
    let omega = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
    let poly = |l: Complex64| ((l + a) * l + b) * l + c;
    let dpoly = |l: Complex64| (l * 3.0 + a * 2.0) * l + b;
    let mut roots = [Complex64::new(0.0, 0.0); 3];
    let mut w = Complex64::new(1.0, 0.0);
    for root in roots.iter_mut() {
        let uk = u * w;
        let vk = if uk.norm() > 1e-300 { -p / (uk * 3.0) } else { Complex64::new(0.0, 0.0) };
        let mut l = uk + vk - a / 3.0;
        for _ in 0..8 {
            let d = dpoly(l);
            if d.norm() < 1e-300 {
                break;
            }
            l -= poly(l) / d;
        }
        if l.im.abs() < 1e-12 * l.norm().max(1.0) {
            l.im = 0.0;
        }
        *root = l;
        w *= omega;
    }
    roots.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap().then(x.im.partial_cmp(&y.im).unwrap()));
    roots
}

/// Null vector of `M − λI` from the largest cross product of its rows.
fn null_vector(m: &[[f64; 3]; 3], lam: Complex64) -> [Complex64; 3] {
    let row = |i: usize| -> [Complex64; 3] {
        let mut r = [Complex64::new(0.0, 0.0); 3];
        for j in 0..3 {
            r[j] = Complex64::new(m[i][j], 0.0) - if i == j { lam } else { Complex64::new(0.0, 0.0) };
        }
        r
    };
    let cross = |a: [Complex64; 3], b: [Complex64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let norm = |v: &[Complex64; 3]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let candidates = [cross(row(0), row(1)), cross(row(0), row(2)), cross(row(1), row(2))];
    let best = candidates.iter().max_by(|a, b| norm(a).partial_cmp(&norm(b)).unwrap()).unwrap();
    let s = norm(best).sqrt();
    [best[0] / s, best[1] / s, best[2] / s]
}

fn invert_3x3(m: &[[Complex64; 3]; 3]) -> [[Complex64; 3]; 3] {
    let cof = |r: usize, c: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
        m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
    };
    let det = m[0][0] * cof(0, 0) + m[0][1] * cof(0, 1) + m[0][2] * cof(0, 2);
    let mut inv = [[Complex64::new(0.0, 0.0); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            inv[r][c] = cof(c, r) / det;
        }
    }
    inv
}
