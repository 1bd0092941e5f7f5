//! The slow-dynamics loss `L = (1/Nk) Σ_i Σ_j ‖J_ż(z_i)·v_j‖²`.
//!
//! Two evaluations are provided. [`jacobian_loss`] runs the latent
//! right-hand side on nested duals one sample and direction at a time; it is
//! the reference. [`loss_and_grad`] records the same second-order
//! directional derivative on a reverse-mode tape, batched over samples and
//! directions, and returns the parameter gradient.
//!
//! The tape route uses that at a sample point `z_i = φ(A x_i)` the inverse
//! is exact, `φ⁻¹(z_i) = A x_i` and `A⁺ φ⁻¹(z_i) = x_i`, so `f(x_i)` and
//! `J_f(x_i)` are constants. Per coupling layer it records
//!
//! * value and `d1` tangent (`d1` = `A f(x_i)` pushed through `φ`), one row per sample;
//! * `d2` tangent, the inverse-layer tangent of `v_j` coming down from the top;
//! * `d12`, starting from `A J_f A⁺ d2` at the bottom and pushed up.
//!
//! The top-level `d12` is `J_ż(z_i)·v_j`.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::samples::PreparedSamples;
use crate::autodiff::{Dual, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::latent::LatentSystem;
use crate::net::{Dense, PseudoInvertibleNet};
use crate::systems::OdeSystem;

/// How the outer directional derivative `J_ż·v` is evaluated by
/// [`jacobian_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JvpMode {
    Exact,
    /// `(ż(z+εv) − ż(z−εv))/2ε` with `ε = 1e-5·(1 + ‖z‖)`; for debugging.
    CentralDifference,
}

/// `k` standard-normal directions in `R^m`, each scaled to unit length, one per row.
pub fn draw_directions<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Array2<f64> {
    let mut d = Array2::from_shape_simple_fn((k, m), || rng.sample::<f64, _>(StandardNormal));
    for mut row in d.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    d
}

/// Reference loss over the states in `points` (one per row).
pub fn jacobian_loss(
    net: &PseudoInvertibleNet,
    sys: &dyn OdeSystem,
    points: ArrayView2<f64>,
    dirs: ArrayView2<f64>,
    mode: JvpMode,
) -> Result<f64> {
    if points.nrows() == 0 || dirs.nrows() == 0 {
        return Err(Error::InvalidArgument("loss needs at least one sample and one direction".into()));
    }
    let lat = LatentSystem::new(net, sys);
    let mut total = 0.0;
    for (i, x) in points.rows().into_iter().enumerate() {
        let z = net.encode(&x.to_vec())?;
        for v in dirs.rows() {
            let d: Vec<f64> = match mode {
                JvpMode::Exact => {
                    let zs: Vec<Dual> = z.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect();
                    lat.rhs_generic(&zs)?.into_iter().map(|d| d.deriv).collect()
                }
                JvpMode::CentralDifference => {
                    let eps = 1e-5 * (1.0 + z.iter().map(|a| a * a).sum::<f64>().sqrt());
                    let at = |s: f64| -> Result<Vec<f64>> {
                        lat.rhs(&z.iter().zip(v).map(|(a, b)| a + s * b).collect::<Vec<_>>())
                    };
                    let (p, m) = (at(eps)?, at(-eps)?);
                    p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
                }
            };
            let sq: f64 = d.iter().map(|e| e * e).sum();
            if !sq.is_finite() {
                return Err(Error::NonFiniteLoss { sample: i });
            }
            total += sq;
        }
    }
    Ok(total / (points.nrows() * dirs.nrows()) as f64)
}

/// Loss value and gradient with respect to `net.params()`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Tape evaluation of the loss over the samples `batch` and directions
/// `dirs` (one per row). Samples are processed in chunks of about
/// `chunk_rows / k` samples, each on its own tape; chunk results are summed
/// in chunk order.
pub fn loss_and_grad(
    net: &PseudoInvertibleNet,
    samples: &PreparedSamples,
    batch: &[usize],
    dirs: &Array2<f64>,
    chunk_rows: usize,
) -> Result<LossGrad> {
    let k = dirs.nrows();
    if batch.is_empty() || k == 0 {
        return Err(Error::InvalidArgument("loss needs at least one sample and one direction".into()));
    }
    if dirs.ncols() != net.m() || samples.dim() != net.n() {
        return Err(Error::InvalidArgument("sample or direction dimension does not match the network".into()));
    }
    let per_chunk = (chunk_rows / k).max(1);
    let parts: Vec<Result<(f64, Vec<f64>)>> =
        batch.par_chunks(per_chunk).map(|idx| chunk_loss_grad(net, samples, idx, dirs)).collect();
    let scale = 1.0 / (batch.len() * k) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.param_count()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(LossGrad { loss: loss * scale, grad })
}

struct TapeDense {
    w: Var,
    b: Var,
}

struct TapeCoupling {
    scale: Vec<TapeDense>,
    shift: Vec<TapeDense>,
    a: Range<usize>,
    b: Range<usize>,
    clamp: f64,
}

struct TapeNet {
    a: Var,
    layers: Vec<TapeCoupling>,
}

fn record_params(tape: &mut Tape, net: &PseudoInvertibleNet) -> TapeNet {
    let dense = |tape: &mut Tape, d: &Dense| TapeDense {
        w: tape.leaf(d.weight.clone()),
        b: tape.leaf(d.bias.clone().insert_axis(Axis(0))),
    };
    let a = tape.leaf(net.lift().matrix().clone());
    let layers = net
        .layers()
        .iter()
        .map(|l| TapeCoupling {
            scale: l.scale_net.layers.iter().map(|d| dense(tape, d)).collect(),
            shift: l.shift_net.layers.iter().map(|d| dense(tape, d)).collect(),
            a: l.mask.a.clone(),
            b: l.mask.b.clone(),
            clamp: l.clamp,
        })
        .collect();
    TapeNet { a, layers }
}

fn flatten_grads(tape: &Tape, g: &Gradients, tn: &TapeNet, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut push = |v: Var| match g.wrt(v) {
        Some(a) => out.extend(a.iter()),
        None => out.extend(std::iter::repeat_n(0.0, tape.value(v).len())),
    };
    push(tn.a);
    for layer in &tn.layers {
        for sub in [&layer.scale, &layer.shift] {
            for d in sub {
                push(d.w);
                push(d.b);
            }
        }
    }
    debug_assert_eq!(out.len(), count);
    out
}

/// Per-hidden-layer quantities of a subnet kept from the value pass.
struct MlpTrace {
    s1: Vec<Var>,
    s2: Vec<Var>,
    dpre1: Vec<Var>,
}

/// Per-coupling-layer quantities kept from the value pass.
struct LayerTrace {
    xb: Var,
    e: Var,
    xbe: Var,
    c1: Var,
    c2: Var,
    ds1: Var,
    de1: Var,
    dr1: Var,
    dxb1: Var,
    scale: MlpTrace,
    shift: MlpTrace,
}

impl MlpTrace {
    fn expand(&self, tape: &mut Tape, k: usize) -> Self {
        let mut rep = |vs: &[Var]| vs.iter().map(|&v| tape.repeat_rows(v, k)).collect();
        Self { s1: rep(&self.s1), s2: rep(&self.s2), dpre1: rep(&self.dpre1) }
    }
}

impl LayerTrace {
    fn expand(&self, tape: &mut Tape, k: usize) -> Self {
        let mut rep = |v: Var| tape.repeat_rows(v, k);
        let (xb, e, xbe, c1, c2) = (rep(self.xb), rep(self.e), rep(self.xbe), rep(self.c1), rep(self.c2));
        let (ds1, de1, dr1, dxb1) = (rep(self.ds1), rep(self.de1), rep(self.dr1), rep(self.dxb1));
        Self {
            xb,
            e,
            xbe,
            c1,
            c2,
            ds1,
            de1,
            dr1,
            dxb1,
            scale: self.scale.expand(tape, k),
            shift: self.shift.expand(tape, k),
        }
    }
}

/// Quantities of the inverse-tangent pass needed by the `d12` pass.
struct InverseTrace {
    scale_dpre2: Vec<Var>,
    shift_dpre2: Vec<Var>,
    dr2: Var,
    ds2: Var,
    dxb2: Var,
}

fn split(tape: &mut Tape, x: Var, layer: &TapeCoupling) -> (Var, Var) {
    let a = tape.cols(x, layer.a.start, layer.a.len());
    let b = tape.cols(x, layer.b.start, layer.b.len());
    (a, b)
}

fn join(tape: &mut Tape, a: Var, b: Var, layer: &TapeCoupling) -> Var {
    if layer.a.start == 0 {
        tape.concat(a, b)
    } else {
        tape.concat(b, a)
    }
}

/// Subnet value and first tangent.
fn mlp_value(tape: &mut Tape, dense: &[TapeDense], x: Var, dx: Var) -> (Var, Var, MlpTrace) {
    let (last, hidden) = dense.split_last().expect("output layer");
    let mut trace = MlpTrace { s1: vec![], s2: vec![], dpre1: vec![] };
    let (mut h, mut dh) = (x, dx);
    for d in hidden {
        let lin = tape.matmul_t(h, d.w);
        let pre = tape.add_row(lin, d.b);
        let dpre = tape.matmul_t(dh, d.w);
        // silu' = σ(1 + x(1−σ)), silu'' = σ(1−σ)(2 + x(1−2σ))
        let sig = tape.sigmoid(pre);
        let om = tape.affine(sig, -1.0, 1.0);
        let xom = tape.mul(pre, om);
        let t1 = tape.affine(xom, 1.0, 1.0);
        let s1 = tape.mul(sig, t1);
        let sp = tape.mul(sig, om);
        let o2 = tape.affine(sig, -2.0, 1.0);
        let xo2 = tape.mul(pre, o2);
        let t2 = tape.affine(xo2, 1.0, 2.0);
        let s2 = tape.mul(sp, t2);
        h = tape.mul(pre, sig);
        dh = tape.mul(s1, dpre);
        trace.s1.push(s1);
        trace.s2.push(s2);
        trace.dpre1.push(dpre);
    }
    let lin = tape.matmul_t(h, last.w);
    let out = tape.add_row(lin, last.b);
    let dout = tape.matmul_t(dh, last.w);
    (out, dout, trace)
}

/// Subnet tangent given the stored first derivatives of the activations.
fn mlp_tangent(tape: &mut Tape, dense: &[TapeDense], s1: &[Var], dx: Var) -> (Var, Vec<Var>) {
    let (last, hidden) = dense.split_last().expect("output layer");
    let mut dh = dx;
    let mut dpre = Vec::with_capacity(hidden.len());
    for (d, &s) in hidden.iter().zip(s1) {
        let p = tape.matmul_t(dh, d.w);
        dh = tape.mul(s, p);
        dpre.push(p);
    }
    (tape.matmul_t(dh, last.w), dpre)
}

/// Subnet mixed second tangent.
fn mlp_second(tape: &mut Tape, dense: &[TapeDense], tr: &MlpTrace, dpre2: &[Var], dx12: Var) -> Var {
    let (last, hidden) = dense.split_last().expect("output layer");
    let mut dh = dx12;
    for (l, d) in hidden.iter().enumerate() {
        let p12 = tape.matmul_t(dh, d.w);
        let first = tape.mul(tr.s1[l], p12);
        let cross = tape.mul(tr.dpre1[l], dpre2[l]);
        let second = tape.mul(tr.s2[l], cross);
        dh = tape.add(first, second);
    }
    tape.matmul_t(dh, last.w)
}

fn coupling_value(tape: &mut Tape, layer: &TapeCoupling, x: Var, dx: Var) -> (Var, Var, LayerTrace) {
    let (xa, xb) = split(tape, x, layer);
    let (dxa1, dxb1) = split(tape, dx, layer);
    let (r, dr1, scale) = mlp_value(tape, &layer.scale, xa, dxa1);
    let (t, dt1, shift) = mlp_value(tape, &layer.shift, xa, dxa1);
    let c = layer.clamp;
    let rc = tape.scale(r, 1.0 / c);
    let th = tape.tanh(rc);
    let s = tape.scale(th, c);
    let th2 = tape.mul(th, th);
    let c1 = tape.affine(th2, -1.0, 1.0);
    let thc1 = tape.mul(th, c1);
    let c2 = tape.scale(thc1, -2.0 / c);
    let ds1 = tape.mul(c1, dr1);
    let e = tape.exp(s);
    let de1 = tape.mul(e, ds1);
    let xbe = tape.mul(xb, e);
    let yb = tape.add(xbe, t);
    let p = tape.mul(dxb1, e);
    let q = tape.mul(xb, de1);
    let pq = tape.add(p, q);
    let dyb1 = tape.add(pq, dt1);
    let y = join(tape, xa, yb, layer);
    let dy = join(tape, dxa1, dyb1, layer);
    (y, dy, LayerTrace { xb, e, xbe, c1, c2, ds1, de1, dr1, dxb1, scale, shift })
}

/// Input tangent of a layer whose output tangent is `dy`.
fn coupling_inverse_tangent(tape: &mut Tape, layer: &TapeCoupling, tr: &LayerTrace, dy: Var) -> (Var, InverseTrace) {
    let (dya, dyb) = split(tape, dy, layer);
    let (dr2, scale_dpre2) = mlp_tangent(tape, &layer.scale, &tr.scale.s1, dya);
    let (dt2, shift_dpre2) = mlp_tangent(tape, &layer.shift, &tr.shift.s1, dya);
    let ds2 = tape.mul(tr.c1, dr2);
    let a = tape.sub(dyb, dt2);
    let b = tape.mul(tr.xbe, ds2);
    let num = tape.sub(a, b);
    let dxb2 = tape.div(num, tr.e);
    let dx = join(tape, dya, dxb2, layer);
    (dx, InverseTrace { scale_dpre2, shift_dpre2, dr2, ds2, dxb2 })
}

fn coupling_second(tape: &mut Tape, layer: &TapeCoupling, tr: &LayerTrace, it: &InverseTrace, d12: Var) -> Var {
    let (dxa12, dxb12) = split(tape, d12, layer);
    let dr12 = mlp_second(tape, &layer.scale, &tr.scale, &it.scale_dpre2, dxa12);
    let dt12 = mlp_second(tape, &layer.shift, &tr.shift, &it.shift_dpre2, dxa12);
    // S12 = c1·r12 + c2·r1·r2, e12 = e·(S12 + S1·S2)
    let a = tape.mul(tr.c1, dr12);
    let r1r2 = tape.mul(tr.dr1, it.dr2);
    let b = tape.mul(tr.c2, r1r2);
    let ds12 = tape.add(a, b);
    let s1s2 = tape.mul(tr.ds1, it.ds2);
    let inner = tape.add(ds12, s1s2);
    let de12 = tape.mul(tr.e, inner);
    let de2 = tape.mul(tr.e, it.ds2);
    // y12_b = x12_b·e + x1_b·e2 + x2_b·e1 + x_b·e12 + t12
    let t1 = tape.mul(dxb12, tr.e);
    let t2 = tape.mul(tr.dxb1, de2);
    let t3 = tape.mul(it.dxb2, tr.de1);
    let t4 = tape.mul(tr.xb, de12);
    let s12 = tape.add(t1, t2);
    let s123 = tape.add(s12, t3);
    let s1234 = tape.add(s123, t4);
    let yb = tape.add(s1234, dt12);
    join(tape, dxa12, yb, layer)
}

fn chunk_loss_grad(
    net: &PseudoInvertibleNet,
    samples: &PreparedSamples,
    idx: &[usize],
    dirs: &Array2<f64>,
) -> Result<(f64, Vec<f64>)> {
    let (n, m, k) = (net.n(), net.m(), dirs.nrows());
    let rows = idx.len();
    let mut tape = Tape::new();
    let tn = record_params(&mut tape, net);

    let x = tape.leaf(samples.x.select(Axis(0), idx));
    let f = tape.leaf(samples.f.select(Axis(0), idx));
    let v = tape.leaf(Array2::from_shape_fn((rows * k, m), |(r, c)| dirs[[r % k, c]]));
    let mut jac = Vec::with_capacity(rows * n * n);
    for &i in idx {
        jac.extend_from_slice(&samples.jac[i * n * n..(i + 1) * n * n]);
    }

    let mut h = tape.matmul_t(x, tn.a);
    let mut d1 = tape.matmul_t(f, tn.a);
    let mut traces = Vec::with_capacity(tn.layers.len());
    for layer in &tn.layers {
        let (y, dy, tr) = coupling_value(&mut tape, layer, h, d1);
        h = y;
        d1 = dy;
        traces.push(tr);
    }
    let expanded: Vec<LayerTrace> = traces.iter().map(|t| t.expand(&mut tape, k)).collect();

    let mut d2 = v;
    let mut inverse: Vec<InverseTrace> = Vec::with_capacity(tn.layers.len());
    for (layer, tr) in tn.layers.iter().zip(&expanded).rev() {
        let (dx, it) = coupling_inverse_tangent(&mut tape, layer, tr, d2);
        d2 = dx;
        inverse.push(it);
    }
    inverse.reverse();

    // d12 at the bottom: A · J_f(x_i) · A⁺ · d2
    let pinv = tape.pseudo_inverse(tn.a)?;
    let dx = tape.matmul_t(d2, pinv);
    let jdx = tape.row_matvec(dx, Arc::new(jac), k);
    let mut d12 = tape.matmul_t(jdx, tn.a);
    for ((layer, tr), it) in tn.layers.iter().zip(&expanded).zip(&inverse) {
        d12 = coupling_second(&mut tape, layer, tr, it, d12);
    }

    if let Some(r) = tape.value(d12).rows().into_iter().position(|row| row.iter().any(|e| !e.is_finite())) {
        return Err(Error::NonFiniteLoss { sample: idx[r / k] });
    }
    let loss = tape.dot(d12, d12);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { sample: idx[0] });
    }
    let g = tape.backward(loss)?;
    Ok((value, flatten_grads(&tape, &g, &tn, net.param_count())))
}
