//! Gated recurrent unit over a step-major input sequence.
//!
//! Update rule per step, with sigmoid gates and tanh candidate:
//!
//! ```text
//! z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
//! r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
//! n_t = tanh(Wn x_t + Un (r_t * h_{t-1}) + bn)
//! h_t = (1 - z_t) * n_t + z_t * h_{t-1}
//! ```
//!
//! The initial state is zero. The node output is the full state sequence
//! `[len, units]`; a downstream `LastRow` node selects the final state.

use super::tensor::Tensor;

/// Per-step gate values captured during the forward pass; `c = r * h_prev`.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub z: Tensor,
    pub r: Tensor,
    pub n: Tensor,
    pub c: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += M v` for row-major `M` of shape `[rows, cols]`.
fn mat_vec_add(m: &[f64], v: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(v) {
            acc += w * x;
        }
        out[r] += acc;
    }
}

/// `out += M^T g` for row-major `M` of shape `[rows, cols]`.
fn mat_t_vec_add(m: &[f64], g: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let gr = g[r];
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * gr;
        }
    }
}

/// `gm += g (outer) v` accumulated into row-major `gm` of shape `[rows, cols]`.
fn outer_add(gm: &mut [f64], g: &[f64], v: &[f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        let row = &mut gm[r * cols..(r + 1) * cols];
        for (o, x) in row.iter_mut().zip(v) {
            *o += gr * x;
        }
    }
}

pub struct GruParams<'a> {
    pub wz: &'a [f64],
    pub uz: &'a [f64],
    pub bz: &'a [f64],
    pub wr: &'a [f64],
    pub ur: &'a [f64],
    pub br: &'a [f64],
    pub wn: &'a [f64],
    pub un: &'a [f64],
    pub bn: &'a [f64],
}

pub fn forward(input: &Tensor, p: &GruParams, units: usize) -> (Tensor, GruCache) {
    let len = input.shape()[0];
    let feat = input.shape()[1];
    let mut hs = Tensor::zeros(&[len, units]);
    let mut cache = GruCache {
        z: Tensor::zeros(&[len, units]),
        r: Tensor::zeros(&[len, units]),
        n: Tensor::zeros(&[len, units]),
        c: Tensor::zeros(&[len, units]),
    };
    let mut h_prev = vec![0.0; units];
    for t in 0..len {
        let x = input.row(t);
        let mut az = p.bz.to_vec();
        let mut ar = p.br.to_vec();
        mat_vec_add(p.wz, x, &mut az, units, feat);
        mat_vec_add(p.uz, &h_prev, &mut az, units, units);
        mat_vec_add(p.wr, x, &mut ar, units, feat);
        mat_vec_add(p.ur, &h_prev, &mut ar, units, units);
        let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
        let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();
        let c: Vec<f64> = r.iter().zip(&h_prev).map(|(ri, hi)| ri * hi).collect();
        let mut an = p.bn.to_vec();
        mat_vec_add(p.wn, x, &mut an, units, feat);
        mat_vec_add(p.un, &c, &mut an, units, units);
        let n: Vec<f64> = an.iter().map(|&a| a.tanh()).collect();
        let h: Vec<f64> = (0..units)
            .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
            .collect();
        hs.row_mut(t).copy_from_slice(&h);
        cache.z.row_mut(t).copy_from_slice(&z);
        cache.r.row_mut(t).copy_from_slice(&r);
        cache.n.row_mut(t).copy_from_slice(&n);
        cache.c.row_mut(t).copy_from_slice(&c);
        h_prev = h;
    }
    (hs, cache)
}

pub struct GruGrads<'a> {
    pub wz: &'a mut [f64],
    pub uz: &'a mut [f64],
    pub bz: &'a mut [f64],
    pub wr: &'a mut [f64],
    pub ur: &'a mut [f64],
    pub br: &'a mut [f64],
    pub wn: &'a mut [f64],
    pub un: &'a mut [f64],
    pub bn: &'a mut [f64],
}

/// Backpropagation through time. `grad_out` holds gradients on every state
/// row; returns the gradient with respect to the input sequence.
pub fn backward(
    input: &Tensor,
    hs: &Tensor,
    cache: &GruCache,
    p: &GruParams,
    grads: &mut GruGrads,
    grad_out: &Tensor,
    units: usize,
) -> Tensor {
    let len = input.shape()[0];
    let feat = input.shape()[1];
    let mut grad_in = Tensor::zeros(&[len, feat]);
    let zeros = vec![0.0; units];
    let mut g_h = vec![0.0; units];
    for t in (0..len).rev() {
        for (gh, go) in g_h.iter_mut().zip(grad_out.row(t)) {
            *gh += go;
        }
        let x = input.row(t);
        let h_prev: &[f64] = if t > 0 { hs.row(t - 1) } else { &zeros };
        let z = cache.z.row(t);
        let r = cache.r.row(t);
        let n = cache.n.row(t);
        let c = cache.c.row(t);

        // h = (1 - z) * n + z * h_prev
        let mut g_hprev: Vec<f64> = (0..units).map(|i| g_h[i] * z[i]).collect();
        let g_az: Vec<f64> = (0..units)
            .map(|i| g_h[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i]))
            .collect();
        let g_an: Vec<f64> = (0..units)
            .map(|i| g_h[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]))
            .collect();

        // a_n = Wn x + Un c + bn
        outer_add(grads.wn, &g_an, x, units, feat);
        outer_add(grads.un, &g_an, c, units, units);
        for (b, g) in grads.bn.iter_mut().zip(&g_an) {
            *b += g;
        }
        let mut g_c = vec![0.0; units];
        mat_t_vec_add(p.un, &g_an, &mut g_c, units, units);

        // c = r * h_prev
        let g_ar: Vec<f64> = (0..units)
            .map(|i| g_c[i] * h_prev[i] * r[i] * (1.0 - r[i]))
            .collect();
        for i in 0..units {
            g_hprev[i] += g_c[i] * r[i];
        }

        outer_add(grads.wr, &g_ar, x, units, feat);
        outer_add(grads.ur, &g_ar, h_prev, units, units);
        for (b, g) in grads.br.iter_mut().zip(&g_ar) {
            *b += g;
        }
        mat_t_vec_add(p.ur, &g_ar, &mut g_hprev, units, units);

        outer_add(grads.wz, &g_az, x, units, feat);
        outer_add(grads.uz, &g_az, h_prev, units, units);
        for (b, g) in grads.bz.iter_mut().zip(&g_az) {
            *b += g;
        }
        mat_t_vec_add(p.uz, &g_az, &mut g_hprev, units, units);

        let gx = grad_in.row_mut(t);
        mat_t_vec_add(p.wz, &g_az, gx, units, feat);
        mat_t_vec_add(p.wr, &g_ar, gx, units, feat);
        mat_t_vec_add(p.wn, &g_an, gx, units, feat);

        g_h = g_hprev;
    }
    grad_in
}
