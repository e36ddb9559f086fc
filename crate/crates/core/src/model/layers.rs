use rand::Rng;

use super::linear::{AdaptedLinear, LinearCache, Role};
use super::matrix::{axpy, dot, Matrix};
use super::param::{Grads, Param};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub shift: Param,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm { gain: Param::new(Matrix::filled(1, d, 1.0)), shift: Param::new(Matrix::zeros(1, d)) }
    }

    pub fn forward_cached(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let d = x.cols();
        let mut xhat = Matrix::zeros(x.rows(), d);
        let mut y = Matrix::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        let (g, b) = (self.gain.value.data(), self.shift.value.data());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(s);
            let xh = xhat.row_mut(i);
            for (o, v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            let yr = y.row_mut(i);
            for j in 0..d {
                yr[j] = xhat.get(i, j) * g[j] + b[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grads: &mut Grads) -> Matrix {
        let d = dy.cols();
        let g = self.gain.value.data();
        if let Some(gg) = grads.slot_mut(&self.gain) {
            let gg = gg.data_mut();
            for i in 0..dy.rows() {
                for (j, gv) in gg.iter_mut().enumerate() {
                    *gv += dy.get(i, j) * cache.xhat.get(i, j);
                }
            }
        }
        if let Some(gb) = grads.slot_mut(&self.shift) {
            let gb = gb.data_mut();
            for i in 0..dy.rows() {
                axpy(gb, 1.0, dy.row(i));
            }
        }
        let mut dx = Matrix::zeros(dy.rows(), d);
        let mut dxhat = vec![0.0; d];
        for i in 0..dy.rows() {
            for j in 0..d {
                dxhat[j] = dy.get(i, j) * g[j];
            }
            let xh = cache.xhat.row(i);
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dx = dot(&dxhat, xh) / d as f64;
            let s = cache.inv_std[i];
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = s * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        dx
    }
}

/// Which keys each query may attend to.
#[derive(Debug, Clone, Copy)]
pub struct AttnMask<'a> {
    pub key_valid: &'a [bool],
    /// Query `i` only sees keys `j <= i`.
    pub causal: bool,
}

impl AttnMask<'_> {
    #[inline]
    fn allows(&self, i: usize, j: usize) -> bool {
        self.key_valid[j] && (!self.causal || j <= i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub n_heads: usize,
    pub q: AdaptedLinear,
    pub k: AdaptedLinear,
    pub v: AdaptedLinear,
    pub o: AdaptedLinear,
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head, queries × keys.
    probs: Vec<Matrix>,
    qc: LinearCache,
    kc: LinearCache,
    vc: LinearCache,
    oc: LinearCache,
}

impl AttnCache {
    pub fn probs(&self) -> &[Matrix] {
        &self.probs
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(d: usize, n_heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            n_heads,
            q: AdaptedLinear::new(Role::AttnQ, d, d, rng),
            k: AdaptedLinear::new(Role::AttnK, d, d, rng),
            v: AdaptedLinear::new(Role::AttnV, d, d, rng),
            o: AdaptedLinear::new(Role::AttnO, d, d, rng),
        }
    }

    pub fn linears(&self) -> [&AdaptedLinear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn linears_mut(&mut self) -> [&mut AdaptedLinear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }

    pub fn forward_cached(&self, xq: &Matrix, xkv: &Matrix, mask: AttnMask<'_>) -> (Matrix, AttnCache) {
        let (q, qc) = self.q.forward_cached(xq);
        let (k, kc) = self.k.forward_cached(xkv);
        let (v, vc) = self.v.forward_cached(xkv);
        let (n, m, d) = (q.rows(), k.rows(), q.cols());
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = Matrix::zeros(n, m);
            for i in 0..n {
                let (prow, crow) = (p.row_mut(i), &mut ctx.row_mut(i)[cols.clone()]);
                head_row(&q.row(i)[cols.clone()], &k, &v, cols.clone(), scale, |j| mask.allows(i, j), prow, crow);
            }
            probs.push(p);
        }
        let (out, oc) = self.o.forward_cached(&ctx);
        (out, AttnCache { q, k, v, probs, qc, kc, vc, oc })
    }

    /// Context row (before the output projection) for one projected query
    /// against projected keys and values.
    pub fn attend_one(&self, q: &[f64], k: &Matrix, v: &Matrix, key_valid: &[bool]) -> Vec<f64> {
        let d = q.len();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = vec![0.0; d];
        let mut p = vec![0.0; k.rows()];
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            p.fill(0.0);
            head_row(&q[cols.clone()], k, v, cols.clone(), scale, |j| key_valid[j], &mut p, &mut ctx[cols]);
        }
        ctx
    }

    /// Returns gradients for the query input and the key/value input.
    pub fn backward(&self, cache: &AttnCache, dy: &Matrix, grads: &mut Grads) -> (Matrix, Matrix) {
        let dctx = self.o.backward(&cache.oc, dy, grads);
        let (q, k, v) = (&cache.q, &cache.k, &cache.v);
        let (n, m, d) = (q.rows(), k.rows(), q.cols());
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(m, d);
        let mut dv = Matrix::zeros(m, d);
        let mut dp = vec![0.0; m];
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let prow = p.row(i);
                let dci = &dctx.row(i)[cols.clone()];
                let mut weighted = 0.0;
                for j in 0..m {
                    if prow[j] != 0.0 {
                        dp[j] = dot(dci, &v.row(j)[cols.clone()]);
                        weighted += prow[j] * dp[j];
                        axpy(&mut dv.row_mut(j)[cols.clone()], prow[j], dci);
                    }
                }
                for j in 0..m {
                    if prow[j] != 0.0 {
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        axpy(&mut dq.row_mut(i)[cols.clone()], ds, &k.row(j)[cols.clone()]);
                        axpy(&mut dk.row_mut(j)[cols.clone()], ds, &q.row(i)[cols.clone()]);
                    }
                }
            }
        }
        let dxq = self.q.backward(&cache.qc, &dq, grads);
        let mut dxkv = self.k.backward(&cache.kc, &dk, grads);
        dxkv.add_scaled(&self.v.backward(&cache.vc, &dv, grads), 1.0);
        (dxq, dxkv)
    }
}

/// Softmax attention of one query over the allowed keys for one head.
/// Writes the probabilities into `prow` and the weighted values into `crow`.
#[allow(clippy::too_many_arguments)]
fn head_row(
    qi: &[f64],
    k: &Matrix,
    v: &Matrix,
    cols: std::ops::Range<usize>,
    scale: f64,
    allows: impl Fn(usize) -> bool,
    prow: &mut [f64],
    crow: &mut [f64],
) {
    let m = k.rows();
    let mut max = f64::NEG_INFINITY;
    for j in 0..m {
        if allows(j) {
            let s = dot(qi, &k.row(j)[cols.clone()]) * scale;
            prow[j] = s;
            max = max.max(s);
        }
    }
    if max == f64::NEG_INFINITY {
        // no visible keys: the context row stays zero
        return;
    }
    let mut sum = 0.0;
    for j in 0..m {
        if allows(j) {
            prow[j] = (prow[j] - max).exp();
            sum += prow[j];
        }
    }
    prow.iter_mut().for_each(|x| *x /= sum);
    for j in 0..m {
        if prow[j] != 0.0 {
            axpy(crow, prow[j], &v.row(j)[cols.clone()]);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub fc_in: AdaptedLinear,
    pub fc_out: AdaptedLinear,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    pre: Matrix,
    ic: LinearCache,
    oc: LinearCache,
}

impl FeedForward {
    pub fn new<R: Rng>(d: usize, d_ff: usize, rng: &mut R) -> Self {
        FeedForward {
            fc_in: AdaptedLinear::new(Role::FfnIn, d, d_ff, rng),
            fc_out: AdaptedLinear::new(Role::FfnOut, d_ff, d, rng),
        }
    }

    pub fn forward_cached(&self, x: &Matrix) -> (Matrix, FfnCache) {
        let (pre, ic) = self.fc_in.forward_cached(x);
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let (out, oc) = self.fc_out.forward_cached(&act);
        (out, FfnCache { pre, ic, oc })
    }

    pub fn backward(&self, cache: &FfnCache, dy: &Matrix, grads: &mut Grads) -> Matrix {
        let mut da = self.fc_out.backward(&cache.oc, dy, grads);
        da.data_mut().iter_mut().zip(cache.pre.data()).for_each(|(g, x)| *g *= gelu_grad(*x));
        self.fc_in.backward(&cache.ic, &da, grads)
    }
}
