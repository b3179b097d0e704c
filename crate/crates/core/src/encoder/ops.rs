//! Row-major dense kernels used by the encoder's forward and backward passes.

pub const LN_EPS: f64 = 1e-12;

/// `a (n×k) · b (k×m)`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `out (k×m) += aᵀ · b` for `a (n×k)`, `b (n×m)`.
pub fn matmul_at_b_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `a (n×m) · bᵀ` for `b (k×m)`, giving `n×k`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] = dot(arow, &b[p * m..(p + 1) * m]);
        }
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn col_sum_acc(out: &mut [f64], x: &[f64]) {
    for row in x.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub fn add_assign(out: &mut [f64], x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

#[derive(Debug, Clone, Default)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Per-row layer normalization followed by the affine map.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let d = gain.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for c in 0..d {
            let h = (row[c] - mean) * s;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gain[c] + bias[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `dgain`, `dbias`.
pub fn layer_norm_backward(dy: &[f64], cache: &NormCache, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let d = gain.len();
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let (mut mean_dxhat, mut mean_dxhat_xhat) = (0.0, 0.0);
        for c in 0..d {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let s = cache.rstd[r];
        for c in 0..d {
            dx[r * d + c] = s * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// In-place softmax over the first `valid` entries; the rest become 0.
pub fn masked_softmax(row: &mut [f64], valid: usize) {
    let max = row[..valid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in &mut row[..valid] {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in &mut row[..valid] {
        *v /= z;
    }
    for v in &mut row[valid..] {
        *v = 0.0;
    }
}

/// Numerically stable `log Σ exp`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
