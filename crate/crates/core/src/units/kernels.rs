//! Batched forward/backward kernels shared by the unit kinds.
//!
//! Shapes: inputs `x` are `batch x in`, weights `w` are `out x in`,
//! outputs are `batch x out`. Parameter gradients are summed over the batch.

use crate::numerics::{axpy, sigmoid, Matrix};

/// `y = x Wᵀ`.
pub(crate) fn additive_forward(x: &Matrix, w: &Matrix) -> Matrix {
    x.matmul_t(w).expect("shapes checked by caller")
}

pub(crate) fn additive_backward(x: &Matrix, w: &Matrix, gy: &Matrix) -> (Matrix, Matrix) {
    let gw = gy.t_matmul(x).expect("shapes checked by caller");
    let gx = gy.matmul(w).expect("shapes checked by caller");
    (gx, gw)
}

#[inline]
pub(crate) fn abs_grad(x: f64) -> f64 {
    // abs'(0) := 0
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `y = exp(W log(|x| + eps))`; also returns the log terms.
pub(crate) fn explog_forward(x: &Matrix, w: &Matrix, eps: f64) -> (Matrix, Matrix) {
    let logs = x.map(|v| (v.abs() + eps).ln());
    let mut y = logs.matmul_t(w).expect("shapes checked by caller");
    y.map_inplace(f64::exp);
    (y, logs)
}

pub(crate) fn explog_backward(
    x: &Matrix,
    w: &Matrix,
    eps: f64,
    logs: &Matrix,
    y: &Matrix,
    gy: &Matrix,
) -> (Matrix, Matrix) {
    // dz/dW = z log(|x|+eps); dz/dx = z W abs'(x) / (|x|+eps)
    let ds = gy.zip_map(y, |g, z| g * z).expect("same shape");
    let gw = ds.t_matmul(logs).expect("shapes checked by caller");
    let mut gx = ds.matmul(w).expect("shapes checked by caller");
    for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
        *g *= abs_grad(v) / (v.abs() + eps);
    }
    (gx, gw)
}

/// `y_o = prod_i (W_oi x_i + 1 - W_oi)`; also returns the factors laid out as
/// `[batch][out][in]`.
pub(crate) fn nmu_forward(x: &Matrix, w: &Matrix) -> (Matrix, Vec<f64>) {
    let (batch, inp) = x.shape();
    let out = w.rows();
    let mut factors = vec![0.0; batch * out * inp];
    let mut y = Matrix::zeros(batch, out);
    for b in 0..batch {
        let xb = x.row(b);
        for o in 0..out {
            let wo = w.row(o);
            let f = &mut factors[(b * out + o) * inp..(b * out + o + 1) * inp];
            let mut prod = 1.0;
            for i in 0..inp {
                f[i] = wo[i] * xb[i] + 1.0 - wo[i];
                prod *= f[i];
            }
            y.set(b, o, prod);
        }
    }
    (y, factors)
}

pub(crate) fn nmu_backward(
    x: &Matrix,
    w: &Matrix,
    factors: &[f64],
    gy: &Matrix,
) -> (Matrix, Matrix) {
    let (batch, inp) = x.shape();
    let out = w.rows();
    let mut gx = Matrix::zeros(batch, inp);
    let mut gw = Matrix::zeros(out, inp);
    // product of all factors except i, via prefix/suffix products (no division)
    let mut excl = vec![0.0; inp];
    for b in 0..batch {
        let xb = x.row(b);
        for o in 0..out {
            let f = &factors[(b * out + o) * inp..(b * out + o + 1) * inp];
            let mut prefix = 1.0;
            for i in 0..inp {
                excl[i] = prefix;
                prefix *= f[i];
            }
            let mut suffix = 1.0;
            for i in (0..inp).rev() {
                excl[i] *= suffix;
                suffix *= f[i];
            }
            let g = gy.get(b, o);
            if g == 0.0 {
                continue;
            }
            let wo = w.row(o);
            let gwo = gw.row_mut(o);
            for i in 0..inp {
                gwo[i] += g * excl[i] * (xb[i] - 1.0);
            }
            let gxb = gx.row_mut(b);
            for i in 0..inp {
                gxb[i] += g * excl[i] * wo[i];
            }
        }
    }
    (gx, gw)
}

/// `W = tanh(Ŵ) σ(M̂)`.
pub(crate) fn nac_weight(w_hat: &Matrix, m_hat: &Matrix) -> Matrix {
    w_hat
        .zip_map(m_hat, |w, m| w.tanh() * sigmoid(m))
        .expect("same shape")
}

pub(crate) fn nac_weight_backward(
    w_hat: &Matrix,
    m_hat: &Matrix,
    gw: &Matrix,
) -> (Matrix, Matrix) {
    let n = gw.len();
    let mut g_w_hat = Matrix::zeros(gw.rows(), gw.cols());
    let mut g_m_hat = Matrix::zeros(gw.rows(), gw.cols());
    let (wh, mh, g) = (w_hat.data(), m_hat.data(), gw.data());
    for i in 0..n {
        let t = wh[i].tanh();
        let s = sigmoid(mh[i]);
        g_w_hat.data_mut()[i] = g[i] * (1.0 - t * t) * s;
        g_m_hat.data_mut()[i] = g[i] * t * s * (1.0 - s);
    }
    (g_w_hat, g_m_hat)
}

/// Affine pre-activation `x Wᵀ + b`.
pub(crate) fn affine_forward(x: &Matrix, w: &Matrix, bias: &Matrix) -> Matrix {
    let mut pre = x.matmul_t(w).expect("shapes checked by caller");
    for r in 0..pre.rows() {
        axpy(1.0, bias.data(), pre.row_mut(r));
    }
    pre
}

pub(crate) fn column_sums(m: &Matrix) -> Matrix {
    let mut sums = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        axpy(1.0, m.row(r), sums.data_mut());
    }
    sums
}
