//! Per-layer forward and backward kernels.
//!
//! Every dot product accumulates exactly and rounds once into the target
//! format. Backward products follow the PE multiplier order: propagated
//! `G x W` first, then `x f'`, then `x X`, then `x (-alpha)`.

use crate::netgraph::{activate, activate_deriv, ActivationKind, PoolKind, Shape};
use crate::qnum::{QError, QFormat};
use crate::scalar::Scalar;

/// Channel-planar index.
#[inline]
fn at(s: Shape, c: usize, y: usize, x: usize) -> usize {
    (c * s.h + y) * s.w + x
}

pub(crate) struct DenseFwd<S> {
    pub z: Vec<S>,
    pub y: Vec<S>,
}

pub(crate) fn dense_forward<S: Scalar>(
    w: &[S],
    bias: Option<&[S]>,
    x: &[S],
    w_fmt: QFormat,
    x_fmt: QFormat,
    out_n: usize,
    act: ActivationKind,
) -> Result<DenseFwd<S>, QError> {
    let in_n = x.len();
    let mut z = Vec::with_capacity(out_n);
    for j in 0..out_n {
        let row = &w[j * in_n..(j + 1) * in_n];
        let mut acc = S::acc_product(w_fmt, x_fmt);
        for (&wk, &xk) in row.iter().zip(x) {
            S::mac(&mut acc, wk, xk)?;
        }
        let mut zj = S::finish(&acc, w_fmt);
        if let Some(b) = bias {
            zj = zj.add(b[j]);
        }
        z.push(zj);
    }
    let y = z.iter().map(|&v| activate(act, v, w_fmt)).collect();
    Ok(DenseFwd { z, y })
}

pub(crate) struct ConvGeom {
    pub input: Shape,
    pub output: Shape,
    pub k: usize,
}

pub(crate) fn conv_forward<S: Scalar>(
    g: &ConvGeom,
    w: &[S],
    bias: Option<&[S]>,
    x: &[S],
    w_fmt: QFormat,
    x_fmt: QFormat,
    act: ActivationKind,
) -> Result<DenseFwd<S>, QError> {
    let (is, os, k) = (g.input, g.output, g.k);
    let mut z = Vec::with_capacity(os.len());
    for f in 0..os.d {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut acc = S::acc_product(w_fmt, x_fmt);
                for c in 0..is.d {
                    let wbase = (f * is.d + c) * k * k;
                    for ky in 0..k {
                        let xrow = at(is, c, oy + ky, ox);
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            S::mac(&mut acc, w[wrow + kx], x[xrow + kx])?;
                        }
                    }
                }
                let mut v = S::finish(&acc, w_fmt);
                if let Some(b) = bias {
                    v = v.add(b[f]);
                }
                z.push(v);
            }
        }
    }
    let y = z.iter().map(|&v| activate(act, v, w_fmt)).collect();
    Ok(DenseFwd { z, y })
}

pub(crate) struct PoolFwd<S> {
    pub y: Vec<S>,
    /// Flat input index chosen for each output (max pooling only).
    pub argmax: Vec<usize>,
}

pub(crate) fn pool_forward<S: Scalar>(
    input: Shape,
    output: Shape,
    window: usize,
    stride: usize,
    kind: PoolKind,
    x: &[S],
    fmt: QFormat,
) -> Result<PoolFwd<S>, QError> {
    let mut y = Vec::with_capacity(output.len());
    let mut argmax = Vec::new();
    for c in 0..output.d {
        for oy in 0..output.h {
            for ox in 0..output.w {
                match kind {
                    PoolKind::Max => {
                        let mut best = at(input, c, oy * stride, ox * stride);
                        for wy in 0..window {
                            for wx in 0..window {
                                let i = at(input, c, oy * stride + wy, ox * stride + wx);
                                // strict: ties keep the first in row-major order
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        argmax.push(best);
                        y.push(x[best]);
                    }
                    PoolKind::Avg => {
                        let mut acc = S::acc_sum(fmt);
                        for wy in 0..window {
                            for wx in 0..window {
                                S::acc_add(&mut acc, x[at(input, c, oy * stride + wy, ox * stride + wx)])?;
                            }
                        }
                        y.push(S::finish_mean(&acc, (window * window) as u32, fmt));
                    }
                }
            }
        }
    }
    Ok(PoolFwd { y, argmax })
}

/// `G = dE/dY (.) f'(Z)`, rounded into `fmt`.
pub(crate) fn output_signal<S: Scalar>(
    dy: &[S],
    z: &[S],
    act: ActivationKind,
    fmt: QFormat,
) -> Vec<S> {
    dy.iter()
        .zip(z)
        .map(|(&d, &zj)| d.mul(activate_deriv(act, zj, fmt), fmt))
        .collect()
}

pub(crate) struct WeightGrads<S> {
    pub dw: Vec<S>,
    pub db: Option<Vec<S>>,
}

/// `dW[j,k] = (G[j] x X[k]) x (-alpha)`, each product rounded into `fmt`.
pub(crate) fn dense_weight_delta<S: Scalar>(
    g: &[S],
    x: &[S],
    neg_alpha: S,
    fmt: QFormat,
    with_bias: bool,
) -> WeightGrads<S> {
    let mut dw = Vec::with_capacity(g.len() * x.len());
    for &gj in g {
        for &xk in x {
            dw.push(gj.mul(xk, fmt).mul(neg_alpha, fmt));
        }
    }
    let db = with_bias.then(|| g.iter().map(|&gj| gj.mul(neg_alpha, fmt)).collect());
    WeightGrads { dw, db }
}

/// Step 1 of the unrolled recursion for a dense layer: `Wᵀ G`, one rounding
/// per element into `out_fmt`.
pub(crate) fn dense_input_grad<S: Scalar>(
    g: &[S],
    w: &[S],
    in_n: usize,
    g_fmt: QFormat,
    w_fmt: QFormat,
    out_fmt: QFormat,
) -> Result<Vec<S>, QError> {
    let mut dx = Vec::with_capacity(in_n);
    for k in 0..in_n {
        let mut acc = S::acc_product(g_fmt, w_fmt);
        for (j, &gj) in g.iter().enumerate() {
            S::mac(&mut acc, gj, w[j * in_n + k])?;
        }
        dx.push(S::finish(&acc, out_fmt));
    }
    Ok(dx)
}

/// Weight gradient of a convolution: valid correlation of X with G, rounded
/// once per weight, then scaled by `-alpha`.
pub(crate) fn conv_weight_delta<S: Scalar>(
    geo: &ConvGeom,
    g: &[S],
    x: &[S],
    x_fmt: QFormat,
    neg_alpha: S,
    fmt: QFormat,
    with_bias: bool,
) -> Result<WeightGrads<S>, QError> {
    let (is, os, k) = (geo.input, geo.output, geo.k);
    let mut dw = Vec::with_capacity(os.d * is.d * k * k);
    for f in 0..os.d {
        for c in 0..is.d {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = S::acc_product(fmt, x_fmt);
                    for oy in 0..os.h {
                        let grow = at(os, f, oy, 0);
                        let xrow = at(is, c, oy + ky, kx);
                        for ox in 0..os.w {
                            S::mac(&mut acc, g[grow + ox], x[xrow + ox])?;
                        }
                    }
                    dw.push(S::finish(&acc, fmt).mul(neg_alpha, fmt));
                }
            }
        }
    }
    let db = if with_bias {
        let plane = os.h * os.w;
        let mut db = Vec::with_capacity(os.d);
        for f in 0..os.d {
            let mut acc = S::acc_sum(fmt);
            for &v in &g[f * plane..(f + 1) * plane] {
                S::acc_add(&mut acc, v)?;
            }
            db.push(S::finish(&acc, fmt).mul(neg_alpha, fmt));
        }
        Some(db)
    } else {
        None
    };
    Ok(WeightGrads { dw, db })
}

/// Input gradient of a convolution: full correlation of G with the
/// spatially flipped kernels, gathered per input element.
pub(crate) fn conv_input_grad<S: Scalar>(
    geo: &ConvGeom,
    g: &[S],
    w: &[S],
    g_fmt: QFormat,
    w_fmt: QFormat,
    out_fmt: QFormat,
) -> Result<Vec<S>, QError> {
    let (is, os, k) = (geo.input, geo.output, geo.k);
    let mut dx = Vec::with_capacity(is.len());
    for c in 0..is.d {
        for y in 0..is.h {
            for x in 0..is.w {
                let mut acc = S::acc_product(g_fmt, w_fmt);
                let ky_lo = (y + 1).saturating_sub(os.h);
                let ky_hi = k.min(y + 1);
                let kx_lo = (x + 1).saturating_sub(os.w);
                let kx_hi = k.min(x + 1);
                for f in 0..os.d {
                    let wbase = (f * is.d + c) * k * k;
                    for ky in ky_lo..ky_hi {
                        let grow = at(os, f, y - ky, 0);
                        for kx in kx_lo..kx_hi {
                            S::mac(&mut acc, g[grow + x - kx], w[wbase + ky * k + kx])?;
                        }
                    }
                }
                dx.push(S::finish(&acc, out_fmt));
            }
        }
    }
    Ok(dx)
}

/// Routes output gradients back through a pooling window. Max pooling sends
/// each gradient to its recorded argmax; average pooling splits uniformly.
/// Overlapping windows sum exactly before one rounding.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pool_backward<S: Scalar>(
    input: Shape,
    output: Shape,
    window: usize,
    stride: usize,
    kind: PoolKind,
    argmax: &[usize],
    dy: &[S],
    fmt: QFormat,
) -> Result<Vec<S>, QError> {
    let mut accs = vec![S::acc_sum(fmt); input.len()];
    let mut touched = vec![false; input.len()];
    let n = (window * window) as u32;
    let mut o = 0;
    for c in 0..output.d {
        for oy in 0..output.h {
            for ox in 0..output.w {
                match kind {
                    PoolKind::Max => {
                        let i = argmax[o];
                        S::acc_add(&mut accs[i], dy[o])?;
                        touched[i] = true;
                    }
                    PoolKind::Avg => {
                        for wy in 0..window {
                            for wx in 0..window {
                                let i = at(input, c, oy * stride + wy, ox * stride + wx);
                                S::acc_add(&mut accs[i], dy[o])?;
                                touched[i] = true;
                            }
                        }
                    }
                }
                o += 1;
            }
        }
    }
    Ok(accs
        .iter()
        .zip(&touched)
        .map(|(acc, &t)| match (t, kind) {
            (false, _) => S::zero(fmt),
            (true, PoolKind::Max) => S::finish(acc, fmt),
            (true, PoolKind::Avg) => S::finish_mean(acc, n, fmt),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt() -> QFormat {
        QFormat::new(8, 20).unwrap()
    }

    // Scatter-form convolution gradients as an independent check on the
    // gather loops above.
    fn conv_grads_scatter(geo: &ConvGeom, g: &[f64], w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (is, os, k) = (geo.input, geo.output, geo.k);
        let mut dx = vec![0.0; is.len()];
        let mut dw = vec![0.0; w.len()];
        for f in 0..os.d {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let gv = g[at(os, f, oy, ox)];
                    for c in 0..is.d {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wi = ((f * is.d + c) * k + ky) * k + kx;
                                let xi = at(is, c, oy + ky, ox + kx);
                                dx[xi] += gv * w[wi];
                                dw[wi] += gv * x[xi];
                            }
                        }
                    }
                }
            }
        }
        (dx, dw)
    }

    #[test]
    fn conv_gather_matches_scatter() {
        let geo = ConvGeom {
            input: Shape::new(2, 6, 5),
            output: Shape::new(3, 4, 3),
            k: 3,
        };
        let mut rng = crate::rng::SeededRng::new(11, 0);
        let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.symmetric(1.0)).collect();
        let x: Vec<f64> = (0..geo.input.len()).map(|_| rng.symmetric(1.0)).collect();
        let g: Vec<f64> = (0..geo.output.len()).map(|_| rng.symmetric(1.0)).collect();
        let f = fmt();
        let dx = conv_input_grad(&geo, &g, &w, f, f, f).unwrap();
        let grads = conv_weight_delta(&geo, &g, &x, f, -1.0, f, false).unwrap();
        let (sdx, sdw) = conv_grads_scatter(&geo, &g, &w, &x);
        for (a, b) in dx.iter().zip(&sdx) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in grads.dw.iter().zip(&sdw) {
            assert!((-a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_ties_go_to_first() {
        let s_in = Shape::new(1, 2, 2);
        let s_out = Shape::new(1, 1, 1);
        let x = [0.5, 0.5, 0.25, 0.5];
        let fwd = pool_forward(s_in, s_out, 2, 2, PoolKind::Max, &x, fmt()).unwrap();
        assert_eq!(fwd.argmax, vec![0]);
        let dx = pool_backward(s_in, s_out, 2, 2, PoolKind::Max, &fwd.argmax, &[1.0], fmt()).unwrap();
        assert_eq!(dx, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn avg_pool_splits_uniformly() {
        let s_in = Shape::new(1, 2, 2);
        let s_out = Shape::new(1, 1, 1);
        let x = [1.0, 2.0, 3.0, 6.0];
        let fwd = pool_forward(s_in, s_out, 2, 2, PoolKind::Avg, &x, fmt()).unwrap();
        assert_eq!(fwd.y, vec![3.0]);
        let dx = pool_backward(s_in, s_out, 2, 2, PoolKind::Avg, &[], &[2.0], fmt()).unwrap();
        assert_eq!(dx, vec![0.5; 4]);
    }
}
