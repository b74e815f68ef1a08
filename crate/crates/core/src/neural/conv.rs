//! Convolution primitives with reflect boundary handling and their exact
//! adjoints. Everything is f64; desk-scale images keep explicit loops fast
//! enough.

use ndarray::{Array1, Array2, Array3, Array4};

#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
    }
    i as usize
}

/// Single-channel correlation with reflect padding:
/// `out[p] = sum_k K[k] * img[reflect(p + k - center)]`.
pub fn conv2_reflect(img: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (kh, kw) = kernel.dim();
    let (cr, cc) = (kh as isize / 2, kw as isize / 2);
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for kr in 0..kh {
                for kc in 0..kw {
                    let rr = reflect(r as isize + kr as isize - cr, h);
                    let cc2 = reflect(c as isize + kc as isize - cc, w);
                    acc += kernel[[kr, kc]] * img[[rr, cc2]];
                }
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Exact adjoint of [`conv2_reflect`] (scatter along the same index map).
pub fn conv2_reflect_adjoint(g: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = g.dim();
    let (kh, kw) = kernel.dim();
    let (cr, cc) = (kh as isize / 2, kw as isize / 2);
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let gv = g[[r, c]];
            if gv == 0.0 {
                continue;
            }
            for kr in 0..kh {
                for kc in 0..kw {
                    let rr = reflect(r as isize + kr as isize - cr, h);
                    let cc2 = reflect(c as isize + kc as isize - cc, w);
                    out[[rr, cc2]] += kernel[[kr, kc]] * gv;
                }
            }
        }
    }
    out
}

/// Multichannel 3x3 correlation with reflect padding.
/// `weight` is `[c_out, c_in, 3, 3]`, input `[c_in, h, w]`.
pub fn conv3x3_forward(weight: &Array4<f64>, bias: &Array1<f64>, x: &Array3<f64>) -> Array3<f64> {
    let (co, ci, kh, kw) = weight.dim();
    let (xc, h, w) = x.dim();
    debug_assert_eq!(ci, xc);
    let (cr, cc) = (kh as isize / 2, kw as isize / 2);
    let mut out = Array3::zeros((co, h, w));
    for o in 0..co {
        for i in 0..ci {
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for kr in 0..kh {
                        for kc in 0..kw {
                            let rr = reflect(r as isize + kr as isize - cr, h);
                            let cc2 = reflect(c as isize + kc as isize - cc, w);
                            acc += weight[[o, i, kr, kc]] * x[[i, rr, cc2]];
                        }
                    }
                    out[[o, r, c]] += acc;
                }
            }
        }
        let b = bias[o];
        for r in 0..h {
            for c in 0..w {
                out[[o, r, c]] += b;
            }
        }
    }
    out
}

/// Backward pass of [`conv3x3_forward`]: gradients with respect to the
/// weights, bias and input, given the output gradient.
pub fn conv3x3_backward(
    weight: &Array4<f64>,
    x: &Array3<f64>,
    g_out: &Array3<f64>,
) -> (Array4<f64>, Array1<f64>, Array3<f64>) {
    let (co, ci, kh, kw) = weight.dim();
    let (_, h, w) = x.dim();
    let (cr, cc) = (kh as isize / 2, kw as isize / 2);
    let mut g_w = Array4::zeros((co, ci, kh, kw));
    let mut g_b = Array1::zeros(co);
    let mut g_x = Array3::zeros(x.dim());
    for o in 0..co {
        for r in 0..h {
            for c in 0..w {
                g_b[o] += g_out[[o, r, c]];
            }
        }
        for i in 0..ci {
            for r in 0..h {
                for c in 0..w {
                    let g = g_out[[o, r, c]];
                    if g == 0.0 {
                        continue;
                    }
                    for kr in 0..kh {
                        for kc in 0..kw {
                            let rr = reflect(r as isize + kr as isize - cr, h);
                            let cc2 = reflect(c as isize + kc as isize - cc, w);
                            g_w[[o, i, kr, kc]] += g * x[[i, rr, cc2]];
                            g_x[[i, rr, cc2]] += g * weight[[o, i, kr, kc]];
                        }
                    }
                }
            }
        }
    }
    (g_w, g_b, g_x)
}
