//! Raw numeric kernels behind the graph operations. Buffers are packed
//! row-major `[batch, channels, time]`.

use crate::tensor::{gemm, Real};

pub(crate) fn conv_out_len(t: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = t + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfolds one `[cin, t]` sample into `[(cin*k), t_out]` columns.
fn im2col<T: Real>(
    x: &[T],
    cin: usize,
    t: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    cols: &mut [T],
) {
    for ci in 0..cin {
        let row = &x[ci * t..(ci + 1) * t];
        for kk in 0..k {
            let dst = &mut cols[(ci * k + kk) * t_out..(ci * k + kk + 1) * t_out];
            for (to, d) in dst.iter_mut().enumerate() {
                let pos = (to * stride + kk) as isize - pad as isize;
                *d = if pos >= 0 && (pos as usize) < t {
                    row[pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// Folds `[(c*k), t_in]` columns back onto a `[c, t_out]` signal (accumulating).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    k: usize,
    t_in: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    y: &mut [T],
) {
    for ci in 0..c {
        let row = &mut y[ci * t_out..(ci + 1) * t_out];
        for kk in 0..k {
            let src = &cols[(ci * k + kk) * t_in..(ci * k + kk + 1) * t_in];
            for (ti, &v) in src.iter().enumerate() {
                let pos = (ti * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < t_out {
                    row[pos as usize] += v;
                }
            }
        }
    }
}

/// Cross-correlation. x: `[b, cin, t]`, w: `[cout, cin, k]` → `[b, cout, t_out]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d<T: Real>(
    x: &[T],
    w: &[T],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); b * cout * t_out];
    let mut cols = vec![T::zero(); cin * k * t_out];
    for bi in 0..b {
        im2col(
            &x[bi * cin * t..(bi + 1) * cin * t],
            cin,
            t,
            k,
            stride,
            pad,
            t_out,
            &mut cols,
        );
        gemm(
            cout,
            cin * k,
            t_out,
            w,
            false,
            &cols,
            false,
            T::zero(),
            &mut out[bi * cout * t_out..(bi + 1) * cout * t_out],
        );
    }
    out
}

/// Adjoint of [`conv1d`]. x: `[b, cin, t]`, w: `[cin, cout, k]` → `[b, cout, t_out]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose1d<T: Real>(
    x: &[T],
    w: &[T],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); b * cout * t_out];
    let mut cols = vec![T::zero(); cout * k * t];
    for bi in 0..b {
        gemm(
            cout * k,
            cin,
            t,
            w,
            true,
            &x[bi * cin * t..(bi + 1) * cin * t],
            false,
            T::zero(),
            &mut cols,
        );
        col2im(
            &cols,
            cout,
            k,
            t,
            stride,
            pad,
            t_out,
            &mut out[bi * cout * t_out..(bi + 1) * cout * t_out],
        );
    }
    out
}

/// dW[co, ci, k] = Σ_b Σ_t g[b, co, t] · x[b, ci, t·stride + k − pad].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_weight_grad<T: Real>(
    x: &[T],
    g: &[T],
    b: usize,
    cin: usize,
    t: usize,
    cout: usize,
    t_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let mut dw = vec![T::zero(); cout * cin * k];
    let mut cols = vec![T::zero(); cin * k * t_out];
    for bi in 0..b {
        im2col(
            &x[bi * cin * t..(bi + 1) * cin * t],
            cin,
            t,
            k,
            stride,
            pad,
            t_out,
            &mut cols,
        );
        gemm(
            cout,
            t_out,
            cin * k,
            &g[bi * cout * t_out..(bi + 1) * cout * t_out],
            false,
            &cols,
            true,
            T::one(),
            &mut dw,
        );
    }
    dw
}

/// Splits a shape around `axis` into `(outer, extent, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_formula() {
        assert_eq!(conv_out_len(64, 7, 2, 3), Some(32));
        assert_eq!(conv_out_len(4, 3, 1, 1), Some(4));
        assert_eq!(conv_out_len(2, 3, 1, 0), None);
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)>
        let (cin, cout, t, k, s, p) = (2, 3, 9, 4, 2, 1);
        let to = conv_out_len(t, k, s, p).unwrap();
        let x: Vec<f64> = (0..cin * t).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..cout * cin * k).map(|i| ((i * 5 % 7) as f64) * 0.3 - 1.0).collect();
        let y: Vec<f64> = (0..cout * to).map(|i| ((i * 3 % 5) as f64) - 2.0).collect();
        let cx = conv1d(&x, &w, 1, cin, t, cout, k, s, p, to);
        let ty = conv_transpose1d(&y, &w, 1, cout, to, cin, k, s, p, t);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
