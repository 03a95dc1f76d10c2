//! Data-level compute kernels shared by the forward pass and the VJPs.
//!
//! Convolutions are lowered to im2col + a single dgemm per batch element,
//! which keeps the hot loops inside `matrixmultiply`.

/// out[m,n] = a[m,k] * b[k,n], all row-major. `beta` accumulates into `out`.
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    out: &mut [f64],
) {
    debug_assert!(out.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output length of a strided, dilated cross-correlation.
pub fn conv_out_len(l: usize, k: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    if l < span {
        return None;
    }
    Some((l - span) / stride + 1)
}

/// Output length of the transposed convolution.
pub fn conv_transposed_out_len(l: usize, k: usize, stride: usize, dilation: usize) -> usize {
    (l - 1) * stride + dilation * (k - 1) + 1
}

/// cols[ci*kk + j, i] = x_b[ci, i*stride + j*dilation] for one batch element.
fn im2col(x_b: &[f64], c_in: usize, l: usize, k: usize, stride: usize, dilation: usize, l_out: usize, cols: &mut [f64]) {
    for ci in 0..c_in {
        let row = &x_b[ci * l..(ci + 1) * l];
        for j in 0..k {
            let dst = &mut cols[(ci * k + j) * l_out..(ci * k + j + 1) * l_out];
            let off = j * dilation;
            for i in 0..l_out {
                dst[i] = row[i * stride + off];
            }
        }
    }
}

/// Cross-correlation: x[B,Cin,L] * w[Cout,Cin,K] -> out[B,Cout,Lout].
pub fn conv1d(
    x: &[f64],
    w: &[f64],
    bsz: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    l_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; bsz * c_out * l_out];
    let mut cols = vec![0.0; c_in * k * l_out];
    let ck = c_in * k;
    for b in 0..bsz {
        im2col(&x[b * c_in * l..(b + 1) * c_in * l], c_in, l, k, stride, dilation, l_out, &mut cols);
        gemm(
            c_out,
            ck,
            l_out,
            w,
            ck as isize,
            1,
            &cols,
            l_out as isize,
            1,
            0.0,
            &mut out[b * c_out * l_out..(b + 1) * c_out * l_out],
        );
    }
    out
}

/// Transposed convolution (adjoint of `conv1d` in its input):
/// x[B,C1,L] * w[C1,C2,K] -> out[B,C2,(L-1)*stride + dilation*(K-1) + 1].
pub fn conv1d_transposed(
    x: &[f64],
    w: &[f64],
    bsz: usize,
    c1: usize,
    l: usize,
    c2: usize,
    k: usize,
    stride: usize,
    dilation: usize,
) -> Vec<f64> {
    let l_out = conv_transposed_out_len(l, k, stride, dilation);
    let mut out = vec![0.0; bsz * c2 * l_out];
    // prod[c2*K + j, i] = sum_c1 w[c1, c2*K + j] * x_b[c1, i]
    let mut prod = vec![0.0; c2 * k * l];
    for b in 0..bsz {
        let x_b = &x[b * c1 * l..(b + 1) * c1 * l];
        gemm(
            c2 * k,
            c1,
            l,
            w,
            1,
            (c2 * k) as isize,
            x_b,
            l as isize,
            1,
            0.0,
            &mut prod,
        );
        let out_b = &mut out[b * c2 * l_out..(b + 1) * c2 * l_out];
        for cc in 0..c2 {
            for j in 0..k {
                let src = &prod[(cc * k + j) * l..(cc * k + j + 1) * l];
                let dst = &mut out_b[cc * l_out..(cc + 1) * l_out];
                let off = j * dilation;
                for i in 0..l {
                    dst[i * stride + off] += src[i];
                }
            }
        }
    }
    out
}

/// Weight-shaped correlation of an input-like and an output-like tensor:
/// out[cg, cx, j] = sum_{b,i} g[b,cg,i] * x[b,cx,i*stride + j*dilation].
pub fn conv1d_wgrad(
    x: &[f64],
    g: &[f64],
    bsz: usize,
    c_x: usize,
    l_x: usize,
    c_g: usize,
    l_g: usize,
    k: usize,
    stride: usize,
    dilation: usize,
) -> Vec<f64> {
    let ck = c_x * k;
    let mut out = vec![0.0; c_g * ck];
    let mut cols = vec![0.0; ck * l_g];
    for b in 0..bsz {
        im2col(&x[b * c_x * l_x..(b + 1) * c_x * l_x], c_x, l_x, k, stride, dilation, l_g, &mut cols);
        let g_b = &g[b * c_g * l_g..(b + 1) * c_g * l_g];
        // out[cg, ci*k+j] += g_b[cg, :] . cols[ci*k+j, :]
        gemm(
            c_g,
            l_g,
            ck,
            g_b,
            l_g as isize,
            1,
            &cols,
            1,
            l_g as isize,
            1.0,
            &mut out,
        );
    }
    out
}

/// Mean pooling over non-overlapping-or-strided windows on the last axis.
pub fn avgpool1d(x: &[f64], rows: usize, l: usize, k: usize, stride: usize, l_out: usize) -> Vec<f64> {
    let inv = 1.0 / k as f64;
    let mut out = vec![0.0; rows * l_out];
    for r in 0..rows {
        let src = &x[r * l..(r + 1) * l];
        let dst = &mut out[r * l_out..(r + 1) * l_out];
        for i in 0..l_out {
            let mut s = 0.0;
            for t in i * stride..i * stride + k {
                s += src[t];
            }
            dst[i] = s * inv;
        }
    }
    out
}

/// Adjoint of `avgpool1d`: spreads each pooled value back over its window.
pub fn avgunpool1d(g: &[f64], rows: usize, l_pooled: usize, k: usize, stride: usize, l_out: usize) -> Vec<f64> {
    let inv = 1.0 / k as f64;
    let mut out = vec![0.0; rows * l_out];
    for r in 0..rows {
        let src = &g[r * l_pooled..(r + 1) * l_pooled];
        let dst = &mut out[r * l_out..(r + 1) * l_out];
        for i in 0..l_pooled {
            let gi = src[i] * inv;
            for t in i * stride..i * stride + k {
                dst[t] += gi;
            }
        }
    }
    out
}
