//! Convolution kernels shared by the graph ops.
//!
//! All three passes (forward, input gradient, weight gradient) run through
//! an im2col buffer and small row-major matrix products whose inner loops
//! walk contiguous memory, which is what lets the compiler vectorize them.
//! Loops run in a fixed order so results are bit-deterministic.

use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};

/// Output extent of a strided convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 {
        return Err(Error::ShapeError("kernel and stride must be positive".into()));
    }
    if padded < kernel {
        return Err(Error::ShapeError(format!(
            "kernel {} larger than padded input {}",
            kernel, padded
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn convt_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let grown = (input - 1) * stride + kernel;
    if grown < 2 * pad + 1 {
        return Err(Error::ShapeError(format!(
            "transposed conv geometry impossible: input {}, kernel {}, stride {}, pad {}",
            input, kernel, stride, pad
        )));
    }
    Ok(grown - 2 * pad)
}

/// C(m, n) += A(m, k) * B(k, n), all row-major.
fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for mi in 0..m {
        let arow = &a[mi * k..(mi + 1) * k];
        let crow = &mut c[mi * n..(mi + 1) * n];
        for (ki, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[ki * n..(ki + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C(m, n) += A(m, k) * B(n, k)^T: every inner product walks two contiguous
/// rows. Four-lane partial sums let the reduction vectorize; the lane
/// layout is fixed, so results stay deterministic.
fn matmul_bt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for mi in 0..m {
        let arow = &a[mi * k..(mi + 1) * k];
        for ni in 0..n {
            let brow = &b[ni * k..(ni + 1) * k];
            let mut lanes = [0.0f64; 4];
            let chunks = k / 4;
            for i in 0..chunks {
                let av = &arow[i * 4..i * 4 + 4];
                let bv = &brow[i * 4..i * 4 + 4];
                for l in 0..4 {
                    lanes[l] += av[l] * bv[l];
                }
            }
            let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
            for i in chunks * 4..k {
                acc += arow[i] * brow[i];
            }
            c[mi * n + ni] += acc;
        }
    }
}

/// Unfold one (Cin, H, W) item into (Cin*KH*KW, OH*OW) patch columns;
/// out-of-range positions are zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(col.len(), cin * kh * kw * oh * ow);
    col.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..cin {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let crow = &mut col[((ci * kh + ki) * kw + kj) * oh * ow..][..oh * ow];
                let off_w = kj as isize - pad.1 as isize;
                // valid output column range for this kernel offset
                let lo = if off_w >= 0 {
                    0
                } else {
                    (((-off_w) as usize) + stride.1 - 1) / stride.1
                };
                let max_pos = w as isize - 1 - off_w;
                if max_pos < 0 {
                    continue;
                }
                let hi = ((max_pos as usize) / stride.1 + 1).min(ow);
                if hi <= lo {
                    continue;
                }
                for oi in 0..oh {
                    let ih = oi as isize * stride.0 as isize + ki as isize - pad.0 as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let xrow = &xc[ih as usize * w..(ih as usize + 1) * w];
                    let dst = &mut crow[oi * ow..(oi + 1) * ow];
                    if stride.1 == 1 {
                        let start = (lo as isize + off_w) as usize;
                        dst[lo..hi].copy_from_slice(&xrow[start..start + (hi - lo)]);
                    } else {
                        for oj in lo..hi {
                            let iw = (oj * stride.1) as isize + off_w;
                            dst[oj] = xrow[iw as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add (Cin*KH*KW, OH*OW) patch columns back onto a (Cin, H, W)
/// item; the adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    col: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
    x: &mut [f64],
) {
    for ci in 0..cin {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let crow = &col[((ci * kh + ki) * kw + kj) * oh * ow..][..oh * ow];
                let off_w = kj as isize - pad.1 as isize;
                let lo = if off_w >= 0 {
                    0
                } else {
                    (((-off_w) as usize) + stride.1 - 1) / stride.1
                };
                let max_pos = w as isize - 1 - off_w;
                if max_pos < 0 {
                    continue;
                }
                let hi = ((max_pos as usize) / stride.1 + 1).min(ow);
                if hi <= lo {
                    continue;
                }
                for oi in 0..oh {
                    let ih = oi as isize * stride.0 as isize + ki as isize - pad.0 as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let xrow = &mut xc[ih as usize * w..(ih as usize + 1) * w];
                    let src = &crow[oi * ow..(oi + 1) * ow];
                    if stride.1 == 1 {
                        let start = (lo as isize + off_w) as usize;
                        for (xv, sv) in xrow[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi])
                        {
                            *xv += sv;
                        }
                    } else {
                        for oj in lo..hi {
                            let iw = (oj * stride.1) as isize + off_w;
                            xrow[iw as usize] += src[oj];
                        }
                    }
                }
            }
        }
    }
}

/// Forward 2D convolution. `x` is (B, Cin, H, W), `w` is (Cout, Cin, KH, KW),
/// `bias` is (Cout) when present.
pub fn conv2d_fwd(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor> {
    let (bsz, cin, h, win) = dims4(x)?;
    let (cout, wcin, kh, kw) = dims4(w)?;
    if wcin != cin {
        return Err(Error::ShapeError(format!(
            "conv2d channel mismatch: input {}, weight {}",
            cin, wcin
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::ShapeError("conv2d bias shape".into()));
        }
    }
    let oh = conv_out_len(h, kh, stride.0, pad.0)?;
    let ow = conv_out_len(win, kw, stride.1, pad.1)?;
    let ckk = cin * kh * kw;
    let ohw = oh * ow;

    let mut out = Tensor::zeros(&[bsz, cout, oh, ow]);
    let mut col = vec![0.0f64; ckk * ohw];
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for b in 0..bsz {
        im2col(
            &xd[b * cin * h * win..(b + 1) * cin * h * win],
            cin,
            h,
            win,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut col,
        );
        let oslab = &mut od[b * cout * ohw..(b + 1) * cout * ohw];
        if let Some(bt) = bias {
            for co in 0..cout {
                let bv = bt.data()[co];
                oslab[co * ohw..(co + 1) * ohw].iter_mut().for_each(|v| *v = bv);
            }
        }
        matmul_acc(oslab, wd, &col, cout, ckk, ohw);
    }
    Ok(out)
}

/// Gradient of conv2d w.r.t. its input: maps (B, Cout, OH, OW) back to
/// (B, Cin, H, W). Also the forward map of the transposed convolution.
pub fn conv2d_bwd_input(
    dy: &Tensor,
    w: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
    in_hw: (usize, usize),
) -> Result<Tensor> {
    let (bsz, cout, oh, ow) = dims4(dy)?;
    let (wcout, cin, kh, kw) = dims4(w)?;
    if wcout != cout {
        return Err(Error::ShapeError(format!(
            "conv2d grad channel mismatch: dy {}, weight {}",
            cout, wcout
        )));
    }
    let (h, win) = in_hw;
    let ckk = cin * kh * kw;
    let ohw = oh * ow;

    // transpose the weights once: (CKK, Cout)
    let wd = w.data();
    let mut wt = vec![0.0f64; ckk * cout];
    for co in 0..cout {
        for p in 0..ckk {
            wt[p * cout + co] = wd[co * ckk + p];
        }
    }

    let mut dx = Tensor::zeros(&[bsz, cin, h, win]);
    let mut dcol = vec![0.0f64; ckk * ohw];
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for b in 0..bsz {
        dcol.iter_mut().for_each(|v| *v = 0.0);
        matmul_acc(
            &mut dcol,
            &wt,
            &dyd[b * cout * ohw..(b + 1) * cout * ohw],
            ckk,
            cout,
            ohw,
        );
        col2im_add(
            &dcol,
            cin,
            h,
            win,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut dxd[b * cin * h * win..(b + 1) * cin * h * win],
        );
    }
    Ok(dx)
}

/// Gradient of conv2d w.r.t. its weights.
pub fn conv2d_bwd_weight(
    dy: &Tensor,
    x: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
    k_hw: (usize, usize),
) -> Result<Tensor> {
    let (bsz, cout, oh, ow) = dims4(dy)?;
    let (xb, cin, h, win) = dims4(x)?;
    if xb != bsz {
        return Err(Error::ShapeError("conv2d grad batch mismatch".into()));
    }
    let (kh, kw) = k_hw;
    let ckk = cin * kh * kw;
    let ohw = oh * ow;

    let mut dw = Tensor::zeros(&[cout, cin, kh, kw]);
    let mut col = vec![0.0f64; ckk * ohw];
    let dyd = dy.data();
    let xd = x.data();
    let dwd = dw.data_mut();
    for b in 0..bsz {
        im2col(
            &xd[b * cin * h * win..(b + 1) * cin * h * win],
            cin,
            h,
            win,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut col,
        );
        matmul_bt_acc(
            dwd,
            &dyd[b * cout * ohw..(b + 1) * cout * ohw],
            &col,
            cout,
            ohw,
            ckk,
        );
    }
    Ok(dw)
}

/// Gradient of conv2d w.r.t. its bias: sum of `dy` over batch and space.
pub fn conv2d_bwd_bias(dy: &Tensor) -> Result<Tensor> {
    let (bsz, cout, oh, ow) = dims4(dy)?;
    let mut db = Tensor::zeros(&[cout]);
    let dyd = dy.data();
    let dbd = db.data_mut();
    for b in 0..bsz {
        for co in 0..cout {
            let obase = ((b * cout) + co) * oh * ow;
            let mut acc = 0.0;
            for v in &dyd[obase..obase + oh * ow] {
                acc += v;
            }
            dbd[co] += acc;
        }
    }
    Ok(db)
}

pub fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::ShapeError(format!("expected 4-d tensor, got {:?}", s)));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

pub fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::ShapeError(format!("expected 3-d tensor, got {:?}", s)));
    }
    Ok((s[0], s[1], s[2]))
}
