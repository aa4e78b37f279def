//! N-dimensional convolution (1, 2 or 3 spatial axes) with stride, zero
//! padding and channel groups.
//!
//! Implemented as chunked im2col plus matrix multiply: output positions are
//! processed in bounded-size chunks so the scratch column matrix stays small
//! even for video inputs.  The backward pass rebuilds each column chunk
//! instead of storing it, trading a second fill for a flat memory profile.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::matmul::{mm_nn, mm_nt, mm_tn};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Stride, padding and group count for a convolution.  One entry per spatial
/// axis; padding is symmetric zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: &[usize], padding: &[usize]) -> Self {
        ConvSpec { stride: stride.to_vec(), padding: padding.to_vec(), groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

/// Resolved dimensions of one convolution application.
struct ConvDims {
    batch: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    spatial: Vec<usize>,
    kernel: Vec<usize>,
    out_spatial: Vec<usize>,
    stride: Vec<usize>,
    padding: Vec<usize>,
    /// Product of kernel extents.
    ksize: usize,
    /// Rows of the column matrix: cin_g * ksize.
    col_rows: usize,
    /// Product of out_spatial.
    out_positions: usize,
    in_sp_strides: Vec<usize>,
    out_sp_strides: Vec<usize>,
    k_strides: Vec<usize>,
    in_sp_total: usize,
}

fn conv_dims(x_shape: &[usize], w_shape: &[usize], spec: &ConvSpec) -> Result<ConvDims> {
    let sdims = x_shape.len().saturating_sub(2);
    if !(1..=3).contains(&sdims) || w_shape.len() != x_shape.len() {
        return Err(Error::shape(alloc::format!(
            "conv: input {x_shape:?} and kernel {w_shape:?} must be rank 3 to 5 and match"
        )));
    }
    if spec.stride.len() != sdims || spec.padding.len() != sdims {
        return Err(Error::shape(alloc::format!(
            "conv: spec has {} stride / {} padding entries for {} spatial axes",
            spec.stride.len(),
            spec.padding.len(),
            sdims
        )));
    }
    if spec.stride.iter().any(|&s| s == 0) {
        return Err(Error::config("conv: zero stride"));
    }
    let (batch, cin) = (x_shape[0], x_shape[1]);
    let cout = w_shape[0];
    let groups = spec.groups;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::config(alloc::format!(
            "conv: groups {groups} does not divide channels {cin} -> {cout}"
        )));
    }
    let cin_g = cin / groups;
    if w_shape[1] != cin_g {
        return Err(Error::shape(alloc::format!(
            "conv: kernel expects {} input channels per group, input provides {}",
            w_shape[1],
            cin_g
        )));
    }
    let spatial = x_shape[2..].to_vec();
    let kernel = w_shape[2..].to_vec();
    let mut out_spatial = Vec::with_capacity(sdims);
    for d in 0..sdims {
        let padded = spatial[d] + 2 * spec.padding[d];
        if padded < kernel[d] {
            return Err(Error::shape(alloc::format!(
                "conv: axis {d} with padding ({padded}) shorter than kernel ({})",
                kernel[d]
            )));
        }
        out_spatial.push((padded - kernel[d]) / spec.stride[d] + 1);
    }
    let ksize: usize = kernel.iter().product();
    Ok(ConvDims {
        batch,
        cin,
        cout,
        groups,
        cin_g,
        cout_g: cout / groups,
        in_sp_strides: crate::tensor::strides_of(&spatial),
        out_sp_strides: crate::tensor::strides_of(&out_spatial),
        k_strides: crate::tensor::strides_of(&kernel),
        in_sp_total: spatial.iter().product(),
        out_positions: out_spatial.iter().product(),
        spatial,
        kernel,
        out_spatial,
        stride: spec.stride.clone(),
        padding: spec.padding.clone(),
        ksize,
        col_rows: cin_g * ksize,
    })
}

/// Output coordinates of positions [chunk_start, chunk_start + len), scaled
/// by stride, written as interleaved per-axis values.
fn chunk_coords(dims: &ConvDims, chunk_start: usize, len: usize, coords: &mut Vec<isize>) {
    let sdims = dims.out_spatial.len();
    coords.clear();
    coords.reserve(len * sdims);
    for p in 0..len {
        let mut rem = chunk_start + p;
        for d in 0..sdims {
            let c = rem / dims.out_sp_strides[d];
            rem %= dims.out_sp_strides[d];
            coords.push((c * dims.stride[d]) as isize - dims.padding[d] as isize);
        }
    }
}

/// Fill the column matrix [col_rows, len] for one (batch, group) and output
/// position chunk.  `coords` comes from `chunk_coords`.
fn fill_col(
    xd: &[f64],
    dims: &ConvDims,
    b: usize,
    g: usize,
    coords: &[isize],
    len: usize,
    col: &mut [f64],
) {
    let sdims = dims.kernel.len();
    for cl in 0..dims.cin_g {
        let c = g * dims.cin_g + cl;
        let chan_base = (b * dims.cin + c) * dims.in_sp_total;
        for kf in 0..dims.ksize {
            let mut koff = [0isize; 3];
            let mut rem = kf;
            for d in 0..sdims {
                koff[d] = (rem / dims.k_strides[d]) as isize;
                rem %= dims.k_strides[d];
            }
            let row = &mut col[(cl * dims.ksize + kf) * len..(cl * dims.ksize + kf + 1) * len];
            for (p, slot) in row.iter_mut().enumerate() {
                let cbase = &coords[p * sdims..p * sdims + sdims];
                let mut off = 0isize;
                let mut ok = true;
                for d in 0..sdims {
                    let ic = cbase[d] + koff[d];
                    if ic < 0 || ic >= dims.spatial[d] as isize {
                        ok = false;
                        break;
                    }
                    off += ic * dims.in_sp_strides[d] as isize;
                }
                *slot = if ok { xd[chan_base + off as usize] } else { 0.0 };
            }
        }
    }
}

/// Scatter a column-gradient chunk back into the input gradient; exact
/// adjoint of `fill_col`.
fn scatter_col(
    gx: &mut [f64],
    dims: &ConvDims,
    b: usize,
    g: usize,
    coords: &[isize],
    len: usize,
    dcol: &[f64],
) {
    let sdims = dims.kernel.len();
    for cl in 0..dims.cin_g {
        let c = g * dims.cin_g + cl;
        let chan_base = (b * dims.cin + c) * dims.in_sp_total;
        for kf in 0..dims.ksize {
            let mut koff = [0isize; 3];
            let mut rem = kf;
            for d in 0..sdims {
                koff[d] = (rem / dims.k_strides[d]) as isize;
                rem %= dims.k_strides[d];
            }
            let row = &dcol[(cl * dims.ksize + kf) * len..(cl * dims.ksize + kf + 1) * len];
            for (p, &gv) in row.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let cbase = &coords[p * sdims..p * sdims + sdims];
                let mut off = 0isize;
                let mut ok = true;
                for d in 0..sdims {
                    let ic = cbase[d] + koff[d];
                    if ic < 0 || ic >= dims.spatial[d] as isize {
                        ok = false;
                        break;
                    }
                    off += ic * dims.in_sp_strides[d] as isize;
                }
                if ok {
                    gx[chan_base + off as usize] += gv;
                }
            }
        }
    }
}

/// Chunk length that keeps the scratch column matrix around a megabyte.
fn chunk_len(dims: &ConvDims) -> usize {
    let target = 131_072usize; // f64 elements
    let by_memory = (target / dims.col_rows.max(1)).max(16);
    by_memory.min(dims.out_positions.max(1))
}

impl Tape {
    /// Convolution over 1 to 3 spatial axes.
    ///
    /// `x` is `[B, C_in, spatial..]`, `w` is `[C_out, C_in/groups, kernel..]`,
    /// `bias` (optional) is `[C_out]`.  Output axis lengths follow
    /// `(len + 2 pad - kernel) / stride + 1`.
    pub fn conv(
        &self,
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        spec: &ConvSpec,
    ) -> Result<Tensor> {
        let dims = conv_dims(x.shape(), w.shape(), spec)?;
        if let Some(bt) = bias {
            if bt.shape() != [dims.cout] {
                return Err(Error::shape(alloc::format!(
                    "conv: bias shape {:?} does not match {} output channels",
                    bt.shape(),
                    dims.cout
                )));
            }
        }
        let mut out_shape = vec![dims.batch, dims.cout];
        out_shape.extend_from_slice(&dims.out_spatial);
        let prec = {
            let mut p = x.precision().combine(w.precision());
            if let Some(bt) = bias {
                p = p.combine(bt.precision());
            }
            p
        };
        let os = dims.out_positions;
        let mut out = vec![0.0f64; dims.batch * dims.cout * os];
        let clen = chunk_len(&dims);
        {
            let xd = x.data();
            let wd = w.data();
            let bd = bias.map(|t| t.to_vec());
            let mut col = vec![0.0f64; dims.col_rows * clen];
            let mut res = vec![0.0f64; dims.cout_g * clen];
            let mut coords: Vec<isize> = Vec::new();
            for b in 0..dims.batch {
                for g in 0..dims.groups {
                    let wg = &wd[g * dims.cout_g * dims.col_rows..(g + 1) * dims.cout_g * dims.col_rows];
                    let mut start = 0usize;
                    while start < os {
                        let len = clen.min(os - start);
                        chunk_coords(&dims, start, len, &mut coords);
                        fill_col(&xd, &dims, b, g, &coords, len, &mut col[..dims.col_rows * len]);
                        let r = &mut res[..dims.cout_g * len];
                        r.fill(0.0);
                        mm_nn(r, wg, &col[..dims.col_rows * len], dims.cout_g, dims.col_rows, len);
                        for co in 0..dims.cout_g {
                            let c = g * dims.cout_g + co;
                            let dst = (b * dims.cout + c) * os + start;
                            let bias_v = bd.as_ref().map(|v| v[c]).unwrap_or(0.0);
                            for p in 0..len {
                                out[dst + p] = r[co * len + p] + bias_v;
                            }
                        }
                        start += len;
                    }
                }
            }
        }
        prec.quantize_all(&mut out);
        let y = Tensor::build(out_shape, out, prec);
        let involved =
            x.wants_grad() || w.wants_grad() || bias.map(|b| b.wants_grad()).unwrap_or(false);
        if self.is_recording() && involved {
            let (xc, wc, yc) = (x.clone(), w.clone(), y.clone());
            let bc = bias.cloned();
            let spec = spec.clone();
            self.record_if(true, &y, move || {
                let og = yc.grad_ref();
                let Some(gy) = og.as_ref() else { return };
                let dims = conv_dims(xc.shape(), wc.shape(), &spec).expect("checked in forward");
                let os = dims.out_positions;
                let clen = chunk_len(&dims);
                let xd = xc.data();
                let wd = wc.data();
                let mut col = vec![0.0f64; dims.col_rows * clen];
                let mut dy_chunk = vec![0.0f64; dims.cout_g * clen];
                let mut dcol = vec![0.0f64; dims.col_rows * clen];
                let mut coords: Vec<isize> = Vec::new();

                if let Some(bt) = &bc {
                    if bt.wants_grad() {
                        bt.accum_grad(|gb| {
                            for b in 0..dims.batch {
                                for c in 0..dims.cout {
                                    let base = (b * dims.cout + c) * os;
                                    let mut s = 0.0;
                                    for p in 0..os {
                                        s += gy[base + p];
                                    }
                                    gb[c] += s;
                                }
                            }
                        });
                    }
                }

                let want_x = xc.wants_grad();
                let want_w = wc.wants_grad();
                if !want_x && !want_w {
                    return;
                }
                // Accumulate both input and weight gradients in one sweep so
                // the column chunk is built once per (batch, group, chunk).
                let mut gx_buf = if want_x { Some(vec![0.0f64; xc.len()]) } else { None };
                let mut gw_buf = if want_w { Some(vec![0.0f64; wc.len()]) } else { None };
                for b in 0..dims.batch {
                    for g in 0..dims.groups {
                        let wg_range = g * dims.cout_g * dims.col_rows..(g + 1) * dims.cout_g * dims.col_rows;
                        let mut start = 0usize;
                        while start < os {
                            let len = clen.min(os - start);
                            chunk_coords(&dims, start, len, &mut coords);
                            for co in 0..dims.cout_g {
                                let c = g * dims.cout_g + co;
                                let src = (b * dims.cout + c) * os + start;
                                dy_chunk[co * len..(co + 1) * len]
                                    .copy_from_slice(&gy[src..src + len]);
                            }
                            let dy = &dy_chunk[..dims.cout_g * len];
                            if want_w {
                                fill_col(&xd, &dims, b, g, &coords, len, &mut col[..dims.col_rows * len]);
                                let gw = &mut gw_buf.as_mut().unwrap()[wg_range.clone()];
                                mm_nt(gw, dy, &col[..dims.col_rows * len], dims.cout_g, len, dims.col_rows);
                            }
                            if want_x {
                                let d = &mut dcol[..dims.col_rows * len];
                                d.fill(0.0);
                                mm_tn(d, &wd[wg_range.clone()], dy, dims.cout_g, dims.col_rows, len);
                                scatter_col(
                                    gx_buf.as_mut().unwrap(),
                                    &dims,
                                    b,
                                    g,
                                    &coords,
                                    len,
                                    d,
                                );
                            }
                            start += len;
                        }
                    }
                }
                drop(xd);
                if let Some(gx) = gx_buf {
                    xc.accum_grad(|dst| {
                        for (d, s) in dst.iter_mut().zip(gx.iter()) {
                            *d += s;
                        }
                    });
                }
                if let Some(gw) = gw_buf {
                    wc.accum_grad(|dst| {
                        for (d, s) in dst.iter_mut().zip(gw.iter()) {
                            *d += s;
                        }
                    });
                }
            });
        }
        Ok(y)
    }
}
