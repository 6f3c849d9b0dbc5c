//! Raw loops behind the graph primitives. Shapes are validated by the caller.

/// `c[m, n] = a[m, k] * b[k, n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Accumulates `da += dc * b^T` and `db += a^T * dc`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    m: usize,
    k: usize,
    n: usize,
    da: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let drow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                da[i * k + p] += drow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let drow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let dbrow = &mut db[p * n..(p + 1) * n];
                for (g, &d) in dbrow.iter_mut().zip(drow) {
                    *g += av * d;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub ho: usize,
    pub wo: usize,
    /// Depthwise: output channel `c` reads only input channel `c`.
    pub depthwise: bool,
}

impl ConvDims {
    /// Output columns `ox` whose input column `ox*sw + kx - pw` lies inside the row.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pw > kx {
            (self.pw - kx).div_ceil(self.sw)
        } else {
            0
        };
        let limit = self.w + self.pw;
        let hi = if limit > kx {
            ((limit - kx - 1) / self.sw + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy * self.sh + ky;
        if iy < self.ph || iy - self.ph >= self.h {
            None
        } else {
            Some(iy - self.ph)
        }
    }

    fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        let (per_out, ci) = if self.depthwise {
            (1, 0)
        } else {
            (self.c_in, ci)
        };
        ((co * per_out + ci) * self.kh + ky) * self.kw + kx
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// (output channel, input channel) pairs connected by the kernel.
    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let depthwise = self.depthwise;
        let c_in = self.c_in;
        (0..self.c_out).flat_map(move |co| {
            let range = if depthwise { co..co + 1 } else { 0..c_in };
            range.map(move |ci| (co, ci))
        })
    }
}

/// `[n, c, p] -> [n * p, c]`
fn to_channels_last(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ci in 0..c {
            let src = &x[(b * c + ci) * p..][..p];
            for (i, &v) in src.iter().enumerate() {
                out[(b * p + i) * c + ci] = v;
            }
        }
    }
    out
}

/// Adds `[n * p, c]` into `[n, c, p]`.
fn add_channels_first(src: &[f64], dst: &mut [f64], n: usize, c: usize, p: usize) {
    for b in 0..n {
        for i in 0..p {
            let row = &src[(b * p + i) * c..][..c];
            for (ci, &v) in row.iter().enumerate() {
                dst[(b * c + ci) * p + i] += v;
            }
        }
    }
}

/// `[r, c] -> [c, r]`
fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn dense_pointwise(d: &ConvDims) -> bool {
    d.pointwise() && !d.depthwise
}

/// Input pixel `(iy, ix)` read by output `(oy, ox)` at tap `(ky, kx)`.
fn tap_source(d: &ConvDims, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
    let iy = (oy * d.sh + ky).checked_sub(d.ph).filter(|&v| v < d.h)?;
    let ix = (ox * d.sw + kx).checked_sub(d.pw).filter(|&v| v < d.w)?;
    Some((iy, ix))
}

/// Depthwise convolution in channels-last layout, vectorized over channels.
fn depthwise_forward(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let c = d.c_in;
    let taps = d.kh * d.kw;
    let (pi, po) = (d.h * d.w, d.ho * d.wo);
    let xt = to_channels_last(x, d.batch, c, pi);
    let wt = transpose(w, c, taps);
    let mut yt = vec![0.0; d.batch * po * c];
    for n in 0..d.batch {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let dst = &mut yt[((n * d.ho + oy) * d.wo + ox) * c..][..c];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let Some((iy, ix)) = tap_source(d, oy, ox, ky, kx) else {
                            continue;
                        };
                        let src = &xt[((n * d.h + iy) * d.w + ix) * c..][..c];
                        let wk = &wt[(ky * d.kw + kx) * c..][..c];
                        for ((o, &a), &b) in dst.iter_mut().zip(src).zip(wk) {
                            *o += a * b;
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; yt.len()];
    add_channels_first(&yt, &mut out, d.batch, c, po);
    out
}

fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    d: &ConvDims,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let c = d.c_in;
    let taps = d.kh * d.kw;
    let (pi, po) = (d.h * d.w, d.ho * d.wo);
    let gt = to_channels_last(dout, d.batch, c, po);
    let xt = to_channels_last(x, d.batch, c, pi);
    let wt = transpose(w, c, taps);
    let mut dxt = dx.as_ref().map(|_| vec![0.0; xt.len()]);
    let mut dwt = dw.as_ref().map(|_| vec![0.0; wt.len()]);
    for n in 0..d.batch {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let g = &gt[((n * d.ho + oy) * d.wo + ox) * c..][..c];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let Some((iy, ix)) = tap_source(d, oy, ox, ky, kx) else {
                            continue;
                        };
                        let at = ((n * d.h + iy) * d.w + ix) * c;
                        let tap = (ky * d.kw + kx) * c;
                        if let Some(dxt) = dxt.as_mut() {
                            let wk = &wt[tap..][..c];
                            for ((o, &a), &b) in dxt[at..at + c].iter_mut().zip(g).zip(wk) {
                                *o += a * b;
                            }
                        }
                        if let Some(dwt) = dwt.as_mut() {
                            let src = &xt[at..][..c];
                            for ((o, &a), &b) in dwt[tap..tap + c].iter_mut().zip(g).zip(src) {
                                *o += a * b;
                            }
                        }
                    }
                }
            }
        }
    }
    if let (Some(dx), Some(dxt)) = (dx, dxt) {
        add_channels_first(&dxt, dx, d.batch, c, pi);
    }
    if let (Some(dw), Some(dwt)) = (dw, dwt) {
        for (a, b) in dw.iter_mut().zip(transpose(&dwt, taps, c)) {
            *a += b;
        }
    }
}

pub fn conv2d(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    if d.depthwise {
        return depthwise_forward(x, w, d);
    }
    if dense_pointwise(d) {
        let p = d.h * d.w;
        let xt = to_channels_last(x, d.batch, d.c_in, p);
        let yt = matmul(
            &xt,
            &transpose(w, d.c_out, d.c_in),
            d.batch * p,
            d.c_in,
            d.c_out,
        );
        let mut out = vec![0.0; d.batch * d.c_out * p];
        add_channels_first(&yt, &mut out, d.batch, d.c_out, p);
        return out;
    }
    let in_plane = d.h * d.w;
    let out_plane = d.ho * d.wo;
    let mut out = vec![0.0; d.batch * d.c_out * out_plane];
    for n in 0..d.batch {
        for (co, ci) in d.pairs() {
            let src = &x[(n * d.c_in + ci) * in_plane..][..in_plane];
            let dst = &mut out[(n * d.c_out + co) * out_plane..][..out_plane];
            if d.pointwise() {
                let wv = w[d.weight_index(co, ci, 0, 0)];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += wv * v;
                }
                continue;
            }
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = w[d.weight_index(co, ci, ky, kx)];
                    let (lo, hi) = d.col_range(kx);
                    for oy in 0..d.ho {
                        let Some(iy) = d.in_row(oy, ky) else { continue };
                        let srow = &src[iy * d.w..(iy + 1) * d.w];
                        let orow = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                        if d.sw == 1 {
                            let off = kx as isize - d.pw as isize;
                            for ox in lo..hi {
                                orow[ox] += wv * srow[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in lo..hi {
                                orow[ox] += wv * srow[ox * d.sw + kx - d.pw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input and weight gradients of [`conv2d`].
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    d: &ConvDims,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) {
    if d.depthwise {
        return depthwise_backward(x, w, dout, d, dx, dw);
    }
    if dense_pointwise(d) {
        let p = d.h * d.w;
        let rows = d.batch * p;
        let gt = to_channels_last(dout, d.batch, d.c_out, p);
        if let Some(dx) = dx {
            let dxt = matmul(&gt, w, rows, d.c_out, d.c_in);
            add_channels_first(&dxt, dx, d.batch, d.c_in, p);
        }
        if let Some(dw) = dw {
            let xt = to_channels_last(x, d.batch, d.c_in, p);
            // dW[co, ci] = sum_r g[r, co] * x[r, ci]
            let mut dwt = vec![0.0; d.c_out * d.c_in];
            for r in 0..rows {
                let grow = &gt[r * d.c_out..][..d.c_out];
                let xrow = &xt[r * d.c_in..][..d.c_in];
                for (co, &gv) in grow.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    let drow = &mut dwt[co * d.c_in..][..d.c_in];
                    for (dv, &xv) in drow.iter_mut().zip(xrow) {
                        *dv += gv * xv;
                    }
                }
            }
            for (a, b) in dw.iter_mut().zip(&dwt) {
                *a += b;
            }
        }
        return;
    }
    let in_plane = d.h * d.w;
    let out_plane = d.ho * d.wo;
    for n in 0..d.batch {
        for (co, ci) in d.pairs() {
            let src = &x[(n * d.c_in + ci) * in_plane..][..in_plane];
            let g = &dout[(n * d.c_out + co) * out_plane..][..out_plane];
            let in_off = (n * d.c_in + ci) * in_plane;
            if d.pointwise() {
                let wi = d.weight_index(co, ci, 0, 0);
                if let Some(dx) = dx.as_deref_mut() {
                    let wv = w[wi];
                    for (gx, &gv) in dx[in_off..in_off + in_plane].iter_mut().zip(g) {
                        *gx += wv * gv;
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[wi] += src.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                }
                continue;
            }
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wi = d.weight_index(co, ci, ky, kx);
                    let wv = w[wi];
                    let (lo, hi) = d.col_range(kx);
                    let mut acc = 0.0;
                    for oy in 0..d.ho {
                        let Some(iy) = d.in_row(oy, ky) else { continue };
                        let grow = &g[oy * d.wo..(oy + 1) * d.wo];
                        let row_base = iy * d.w;
                        for ox in lo..hi {
                            let ix = ox * d.sw + kx - d.pw;
                            acc += grow[ox] * src[row_base + ix];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let drow = &mut dx[in_off + row_base..in_off + row_base + d.w];
                            for ox in lo..hi {
                                drow[ox * d.sw + kx - d.pw] += wv * grow[ox];
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PoolDims {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ho: usize,
    pub wo: usize,
}

pub fn avg_pool(x: &[f64], d: &PoolDims) -> Vec<f64> {
    let scale = 1.0 / (d.kh * d.kw) as f64;
    let mut out = vec![0.0; d.planes * d.ho * d.wo];
    for p in 0..d.planes {
        let src = &x[p * d.h * d.w..(p + 1) * d.h * d.w];
        let dst = &mut out[p * d.ho * d.wo..(p + 1) * d.ho * d.wo];
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let mut s = 0.0;
                for ky in 0..d.kh {
                    let row = (oy * d.sh + ky) * d.w + ox * d.sw;
                    s += src[row..row + d.kw].iter().sum::<f64>();
                }
                dst[oy * d.wo + ox] = s * scale;
            }
        }
    }
    out
}

pub fn avg_pool_backward(dout: &[f64], d: &PoolDims, dx: &mut [f64]) {
    let scale = 1.0 / (d.kh * d.kw) as f64;
    for p in 0..d.planes {
        let g = &dout[p * d.ho * d.wo..(p + 1) * d.ho * d.wo];
        let dst = &mut dx[p * d.h * d.w..(p + 1) * d.h * d.w];
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let gv = g[oy * d.wo + ox] * scale;
                for ky in 0..d.kh {
                    let row = (oy * d.sh + ky) * d.w + ox * d.sw;
                    for v in &mut dst[row..row + d.kw] {
                        *v += gv;
                    }
                }
            }
        }
    }
}

/// Row-major strides of `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output of permuting axes: `out.shape[i] = in.shape[perm[i]]`.
/// Returns, for every output flat index, the input flat index it reads.
pub fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; out_shape.len()];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        let src: usize = idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum();
        map.push(src);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}
