//! Network layers with explicit forward caches and layer-local adjoints.
//!
//! Activations are planar `C×H×W`. Layers only hold offsets into a flat
//! parameter vector; gradients accumulate into a vector of the same layout.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the network can run in.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `C(m×n) = alpha·A(m×k)·B(k×n) + beta·C` with arbitrary strides.
    ///
    /// # Safety
    /// Every element addressed through the pointers and strides must lie in
    /// a live allocation, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub transpose: bool,
}

impl<'a, F> Mat<'a, F> {
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, transpose: false }
    }

    pub fn t(self) -> Self {
        Self { transpose: !self.transpose, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transpose {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transpose {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out (m×n) = a·b`, or `out += a·b` when `accumulate` is set.
pub(crate) fn matmul<F: Real>(a: Mat<'_, F>, b: Mat<'_, F>, out: &mut [F], accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|x| *x = F::zero());
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: every operand length was checked against its logical shape above.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Planar activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<F> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Real> Act<F> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![F::zero(); c * h * w] }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, ch: usize) -> &[F] {
        let n = self.hw();
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn add_assign(&mut self, other: &Act<F>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Channel-wise concatenation `[self | other]`.
    pub fn concat(&self, other: &Act<F>) -> Act<F> {
        assert_eq!((self.h, self.w), (other.h, other.w));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Act { c: self.c + other.c, h: self.h, w: self.w, data }
    }

    /// Inverse of [`Act::concat`]: split after `c_first` channels.
    pub fn split(self, c_first: usize) -> (Act<F>, Act<F>) {
        let n = self.hw();
        let mut data = self.data;
        let rest = data.split_off(c_first * n);
        (
            Act { c: c_first, h: self.h, w: self.w, data },
            Act { c: self.c - c_first, h: self.h, w: self.w, data: rest },
        )
    }
}

/// One named parameter tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    /// Fan-in used for He initialization; `None` for constant-initialized tensors.
    pub init: ParamInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    He { fan_in: usize },
    Zeros,
    Ones,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Allocates parameter ranges while a network is being laid out.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamAllocator {
    pub fn alloc(&mut self, name: String, shape: Vec<usize>, init: ParamInit) -> usize {
        let offset = self.total;
        let entry = ParamEntry { name, offset, shape, init };
        self.total += entry.len();
        self.entries.push(entry);
        offset
    }
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    w: usize,
    b: usize,
}

pub struct ConvCache<F> {
    cols: Vec<F>,
    h: usize,
    w: usize,
}

impl Conv2d {
    pub fn new(alloc: &mut ParamAllocator, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "odd kernels only");
        let fan_in = cin * k * k;
        let w = alloc.alloc(format!("{name}.weight"), vec![cout, cin, k, k], ParamInit::He { fan_in });
        let b = alloc.alloc(format!("{name}.bias"), vec![cout], ParamInit::Zeros);
        Self { cin, cout, k, w, b }
    }

    fn weight<'a, F>(&self, p: &'a [F]) -> &'a [F] {
        &p[self.w..self.w + self.cout * self.cin * self.k * self.k]
    }

    fn im2col<F: Real>(&self, x: &Act<F>) -> Vec<F> {
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = (k / 2) as isize;
        let hw = h * w;
        if k == 1 {
            return x.data.clone();
        }
        let mut cols = vec![F::zero(); self.cin * k * k * hw];
        for ci in 0..self.cin {
            let src = x.channel(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                        for xx in x_lo..x_hi {
                            drow[xx] = srow[(xx as isize + dx) as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<F: Real>(&self, cols: &[F], h: usize, w: usize) -> Act<F> {
        let k = self.k;
        if k == 1 {
            return Act { c: self.cin, h, w, data: cols.to_vec() };
        }
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut out = Act::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut out.data[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                        let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                        let srow = &src[y * w..(y + 1) * w];
                        for xx in x_lo..x_hi {
                            drow[(xx as isize + dx) as usize] += srow[xx];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward<F: Real>(&self, p: &[F], x: &Act<F>) -> (Act<F>, ConvCache<F>) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let hw = x.hw();
        let cols = self.im2col(x);
        let ckk = self.cin * self.k * self.k;
        let mut out = Act::zeros(self.cout, x.h, x.w);
        matmul(Mat::new(self.weight(p), self.cout, ckk), Mat::new(&cols, ckk, hw), &mut out.data, false);
        for co in 0..self.cout {
            let b = p[self.b + co];
            out.data[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += b);
        }
        (out, ConvCache { cols, h: x.h, w: x.w })
    }

    pub fn backward<F: Real>(&self, p: &[F], cache: &ConvCache<F>, dout: &Act<F>, g: &mut [F]) -> Act<F> {
        let hw = cache.h * cache.w;
        let ckk = self.cin * self.k * self.k;
        let nw = self.cout * ckk;
        matmul(
            Mat::new(&dout.data, self.cout, hw),
            Mat::new(&cache.cols, ckk, hw).t(),
            &mut g[self.w..self.w + nw],
            true,
        );
        for co in 0..self.cout {
            let s: F = dout.data[co * hw..(co + 1) * hw].iter().copied().sum();
            g[self.b + co] += s;
        }
        let mut dcols = vec![F::zero(); ckk * hw];
        matmul(Mat::new(self.weight(p), self.cout, ckk).t(), Mat::new(&dout.data, self.cout, hw), &mut dcols, false);
        self.col2im(&dcols, cache.h, cache.w)
    }
}

// ---------------------------------------------------------------------------
// Group normalization

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub c: usize,
    pub groups: usize,
    gamma: usize,
    beta: usize,
}

pub struct GroupNormCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

pub const GN_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(alloc: &mut ParamAllocator, name: &str, c: usize, groups: usize) -> Self {
        assert!(c.is_multiple_of(groups), "{c} channels not divisible into {groups} groups");
        let gamma = alloc.alloc(format!("{name}.gamma"), vec![c], ParamInit::Ones);
        let beta = alloc.alloc(format!("{name}.beta"), vec![c], ParamInit::Zeros);
        Self { c, groups, gamma, beta }
    }

    pub fn forward<F: Real>(&self, p: &[F], x: &Act<F>) -> (Act<F>, GroupNormCache<F>) {
        assert_eq!(x.c, self.c, "group norm channels");
        let hw = x.hw();
        let cpg = self.c / self.groups;
        let n = cpg * hw;
        let nf = F::from_usize(n).unwrap();
        let eps = F::lit(GN_EPS);
        let mut xhat = vec![F::zero(); x.data.len()];
        let mut rstd = Vec::with_capacity(self.groups);
        let mut out = Act::zeros(x.c, x.h, x.w);
        for g in 0..self.groups {
            let range = g * n..(g + 1) * n;
            let xs = &x.data[range.clone()];
            let mean = xs.iter().copied().sum::<F>() / nf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let r = F::one() / (var + eps).sqrt();
            rstd.push(r);
            for (dst, &v) in xhat[range].iter_mut().zip(xs) {
                *dst = (v - mean) * r;
            }
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                let (ga, be) = (p[self.gamma + ch], p[self.beta + ch]);
                let sl = ch * hw..(ch + 1) * hw;
                for (o, &xh) in out.data[sl.clone()].iter_mut().zip(&xhat[sl]) {
                    *o = ga * xh + be;
                }
            }
        }
        (out, GroupNormCache { xhat, rstd })
    }

    pub fn backward<F: Real>(&self, p: &[F], cache: &GroupNormCache<F>, dout: &Act<F>, g: &mut [F]) -> Act<F> {
        let hw = dout.hw();
        let cpg = self.c / self.groups;
        let n = cpg * hw;
        let nf = F::from_usize(n).unwrap();
        let mut dx = Act::zeros(dout.c, dout.h, dout.w);
        let mut dxhat = vec![F::zero(); n];
        for grp in 0..self.groups {
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for ci in 0..cpg {
                let ch = grp * cpg + ci;
                let ga = p[self.gamma + ch];
                let sl = ch * hw..(ch + 1) * hw;
                let mut dg = F::zero();
                let mut db = F::zero();
                for (i, (&d, &xh)) in dout.data[sl.clone()].iter().zip(&cache.xhat[sl]).enumerate() {
                    dg += d * xh;
                    db += d;
                    let dh = d * ga;
                    dxhat[ci * hw + i] = dh;
                    sum_d += dh;
                    sum_dx += dh * xh;
                }
                g[self.gamma + ch] += dg;
                g[self.beta + ch] += db;
            }
            let r = cache.rstd[grp] / nf;
            let range = grp * n..(grp + 1) * n;
            for ((dst, &dh), &xh) in dx.data[range.clone()].iter_mut().zip(&dxhat).zip(&cache.xhat[range]) {
                *dst = r * (nf * dh - sum_d - xh * sum_dx);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// SiLU

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn silu<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Adjoint of SiLU given its input.
pub fn silu_backward<F: Real>(x: &[F], dout: &[F]) -> Vec<F> {
    x.iter()
        .zip(dout)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * (s + v * s * (F::one() - s))
        })
        .collect()
}

pub fn silu_act<F: Real>(x: &Act<F>) -> Act<F> {
    Act { c: x.c, h: x.h, w: x.w, data: silu(&x.data) }
}

pub fn silu_act_backward<F: Real>(x: &Act<F>, dout: &Act<F>) -> Act<F> {
    Act { c: x.c, h: x.h, w: x.w, data: silu_backward(&x.data, &dout.data) }
}

// ---------------------------------------------------------------------------
// Dense

#[derive(Debug, Clone)]
pub struct Linear {
    pub nin: usize,
    pub nout: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(alloc: &mut ParamAllocator, name: &str, nin: usize, nout: usize) -> Self {
        let w = alloc.alloc(format!("{name}.weight"), vec![nout, nin], ParamInit::He { fan_in: nin });
        let b = alloc.alloc(format!("{name}.bias"), vec![nout], ParamInit::Zeros);
        Self { nin, nout, w, b }
    }

    pub fn forward<F: Real>(&self, p: &[F], x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.nin);
        (0..self.nout)
            .map(|o| {
                let row = &p[self.w + o * self.nin..self.w + (o + 1) * self.nin];
                row.iter().zip(x).map(|(&a, &b)| a * b).sum::<F>() + p[self.b + o]
            })
            .collect()
    }

    pub fn backward<F: Real>(&self, p: &[F], x: &[F], dout: &[F], g: &mut [F]) -> Vec<F> {
        let mut dx = vec![F::zero(); self.nin];
        for (o, &d) in dout.iter().enumerate() {
            g[self.b + o] += d;
            let base = self.w + o * self.nin;
            for i in 0..self.nin {
                g[base + i] += d * x[i];
                dx[i] += d * p[base + i];
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Resampling (parameter free)

pub fn avg_pool2<F: Real>(x: &Act<F>) -> Act<F> {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let quarter = F::lit(0.25);
    let mut out = Act::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.channel(c);
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                let s = src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1];
                out.data[(c * h2 + y) * w2 + xx] = s * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<F: Real>(dout: &Act<F>) -> Act<F> {
    let (h, w) = (dout.h * 2, dout.w * 2);
    let quarter = F::lit(0.25);
    let mut dx = Act::zeros(dout.c, h, w);
    for c in 0..dout.c {
        for y in 0..h {
            for xx in 0..w {
                dx.data[(c * h + y) * w + xx] = dout.data[(c * dout.h + y / 2) * dout.w + xx / 2] * quarter;
            }
        }
    }
    dx
}

pub fn upsample2<F: Real>(x: &Act<F>) -> Act<F> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Act::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(c * h + y) * w + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<F: Real>(dout: &Act<F>) -> Act<F> {
    let (h2, w2) = (dout.h / 2, dout.w / 2);
    let mut dx = Act::zeros(dout.c, h2, w2);
    for c in 0..dout.c {
        for y in 0..dout.h {
            for xx in 0..dout.w {
                dx.data[(c * h2 + y / 2) * w2 + xx / 2] += dout.data[(c * dout.h + y) * dout.w + xx];
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Residual block with timestep injection

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub cin: usize,
    pub cout: usize,
    gn1: GroupNorm,
    conv1: Conv2d,
    temb: Linear,
    gn2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

pub struct ResBlockCache<F> {
    gn1: GroupNormCache<F>,
    a1: Act<F>,
    conv1: ConvCache<F>,
    gn2: GroupNormCache<F>,
    a2: Act<F>,
    conv2: ConvCache<F>,
    skip: Option<ConvCache<F>>,
}

impl ResBlock {
    pub fn new(alloc: &mut ParamAllocator, name: &str, cin: usize, cout: usize, temb_dim: usize, groups: usize) -> Self {
        let gn1 = GroupNorm::new(alloc, &format!("{name}.norm1"), cin, groups);
        let conv1 = Conv2d::new(alloc, &format!("{name}.conv1"), cin, cout, 3);
        let temb = Linear::new(alloc, &format!("{name}.temb"), temb_dim, cout);
        let gn2 = GroupNorm::new(alloc, &format!("{name}.norm2"), cout, groups);
        let conv2 = Conv2d::new(alloc, &format!("{name}.conv2"), cout, cout, 3);
        let skip = (cin != cout).then(|| Conv2d::new(alloc, &format!("{name}.skip"), cin, cout, 1));
        Self { cin, cout, gn1, conv1, temb, gn2, conv2, skip }
    }

    /// `temb` is the already activated shared timestep embedding.
    pub fn forward<F: Real>(&self, p: &[F], x: &Act<F>, temb: &[F]) -> (Act<F>, ResBlockCache<F>) {
        let (n1, gn1) = self.gn1.forward(p, x);
        let s1 = silu_act(&n1);
        let (mut h, conv1) = self.conv1.forward(p, &s1);
        let shift = self.temb.forward(p, temb);
        let hw = h.hw();
        for (c, &s) in shift.iter().enumerate() {
            h.data[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v += s);
        }
        let (n2, gn2) = self.gn2.forward(p, &h);
        let s2 = silu_act(&n2);
        let (mut out, conv2) = self.conv2.forward(p, &s2);
        let skip = match &self.skip {
            Some(conv) => {
                let (sk, cache) = conv.forward(p, x);
                out.add_assign(&sk);
                Some(cache)
            }
            None => {
                out.add_assign(x);
                None
            }
        };
        (out, ResBlockCache { gn1, a1: n1, conv1, gn2, a2: n2, conv2, skip })
    }

    /// Returns the input adjoint; the timestep-embedding adjoint is added into `dtemb`.
    pub fn backward<F: Real>(
        &self,
        p: &[F],
        cache: &ResBlockCache<F>,
        temb: &[F],
        dout: &Act<F>,
        dtemb: &mut [F],
        g: &mut [F],
    ) -> Act<F> {
        let ds2 = self.conv2.backward(p, &cache.conv2, dout, g);
        let dn2 = silu_act_backward(&cache.a2, &ds2);
        let dh = self.gn2.backward(p, &cache.gn2, &dn2, g);
        let hw = dh.hw();
        let dshift: Vec<F> = (0..self.cout)
            .map(|c| dh.data[c * hw..(c + 1) * hw].iter().copied().sum())
            .collect();
        let dt = self.temb.backward(p, temb, &dshift, g);
        for (a, b) in dtemb.iter_mut().zip(dt) {
            *a += b;
        }
        let ds1 = self.conv1.backward(p, &cache.conv1, &dh, g);
        let dn1 = silu_act_backward(&cache.a1, &ds1);
        let mut dx = self.gn1.backward(p, &cache.gn1, &dn1, g);
        match (&self.skip, &cache.skip) {
            (Some(conv), Some(c)) => dx.add_assign(&conv.backward(p, c, dout, g)),
            _ => dx.add_assign(dout),
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Single-head spatial self-attention

#[derive(Debug, Clone)]
pub struct Attention {
    pub c: usize,
    norm: GroupNorm,
    qkv: Conv2d,
    proj: Conv2d,
}

pub struct AttentionCache<F> {
    norm: GroupNormCache<F>,
    qkv_cache: ConvCache<F>,
    qkv: Act<F>,
    probs: Vec<F>,
    proj: ConvCache<F>,
}

impl Attention {
    pub fn new(alloc: &mut ParamAllocator, name: &str, c: usize, groups: usize) -> Self {
        let norm = GroupNorm::new(alloc, &format!("{name}.norm"), c, groups);
        let qkv = Conv2d::new(alloc, &format!("{name}.qkv"), c, 3 * c, 1);
        let proj = Conv2d::new(alloc, &format!("{name}.proj"), c, c, 1);
        Self { c, norm, qkv, proj }
    }

    pub fn forward<F: Real>(&self, p: &[F], x: &Act<F>) -> (Act<F>, AttentionCache<F>) {
        let n = x.hw();
        let c = self.c;
        let (normed, norm) = self.norm.forward(p, x);
        let (qkv, qkv_cache) = self.qkv.forward(p, &normed);
        let q = &qkv.data[..c * n];
        let k = &qkv.data[c * n..2 * c * n];
        let v = &qkv.data[2 * c * n..];
        let scale = F::one() / F::from_usize(c).unwrap().sqrt();
        // scores[i][j] = scale · Σ_ch q[ch][i] k[ch][j]
        let mut probs = vec![F::zero(); n * n];
        matmul(Mat::new(q, c, n).t(), Mat::new(k, c, n), &mut probs, false);
        for row in probs.chunks_mut(n) {
            let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b * scale));
            let mut z = F::zero();
            for s in row.iter_mut() {
                *s = (*s * scale - m).exp();
                z += *s;
            }
            row.iter_mut().for_each(|s| *s = *s / z);
        }
        // o[ch][i] = Σ_j v[ch][j] P[i][j]
        let mut o = Act::zeros(c, x.h, x.w);
        matmul(Mat::new(v, c, n), Mat::new(&probs, n, n).t(), &mut o.data, false);
        let (mut out, proj) = self.proj.forward(p, &o);
        out.add_assign(x);
        (out, AttentionCache { norm, qkv_cache, qkv, probs, proj })
    }

    pub fn backward<F: Real>(&self, p: &[F], cache: &AttentionCache<F>, dout: &Act<F>, g: &mut [F]) -> Act<F> {
        let n = dout.hw();
        let c = self.c;
        let q = &cache.qkv.data[..c * n];
        let k = &cache.qkv.data[c * n..2 * c * n];
        let v = &cache.qkv.data[2 * c * n..];
        let scale = F::one() / F::from_usize(c).unwrap().sqrt();
        let d_o = self.proj.backward(p, &cache.proj, dout, g);
        let mut dqkv = Act::zeros(3 * c, dout.h, dout.w);
        // dV = dO · P
        matmul(Mat::new(&d_o.data, c, n), Mat::new(&cache.probs, n, n), &mut dqkv.data[2 * c * n..], false);
        // dP = dOᵀ · V
        let mut dp = vec![F::zero(); n * n];
        matmul(Mat::new(&d_o.data, c, n).t(), Mat::new(v, c, n), &mut dp, false);
        // softmax adjoint, folded with the score scale
        for (drow, prow) in dp.chunks_mut(n).zip(cache.probs.chunks(n)) {
            let dot: F = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
            for (d, &pp) in drow.iter_mut().zip(prow) {
                *d = pp * (*d - dot) * scale;
            }
        }
        // dQ = K · dSᵀ ; dK = Q · dS
        matmul(Mat::new(k, c, n), Mat::new(&dp, n, n).t(), &mut dqkv.data[..c * n], false);
        matmul(Mat::new(q, c, n), Mat::new(&dp, n, n), &mut dqkv.data[c * n..2 * c * n], false);
        let dnormed = self.qkv.backward(p, &cache.qkv_cache, &dqkv, g);
        let mut dx = self.norm.backward(p, &cache.norm, &dnormed, g);
        dx.add_assign(dout);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive_for_all_transpositions() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|i| (i * 7 % 5) as f64).collect(); // 3×4
        let mut out = vec![0.0; 8];
        matmul(Mat::new(&a, 2, 3), Mat::new(&b, 3, 4), &mut out, false);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(out[i * 4 + j], want);
            }
        }
        // (aᵀ)ᵀ with a stored as 3×2
        let at: Vec<f64> = (0..6).map(|idx| a[(idx % 2) * 3 + idx / 2]).collect();
        let mut out2 = vec![0.0; 8];
        matmul(Mat::new(&at, 3, 2).t(), Mat::new(&b, 3, 4), &mut out2, false);
        assert_eq!(out, out2);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut alloc = ParamAllocator::default();
        let conv = Conv2d::new(&mut alloc, "c", 2, 3, 3);
        let p: Vec<f64> = (0..alloc.total).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect();
        let x = Act { c: 2, h: 4, w: 5, data: (0..40).map(|i| ((i * 13) % 7) as f64 - 3.0).collect() };
        let (y, _) = conv.forward(&p, &x);
        for co in 0..3 {
            for yy in 0..4 {
                for xx in 0..5 {
                    let mut s = p[conv.b + co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = yy as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if !(0..4).contains(&sy) || !(0..5).contains(&sx) {
                                    continue;
                                }
                                s += p[conv.w + ((co * 2 + ci) * 3 + ky) * 3 + kx]
                                    * x.data[(ci * 4 + sy as usize) * 5 + sx as usize];
                            }
                        }
                    }
                    assert!((y.data[(co * 4 + yy) * 5 + xx] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        // <pool(x), y> == <x, pool_backward(y)>
        let x = Act { c: 2, h: 4, w: 4, data: (0..32).map(|i| i as f64 * 0.3 - 2.0).collect::<Vec<_>>() };
        let y = Act { c: 2, h: 2, w: 2, data: (0..8).map(|i| (i * 3 % 5) as f64).collect::<Vec<_>>() };
        let lhs: f64 = avg_pool2(&x).data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&avg_pool2_backward(&y).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = upsample2(&y).data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = y.data.iter().zip(&upsample2_backward(&x).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn group_norm_output_is_standardized() {
        let mut alloc = ParamAllocator::default();
        let gn = GroupNorm::new(&mut alloc, "gn", 4, 2);
        let mut p = vec![0.0f64; alloc.total];
        p[..4].iter_mut().for_each(|g| *g = 1.0);
        let x = Act { c: 4, h: 3, w: 3, data: (0..36).map(|i| (i * i % 17) as f64).collect() };
        let (y, _) = gn.forward(&p, &x);
        for g in 0..2 {
            let s = &y.data[g * 18..(g + 1) * 18];
            let mean: f64 = s.iter().sum::<f64>() / 18.0;
            let var: f64 = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Act { c: 1, h: 2, w: 2, data: vec![1.0f32, 2.0, 3.0, 4.0] };
        let b = Act { c: 2, h: 2, w: 2, data: (0..8).map(|i| i as f32).collect() };
        let (a2, b2) = a.concat(&b).split(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
