use std::sync::Arc;

use crate::autodiff::{BackwardCtx, Function, Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::gemm::gemm;
use crate::tensor::Tensor;

use super::filters::FilterBank;

/// The four single-level subbands of a 2D DWT, each `N×C×⌊H/2⌋×⌊W/2⌋`.
///
/// `lh = H·X·Lᵀ` is the horizontal detail and `hl = L·X·Hᵀ` the vertical
/// detail, where `L`/`H` act on rows from the left and on columns from the right.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<T: Scalar> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    Ll,
    Lh,
    Hl,
    Hh,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Ll, Band::Lh, Band::Hl, Band::Hh];

    /// (row filter is high-pass, column filter is high-pass)
    fn filters(self) -> (bool, bool) {
        match self {
            Band::Ll => (false, false),
            Band::Lh => (true, false),
            Band::Hl => (false, true),
            Band::Hh => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Ll => "ll",
            Band::Lh => "lh",
            Band::Hl => "hl",
            Band::Hh => "hh",
        }
    }
}

impl<T: Scalar> SubbandSet<T> {
    pub fn band(&self, band: Band) -> &Tensor<T> {
        match band {
            Band::Ll => &self.ll,
            Band::Lh => &self.lh,
            Band::Hl => &self.hl,
            Band::Hh => &self.hh,
        }
    }

    fn shape_checked(&self) -> Result<(usize, usize, usize, usize)> {
        let dims = self.ll.dims4()?;
        for b in [&self.lh, &self.hl, &self.hh] {
            if b.shape() != self.ll.shape() {
                return Err(Error::dim(format!(
                    "subband shapes differ: ll {:?} vs {:?}",
                    self.ll.shape(),
                    b.shape()
                )));
            }
        }
        Ok(dims)
    }
}

/// Stride-2 circulant matrix of `taps`: `⌊n/2⌋ × n` with `M[i, (2i+k) mod n] += taps[k]`.
pub fn circulant_matrix<T: Scalar>(taps: &[f64], n: usize) -> Result<Tensor<T>> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::shape(format!(
            "wavelet matrices need an even extent, got {n}; pad the input to even size"
        )));
    }
    let rows = n / 2;
    let mut m = vec![0.0f64; rows * n];
    for i in 0..rows {
        for (k, &t) in taps.iter().enumerate() {
            m[i * n + (2 * i + k) % n] += t;
        }
    }
    Tensor::new(&[rows, n], m.into_iter().map(T::of).collect())
}

/// Analysis matrices `(L, H)` for extent `n`.
pub fn build_analysis_matrices<T: Scalar>(fb: &FilterBank, n: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((circulant_matrix(&fb.analysis_lo, n)?, circulant_matrix(&fb.analysis_hi, n)?))
}

/// Synthesis matrices `(L̃, H̃)` for extent `n`.
pub fn build_synthesis_matrices<T: Scalar>(fb: &FilterBank, n: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((circulant_matrix(&fb.synthesis_lo, n)?, circulant_matrix(&fb.synthesis_hi, n)?))
}

/// Precomputed matrices for transforming `h×w` slices.
///
/// `band(X) = R·X·Cᵀ` with `R ∈ {L_h, H_h}` and `C ∈ {L_w, H_w}`;
/// the adjoint is `Rᵀ·G·C`.
#[derive(Clone, Debug)]
pub struct DwtPlan<T: Scalar> {
    h: usize,
    w: usize,
    rows: [Tensor<T>; 2],
    rows_t: [Tensor<T>; 2],
    cols: [Tensor<T>; 2],
    cols_t: [Tensor<T>; 2],
}

impl<T: Scalar> DwtPlan<T> {
    pub fn analysis(fb: &FilterBank, h: usize, w: usize) -> Result<Self> {
        Self::from_taps(&fb.analysis_lo, &fb.analysis_hi, h, w)
    }

    pub fn synthesis(fb: &FilterBank, h: usize, w: usize) -> Result<Self> {
        Self::from_taps(&fb.synthesis_lo, &fb.synthesis_hi, h, w)
    }

    fn from_taps(lo: &[f64], hi: &[f64], h: usize, w: usize) -> Result<Self> {
        let rows = [circulant_matrix::<T>(lo, h)?, circulant_matrix::<T>(hi, h)?];
        let cols = [circulant_matrix::<T>(lo, w)?, circulant_matrix::<T>(hi, w)?];
        Ok(DwtPlan {
            h,
            w,
            rows_t: [rows[0].transpose()?, rows[1].transpose()?],
            cols_t: [cols[0].transpose()?, cols[1].transpose()?],
            rows,
            cols,
        })
    }

    pub fn input_extent(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if (h, w) != (self.h, self.w) {
            return Err(Error::dim(format!("DWT plan is for {}×{}, input is {h}×{w}", self.h, self.w)));
        }
        Ok((n, c))
    }

    /// One subband of every `(sample, channel)` slice.
    pub fn band(&self, x: &Tensor<T>, band: Band) -> Result<Tensor<T>> {
        let (n, c) = self.check_input(x)?;
        let (rh, ch) = band.filters();
        let (h2, w2) = (self.h / 2, self.w / 2);
        let slice = self.h * self.w;
        let mut tmp = vec![T::zero(); h2 * self.w];
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for (s, dst) in out.chunks_mut(h2 * w2).enumerate() {
            let xs = &x.data()[s * slice..(s + 1) * slice];
            gemm(h2, self.h, self.w, self.rows[rh as usize].data(), xs, &mut tmp, false);
            gemm(h2, self.w, w2, &tmp, self.cols_t[ch as usize].data(), dst, false);
        }
        Ok(Tensor::from_parts(vec![n, c, h2, w2], out))
    }

    /// All four subbands, sharing the row pass between bands.
    pub fn forward(&self, x: &Tensor<T>) -> Result<SubbandSet<T>> {
        let (n, c) = self.check_input(x)?;
        let (h2, w2) = (self.h / 2, self.w / 2);
        let slice = self.h * self.w;
        let mut lo_rows = vec![T::zero(); h2 * self.w];
        let mut hi_rows = vec![T::zero(); h2 * self.w];
        let mut bands: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); n * c * h2 * w2]);
        for s in 0..n * c {
            let xs = &x.data()[s * slice..(s + 1) * slice];
            gemm(h2, self.h, self.w, self.rows[0].data(), xs, &mut lo_rows, false);
            gemm(h2, self.h, self.w, self.rows[1].data(), xs, &mut hi_rows, false);
            for (b, band) in Band::ALL.iter().enumerate() {
                let (rh, ch) = band.filters();
                let src = if rh { &hi_rows } else { &lo_rows };
                let dst = &mut bands[b][s * h2 * w2..(s + 1) * h2 * w2];
                gemm(h2, self.w, w2, src, self.cols_t[ch as usize].data(), dst, false);
            }
        }
        let shape = vec![n, c, h2, w2];
        let [ll, lh, hl, hh] = bands.map(|d| Tensor::from_parts(shape.clone(), d));
        Ok(SubbandSet { ll, lh, hl, hh })
    }

    /// `Rᵀ·G·C` for every slice of `g`, accumulated into `out` (shape `N×C×h×w`).
    fn adjoint_into(&self, g: &Tensor<T>, band: Band, out: &mut [T]) -> Result<()> {
        let (n, c, h2, w2) = g.dims4()?;
        if (h2 * 2, w2 * 2) != (self.h, self.w) || out.len() != n * c * self.h * self.w {
            return Err(Error::dim(format!(
                "subband {:?} does not match a {}×{} plan",
                g.shape(),
                self.h,
                self.w
            )));
        }
        let (rh, ch) = band.filters();
        let slice = self.h * self.w;
        let mut tmp = vec![T::zero(); h2 * self.w];
        for s in 0..n * c {
            let gs = &g.data()[s * h2 * w2..(s + 1) * h2 * w2];
            gemm(h2, w2, self.w, gs, self.cols[ch as usize].data(), &mut tmp, false);
            gemm(
                self.h,
                h2,
                self.w,
                self.rows_t[rh as usize].data(),
                &tmp,
                &mut out[s * slice..(s + 1) * slice],
                true,
            );
        }
        Ok(())
    }

    pub fn band_adjoint(&self, g: &Tensor<T>, band: Band) -> Result<Tensor<T>> {
        let (n, c, _, _) = g.dims4()?;
        let mut out = vec![T::zero(); n * c * self.h * self.w];
        self.adjoint_into(g, band, &mut out)?;
        Ok(Tensor::from_parts(vec![n, c, self.h, self.w], out))
    }

    /// `Σ_band Rᵀ·band·C`; with a synthesis plan this is the inverse transform.
    pub fn adjoint_sum(&self, s: &SubbandSet<T>) -> Result<Tensor<T>> {
        let (n, c, _, _) = s.shape_checked()?;
        let mut out = vec![T::zero(); n * c * self.h * self.w];
        for band in Band::ALL {
            self.adjoint_into(s.band(band), band, &mut out)?;
        }
        Ok(Tensor::from_parts(vec![n, c, self.h, self.w], out))
    }
}

fn even_extents<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "DWT needs even spatial extents, got {h}×{w}; pad the input first"
        )));
    }
    Ok((h, w))
}

/// Channel-wise single-level 2D DWT in circulant-matrix form.
pub fn dwt2<T: Scalar>(x: &Tensor<T>, fb: &FilterBank) -> Result<SubbandSet<T>> {
    let (h, w) = even_extents(x)?;
    DwtPlan::analysis(fb, h, w)?.forward(x)
}

/// Inverse of [`dwt2`] through the synthesis matrices.
pub fn idwt2<T: Scalar>(s: &SubbandSet<T>, fb: &FilterBank) -> Result<Tensor<T>> {
    let (_, _, h2, w2) = s.shape_checked()?;
    DwtPlan::synthesis(fb, 2 * h2, 2 * w2)?.adjoint_sum(s)
}

/// The same transform as [`dwt2`], computed as separable stride-2 circular
/// cross-correlation (rows, then columns) without building any matrix.
pub fn dwt2_direct<T: Scalar>(x: &Tensor<T>, fb: &FilterBank) -> Result<SubbandSet<T>> {
    let (h, w) = even_extents(x)?;
    let (n, c, _, _) = x.dims4()?;
    let (h2, w2) = (h / 2, w / 2);
    let lo: Vec<T> = fb.analysis_lo.iter().map(|&v| T::of(v)).collect();
    let hi: Vec<T> = fb.analysis_hi.iter().map(|&v| T::of(v)).collect();
    let mut bands: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(n * c * h2 * w2));

    for slice in x.data().chunks(h * w) {
        // Filter along each row (the column index), keeping every other output.
        let mut row_lo = vec![T::zero(); h * w2];
        let mut row_hi = vec![T::zero(); h * w2];
        for r in 0..h {
            for j in 0..w2 {
                let (mut a, mut b) = (T::zero(), T::zero());
                for k in 0..lo.len() {
                    let v = slice[r * w + (2 * j + k) % w];
                    a += lo[k] * v;
                    b += hi[k] * v;
                }
                row_lo[r * w2 + j] = a;
                row_hi[r * w2 + j] = b;
            }
        }
        // Then along each column (the row index).
        let column_pass = |src: &[T], taps: &[T], dst: &mut Vec<T>| {
            for i in 0..h2 {
                for j in 0..w2 {
                    let mut acc = T::zero();
                    for (k, &t) in taps.iter().enumerate() {
                        acc += t * src[((2 * i + k) % h) * w2 + j];
                    }
                    dst.push(acc);
                }
            }
        };
        let [ll, lh, hl, hh] = &mut bands;
        column_pass(&row_lo, &lo, ll);
        column_pass(&row_lo, &hi, lh);
        column_pass(&row_hi, &lo, hl);
        column_pass(&row_hi, &hi, hh);
    }
    let shape = vec![n, c, h2, w2];
    let [ll, lh, hl, hh] = bands.map(|d| Tensor::from_parts(shape.clone(), d));
    Ok(SubbandSet { ll, lh, hl, hh })
}

struct DwtBandFn<T: Scalar> {
    plan: Arc<DwtPlan<T>>,
    band: Band,
}

impl<T: Scalar> Function<T> for DwtBandFn<T> {
    fn name(&self) -> &'static str {
        "dwt_band"
    }

    // The transform is linear: the backward pass is the adjoint, independent of the input.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(self.plan.band_adjoint(ctx.grad, self.band)?)])
    }
}

/// Records the requested subbands of `x` on the graph.
pub fn dwt_bands<T: Scalar, const K: usize>(
    g: &mut Graph<T>,
    x: NodeId,
    fb: &FilterBank,
    bands: [Band; K],
) -> Result<[NodeId; K]> {
    let (h, w) = even_extents(g.value(x))?;
    let plan = Arc::new(DwtPlan::analysis(fb, h, w)?);
    let mut out = [x; K];
    for (slot, band) in out.iter_mut().zip(bands) {
        let v = plan.band(g.value(x), band)?;
        *slot = g.apply(v, &[x], DwtBandFn { plan: Arc::clone(&plan), band });
    }
    Ok(out)
}
