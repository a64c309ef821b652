//! Packed, cache-blocked `C += A·B` with a fixed per-element accumulation
//! order.
//!
//! Each element of C receives its `K` fused multiply-adds in increasing `k`,
//! starting from the value already stored in C. Blocking over `k` only
//! spills and reloads the running accumulator, which is exact, and parallel
//! work is split over disjoint column blocks of C. The result is therefore
//! independent of block sizes, micro-kernel and thread count.
//!
//! The B operand is produced by a [`PackB`] implementation so that
//! convolution inputs can be unrolled (im2col) straight into packed panels
//! without materialising the full column matrix.

use super::kernel::Microkernel;
use super::Real;

const KC: usize = 256;
const MC_PANELS: usize = 8;
const NC_PANELS: usize = 32;

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a, T: Copy> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    #[allow(dead_code)]
    pub fn col_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, row_stride: 1, col_stride: rows }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.row_stride + c * self.col_stride]
    }
}

/// Source of the right-hand operand, packed into `[panel][k][nr]` layout.
pub(crate) trait PackB<T>: Sync {
    /// Inner (reduction) dimension.
    fn k(&self) -> usize;
    /// Columns of B (and C).
    fn n(&self) -> usize;
    /// Pack rows `k0..k0+kc` and columns `n0..n0+nc` into `dst` as
    /// consecutive `kc × nr` panels. Columns past `n()` are zero.
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, nr: usize, dst: &mut [T]);
}

impl<T: Real> PackB<T> for MatRef<'_, T> {
    fn k(&self) -> usize {
        self.rows
    }
    fn n(&self) -> usize {
        self.cols
    }
    fn pack(&self, k0: usize, kc: usize, n0: usize, nc: usize, nr: usize, dst: &mut [T]) {
        for (panel, j0) in (0..nc).step_by(nr).enumerate() {
            let out = &mut dst[panel * kc * nr..(panel + 1) * kc * nr];
            for p in 0..kc {
                for jj in 0..nr {
                    let col = n0 + j0 + jj;
                    out[p * nr + jj] = if col < self.cols { self.at(k0 + p, col) } else { T::zero() };
                }
            }
        }
    }
}

fn pack_a<T: Real>(a: &MatRef<'_, T>, m0: usize, mc: usize, k0: usize, kc: usize, mr: usize, dst: &mut [T]) {
    for (panel, i0) in (0..mc).step_by(mr).enumerate() {
        let out = &mut dst[panel * kc * mr..(panel + 1) * kc * mr];
        for ii in 0..mr {
            let row = m0 + i0 + ii;
            if row < a.rows && i0 + ii < mc {
                for p in 0..kc {
                    out[p * mr + ii] = a.at(row, k0 + p);
                }
            } else {
                for p in 0..kc {
                    out[p * mr + ii] = T::zero();
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct SharedMut<T>(*mut T);
unsafe impl<T> Send for SharedMut<T> {}
unsafe impl<T> Sync for SharedMut<T> {}

/// `c[m][n] += Σ_k a[m][k]·b[k][n]` with `c` row-major (`ldc` row stride).
pub(crate) fn gemm_acc<T: Real, B: PackB<T>>(a: &MatRef<'_, T>, b: &B, c: &mut [T], ldc: usize, mk: &Microkernel<T>) {
    let (m, k, n) = (a.rows, a.cols, b.n());
    assert_eq!(k, b.k(), "gemm inner dimensions differ");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(ldc >= n && c.len() >= (m - 1) * ldc + n, "gemm output too small");
    let nc_block = mk.nr * NC_PANELS;
    let col_blocks: Vec<usize> = (0..n).step_by(nc_block).collect();
    let cp = SharedMut(c.as_mut_ptr());
    let run = |jc: usize| {
        let nc = nc_block.min(n - jc);
        // SAFETY: column blocks are disjoint and lie within `c` (checked above).
        unsafe { gemm_column_block(a, b, cp, ldc, jc, nc, mk) }
    };
    if col_blocks.len() > 1 && rayon::current_num_threads() > 1 && m * n * k > 1 << 22 {
        use rayon::prelude::*;
        col_blocks.into_par_iter().for_each(run);
    } else {
        col_blocks.into_iter().for_each(run);
    }
}

unsafe fn gemm_column_block<T: Real, B: PackB<T>>(
    a: &MatRef<'_, T>,
    b: &B,
    c: SharedMut<T>,
    ldc: usize,
    jc: usize,
    nc: usize,
    mk: &Microkernel<T>,
) {
    let (m, k) = (a.rows, a.cols);
    let (mr, nr) = (mk.mr, mk.nr);
    let mc_block = mr * MC_PANELS;
    let n_panels = nc.div_ceil(nr);
    let mut bbuf = vec![T::zero(); KC.min(k) * n_panels * nr];
    let mut abuf = vec![T::zero(); KC.min(k) * mc_block.min(m.div_ceil(mr) * mr)];
    let mut tile = vec![T::zero(); mr * nr];

    for pc in (0..k).step_by(KC) {
        let kc = KC.min(k - pc);
        b.pack(pc, kc, jc, nc, nr, &mut bbuf);
        for ic in (0..m).step_by(mc_block) {
            let mc = mc_block.min(m - ic);
            pack_a(a, ic, mc, pc, kc, mr, &mut abuf);
            for jr in 0..n_panels {
                let col = jc + jr * nr;
                let cols = nr.min(jc + nc - col);
                let bp = bbuf.as_ptr().add(jr * kc * nr);
                for ir in 0..mc.div_ceil(mr) {
                    let row = ic + ir * mr;
                    let rows = mr.min(m - row);
                    let ap = abuf.as_ptr().add(ir * kc * mr);
                    let cptr = c.0.add(row * ldc + col);
                    if rows == mr && cols == nr {
                        (mk.func)(kc, ap, bp, cptr, ldc);
                    } else {
                        for i in 0..rows {
                            for j in 0..cols {
                                tile[i * nr + j] = *cptr.add(i * ldc + j);
                            }
                        }
                        (mk.func)(kc, ap, bp, tile.as_mut_ptr(), nr);
                        for i in 0..rows {
                            for j in 0..cols {
                                *cptr.add(i * ldc + j) = tile[i * nr + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Maximal runs of consecutive pixels sharing an image row.
/// Yields `(offset, y, x, len)` for pixels `start..start+count` of a
/// row-major image of the given width.
pub(crate) fn pixel_runs(
    start: usize,
    count: usize,
    width: usize,
) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    let mut off = 0;
    std::iter::from_fn(move || {
        if off >= count {
            return None;
        }
        let p = start + off;
        let (y, x) = (p / width, p % width);
        let len = (width - x).min(count - off);
        let item = (off, y, x, len);
        off += len;
        Some(item)
    })
}

/// Copies `src[sx0 + t]` for `t in 0..len` into `dst[..len]`, writing zero
/// wherever the source index falls outside `0..src.len()`.
#[inline]
pub(crate) fn copy_shifted<T: Real>(dst: &mut [T], src: &[T], sx0: isize) {
    let len = dst.len() as isize;
    let w = src.len() as isize;
    let lo = (-sx0).clamp(0, len);
    let hi = (w - sx0).clamp(lo, len);
    let (lo, hi) = (lo as usize, hi as usize);
    dst[..lo].fill(T::zero());
    if hi > lo {
        let s = (sx0 + lo as isize) as usize;
        dst[lo..hi].copy_from_slice(&src[s..s + (hi - lo)]);
    }
    dst[hi..].fill(T::zero());
}
