//! GEMM micro-kernels.
//!
//! A micro-kernel updates an `MR × NR` tile of C in place:
//! `c[i][j] = fma(a[p][i], b[p][j], c[i][j])` for `p = 0..kc`, in order.
//! `a` is a packed panel laid out `[kc][MR]`, `b` is packed `[kc][NR]`, and
//! `c` is row-major with row stride `ldc`.
//!
//! All variants perform the identical sequence of correctly rounded fused
//! multiply-adds per output element, so they agree bitwise with each other
//! and with a scalar loop written with `mul_add`.

use std::sync::OnceLock;

pub type KernelFn<T> = unsafe fn(kc: usize, a: *const T, b: *const T, c: *mut T, ldc: usize);

/// Instruction-set flavour of a micro-kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Scalar,
    Avx2,
    Avx512,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Scalar, KernelKind::Avx2, KernelKind::Avx512];

    pub fn is_available(self) -> bool {
        match self {
            KernelKind::Scalar => true,
            #[cfg(target_arch = "x86_64")]
            KernelKind::Avx2 => {
                std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
            }
            #[cfg(target_arch = "x86_64")]
            KernelKind::Avx512 => std::arch::is_x86_feature_detected!("avx512f"),
            #[cfg(not(target_arch = "x86_64"))]
            _ => false,
        }
    }

    /// Fastest kernel supported by the running CPU.
    pub fn best() -> KernelKind {
        static BEST: OnceLock<KernelKind> = OnceLock::new();
        *BEST.get_or_init(|| {
            [KernelKind::Avx512, KernelKind::Avx2].into_iter().find(|k| k.is_available()).unwrap_or(KernelKind::Scalar)
        })
    }
}

#[doc(hidden)]
#[derive(Clone, Copy)]
pub struct Microkernel<T> {
    pub kind: KernelKind,
    pub mr: usize,
    pub nr: usize,
    pub func: KernelFn<T>,
}

impl<T> std::fmt::Debug for Microkernel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}({}x{})", self.kind, self.mr, self.nr)
    }
}

/// Per-type kernel table. Sealed: only `f32` and `f64` implement it.
pub trait KernelSet: Sized + Copy + 'static {
    #[doc(hidden)]
    fn microkernel(kind: KernelKind) -> Option<Microkernel<Self>>;

    #[doc(hidden)]
    fn best_microkernel() -> Microkernel<Self> {
        Self::microkernel(KernelKind::best()).expect("best kernel is always available")
    }
}

macro_rules! scalar_kernel {
    ($name:ident, $t:ty, $mr:expr, $nr:expr) => {
        unsafe fn $name(kc: usize, a: *const $t, b: *const $t, c: *mut $t, ldc: usize) {
            const MR: usize = $mr;
            const NR: usize = $nr;
            let mut acc = [[0.0 as $t; NR]; MR];
            for (i, row) in acc.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *c.add(i * ldc + j);
                }
            }
            for p in 0..kc {
                let ap = a.add(p * MR);
                let bp = b.add(p * NR);
                for (i, row) in acc.iter_mut().enumerate() {
                    let av = *ap.add(i);
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = av.mul_add(*bp.add(j), *v);
                    }
                }
            }
            for (i, row) in acc.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    *c.add(i * ldc + j) = *v;
                }
            }
        }
    };
}

scalar_kernel!(scalar_f32, f32, 4, 8);
scalar_kernel!(scalar_f64, f64, 4, 4);

// Two vector registers wide, MR rows tall. The compiler keeps the whole
// accumulator array in registers once the row loop is unrolled.
#[cfg(target_arch = "x86_64")]
macro_rules! simd_kernel {
    (
        $name:ident, $t:ty, $features:literal, $mr:expr, $lanes:expr, $vec:ty,
        $load:ident, $store:ident, $set1:ident, $fmadd:ident
    ) => {
        #[target_feature(enable = $features)]
        pub(super) unsafe fn $name(kc: usize, a: *const $t, b: *const $t, c: *mut $t, ldc: usize) {
            use std::arch::x86_64::*;
            const MR: usize = $mr;
            const L: usize = $lanes;
            let mut acc: [[$vec; 2]; MR] = [[std::mem::zeroed(); 2]; MR];
            for (i, row) in acc.iter_mut().enumerate() {
                row[0] = $load(c.add(i * ldc));
                row[1] = $load(c.add(i * ldc + L));
            }
            let mut ap = a;
            let mut bp = b;
            for _ in 0..kc {
                let b0 = $load(bp);
                let b1 = $load(bp.add(L));
                for (i, row) in acc.iter_mut().enumerate() {
                    let av = $set1(*ap.add(i));
                    row[0] = $fmadd(av, b0, row[0]);
                    row[1] = $fmadd(av, b1, row[1]);
                }
                ap = ap.add(MR);
                bp = bp.add(2 * L);
            }
            for (i, row) in acc.iter().enumerate() {
                $store(c.add(i * ldc), row[0]);
                $store(c.add(i * ldc + L), row[1]);
            }
        }
    };
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    simd_kernel!(
        avx512_f32,
        f32,
        "avx512f",
        12,
        16,
        __m512,
        _mm512_loadu_ps,
        _mm512_storeu_ps,
        _mm512_set1_ps,
        _mm512_fmadd_ps
    );
    simd_kernel!(
        avx512_f64,
        f64,
        "avx512f",
        12,
        8,
        __m512d,
        _mm512_loadu_pd,
        _mm512_storeu_pd,
        _mm512_set1_pd,
        _mm512_fmadd_pd
    );
    simd_kernel!(
        avx2_f32,
        f32,
        "avx2,fma",
        6,
        8,
        __m256,
        _mm256_loadu_ps,
        _mm256_storeu_ps,
        _mm256_set1_ps,
        _mm256_fmadd_ps
    );
    simd_kernel!(
        avx2_f64,
        f64,
        "avx2,fma",
        6,
        4,
        __m256d,
        _mm256_loadu_pd,
        _mm256_storeu_pd,
        _mm256_set1_pd,
        _mm256_fmadd_pd
    );
}

impl KernelSet for f32 {
    fn microkernel(kind: KernelKind) -> Option<Microkernel<f32>> {
        if !kind.is_available() {
            return None;
        }
        let (mr, nr, func): (usize, usize, KernelFn<f32>) = match kind {
            KernelKind::Scalar => (4, 8, scalar_f32),
            #[cfg(target_arch = "x86_64")]
            KernelKind::Avx2 => (6, 16, x86::avx2_f32),
            #[cfg(target_arch = "x86_64")]
            KernelKind::Avx512 => (12, 32, x86::avx512_f32),
            #[cfg(not(target_arch = "x86_64"))]
            _ => return None,
        };
        Some(Microkernel { kind, mr, nr, func })
    }
}

impl KernelSet for f64 {
    fn microkernel(kind: KernelKind) -> Option<Microkernel<f64>> {
        if !kind.is_available() {
            return None;
        }
        let (mr, nr, func): (usize, usize, KernelFn<f64>) = match kind {
            KernelKind::Scalar => (4, 4, scalar_f64),
            #[cfg(target_arch = "x86_64")]
            KernelKind::Avx2 => (6, 8, x86::avx2_f64),
            #[cfg(target_arch = "x86_64")]
            KernelKind::Avx512 => (12, 16, x86::avx512_f64),
            #[cfg(not(target_arch = "x86_64"))]
            _ => return None,
        };
        Some(Microkernel { kind, mr, nr, func })
    }
}
