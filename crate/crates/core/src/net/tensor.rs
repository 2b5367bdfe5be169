use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Scalar type for network storage. Production uses f32; gradient checks
/// instantiate f64. Reductions accumulate in f64 either way.
pub trait Element:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn to64(self) -> f64;
    fn from64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline(always)]
    fn to64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline(always)]
    fn to64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from64(v: f64) -> Self {
        v
    }
}

/// Dense NCHW tensor (height = frequency bins, width = frames).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Element> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w);
        Tensor4 { n, c, h, w, data }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx(n, c, y, x)]
    }

    /// Offset of the (n, c) plane.
    #[inline(always)]
    pub fn plane(&self, n: usize, c: usize) -> usize {
        (n * self.c + c) * self.h * self.w
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Valid output range of a strided/padded sliding window: the `o` values for
/// which `o*stride + k - padding` lies in `[0, input_len)`.
#[inline]
pub fn window_range(out_len: usize, stride: usize, k: usize, padding: usize, input_len: usize) -> (usize, usize) {
    let start = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    // largest o with o*stride + k - padding <= input_len - 1
    let end = if input_len + padding > k {
        (((input_len + padding - k - 1) / stride) + 1).min(out_len)
    } else {
        0
    };
    (start.min(end), end)
}

/// Output length of a conv/pool axis: floor((len + 2p - k)/s) + 1.
#[inline]
pub fn out_len(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_nchw() {
        let t = Tensor4::<f32>::from_vec(1, 2, 2, 3, (0..12).map(|i| i as f32).collect());
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 1, 2), 5.0);
        assert_eq!(t.at(0, 1, 0, 0), 6.0);
    }

    #[test]
    fn window_range_matches_bounds_check() {
        for input in 1..12usize {
            for k in 0..5usize {
                for stride in 1..4usize {
                    for padding in 0..3usize {
                        let Some(out) = out_len(input, k.max(1), stride, padding) else {
                            continue;
                        };
                        let (lo, hi) = window_range(out, stride, k, padding, input);
                        for o in 0..out {
                            let pos = (o * stride + k) as isize - padding as isize;
                            let inside = pos >= 0 && (pos as usize) < input;
                            assert_eq!(inside, o >= lo && o < hi,
                                "input={input} k={k} s={stride} p={padding} o={o}");
                        }
                    }
                }
            }
        }
    }
}
