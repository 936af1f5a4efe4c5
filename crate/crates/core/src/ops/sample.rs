//! Bilinear sampling with border clamping.

use crate::tensor::Scalar;

/// One bilinear read: the value, the four taps that produced it, and the
/// local slope with respect to the sampling coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap<T> {
    pub value: T,
    pub taps: [(usize, T); 4],
    pub d_row: T,
    pub d_col: T,
}

fn axis<T: Scalar>(pos: T, len: usize) -> (usize, T, bool) {
    let hi = T::lit((len - 1) as f64);
    let clamped = pos < T::zero() || pos > hi;
    let p = pos.max(T::zero()).min(hi);
    if len == 1 {
        return (0, T::zero(), true);
    }
    let base = p.floor().to_usize().unwrap_or(0).min(len - 2);
    (base, p - T::lit(base as f64), clamped)
}

/// Samples `field` (`h x w`, row-major) at fractional `(row, col)`.
///
/// Coordinates are clamped to `[0, h-1] x [0, w-1]`. The coordinate slope is
/// zero along an axis whose coordinate was clamped.
pub fn bilinear_tap<T: Scalar>(field: &[T], h: usize, w: usize, row: T, col: T) -> BilinearTap<T> {
    debug_assert_eq!(field.len(), h * w);
    let (r0, fr, r_clamped) = axis(row, h);
    let (c0, fc, c_clamped) = axis(col, w);
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let one = T::one();
    let idx = [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1];
    let wts = [(one - fr) * (one - fc), (one - fr) * fc, fr * (one - fc), fr * fc];
    let f = [field[idx[0]], field[idx[1]], field[idx[2]], field[idx[3]]];
    let value = wts[0] * f[0] + wts[1] * f[1] + wts[2] * f[2] + wts[3] * f[3];
    let d_row = if r_clamped { T::zero() } else { (one - fc) * (f[2] - f[0]) + fc * (f[3] - f[1]) };
    let d_col = if c_clamped { T::zero() } else { (one - fr) * (f[1] - f[0]) + fr * (f[3] - f[2]) };
    BilinearTap {
        value,
        taps: [(idx[0], wts[0]), (idx[1], wts[1]), (idx[2], wts[2]), (idx[3], wts[3])],
        d_row,
        d_col,
    }
}

pub fn bilinear_sample<T: Scalar>(field: &[T], h: usize, w: usize, row: T, col: T) -> T {
    bilinear_tap(field, h, w, row, col).value
}

#[cfg(test)]
mod tests {
    use super::*;

    const F: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

    #[test]
    fn integer_points_are_exact() {
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(bilinear_sample(&F, 2, 2, i as f64, j as f64), F[i * 2 + j]);
            }
        }
    }

    #[test]
    fn midpoint_averages_corners() {
        assert_eq!(bilinear_sample(&F, 2, 2, 0.5, 0.5), 1.5);
    }

    #[test]
    fn out_of_range_clamps() {
        assert_eq!(bilinear_sample(&F, 2, 2, -5.0, -5.0), 0.0);
        assert_eq!(bilinear_sample(&F, 2, 2, 9.0, 9.0), 3.0);
        let t = bilinear_tap(&F, 2, 2, -5.0, 0.5);
        assert_eq!(t.d_row, 0.0);
        assert_eq!(t.d_col, 1.0);
    }

    #[test]
    fn single_row_field() {
        let f = [1.0, 3.0, 5.0];
        assert_eq!(bilinear_sample(&f, 1, 3, 0.7, 1.5), 4.0);
    }
}
