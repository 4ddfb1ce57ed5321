//! Real branches of the Lambert W function.
//!
//! `W(z)` solves `w * exp(w) = z`. On `[-1/e, 0)` there are two real
//! solutions: the principal branch `W0 >= -1` and the lower branch
//! `W-1 <= -1`. Both are evaluated by Halley iteration from a series guess
//! near the branch point and a logarithmic guess elsewhere.

use std::f64::consts::E;

use crate::error::{Error, Result};

/// The branch point `-1/e`.
pub const BRANCH_POINT: f64 = -1.0 / E;

/// Arguments this far below the branch point are treated as the branch point.
pub const BRANCH_SLACK: f64 = 1e-14;

const MAX_ITER: usize = 20;

/// Principal branch `W0(z)`, `z >= -1/e`.
pub fn lambert_w0(z: f64) -> Result<f64> {
    if z.is_nan() || z < BRANCH_POINT - BRANCH_SLACK {
        return Err(Error::Domain {
            function: "lambert_w0",
            value: z,
        });
    }
    if z <= BRANCH_POINT {
        return Ok(-1.0);
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z.is_infinite() {
        return Ok(f64::INFINITY);
    }

    let p = branch_distance(z);
    let guess = if p < 1e-3 {
        // Six-term series; truncation error O(p^7) is below machine precision.
        return Ok(branch_series(p));
    } else if p < 0.5 {
        branch_series(p)
    } else if z < 3.0 {
        // Winitzki's approximation, accurate to a few percent on this range.
        let l = (1.0 + z).ln();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(z, guess))
}

/// Lower branch `W-1(z)` for `z` in `[-1/e, 0)`.
pub fn lambert_wm1(z: f64) -> Result<f64> {
    if z.is_nan() || z < BRANCH_POINT - BRANCH_SLACK || z >= 0.0 {
        return Err(Error::Domain {
            function: "lambert_wm1",
            value: z,
        });
    }
    if z <= BRANCH_POINT {
        return Ok(-1.0);
    }
    let p = branch_distance(z);
    if p < 1e-3 {
        return Ok(branch_series(-p));
    }
    let guess = if p < 0.5 {
        branch_series(-p)
    } else {
        let l1 = (-z).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(z, guess))
}

/// `z * W'(z) = W / (1 + W)`, the quantity appearing in spike-time derivatives.
pub fn z_dw(w: f64) -> f64 {
    w / (1.0 + w)
}

fn branch_distance(z: f64) -> f64 {
    (2.0 * (E * z + 1.0)).max(0.0).sqrt()
}

fn branch_series(p: f64) -> f64 {
    const C: [f64; 7] = [
        -1.0,
        1.0,
        -1.0 / 3.0,
        11.0 / 72.0,
        -43.0 / 540.0,
        769.0 / 17280.0,
        -221.0 / 8505.0,
    ];
    C.iter().rev().fold(0.0, |acc, c| acc * p + c)
}

fn halley(z: f64, mut w: f64) -> f64 {
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs().max(1.0) {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn residual(w: f64, z: f64) -> f64 {
        (w * w.exp() - z).abs()
    }

    /// Independent check: bisection on w * e^w = z over a bracket.
    fn bisect(z: f64, mut lo: f64, mut hi: f64) -> f64 {
        let f = |w: f64| w * w.exp() - z;
        let increasing = f(hi) > f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == increasing {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn trivial_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lambert_w0(BRANCH_POINT).unwrap(), -1.0);
        assert_eq!(lambert_wm1(BRANCH_POINT).unwrap(), -1.0);
    }

    #[test]
    fn quarter_matches_bisection() {
        // Frozen from bisection over [-1, 0].
        let w = lambert_w0(-0.25).unwrap();
        assert!((w - (-0.357_402_956_181_388_84)).abs() < 1e-14);
        assert!((w - bisect(-0.25, -1.0, 0.0)).abs() < 1e-14);
    }

    #[test]
    fn below_branch_point_is_domain_error() {
        assert!(matches!(
            lambert_w0(BRANCH_POINT - 1e-10),
            Err(Error::Domain { .. })
        ));
        assert!(lambert_w0(f64::NAN).is_err());
        // Inside the slack the branch point is returned.
        assert_eq!(lambert_w0(BRANCH_POINT - 1e-15).unwrap(), -1.0);
    }

    #[test]
    fn near_branch_point_is_accurate() {
        for k in 3..16 {
            let z = BRANCH_POINT + 10f64.powi(-k);
            let w = lambert_w0(z).unwrap();
            assert!(w >= -1.0);
            assert!(residual(w, z) <= 1e-15, "z = {z:e}, residual {}", residual(w, z));
            let wm = lambert_wm1(z).unwrap();
            assert!(wm <= -1.0);
            assert!(residual(wm, z) <= 1e-15);
        }
    }

    #[test]
    fn large_arguments() {
        for z in [10.0, 1e3, 1e10, 1e100, 1e300] {
            let w = lambert_w0(z).unwrap();
            assert!(((w + w.ln()) - z.ln()).abs() <= 1e-12 * z.ln(), "z = {z}");
        }
    }

    #[test]
    fn lower_branch_near_zero() {
        let z = -1e-8;
        let w = lambert_wm1(z).unwrap();
        assert!(w < -20.0);
        assert!(residual(w, z) < 1e-20);
        assert!(lambert_wm1(0.0).is_err());
    }

    #[test]
    fn z_dw_matches_finite_difference() {
        let z = -0.2;
        let h = 1e-7;
        let fd = (lambert_w0(z + h).unwrap() - lambert_w0(z - h).unwrap()) / (2.0 * h);
        let w = lambert_w0(z).unwrap();
        assert!((z * fd - z_dw(w)).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn principal_branch_residual(z in BRANCH_POINT..100.0f64) {
            let w = lambert_w0(z).unwrap();
            prop_assert!(w >= -1.0);
            prop_assert!(residual(w, z) <= 1e-12 * z.abs().max(1.0));
        }

        #[test]
        fn lower_branch_residual(z in BRANCH_POINT..-1e-12f64) {
            let w = lambert_wm1(z).unwrap();
            prop_assert!(w <= -1.0);
            prop_assert!(residual(w, z) <= 1e-12);
        }

        #[test]
        fn principal_branch_matches_bisection(z in BRANCH_POINT + 1e-9..5.0f64) {
            let w = lambert_w0(z).unwrap();
            let reference = bisect(z, -1.0, 2.0);
            prop_assert!((w - reference).abs() <= 1e-9, "{} vs {}", w, reference);
        }
    }
}
