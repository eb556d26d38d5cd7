//! Golden-section maximization of unimodal functions on a closed interval.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Maximum {
    pub arg: f64,
    pub value: f64,
}

/// Maximizes a concave (or unimodal) `f` on `[lo, hi]`.
///
/// The bracket shrinks until its width is at most `tol * (1 + (hi - lo))`.
/// Both endpoints are evaluated as well, so maxima sitting on the boundary
/// are returned exactly. Ties prefer the smaller argument.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Maximum
where
    F: FnMut(f64) -> f64,
{
    let mut best = Maximum {
        arg: lo,
        value: f(lo),
    };
    if !(hi > lo) {
        return best;
    }
    let consider = |arg: f64, value: f64, best: &mut Maximum| {
        if value > best.value || (value == best.value && arg < best.arg) {
            *best = Maximum { arg, value };
        }
    };
    let f_hi = f(hi);
    consider(hi, f_hi, &mut best);

    let width_stop = tol.max(f64::EPSILON) * (1.0 + (hi - lo));
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    // 0.618^200 is far below any representable relative width
    for _ in 0..200 {
        if b - a <= width_stop {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        consider(c, fc, &mut best);
    } else {
        consider(d, fd, &mut best);
    }
    best
}
