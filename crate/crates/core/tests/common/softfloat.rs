//! Bit-level IEEE-754 binary arithmetic on integers.
//!
//! Values are exact `±mant·2^exp` with arbitrary `u128` significands; each
//! operation is carried out exactly (or with a sticky bit) and rounded once,
//! to nearest with ties to even, including gradual underflow and overflow.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Format {
    /// Significand bits including the hidden bit.
    pub p: i32,
    pub emin: i32,
    pub emax: i32,
}

pub const HALF: Format = Format {
    p: 11,
    emin: -14,
    emax: 15,
};
pub const SINGLE: Format = Format {
    p: 24,
    emin: -126,
    emax: 127,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Val {
    Nan,
    Inf(bool),
    Fin { neg: bool, mant: u128, exp: i32 },
}

use Val::*;

fn bits(m: u128) -> i32 {
    128 - m.leading_zeros() as i32
}

fn fin(neg: bool, mut mant: u128, mut exp: i32) -> Val {
    if mant == 0 {
        return Fin {
            neg,
            mant: 0,
            exp: 0,
        };
    }
    let tz = mant.trailing_zeros();
    mant >>= tz;
    exp += tz as i32;
    Fin { neg, mant, exp }
}

/// Exact value of an `f64`.
pub fn decode(x: f64) -> Val {
    let b = x.to_bits();
    let neg = b >> 63 == 1;
    let e = ((b >> 52) & 0x7ff) as i32;
    let f = (b & ((1u64 << 52) - 1)) as u128;
    match e {
        0x7ff if f == 0 => Inf(neg),
        0x7ff => Nan,
        0 => fin(neg, f, -1074),
        _ => fin(neg, f | (1 << 52), e - 1075),
    }
}

/// The `f64` holding `v`; `v` must be representable.
pub fn encode(v: Val) -> f64 {
    match v {
        Nan => f64::NAN,
        Inf(neg) => {
            if neg {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        }
        Fin { neg, mant, exp } => {
            assert!(bits(mant) <= 53, "significand too wide for f64");
            let mag = mant as f64 * 2f64.powi(exp);
            if neg {
                -mag
            } else {
                mag
            }
        }
    }
}

/// Rounds `±(mant + sticky·δ)·2^exp` to `fmt`, where `sticky` marks a
/// nonzero tail below the last bit of `mant`.
pub fn round(neg: bool, mant: u128, exp: i32, sticky: bool, fmt: Format) -> Val {
    if mant == 0 {
        assert!(!sticky, "sticky tail without guard bits");
        return fin(neg, 0, 0);
    }
    let qmin = fmt.emin - (fmt.p - 1);
    let q = (exp + bits(mant) - fmt.p).max(qmin);
    let (r, q) = if q <= exp {
        assert!(!sticky, "sticky tail without guard bits");
        (mant << (exp - q), q)
    } else {
        let shift = (q - exp) as u32;
        let (r, rem) = if shift >= 128 {
            (0, mant)
        } else {
            (mant >> shift, mant & ((1u128 << shift) - 1))
        };
        let up = match shift {
            s if s > 128 => false,
            s => {
                let half = 1u128 << (s - 1);
                rem > half || (rem == half && (sticky || r & 1 == 1))
            }
        };
        let r = r + up as u128;
        if r == 1u128 << fmt.p {
            (r >> 1, q + 1)
        } else {
            (r, q)
        }
    };
    if r != 0 && q > fmt.emax - fmt.p + 1 {
        return Inf(neg);
    }
    fin(neg, r, q)
}

pub fn to_format(x: f64, fmt: Format) -> f64 {
    match decode(x) {
        Fin { neg, mant, exp } => encode(round(neg, mant, exp, false, fmt)),
        v => encode(v),
    }
}

pub fn mul(a: Val, b: Val, fmt: Format) -> Val {
    match (a, b) {
        (Nan, _) | (_, Nan) => Nan,
        (Inf(_), Fin { mant: 0, .. }) | (Fin { mant: 0, .. }, Inf(_)) => Nan,
        (Inf(x), Inf(y)) | (Inf(x), Fin { neg: y, .. }) | (Fin { neg: x, .. }, Inf(y)) => {
            Inf(x ^ y)
        }
        (
            Fin {
                neg: sa,
                mant: ma,
                exp: ea,
            },
            Fin {
                neg: sb,
                mant: mb,
                exp: eb,
            },
        ) => round(sa ^ sb, ma * mb, ea + eb, false, fmt),
    }
}

pub fn add(a: Val, b: Val, fmt: Format) -> Val {
    match (a, b) {
        (Nan, _) | (_, Nan) => Nan,
        (Inf(x), Inf(y)) => {
            if x == y {
                Inf(x)
            } else {
                Nan
            }
        }
        (Inf(x), _) | (_, Inf(x)) => Inf(x),
        (
            Fin {
                neg: sa, mant: 0, ..
            },
            Fin {
                neg: sb, mant: 0, ..
            },
        ) => fin(sa && sb, 0, 0),
        (Fin { mant: 0, .. }, Fin { neg, mant, exp })
        | (Fin { neg, mant, exp }, Fin { mant: 0, .. }) => round(neg, mant, exp, false, fmt),
        (
            Fin {
                neg: sa,
                mant: ma,
                exp: ea,
            },
            Fin {
                neg: sb,
                mant: mb,
                exp: eb,
            },
        ) => {
            let (top_a, top_b) = (ea + bits(ma), eb + bits(mb));
            let a_larger = match top_a.cmp(&top_b) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => {
                    let e = ea.min(eb);
                    (ma << (ea - e)) >= (mb << (eb - e))
                }
            };
            let ((sl, ml, el), (ss, ms, es)) = if a_larger {
                ((sa, ma, ea), (sb, mb, eb))
            } else {
                ((sb, mb, eb), (sa, ma, ea))
            };
            // common grid, keeping at most 120 bits of the larger operand
            let g = ea.min(eb).max(el + bits(ml) - 120);
            let l = ml << (el - g);
            let (small, sticky) = if es >= g {
                (ms << (es - g), false)
            } else {
                let sh = (g - es) as u32;
                if sh >= 128 {
                    (0, true)
                } else {
                    (ms >> sh, ms & ((1u128 << sh) - 1) != 0)
                }
            };
            if sl == ss {
                round(sl, l + small, g, sticky, fmt)
            } else {
                let d = l - small - sticky as u128;
                if d == 0 && !sticky {
                    fin(false, 0, 0)
                } else {
                    round(sl, d, g, sticky, fmt)
                }
            }
        }
    }
}

pub fn div(a: Val, b: Val, fmt: Format) -> Val {
    match (a, b) {
        (
            Fin {
                neg: sa,
                mant: ma,
                exp: ea,
            },
            Fin {
                neg: sb,
                mant: mb,
                exp: eb,
            },
        ) if mb != 0 => {
            if ma == 0 {
                return fin(sa ^ sb, 0, 0);
            }
            let shift = 120 - bits(ma);
            let num = ma << shift;
            let (q, r) = (num / mb, num % mb);
            round(sa ^ sb, q, ea - eb - shift, r != 0, fmt)
        }
        _ => panic!("div oracle covers finite operands with a nonzero divisor"),
    }
}

pub fn sqrt(a: Val, fmt: Format) -> Val {
    match a {
        Fin { mant: 0, .. } => a,
        Fin {
            neg: false,
            mant,
            exp,
        } => {
            let mut s = 120 - bits(mant);
            if (exp - s) % 2 != 0 {
                s += 1;
            }
            let m = mant << s;
            let mut r = (m as f64).sqrt() as u128;
            while r * r > m {
                r -= 1;
            }
            while (r + 1) * (r + 1) <= m {
                r += 1;
            }
            round(false, r, (exp - s) / 2, r * r != m, fmt)
        }
        Inf(false) => a,
        _ => Nan,
    }
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits()
}

/// Sequential dot product: products rounded to `compute`, each partial sum
/// to `accumulate`.
pub fn dot(x: &[f64], y: &[f64], compute: Format, accumulate: Format) -> f64 {
    let mut acc = fin(false, 0, 0);
    for (&a, &b) in x.iter().zip(y) {
        let p = mul(decode(a), decode(b), compute);
        acc = add(acc, p, accumulate);
    }
    encode(acc)
}

/// `‖x‖∞ · sqrt(Σ (x_i/‖x‖∞)²)` with the same rounding points as the
/// library's overflow-safe norm.
pub fn scaled_norm(x: &[f64], compute: Format, accumulate: Format) -> f64 {
    let m = max_abs(x);
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    let mv = decode(m);
    let scaled: Vec<f64> = x
        .iter()
        .map(|&v| encode(div(decode(v), mv, compute)))
        .collect();
    let s = dot(&scaled, &scaled, compute, accumulate);
    let root = sqrt(decode(s), accumulate);
    encode(mul(mv, root, compute))
}
