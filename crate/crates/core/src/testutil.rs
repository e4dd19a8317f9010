//! Independent quadrature oracle for unit tests.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return val;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth - 1) + adaptive(f, m, b, 0.5 * tol, depth - 1)
}

/// `∫_a^b f` by adaptive Gauss–Kronrod (7/15).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive(&f, a, b, tol, 40)
}

/// `∫_0^∞ f` over geometrically growing panels until two consecutive panels
/// contribute below `tol` relative to the running total.
pub fn integrate_half_line(f: impl Fn(f64) -> f64, tol: f64) -> f64 {
    let mut total = integrate(&f, 0.0, 1.0, tol);
    let mut lo = 1.0;
    let mut quiet = 0;
    while quiet < 2 && lo < 1e6 {
        let hi = 2.0 * lo;
        let part = integrate(&f, lo, hi, tol * total.abs().max(1e-300));
        total += part;
        quiet = if part.abs() <= tol * total.abs() { quiet + 1 } else { 0 };
        lo = hi;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_sanity() {
        assert!((integrate_half_line(|x| (-x).exp(), 1e-14) - 1.0).abs() < 1e-13);
        assert!((integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-14) - 2.0).abs() < 1e-13);
        let g = integrate_half_line(|x: f64| x.powi(4) * (-2.0 * x).exp(), 1e-14);
        assert!((g - 24.0 / 32.0).abs() < 1e-13);
    }
}
