//! Small numerical kernels shared by the modules: periodic Fourier
//! coefficients, Gauss–Legendre rules, the complex log-Gamma and line fits.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub type C64 = Complex64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// Coefficients `c_m = (1/Q) Σ_j v_j e^{−2πi m j/Q}` for `m = −max..=max`,
/// returned in order of increasing `m`. Requires `Q > 2·max`.
pub fn periodic_coefficients(samples: &[C64], max_mode: usize) -> Vec<C64> {
    let q = samples.len();
    assert!(q > 2 * max_mode, "grid of {q} points cannot resolve mode {max_mode}");
    let mut buf = samples.to_vec();
    forward_plan(q).process(&mut buf);
    let scale = 1.0 / q as f64;
    (-(max_mode as isize)..=max_mode as isize)
        .map(|m| buf[m.rem_euclid(q as isize) as usize] * scale)
        .collect()
}

/// Values `Σ_m c_m e^{2πi m j/Q}` at `j = 0..Q`, for coefficients given as
/// `m = −M..=M` (the inverse of [`periodic_coefficients`]). Requires `Q > 2M`.
pub fn synthesize_uniform(coeffs: &[C64], q: usize) -> Vec<C64> {
    let max_mode = coeffs.len() / 2;
    assert!(q > 2 * max_mode, "grid of {q} points cannot hold mode {max_mode}");
    let mut buf = vec![C64::new(0.0, 0.0); q];
    for (i, c) in coeffs.iter().enumerate() {
        let m = i as isize - max_mode as isize;
        buf[m.rem_euclid(q as isize) as usize] = *c;
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(q)).process(&mut buf);
    buf
}

/// Gauss–Legendre nodes and weights on `[a, b]`, nodes ascending.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(n.try_into().expect("at least one node"));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (mid + half * x, half * w)).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.into_iter().unzip()
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Principal branch of `log Γ(z)` (Lanczos, g = 7), with reflection for
/// `Re z < 1/2`. Only the real part is used by the callers, so the branch of
/// the imaginary part is irrelevant there.
pub fn ln_gamma(z: C64) -> C64 {
    if z.re < 0.5 {
        // Γ(z)Γ(1−z) = π / sin(πz)
        C64::new(PI.ln(), 0.0) - ln_sin_pi(z) - ln_gamma(C64::new(1.0, 0.0) - z)
    } else {
        let z = z - 1.0;
        let mut x = C64::new(LANCZOS[0], 0.0);
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            x += *c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        C64::new(0.5 * (2.0 * PI).ln(), 0.0) + (z + 0.5) * t.ln() - t + x.ln()
    }
}

/// `log sin(πz)` computed without overflow for large `|Im z|`.
fn ln_sin_pi(z: C64) -> C64 {
    let y = PI * z.im;
    if y.abs() < 20.0 {
        (z * PI).sin().ln()
    } else {
        // sin(πz) = (e^{iπz} − e^{−iπz})/(2i); keep the dominant exponential.
        let x = PI * z.re;
        let (sign, dominant) = if y > 0.0 { (-1.0, C64::new(y, -x)) } else { (1.0, C64::new(-y, x)) };
        let rest = (C64::new(1.0, 0.0) - (C64::new(-2.0 * y.abs(), -2.0 * sign * x)).exp()).ln();
        dominant + rest - C64::new(2f64.ln(), 0.0) - C64::new(0.0, sign * 0.5 * PI)
    }
}

/// `log B(x, y)` for complex arguments.
pub fn ln_beta(x: C64, y: C64) -> C64 {
    ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Smallest power of two that is at least `n`.
pub fn pow2_at_least(n: usize) -> usize {
    n.max(1).next_power_of_two()
}
