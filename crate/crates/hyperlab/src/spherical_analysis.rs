//! Spherical functions, the c-function, the Plancherel grid, and the
//! spherical and Helgason transforms on the hyperbolic plane `X = G/K`.
//!
//! Haar measure on `G` is normalized so that for right-`K`-invariant `F`,
//! `∫_G F = 2∫₀^π∫₀^∞ F(k_θ a_t) sinh t dt dθ`, the hyperbolic area of `X`.
//! Under this normalization the spherical transform is
//! `f̂(r) = 2π∫₀^∞ f(a_t) φ_r(a_t) sinh t dt`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary_operators::FourierTruncation;
use crate::numerics::{gauss_legendre, ln_beta, periodic_coefficients, pow2_at_least, C64};
use crate::rank_one_group::{cartan, polar_coordinates, sym_space_distance, GroupElement};

/// Global constant in `f = C ∫₀^∞ f̂(r) φ_r |c(r)|⁻² dr` under the Haar
/// normalization above. Obtained by round-trip calibration on a reference
/// Gaussian bump (see the tests) and frozen; it agrees with `1/(2π²)`.
pub const PLANCHEREL_CONSTANT: f64 = 0.050_660_591_821_168_89;

/// Default node count for radial Gauss–Legendre rules.
pub const RADIAL_NODES: usize = 96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("coefficient norm {norm} at r = {r} exceeds the L¹ norm {l1}")]
    L1Bound { r: f64, norm: f64, l1: f64 },
    #[error("series for the Legendre function does not converge at z = {0}")]
    SeriesDivergence(f64),
    #[error("grid has {grid} nodes but the coefficients have {coeffs}")]
    GridMismatch { grid: usize, coeffs: usize },
}

/// Root data entering the c-function of a rank-one group, with every linear
/// form written as a multiple of the frequency parameter `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootData {
    /// Indivisible positive roots: `(multiplicity, ⟨·, r_ℓ⟩/⟨r_ℓ, r_ℓ⟩ per unit r)`.
    pub indivisible: Vec<(f64, f64)>,
    /// Remaining positive roots: `(multiplicity, multiplicity of r_ℓ/2, scale)`.
    pub divisible: Vec<(f64, f64, f64)>,
    /// The half-sum `δ` as a multiple of the unit frequency.
    pub delta: f64,
}

impl RootData {
    pub fn sl2() -> Self {
        Self { indivisible: vec![(1.0, 1.0)], divisible: vec![], delta: 0.5 }
    }

    /// `log I(z)` for a complex frequency `z`.
    pub fn ln_i(&self, z: C64) -> C64 {
        let a: C64 = self.indivisible.iter().map(|(m, s)| ln_beta(C64::new(0.5 * m, 0.0), z * s)).sum();
        let b: C64 = self
            .divisible
            .iter()
            .map(|(m, half, s)| ln_beta(C64::new(0.5 * m, 0.0), C64::new(0.25 * half, 0.0) + z * s))
            .sum();
        a + b
    }

    /// `|c(r)|⁻² = |I(δ)/I(ir)|²`, with the value 0 at the pole `r = 0`.
    pub fn c_inverse_sq(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let num = self.ln_i(C64::new(self.delta, 0.0)).re;
        let den = self.ln_i(C64::new(0.0, r)).re;
        (2.0 * (num - den)).exp()
    }
}

/// `|c(r)|⁻²` for `SL(2,R)`.
pub fn c_inverse_sq(r: f64) -> f64 {
    RootData::sl2().c_inverse_sq(r)
}

/// `log(e^{−t}cos²ψ + e^{t}sin²ψ) = H(a_t⁻¹ k_ψ)`.
fn horocycle_profile(t: f64, psi: f64) -> f64 {
    let (s, c) = psi.sin_cos();
    ((-t).exp() * c * c + t.exp() * s * s).ln()
}

/// Grid size for `ψ ↦ exp(−s·H(a_t⁻¹k_ψ))`: the kernel peaks on a scale
/// `e^{−t}` near `ψ = 0` and oscillates at local frequency about `|Im s|·e^t`.
fn kernel_grid(t: f64, im: f64, max_mode: usize) -> usize {
    pow2_at_least((8.0 * (1.0 + im.abs()) * t.abs().exp()) as usize + 8 * max_mode + 64)
}

/// Ω-mode coefficients, `m = −max..=max`, of `ψ ↦ exp(−s·H(a_t⁻¹k_ψ))`.
pub fn horocycle_kernel_modes(s: C64, t: f64, max_mode: usize) -> Vec<C64> {
    let q = kernel_grid(t, s.im, max_mode);
    let samples: Vec<C64> = (0..q).map(|j| (-s * horocycle_profile(t, PI * j as f64 / q as f64)).exp()).collect();
    periodic_coefficients(&samples, max_mode)
}

/// `φ_r(a_t) = (1/π)∫₀^π e^{−(1/2+ir)H(a_t⁻¹k_θ)} dθ`.
pub fn spherical_function(r: f64, t: f64) -> f64 {
    let q = kernel_grid(t, r, 0);
    let s = C64::new(0.5, r);
    let sum: C64 = (0..q).map(|j| (-s * horocycle_profile(t, PI * j as f64 / q as f64)).exp()).sum();
    sum.re / q as f64
}

/// `P_ν(z)` for `z ≥ 1` from the hypergeometric series
/// `₂F₁(−ν, ν+1; 1; (1−z)/2)`, summed until terms fall below `1e−17`.
pub fn legendre_function_series(nu: C64, z: f64) -> Result<C64, TransformError> {
    let x = 0.5 * (1.0 - z);
    if x.abs() >= 0.95 {
        return Err(TransformError::SeriesDivergence(z));
    }
    let (a, b) = (-nu, nu + 1.0);
    let mut term = C64::new(1.0, 0.0);
    let mut sum = term;
    for k in 0..10_000 {
        let k = k as f64;
        term *= (a + k) * (b + k) / ((k + 1.0) * (k + 1.0)) * x;
        sum += term;
        if term.norm() < 1e-17 * sum.norm() {
            return Ok(sum);
        }
    }
    Err(TransformError::SeriesDivergence(z))
}

/// Gauss–Legendre frequency nodes with weights `quadrature × |c(r)|⁻² × C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlancherelGrid {
    pub r_nodes: Vec<f64>,
    pub r_weights: Vec<f64>,
    pub r_max: f64,
    pub constant: f64,
}

impl PlancherelGrid {
    /// Panels `[0, b₁], [b₁, b₂], …` with the given node counts.
    pub fn panels(breaks: &[f64], nodes: &[usize], constant: f64) -> Result<Self, TransformError> {
        if breaks.len() != nodes.len() || breaks.windows(2).any(|w| w[1] <= w[0]) || breaks.first().is_none_or(|b| *b <= 0.0) {
            return Err(TransformError::Parameter("panel breaks must be positive and increasing".into()));
        }
        let mut r_nodes = Vec::new();
        let mut r_weights = Vec::new();
        let mut lo = 0.0;
        for (hi, n) in breaks.iter().zip(nodes) {
            let (x, w) = gauss_legendre(*n, lo, *hi);
            r_weights.extend(x.iter().zip(&w).map(|(r, w)| w * c_inverse_sq(*r) * constant));
            r_nodes.extend(x);
            lo = *hi;
        }
        Ok(Self { r_nodes, r_weights, r_max: lo, constant })
    }

    pub fn len(&self) -> usize {
        self.r_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_nodes.is_empty()
    }
}

/// Single-panel grid on `[0, r_max]` with the frozen constant.
pub fn plancherel_grid(r_max: f64, nodes: usize) -> Result<PlancherelGrid, TransformError> {
    if !(r_max > 0.0) || nodes < 64 {
        return Err(TransformError::Parameter(format!("need r_max > 0 and at least 64 nodes (got {r_max}, {nodes})")));
    }
    PlancherelGrid::panels(&[r_max], &[nodes], PLANCHEREL_CONSTANT)
}

/// Transform coefficients `f̂_m(r_i) = ⟨f̂(r_i, ·), e_m⟩` on Ω-modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelgasonCoefficients {
    pub r_nodes: Vec<f64>,
    /// `values[i][m + N]`.
    pub values: Vec<Vec<C64>>,
    pub max_mode: usize,
}

impl HelgasonCoefficients {
    pub fn mode(&self, i: usize, m: isize) -> C64 {
        let idx = m + self.max_mode as isize;
        if idx < 0 || idx as usize >= self.values[i].len() {
            C64::new(0.0, 0.0)
        } else {
            self.values[i][idx as usize]
        }
    }

    /// `‖f̂(r_i, ·)‖_{L²(Ω)}` per node.
    pub fn node_norms(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()).collect()
    }

    pub fn zeros(r_nodes: &[f64], max_mode: usize) -> Self {
        Self { r_nodes: r_nodes.to_vec(), values: vec![vec![C64::new(0.0, 0.0); 2 * max_mode + 1]; r_nodes.len()], max_mode }
    }

    pub fn truncation(&self) -> FourierTruncation {
        FourierTruncation::boundary(self.max_mode)
    }
}

/// Test functions on `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctionX {
    /// `exp(−d(x, h·o)²/(2w²))`.
    Gaussian { center: GroupElement, width: f64 },
    /// Synthesized from stored coefficients that vanish for `r > cutoff`.
    BandLimited { coeffs: HelgasonCoefficients, grid: PlancherelGrid, cutoff: f64 },
}

impl TestFunctionX {
    pub fn gaussian(center: GroupElement, width: f64) -> Result<Self, TransformError> {
        if !(width > 0.0) {
            return Err(TransformError::Parameter(format!("width must be positive, got {width}")));
        }
        Ok(Self::Gaussian { center, width })
    }

    /// Gaussian bump centered at `k_θ a_D·o`.
    pub fn gaussian_at(theta: f64, distance: f64, width: f64) -> Result<Self, TransformError> {
        Self::gaussian(GroupElement::rotation(theta) * GroupElement::diagonal(distance), width)
    }

    pub fn is_radial(&self) -> bool {
        match self {
            Self::Gaussian { center, .. } => cartan(center).t < 1e-14,
            Self::BandLimited { coeffs, .. } => {
                coeffs.values.iter().all(|v| v.iter().enumerate().all(|(i, c)| i == coeffs.max_mode || *c == C64::new(0.0, 0.0)))
            }
        }
    }

    /// Value at `g·o`.
    pub fn eval(&self, g: &GroupElement) -> f64 {
        match self {
            Self::Gaussian { center, width } => {
                let d = sym_space_distance(g, center);
                (-0.5 * d * d / (width * width)).exp()
            }
            Self::BandLimited { coeffs, grid, .. } => inverse_transform(coeffs, grid, std::slice::from_ref(g)).map(|v| v[0]).unwrap_or(f64::NAN),
        }
    }

    /// Radius around `o` outside which the function is negligible, when it has one.
    pub fn radial_extent(&self) -> Option<f64> {
        match self {
            Self::Gaussian { center, width } => Some(cartan(center).t + 8.0 * width),
            Self::BandLimited { .. } => None,
        }
    }
}

/// Radial profile `f(a_t)` for a radial test function.
fn radial_profile(f: &TestFunctionX, ts: &[f64]) -> Vec<f64> {
    ts.iter().map(|t| f.eval(&GroupElement::diagonal(*t))).collect()
}

/// `f̂(r) = 2π∫₀^{t_max} f(a_t) φ_r(a_t) sinh t dt` at each grid node.
pub fn spherical_transform(f: &TestFunctionX, grid: &PlancherelGrid) -> Result<Vec<f64>, TransformError> {
    if !f.is_radial() {
        return Err(TransformError::Parameter("spherical transform needs a radial function".into()));
    }
    if let TestFunctionX::BandLimited { coeffs, .. } = f {
        return Ok((0..coeffs.r_nodes.len()).map(|i| coeffs.mode(i, 0).re).collect());
    }
    let t_max = f.radial_extent().expect("gaussian");
    let (ts, wt) = gauss_legendre(RADIAL_NODES + (4.0 * grid.r_max * t_max / PI) as usize, 0.0, t_max);
    let prof = radial_profile(f, &ts);
    Ok(grid
        .r_nodes
        .par_iter()
        .map(|r| 2.0 * PI * ts.iter().zip(&wt).zip(&prof).map(|((t, w), p)| w * p * t.sinh() * spherical_function(*r, *t)).sum::<f64>())
        .collect())
}

/// Radial quadrature nodes for a test function with finite extent.
fn radial_rule(t_max: f64, r_max: f64) -> (Vec<f64>, Vec<f64>) {
    gauss_legendre(RADIAL_NODES + (4.0 * r_max * t_max / PI) as usize, 0.0, t_max)
}

/// Ω-mode coefficients of `θ ↦ f(k_θ a_t·o)`.
fn angular_modes(f: &TestFunctionX, t: f64, width: f64, max_mode: usize) -> Vec<C64> {
    let q = pow2_at_least(8 * max_mode + (12.0 * t.sinh() / width) as usize + 64);
    let samples: Vec<C64> = (0..q)
        .map(|j| C64::new(f.eval(&(GroupElement::rotation(PI * j as f64 / q as f64) * GroupElement::diagonal(t))), 0.0))
        .collect();
    periodic_coefficients(&samples, max_mode)
}

/// `f̂_m(r) = 2π∫ sinh t · F_{t,m} · P_{r,t,m} dt`, where `F_{t,m}` are the
/// angular modes of `f` on the circle of radius `t` and `P_{r,t,m}` those of
/// the kernel `e^{−(1/2−ir)H(a_t⁻¹k_ψ)}`.
pub fn helgason_transform(f: &TestFunctionX, grid: &PlancherelGrid, max_mode: usize) -> Result<HelgasonCoefficients, TransformError> {
    let (width, t_max) = match f {
        TestFunctionX::BandLimited { coeffs, .. } => return Ok(coeffs.clone()),
        TestFunctionX::Gaussian { width, .. } => (*width, f.radial_extent().expect("gaussian")),
    };
    let modes = if f.is_radial() { 0 } else { max_mode };
    let (ts, wt) = radial_rule(t_max, grid.r_max);
    let per_t: Vec<Vec<Vec<C64>>> = ts
        .par_iter()
        .zip(&wt)
        .map(|(t, w)| {
            let ft = angular_modes(f, *t, width, modes);
            let scale = 2.0 * PI * w * t.sinh();
            grid.r_nodes
                .iter()
                .map(|r| {
                    let p = horocycle_kernel_modes(C64::new(0.5, -r), *t, modes);
                    ft.iter().zip(&p).map(|(a, b)| a * b * scale).collect()
                })
                .collect()
        })
        .collect();
    let mut out = HelgasonCoefficients::zeros(&grid.r_nodes, max_mode);
    // fixed reduction order over t
    for contrib in &per_t {
        for (row, c) in out.values.iter_mut().zip(contrib) {
            for (k, v) in c.iter().enumerate() {
                row[k + max_mode - modes] += v;
            }
        }
    }
    let l1 = norms(f, None, 0.0)?.l1;
    for (r, norm) in out.r_nodes.iter().zip(out.node_norms()) {
        if norm > l1 * (1.0 + 1e-6) {
            return Err(TransformError::L1Bound { r: *r, norm, l1 });
        }
    }
    Ok(out)
}

/// Complex synthesis `Σ_i w_i Σ_m f̂_m(r_i) e^{2imθ} B_{r_i,t,−m}` at each
/// point, where `g·o = k_θ a_t·o` and `B` holds the modes of
/// `e^{−(1/2+ir)H(a_t⁻¹k_ψ)}`. Points sharing a radius share kernels.
pub fn inverse_transform_complex(coeffs: &HelgasonCoefficients, grid: &PlancherelGrid, points: &[GroupElement]) -> Result<Vec<C64>, TransformError> {
    if coeffs.r_nodes.len() != grid.len() {
        return Err(TransformError::GridMismatch { grid: grid.len(), coeffs: coeffs.r_nodes.len() });
    }
    let n = coeffs.max_mode;
    let polar: Vec<(f64, f64)> = points.iter().map(polar_coordinates).collect();
    let mut radii: Vec<f64> = polar.iter().map(|p| p.1).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let active: Vec<usize> = (0..grid.len()).filter(|i| coeffs.values[*i].iter().any(|c| *c != C64::new(0.0, 0.0))).collect();
    // per radius: Σ_i w_i f̂_m(r_i) B_{r_i,t,−m} for each m
    let per_radius: Vec<Vec<C64>> = radii
        .par_iter()
        .map(|t| {
            let mut acc = vec![C64::new(0.0, 0.0); 2 * n + 1];
            for &i in &active {
                let b = horocycle_kernel_modes(C64::new(0.5, grid.r_nodes[i]), *t, n);
                for (k, a) in acc.iter_mut().enumerate() {
                    // mode m = k − n pairs with B at −m, i.e. index 2n − k
                    *a += grid.r_weights[i] * coeffs.values[i][k] * b[2 * n - k];
                }
            }
            acc
        })
        .collect();
    Ok(polar
        .iter()
        .map(|(theta, t)| {
            let j = radii.binary_search_by(|x| x.total_cmp(t)).expect("radius present");
            per_radius[j]
                .iter()
                .enumerate()
                .map(|(k, a)| a * C64::from_polar(1.0, 2.0 * (k as f64 - n as f64) * theta))
                .sum()
        })
        .collect())
}

/// Real part of [`inverse_transform_complex`].
pub fn inverse_transform(coeffs: &HelgasonCoefficients, grid: &PlancherelGrid, points: &[GroupElement]) -> Result<Vec<f64>, TransformError> {
    Ok(inverse_transform_complex(coeffs, grid, points)?.into_iter().map(|z| z.re).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    pub l1: f64,
    /// `∫|f|(1 + d(x,o)²)`.
    pub star: f64,
    /// `Σ_i w_i (1+r_i²)^s ‖f̂(r_i,·)‖²`, when coefficients were supplied.
    pub sobolev: Option<f64>,
    /// Set when the integrals were cut at a finite radius around `o`.
    pub truncated_at: Option<f64>,
}

/// Radius of the ball used for functions without a finite extent.
pub const BAND_LIMITED_BALL: f64 = 10.0;

/// `∫_X F dA` over polar coordinates `x = h k_θ a_t·o`, `t ≤ t_max`.
pub fn integrate_polar<F: Fn(&GroupElement) -> f64 + Sync>(center: &GroupElement, t_max: f64, radial_nodes: usize, angular_nodes: usize, integrand: F) -> f64 {
    let (ts, wt) = gauss_legendre(radial_nodes, 0.0, t_max);
    let dtheta = PI / angular_nodes as f64;
    ts.par_iter()
        .zip(&wt)
        .map(|(t, w)| {
            let ring: f64 = (0..angular_nodes)
                .map(|j| integrand(&(*center * GroupElement::rotation(dtheta * j as f64) * GroupElement::diagonal(*t))))
                .sum();
            2.0 * w * t.sinh() * ring * dtheta
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// `‖f‖₁`, `‖f‖*` and optionally the Sobolev sum from coefficients.
pub fn norms(f: &TestFunctionX, coeffs: Option<(&HelgasonCoefficients, &PlancherelGrid)>, s: f64) -> Result<Norms, TransformError> {
    let (l1, star, truncated_at) = match f {
        TestFunctionX::Gaussian { center, width } => {
            let t_max = 8.0 * width;
            // radial about the bump's own center
            let (ts, wt) = gauss_legendre(200, 0.0, t_max);
            let l1 = 2.0 * PI * ts.iter().zip(&wt).map(|(t, w)| w * (-0.5 * t * t / (width * width)).exp() * t.sinh()).sum::<f64>();
            let star = integrate_polar(center, t_max, 96, 128, |x| {
                let d = cartan(x).t;
                f.eval(x) * (1.0 + d * d)
            });
            (l1, star, None)
        }
        TestFunctionX::BandLimited { .. } => {
            let radius = BAND_LIMITED_BALL;
            let (ts, wt) = gauss_legendre(160, 0.0, radius);
            let angular = if f.is_radial() { 1 } else { 64 };
            let pts: Vec<GroupElement> = ts
                .iter()
                .flat_map(|t| (0..angular).map(move |j| GroupElement::rotation(PI * j as f64 / angular as f64) * GroupElement::diagonal(*t)))
                .collect();
            let vals = match f {
                TestFunctionX::BandLimited { coeffs, grid, .. } => inverse_transform(coeffs, grid, &pts)?,
                _ => unreachable!(),
            };
            let (mut l1, mut star) = (0.0, 0.0);
            for (i, (t, w)) in ts.iter().zip(&wt).enumerate() {
                let ring: f64 = vals[i * angular..(i + 1) * angular].iter().map(|v| v.abs()).sum::<f64>() * PI / angular as f64;
                l1 += 2.0 * w * t.sinh() * ring;
                star += 2.0 * w * t.sinh() * ring * (1.0 + t * t);
            }
            (l1, star, Some(radius))
        }
    };
    let sobolev = coeffs.map(|(c, grid)| {
        c.node_norms()
            .iter()
            .zip(&grid.r_weights)
            .zip(&grid.r_nodes)
            .map(|((n, w), r)| w * (1.0 + r * r).powf(s) * n * n)
            .sum()
    });
    Ok(Norms { l1, star, sobolev, truncated_at })
}

/// Smooth profile `exp(1 − 1/(1 − x²))` on `|x| < 1`, zero outside.
pub fn smooth_cutoff(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

/// Band-limited test function with `f̂_m(r) = smooth_cutoff(r/R)·a_m`, where
/// `mode_profile[m + N] = a_m`.
pub fn bandlimited_bump(cutoff: f64, mode_profile: &[C64], grid: &PlancherelGrid) -> Result<TestFunctionX, TransformError> {
    if !(cutoff > 0.0) || mode_profile.len() % 2 == 0 {
        return Err(TransformError::Parameter("need R > 0 and an odd-length mode profile".into()));
    }
    let max_mode = mode_profile.len() / 2;
    let values = grid.r_nodes.iter().map(|r| mode_profile.iter().map(|a| a * smooth_cutoff(r / cutoff)).collect()).collect();
    let coeffs = HelgasonCoefficients { r_nodes: grid.r_nodes.clone(), values, max_mode };
    Ok(TestFunctionX::BandLimited { coeffs, grid: grid.clone(), cutoff })
}

/// Least-squares multiplicative constant `C` such that the inversion with
/// `C` reproduces `f` on `points`, starting from a grid with constant 1.
pub fn calibrate_plancherel_constant(f: &TestFunctionX, r_max: f64, nodes: usize, max_mode: usize, points: &[GroupElement]) -> Result<f64, TransformError> {
    let unit = PlancherelGrid::panels(&[r_max], &[nodes], 1.0)?;
    let coeffs = helgason_transform(f, &unit, max_mode)?;
    let synth = inverse_transform(&coeffs, &unit, points)?;
    let truth: Vec<f64> = points.iter().map(|p| f.eval(p)).collect();
    let num: f64 = synth.iter().zip(&truth).map(|(s, t)| s * t).sum();
    let den: f64 = synth.iter().map(|s| s * s).sum();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_function_closed_form() {
        for i in 0..=500 {
            let r = 0.1 * i as f64;
            let closed = PI * r * (PI * r).tanh();
            assert!((c_inverse_sq(r) - closed).abs() <= 1e-10 * closed.max(1e-300), "r = {r}");
        }
        // π·tanh(π), reference value from mpmath
        assert!((c_inverse_sq(1.0) - 3.129_881_035_631_76).abs() < 1e-12);
        assert_eq!(c_inverse_sq(0.0), 0.0);
    }

    #[test]
    fn c_function_small_r_coefficient() {
        let r = 1e-4;
        assert!((c_inverse_sq(r) / (r * r) - PI * PI).abs() < 1e-5);
    }

    #[test]
    fn spherical_function_basics() {
        for r in [0.0, 0.7, 5.0] {
            assert!((spherical_function(r, 0.0) - 1.0).abs() < 1e-15);
        }
        let oracle = legendre_function_series(C64::new(-0.5, 0.0), 1f64.cosh()).unwrap();
        assert!((spherical_function(0.0, 1.0) - oracle.re).abs() < 1e-10);
        // P_{−1/2}(cosh 1), reference value from mpmath
        assert!((oracle.re - 0.940_862_159_249_35).abs() < 1e-12);
        // the series cancels badly once r·t is large, so stay where it is exact
        for (r, t) in [(0.3, 0.2), (0.3, 1.5), (2.0, 0.9), (2.0, 1.5), (9.0, 0.2), (9.0, 0.9)] {
            let o = legendre_function_series(C64::new(-0.5, r), f64::cosh(t)).unwrap();
            assert!((spherical_function(r, t) - o.re).abs() < 1e-10 && o.im.abs() < 1e-10);
            assert!((spherical_function(-r, t) - spherical_function(r, t)).abs() < 1e-12);
        }
        // mpmath reference beyond the series' reach
        assert!((spherical_function(9.0, 1.5) - 0.180_627_163_820_999).abs() < 1e-12);
    }

    #[test]
    fn spherical_modulus_bound() {
        for i in 0..20 {
            let t = 0.4 * i as f64;
            let p0 = spherical_function(0.0, t);
            for j in 0..20 {
                assert!(spherical_function(0.5 * j as f64, t).abs() <= p0 + 1e-12);
            }
        }
    }

    #[test]
    fn kernel_grid_is_converged() {
        for (r, t) in [(0.0, 3.0), (20.0, 4.5), (5.0, 6.0)] {
            let s = C64::new(0.5, r);
            let coarse = horocycle_kernel_modes(s, t, 16);
            let q = 4 * kernel_grid(t, r, 16);
            let samples: Vec<C64> = (0..q).map(|j| (-s * horocycle_profile(t, PI * j as f64 / q as f64)).exp()).collect();
            let fine = periodic_coefficients(&samples, 16);
            let err = coarse.iter().zip(&fine).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "r = {r}, t = {t}: {err}");
            // mode 0 is the spherical function
            assert!((coarse[16].re - spherical_function(r, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_basics() {
        let g = plancherel_grid(20.0, 128).unwrap();
        assert!(g.r_weights.iter().all(|w| *w >= 0.0));
        assert!(plancherel_grid(20.0, 32).is_err());
        let split = PlancherelGrid::panels(&[0.5, 20.0], &[64, 64], PLANCHEREL_CONSTANT).unwrap();
        assert_eq!(split.len(), 128);
        assert!(split.r_nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn radial_transform_is_mode_zero() {
        let f = TestFunctionX::gaussian(GroupElement::identity(), 0.5).unwrap();
        let grid = PlancherelGrid::panels(&[6.0], &[16], PLANCHEREL_CONSTANT).unwrap();
        let sph = spherical_transform(&f, &grid).unwrap();
        let hel = helgason_transform(&f, &grid, 4).unwrap();
        for (i, v) in sph.iter().enumerate() {
            assert!((hel.mode(i, 0) - v).norm() < 1e-9 * v.abs().max(1e-6));
            for m in [-4, -1, 1, 3] {
                assert_eq!(hel.mode(i, m), C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn radial_round_trip_and_l1_bound() {
        let f = TestFunctionX::gaussian(GroupElement::identity(), 0.5).unwrap();
        let grid = plancherel_grid(20.0, 128).unwrap();
        let c = helgason_transform(&f, &grid, 0).unwrap();
        let l1 = norms(&f, None, 0.0).unwrap().l1;
        assert!(c.node_norms().iter().all(|n| *n <= l1));
        let pts: Vec<GroupElement> = (0..30).map(|i| GroupElement::diagonal(0.1 * i as f64)).collect();
        let back = inverse_transform(&c, &grid, &pts).unwrap();
        let err = pts.iter().zip(&back).map(|(p, b)| (f.eval(p) - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn plancherel_constant_calibration() {
        let f = TestFunctionX::gaussian(GroupElement::identity(), 0.6).unwrap();
        let pts: Vec<GroupElement> = (0..12).map(|i| GroupElement::diagonal(0.1 * i as f64)).collect();
        let c = calibrate_plancherel_constant(&f, 20.0, 128, 0, &pts).unwrap();
        assert!((c / PLANCHEREL_CONSTANT - 1.0).abs() < 1e-4, "{c}");
        assert!((PLANCHEREL_CONSTANT - 0.5 / (PI * PI)).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let grid = plancherel_grid(5.0, 64).unwrap();
        let c = HelgasonCoefficients::zeros(&grid.r_nodes, 3);
        let v = inverse_transform(&c, &grid, &[GroupElement::diagonal(0.4)]).unwrap();
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn norms_ordering() {
        let f = TestFunctionX::gaussian_at(0.3, 1.5, 0.2).unwrap();
        let n = norms(&f, None, 0.0).unwrap();
        assert!(n.star >= n.l1);
        // Narrow bump at distance D: star/l1 ≈ 1 + E[d²] with
        // E[d²] ≈ D² + w²(1 + D coth D) from the Hessian of d(·, o)² at the center.
        let (d, w) = (1.5f64, 0.2f64);
        let expect = 1.0 + d * d + w * w * (1.0 + d / d.tanh());
        assert!((n.star / n.l1 - expect).abs() < 0.01);
    }

    #[test]
    fn band_limited_construction() {
        let grid = plancherel_grid(8.0, 64).unwrap();
        let f = bandlimited_bump(3.0, &[C64::new(1.0, 0.0)], &grid).unwrap();
        let c = helgason_transform(&f, &grid, 0).unwrap();
        for (r, n) in c.r_nodes.iter().zip(c.node_norms()) {
            if *r > 3.0 {
                assert!(n < 1e-8);
            }
        }
        let z = inverse_transform_complex(&c, &grid, &[GroupElement::diagonal(0.7), GroupElement::diagonal(2.0)]).unwrap();
        assert!(z.iter().all(|v| v.im.abs() < 1e-12));
    }
}
