//! Structure theory of `SL(2,R)`: Iwasawa and Cartan factors, the horocycle
//! cocycle, the boundary action on `Omega = K/M` and the symmetric-space metric.
//!
//! Conventions: `k_theta` is rotation by `theta`, `a_t = diag(e^{t/2}, e^{-t/2})`,
//! `n_x = [[1, x], [0, 1]]`. With these, `d(a_t.o, o) = |t|` in the curvature −1
//! metric, and boundary points are angles modulo `pi`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `det = 1` for a valid element.
pub const DET_TOLERANCE: f64 = 1e-12;

/// Products longer than this are renormalized back onto `det = 1`.
pub const RENORMALIZE_EVERY: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("invalid group element: determinant {det} is not positive")]
    NonPositiveDeterminant { det: f64 },
    #[error("invalid group element: determinant {det} differs from 1")]
    NotUnimodular { det: f64 },
    #[error("invalid group element: non-finite entry")]
    NonFinite,
}

/// An element of `SL(2,R)` stored row-major as `[[a, b], [c, d]]`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

impl GroupElement {
    /// Builds an element, requiring `|det − 1| ≤ 1e−12`.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, GroupError> {
        let g = Self { a, b, c, d };
        if !g.entries().iter().all(|v| v.is_finite()) {
            return Err(GroupError::NonFinite);
        }
        let det = g.det();
        if (det - 1.0).abs() > DET_TOLERANCE {
            return Err(GroupError::NotUnimodular { det });
        }
        Ok(g)
    }

    /// Builds an element from any matrix with positive determinant by dividing
    /// through by `sqrt(det)`. Returns the element and the original determinant.
    pub fn renormalized(a: f64, b: f64, c: f64, d: f64) -> Result<(Self, f64), GroupError> {
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(GroupError::NonFinite);
        }
        let det = a * d - b * c;
        if det <= DET_TOLERANCE {
            return Err(GroupError::NonPositiveDeterminant { det });
        }
        let s = det.sqrt();
        Ok((Self { a: a / s, b: b / s, c: c / s, d: d / s }, det))
    }

    pub(crate) const fn raw(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub const fn identity() -> Self {
        Self::raw(1.0, 0.0, 0.0, 1.0)
    }

    /// `k_theta`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::raw(c, -s, s, c)
    }

    /// `a_t = diag(e^{t/2}, e^{-t/2})`.
    pub fn diagonal(t: f64) -> Self {
        let h = (0.5 * t).exp();
        Self::raw(h, 0.0, 0.0, 1.0 / h)
    }

    /// `n_x`, upper unipotent.
    pub fn unipotent(x: f64) -> Self {
        Self::raw(1.0, x, 0.0, 1.0)
    }

    /// `exp(s·E)` for the rotation generator `E = [[0,-1],[1,0]]`.
    pub fn exp_rotation_generator(s: f64) -> Self {
        Self::rotation(s)
    }

    /// `exp(s·F)` for the diagonal generator `F = diag(1/2, -1/2)`.
    pub fn exp_diagonal_generator(s: f64) -> Self {
        Self::diagonal(s)
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Self {
        Self::raw(self.d, -self.b, -self.c, self.a)
    }

    pub fn transpose(&self) -> Self {
        Self::raw(self.a, self.c, self.b, self.d)
    }

    /// Projects back to `det = 1`; used to bound drift in long products.
    pub fn renormalize(&self) -> Self {
        let s = self.det().sqrt();
        Self::raw(self.a / s, self.b / s, self.c / s, self.d / s)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖g − h‖_F`, the distance used by all ball and subgroup diagnostics.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_entry_difference(&self, other: &Self) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// `H(g)`: the log of the `A`-part in `g = k a n`, i.e. `log(g11² + g21²)`.
    pub fn horocycle_height(&self) -> f64 {
        (self.a * self.a + self.c * self.c).ln()
    }

    /// `κ(g) = ‖g‖`: twice the log of the top singular value.
    pub fn cartan_norm(&self) -> f64 {
        cartan(self).t
    }

    /// Product of a sequence with periodic det renormalization.
    pub fn product<'a, I: IntoIterator<Item = &'a GroupElement>>(factors: I) -> Self {
        let mut acc = Self::identity();
        for (i, g) in factors.into_iter().enumerate() {
            acc = acc * *g;
            if (i + 1) % RENORMALIZE_EVERY == 0 {
                acc = acc.renormalize();
            }
        }
        acc
    }
}

impl Mul for GroupElement {
    type Output = GroupElement;
    fn mul(self, o: GroupElement) -> GroupElement {
        GroupElement::raw(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

/// `g = k_theta · a_t · n_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IwasawaFactors {
    pub theta: f64,
    pub t: f64,
    pub x: f64,
}

impl IwasawaFactors {
    pub fn reconstruct(&self) -> GroupElement {
        GroupElement::rotation(self.theta) * GroupElement::diagonal(self.t) * GroupElement::unipotent(self.x)
    }
}

/// `g = k_theta1 · a_t · k_theta2` with `t ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartanFactors {
    pub theta1: f64,
    pub t: f64,
    pub theta2: f64,
}

impl CartanFactors {
    pub fn reconstruct(&self) -> GroupElement {
        GroupElement::rotation(self.theta1) * GroupElement::diagonal(self.t) * GroupElement::rotation(self.theta2)
    }
}

/// A point of `Omega = K/M`, stored as an angle reduced to `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BoundaryPoint(f64);

impl BoundaryPoint {
    pub fn new(omega: f64) -> Self {
        Self(reduce_mod(omega, PI))
    }

    pub fn angle(self) -> f64 {
        self.0
    }

    fn unit_vector(self) -> [f64; 2] {
        let (s, c) = self.0.sin_cos();
        [c, s]
    }
}

/// Structural constants of the rank-one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupConstants {
    /// Number of positive indivisible roots.
    pub p: u32,
    /// Real rank.
    pub d: u32,
    /// Polynomial exponent of the local limit theorem.
    pub ell: u32,
    /// Half-sum of positive roots, as a multiple of the positive root.
    pub delta_coeff: f64,
    pub root_multiplicity: u32,
}

pub const SL2R: GroupConstants = GroupConstants { p: 1, d: 1, ell: 3, delta_coeff: 0.5, root_multiplicity: 1 };

pub(crate) fn reduce_mod(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    // rem_euclid can return `period` itself after rounding.
    if r >= period {
        0.0
    } else {
        r
    }
}

pub fn iwasawa(g: &GroupElement) -> Result<IwasawaFactors, GroupError> {
    validate(g)?;
    let [a, b, c, d] = g.entries();
    let t = g.horocycle_height();
    let theta = reduce_mod(c.atan2(a), TAU);
    let (s, co) = c.atan2(a).sin_cos();
    let x = (co * b + s * d) * (-0.5 * t).exp();
    Ok(IwasawaFactors { theta, t, x })
}

pub fn cartan(g: &GroupElement) -> CartanFactors {
    let [a, b, c, d] = g.entries();
    let e = 0.5 * (a + d);
    let f = 0.5 * (a - d);
    let gg = 0.5 * (c + b);
    let h = 0.5 * (c - b);
    let q = e.hypot(h);
    let r = f.hypot(gg);
    let top = q + r;
    let a1 = gg.atan2(f);
    let a2 = h.atan2(e);
    let theta2 = reduce_mod(0.5 * (a2 - a1), TAU);
    let theta1 = reduce_mod(0.5 * (a2 + a1), TAU);
    let t = (2.0 * top.ln()).max(0.0);
    CartanFactors { theta1, t, theta2 }
}

fn validate(g: &GroupElement) -> Result<(), GroupError> {
    let det = g.det();
    if !det.is_finite() {
        return Err(GroupError::NonFinite);
    }
    if det <= DET_TOLERANCE {
        return Err(GroupError::NonPositiveDeterminant { det });
    }
    Ok(())
}

/// `H(g⁻¹ k_w) = log |g⁻¹ u_w|²`.
pub fn horocycle_cocycle(g: &GroupElement, w: BoundaryPoint) -> f64 {
    let v = g.inverse().apply(w.unit_vector());
    (v[0] * v[0] + v[1] * v[1]).ln()
}

/// `α_g(w)`: the angle of `g u_w`, modulo `pi`.
pub fn boundary_action(g: &GroupElement, w: BoundaryPoint) -> BoundaryPoint {
    let v = g.apply(w.unit_vector());
    BoundaryPoint::new(v[1].atan2(v[0]))
}

/// Density of the pushforward of Haar measure on `Omega` under `α_g`, at `w`:
/// `exp(−2δ H(g⁻¹ k_w))` with `δ = 1/2`.
pub fn rn_derivative(g: &GroupElement, w: BoundaryPoint) -> f64 {
    (-2.0 * SL2R.delta_coeff * horocycle_cocycle(g, w)).exp()
}

/// Derivative of the circle map `w ↦ α_g(w)`, equal to `exp(−H(g k_w))`.
pub fn boundary_action_derivative(g: &GroupElement, w: BoundaryPoint) -> f64 {
    let v = g.apply(w.unit_vector());
    1.0 / (v[0] * v[0] + v[1] * v[1])
}

/// `d_X(g.o, h.o) = κ(h⁻¹ g)`.
pub fn sym_space_distance(g: &GroupElement, h: &GroupElement) -> f64 {
    cartan(&(h.inverse() * *g)).t
}

/// Polar coordinates `(theta, t)` of `g.o`, meaning `g.o = k_theta a_t . o`
/// with `theta` in `[0, pi)` and `t ≥ 0`.
pub fn polar_coordinates(g: &GroupElement) -> (f64, f64) {
    let cf = cartan(g);
    (reduce_mod(cf.theta1, PI), cf.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn element(theta1: f64, t: f64, theta2: f64) -> GroupElement {
        GroupElement::rotation(theta1) * GroupElement::diagonal(t) * GroupElement::rotation(theta2)
    }

    #[test]
    fn identity_factors() {
        let f = iwasawa(&GroupElement::identity()).unwrap();
        assert_eq!((f.theta, f.t, f.x), (0.0, 0.0, 0.0));
        let c = cartan(&GroupElement::identity());
        assert_eq!(c.t, 0.0);
    }

    #[test]
    fn factored_input_is_recovered() {
        let g = GroupElement::diagonal(1.0) * GroupElement::unipotent(0.5);
        let f = iwasawa(&g).unwrap();
        assert!(f.theta.abs() < 1e-15 && (f.t - 1.0).abs() < 1e-14 && (f.x - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lower_unipotent_height() {
        let g = GroupElement::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let f = iwasawa(&g).unwrap();
        assert!((f.t - 2f64.ln()).abs() < 1e-15);
        assert!(f.reconstruct().max_entry_difference(&g) < 1e-14);
    }

    #[test]
    fn upper_unipotent_norm_is_golden() {
        // Singular values of [[1,1],[0,1]] are the golden ratio and its inverse.
        let golden = 0.5 * (1.0 + 5f64.sqrt());
        let t = cartan(&GroupElement::unipotent(1.0)).t;
        assert!((t - 2.0 * golden.ln()).abs() < 1e-14);
        assert!((t - 0.962_424).abs() < 1e-6);
    }

    #[test]
    fn diagonal_is_already_cartan() {
        let c = cartan(&GroupElement::diagonal(1.7));
        assert!((c.t - 1.7).abs() < 1e-14);
        assert!(c.reconstruct().max_entry_difference(&GroupElement::diagonal(1.7)) < 1e-14);
    }

    #[test]
    fn rejects_bad_determinant() {
        assert!(GroupElement::new(2.0, 0.0, 0.0, 1.0).is_err());
        assert!(GroupElement::renormalized(1.0, 0.0, 0.0, -1.0).is_err());
        let (g, det) = GroupElement::renormalized(2.0, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(det, 4.0);
        assert!((g.det() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cocycle_examples() {
        let w = BoundaryPoint::new(0.0);
        assert!((horocycle_cocycle(&GroupElement::diagonal(0.8), w) + 0.8).abs() < 1e-14);
        assert_eq!(horocycle_cocycle(&GroupElement::identity(), BoundaryPoint::new(1.1)), 0.0);
        assert!(horocycle_cocycle(&GroupElement::rotation(0.4), BoundaryPoint::new(2.0)).abs() < 1e-15);
    }

    #[test]
    fn rotation_acts_by_translation() {
        let w = BoundaryPoint::new(2.9);
        let moved = boundary_action(&GroupElement::rotation(0.5), w);
        assert!((moved.angle() - reduce_mod(3.4, PI)).abs() < 1e-14);
        assert!((rn_derivative(&GroupElement::rotation(0.5), w) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pushforward_density_integrates_to_one() {
        let g = element(0.3, 1.4, 2.0);
        let q = 2048;
        let mean = (0..q)
            .map(|j| rn_derivative(&g, BoundaryPoint::new(PI * j as f64 / q as f64)))
            .sum::<f64>()
            / q as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distance_to_diagonal_orbit() {
        let d = sym_space_distance(&GroupElement::diagonal(-2.5), &GroupElement::identity());
        assert!((d - 2.5).abs() < 1e-14);
    }

    fn arb_element(max_t: f64) -> impl Strategy<Value = GroupElement> {
        (0.0..TAU, 0.0..max_t, 0.0..TAU).prop_map(|(a, t, b)| element(a, t, b))
    }

    proptest! {
        #[test]
        fn round_trips(g in arb_element(10.0)) {
            let iw = iwasawa(&g).unwrap();
            prop_assert!(iw.reconstruct().max_entry_difference(&g) < 1e-10);
            let ca = cartan(&g);
            prop_assert!(ca.t >= 0.0);
            prop_assert!(ca.reconstruct().max_entry_difference(&g) < 1e-10);
        }

        #[test]
        fn height_bounded_by_norm(g in arb_element(10.0)) {
            prop_assert!(g.horocycle_height().abs() <= g.cartan_norm() + 1e-10);
            // Regression lock: the Iwasawa height is the same float expression.
            prop_assert_eq!(iwasawa(&g).unwrap().t, g.horocycle_height());
        }

        #[test]
        fn representative_independence(g in arb_element(4.0), w in 0.0..PI) {
            let h1 = horocycle_cocycle(&g, BoundaryPoint::new(w));
            let v = g.inverse().apply([(w + PI).cos(), (w + PI).sin()]);
            prop_assert!((h1 - (v[0] * v[0] + v[1] * v[1]).ln()).abs() < 1e-12);
        }

        #[test]
        fn action_composes(g in arb_element(3.0), h in arb_element(3.0), w in 0.0..PI) {
            let w = BoundaryPoint::new(w);
            let lhs = boundary_action(&(g * h), w).angle();
            let rhs = boundary_action(&g, boundary_action(&h, w)).angle();
            let diff = reduce_mod(lhs - rhs + 0.5 * PI, PI) - 0.5 * PI;
            prop_assert!(diff.abs() < 1e-10);
        }

        #[test]
        fn cocycle_additivity(g in arb_element(3.0), h in arb_element(3.0), w in 0.0..PI) {
            // H((gh)⁻¹k_w) = H(g⁻¹k_w) + H(h⁻¹k_{α_{g⁻¹}(w)})
            let w = BoundaryPoint::new(w);
            let lhs = horocycle_cocycle(&(g * h), w);
            let rhs = horocycle_cocycle(&g, w) + horocycle_cocycle(&h, boundary_action(&g.inverse(), w));
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn density_chain_rule(g in arb_element(3.0), h in arb_element(3.0), w in 0.0..PI) {
            let w = BoundaryPoint::new(w);
            let lhs = rn_derivative(&(g * h), w);
            let rhs = rn_derivative(&g, w) * rn_derivative(&h, boundary_action(&g.inverse(), w));
            prop_assert!((lhs / rhs - 1.0).abs() < 1e-10);
        }

        #[test]
        fn derivative_chain_rule(g in arb_element(3.0), h in arb_element(3.0), w in 0.0..PI) {
            let w = BoundaryPoint::new(w);
            let lhs = boundary_action_derivative(&(g * h), w);
            let rhs = boundary_action_derivative(&g, boundary_action(&h, w)) * boundary_action_derivative(&h, w);
            prop_assert!((lhs / rhs - 1.0).abs() < 1e-10);
            // The pushforward density is the reciprocal derivative at the preimage.
            let pre = boundary_action(&g.inverse(), w);
            prop_assert!((rn_derivative(&g, w) * boundary_action_derivative(&g, pre) - 1.0).abs() < 1e-10);
        }

        #[test]
        fn metric_axioms(g in arb_element(3.0), h in arb_element(3.0), k in arb_element(3.0)) {
            prop_assert!(sym_space_distance(&g, &g) < 1e-7);
            prop_assert!((sym_space_distance(&g, &h) - sym_space_distance(&h, &g)).abs() < 1e-9);
            prop_assert!(sym_space_distance(&g, &k) <= sym_space_distance(&g, &h) + sym_space_distance(&h, &k) + 1e-10);
            prop_assert!((g * h).cartan_norm() <= g.cartan_norm() + h.cartan_norm() + 1e-10);
        }
    }
}
