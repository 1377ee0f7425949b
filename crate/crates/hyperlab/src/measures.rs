//! Finitely supported probability measures on `G`: convolution, sampling,
//! moments, and the flattening and subgroup-concentration diagnostics.
//!
//! Ball and subgroup distances use the Frobenius distance `‖g − h‖_F`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::gauss_legendre;
use crate::rank_one_group::{GroupElement, RENORMALIZE_EVERY};

/// Default cap on the number of atoms produced by exact convolution.
pub const ATOM_CAP: usize = 1_000_000;

/// Monte Carlo work is split into this many independently seeded chunks and
/// reduced in chunk order, so results do not depend on the thread count.
pub const MC_CHUNKS: usize = 64;

/// Points in the conjugation grid of the subgroup families.
pub const CONJUGATION_GRID: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("measure has no atoms")]
    Empty,
    #[error("atom {index} has non-positive weight {weight}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("weights sum to {total}, not 1")]
    NotNormalized { total: f64 },
    #[error("convolution would produce {atoms} atoms, above the cap of {cap}; prune or sample instead")]
    AtomCap { atoms: usize, cap: usize },
    #[error("moment order {0} outside 1..=4")]
    MomentOrder(u32),
    #[error("invalid diagnostic parameter: {0}")]
    Parameter(String),
}

/// A finitely supported probability measure `Σ w_i δ_{g_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    atoms: Vec<(GroupElement, f64)>,
}

/// Result of [`AtomicMeasure::convolve`]: the product measure and the mass
/// removed by pruning before renormalization.
#[derive(Debug, Clone)]
pub struct Convolution {
    pub measure: AtomicMeasure,
    pub dropped_mass: f64,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<(GroupElement, f64)>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        if let Some((index, &(_, weight))) = atoms.iter().enumerate().find(|(_, a)| !(a.1 > 0.0)) {
            return Err(MeasureError::NonPositiveWeight { index, weight });
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::NotNormalized { total });
        }
        Ok(Self { atoms })
    }

    /// Uniform measure on the given elements.
    pub fn uniform(elements: &[GroupElement]) -> Result<Self, MeasureError> {
        let w = 1.0 / elements.len() as f64;
        Self::new(elements.iter().map(|g| (*g, w)).collect())
    }

    pub fn dirac(g: GroupElement) -> Self {
        Self { atoms: vec![(g, 1.0)] }
    }

    /// The symmetric four-atom walk `{exp(±εE), exp(±εF)}` with equal weights.
    pub fn default_walk(eps: f64) -> Self {
        Self::uniform(&[
            GroupElement::exp_rotation_generator(eps),
            GroupElement::exp_rotation_generator(-eps),
            GroupElement::exp_diagonal_generator(eps),
            GroupElement::exp_diagonal_generator(-eps),
        ])
        .expect("four equal weights")
    }

    pub fn atoms(&self) -> &[(GroupElement, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// The image measure under `g ↦ k g k⁻¹`.
    pub fn conjugate(&self, k: &GroupElement) -> Self {
        let ki = k.inverse();
        Self { atoms: self.atoms.iter().map(|(g, w)| (*k * *g * ki, *w)).collect() }
    }

    /// Content hash of the atoms, used as a cache key.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (g, w) in &self.atoms {
            for v in g.entries() {
                h.update(v.to_le_bytes());
            }
            h.update(w.to_le_bytes());
        }
        h.finalize().into()
    }

    /// `μ * ν`, enumerating all pairwise products (no merging of atoms).
    /// Atoms with weight below `prune_threshold` are dropped and the rest
    /// renormalized.
    pub fn convolve(&self, other: &Self, prune_threshold: f64, cap: usize) -> Result<Convolution, MeasureError> {
        let atoms = self.len().saturating_mul(other.len());
        if atoms > cap {
            return Err(MeasureError::AtomCap { atoms, cap });
        }
        let mut out = Vec::with_capacity(atoms);
        let mut dropped = 0.0;
        for (g, wg) in &self.atoms {
            for (h, wh) in &other.atoms {
                let w = wg * wh;
                if prune_threshold > 0.0 && w < prune_threshold {
                    dropped += w;
                } else {
                    out.push((*g * *h, w));
                }
            }
        }
        if out.is_empty() {
            return Err(MeasureError::Empty);
        }
        let total: f64 = out.iter().map(|a| a.1).sum();
        for a in &mut out {
            a.1 /= total;
        }
        Ok(Convolution { measure: Self { atoms: out }, dropped_mass: dropped })
    }

    /// `μ^{*n}` by repeated exact convolution; `n = 0` gives `δ_e`.
    pub fn convolution_power(&self, n: usize, cap: usize) -> Result<Self, MeasureError> {
        let atoms = (self.len() as f64).powi(n as i32);
        if atoms > cap as f64 {
            return Err(MeasureError::AtomCap { atoms: atoms.min(usize::MAX as f64) as usize, cap });
        }
        let mut acc = Self::dirac(GroupElement::identity());
        for i in 0..n {
            acc = acc.convolve(self, 0.0, cap)?.measure;
            if (i + 1) % RENORMALIZE_EVERY == 0 {
                acc.atoms.iter_mut().for_each(|a| a.0 = a.0.renormalize());
            }
        }
        Ok(acc)
    }

    /// `½(μ + μ̌)` with weights of exactly coinciding atoms merged.
    pub fn symmetrize(&self) -> Self {
        let mut merged: Vec<(GroupElement, f64)> = Vec::new();
        let candidates = self
            .atoms
            .iter()
            .map(|(g, w)| (*g, 0.5 * w))
            .chain(self.atoms.iter().map(|(g, w)| (g.inverse(), 0.5 * w)));
        for (g, w) in candidates {
            match merged.iter_mut().find(|(h, _)| bits(h) == bits(&g)) {
                Some(slot) => slot.1 += w,
                None => merged.push((g, w)),
            }
        }
        Self { atoms: merged }
    }

    fn sampler(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.atoms
            .iter()
            .map(|a| {
                acc += a.1;
                acc
            })
            .collect()
    }

    fn draw<R: Rng>(&self, cumulative: &[f64], rng: &mut R) -> GroupElement {
        let u: f64 = rng.gen::<f64>() * cumulative[cumulative.len() - 1];
        let i = cumulative.partition_point(|c| *c <= u).min(self.atoms.len() - 1);
        self.atoms[i].0
    }

    fn product_with<R: Rng>(&self, cumulative: &[f64], n: usize, rng: &mut R) -> GroupElement {
        let mut acc = GroupElement::identity();
        for i in 0..n {
            acc = acc * self.draw(cumulative, rng);
            if (i + 1) % RENORMALIZE_EVERY == 0 {
                acc = acc.renormalize();
            }
        }
        acc
    }

    /// One draw of `g_1 ⋯ g_n` with `g_i` i.i.d. from the measure.
    pub fn sample_product(&self, n: usize, seed: u64) -> GroupElement {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.product_with(&self.sampler(), n, &mut rng)
    }

    /// `samples` independent draws of the `n`-step product, generated in
    /// [`MC_CHUNKS`] seeded substreams and returned in a fixed order.
    pub fn sample_products(&self, n: usize, samples: usize, seed: u64) -> Vec<GroupElement> {
        let cumulative = self.sampler();
        chunk_ranges(samples)
            .into_par_iter()
            .map(|(chunk, len)| {
                let mut rng = substream(seed, chunk as u64);
                (0..len).map(|_| self.product_with(&cumulative, n, &mut rng)).collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }

    /// `Σ w_i κ(g_i)^k`.
    pub fn moment(&self, k: u32) -> Result<f64, MeasureError> {
        if !(1..=4).contains(&k) {
            return Err(MeasureError::MomentOrder(k));
        }
        Ok(self.atoms.iter().map(|(g, w)| w * g.cartan_norm().powi(k as i32)).sum())
    }

    /// `max_i κ(g_i)`.
    pub fn support_radius(&self) -> f64 {
        self.atoms.iter().map(|(g, _)| g.cartan_norm()).fold(0.0, f64::max)
    }

    /// Collision estimate of `‖μ^{*n} * P_δ‖₂`.
    pub fn flattening_l2(&self, n: usize, delta: f64, samples: usize, seed: u64) -> Result<FlatteningEstimate, MeasureError> {
        if !(delta > 0.0) || samples < 10_000 {
            return Err(MeasureError::Parameter(format!("need delta > 0 and samples ≥ 1e4 (got {delta}, {samples})")));
        }
        let left = self.sample_products(n, samples, seed);
        let right = self.sample_products(n, samples, seed ^ 0x9e37_79b9_7f4a_7c15);
        let hits = left.iter().zip(&right).filter(|(g, h)| g.frobenius_distance(h) < delta).count();
        let vol = frobenius_ball_volume(delta);
        let p = hits as f64 / samples as f64;
        let p_se = (p * (1.0 - p) / samples as f64).sqrt();
        if hits == 0 {
            // Rule-of-three upper bound on the collision probability.
            let upper = (3.0 / samples as f64 / vol).sqrt();
            return Ok(FlatteningEstimate { estimate: upper, stderr: f64::NAN, collisions: 0, upper_bound_only: true });
        }
        let estimate = (p / vol).sqrt();
        // Delta method for the square root.
        let stderr = 0.5 * p_se / (p * vol).sqrt();
        Ok(FlatteningEstimate { estimate, stderr, collisions: hits, upper_bound_only: false })
    }

    /// Monte Carlo masses of `B_δ(H)` for the classical subgroup families,
    /// each maximized over the conjugation grid.
    pub fn subgroup_concentration(&self, n: usize, delta: f64, samples: usize, seed: u64) -> Result<DiophantineReport, MeasureError> {
        if !(delta > 0.0) || samples < 10_000 {
            return Err(MeasureError::Parameter(format!("need delta > 0 and samples ≥ 1e4 (got {delta}, {samples})")));
        }
        let draws = self.sample_products(n, samples, seed);
        let conj: Vec<GroupElement> = (0..CONJUGATION_GRID)
            .map(|j| GroupElement::rotation(PI * j as f64 / CONJUGATION_GRID as f64))
            .collect();
        let mut masses = BTreeMap::new();
        for family in SubgroupFamily::ALL {
            let grid: &[GroupElement] = if family == SubgroupFamily::Rotations { &conj[..1] } else { &conj };
            let best = grid
                .par_iter()
                .map(|k| {
                    let ki = k.inverse();
                    let hits = draws.iter().filter(|g| family.within(&(ki * **g * *k), delta)).count();
                    hits as f64 / samples as f64
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(0.0, f64::max);
            masses.insert(family.name().to_string(), best);
        }
        Ok(DiophantineReport { n, delta, masses })
    }
}

/// Bit pattern of the entries with `-0.0` folded onto `0.0`.
fn bits(g: &GroupElement) -> [u64; 4] {
    g.entries().map(|v| (v + 0.0).to_bits())
}

pub(crate) fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn chunk_ranges(samples: usize) -> Vec<(usize, usize)> {
    let base = samples / MC_CHUNKS;
    let extra = samples % MC_CHUNKS;
    (0..MC_CHUNKS).map(|c| (c, base + usize::from(c < extra))).filter(|(_, l)| *l > 0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlatteningEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub collisions: usize,
    /// No collisions were seen; `estimate` is a rule-of-three upper bound.
    pub upper_bound_only: bool,
}

/// Haar volume of `{g : ‖g − e‖_F < δ}` in the Cartan polar normalization
/// `(1/π) sinh t dθ₁ dt dθ₂`.
///
/// With `ψ = θ₁ + θ₂` the ball condition reads `cosh(t/2) < U(ψ)` where
/// `U = (cos ψ + sqrt(cos²ψ + δ²))/2`, and the `t`-integral is `2(U² − 1)`.
pub fn frobenius_ball_volume(delta: f64) -> f64 {
    let c_star = 1.0 - 0.25 * delta * delta;
    let psi_max = if c_star <= -1.0 { PI } else { c_star.acos() };
    let (nodes, weights) = gauss_legendre(96, 0.0, psi_max);
    let half: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(psi, w)| {
            let c = psi.cos();
            let u = 0.5 * (c + (c * c + delta * delta).sqrt());
            w * 2.0 * (u * u - 1.0).max(0.0)
        })
        .sum();
    2.0 * half
}

/// The subgroup families scanned by the concentration diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubgroupFamily {
    Diagonal,
    Unipotent,
    Rotations,
    Borel,
}

impl SubgroupFamily {
    pub const ALL: [SubgroupFamily; 4] = [Self::Diagonal, Self::Unipotent, Self::Rotations, Self::Borel];

    pub fn name(self) -> &'static str {
        match self {
            Self::Diagonal => "A",
            Self::Unipotent => "N",
            Self::Rotations => "K",
            Self::Borel => "AN",
        }
    }

    /// `distance(m) < delta`, skipping the minimization when the entries
    /// that the subgroup forces to vanish already exceed `delta`.
    pub fn within(self, m: &GroupElement, delta: f64) -> bool {
        let [_, b, c, _] = m.entries();
        let floor = match self {
            Self::Diagonal => b * b + c * c,
            Self::Borel => c * c,
            Self::Unipotent | Self::Rotations => 0.0,
        };
        floor < delta * delta && self.distance(m) < delta
    }

    /// Frobenius distance from `m` to the (unconjugated) subgroup.
    pub fn distance(self, m: &GroupElement) -> f64 {
        let [a, b, c, d] = m.entries();
        let sq = match self {
            Self::Diagonal => b * b + c * c + diagonal_residual(a, d),
            Self::Unipotent => (a - 1.0).powi(2) + c * c + (d - 1.0).powi(2),
            Self::Borel => c * c + diagonal_residual(a, d),
            Self::Rotations => {
                let norm2 = a * a + b * b + c * c + d * d;
                norm2 + 2.0 - 2.0 * (a + d).hypot(c - b)
            }
        };
        sq.max(0.0).sqrt()
    }
}

/// `min_{s} (p − e^s)² + (q − e^{−s})²`, by a coarse scan and golden-section refinement.
fn diagonal_residual(p: f64, q: f64) -> f64 {
    let f = |s: f64| (p - s.exp()).powi(2) + (q - (-s).exp()).powi(2);
    let (lo, hi, steps) = (-8.0, 8.0, 160);
    let h = (hi - lo) / steps as f64;
    let mut best = lo;
    for i in 0..=steps {
        let s = lo + h * i as f64;
        if f(s) < f(best) {
            best = s;
        }
    }
    let (mut a, mut b) = (best - h, best + h);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = b - ratio * (b - a);
        let x2 = a + ratio * (b - a);
        if f(x1) < f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    f(0.5 * (a + b)).min(f(best))
}

/// Per-family concentration masses; a heuristic lower bound on the sup over
/// all closed connected subgroups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiophantineReport {
    pub n: usize,
    pub delta: f64,
    pub masses: BTreeMap<String, f64>,
}

impl DiophantineReport {
    pub fn max_mass(&self) -> f64 {
        self.masses.values().copied().fold(0.0, f64::max)
    }

    /// Whether every family mass is at most `δ^{c₂/c₁}`.
    pub fn verdict(&self, c1: f64, c2: f64) -> bool {
        self.max_mass() <= self.delta.powf(c2 / c1)
    }
}

/// Uniform draw on `[0, 2π)`, exposed for reproducible test fixtures.
pub fn random_angle<R: Rng>(rng: &mut R) -> f64 {
    rng.gen::<f64>() * TAU
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rank_one_group::cartan;

    fn generic_measure() -> AtomicMeasure {
        AtomicMeasure::new(vec![
            (GroupElement::rotation(0.3) * GroupElement::diagonal(0.2), 0.5),
            (GroupElement::unipotent(0.4), 0.3),
            (GroupElement::diagonal(-0.7) * GroupElement::rotation(1.1), 0.2),
        ])
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(AtomicMeasure::new(vec![]).is_err());
        assert!(AtomicMeasure::new(vec![(GroupElement::identity(), 0.5)]).is_err());
        assert!(AtomicMeasure::new(vec![(GroupElement::identity(), 1.5), (GroupElement::identity(), -0.5)]).is_err());
    }

    #[test]
    fn dirac_identity_is_neutral() {
        let mu = generic_measure();
        let c = AtomicMeasure::dirac(GroupElement::identity()).convolve(&mu, 0.0, ATOM_CAP).unwrap();
        assert_eq!(c.measure, mu);
    }

    #[test]
    fn binomial_square() {
        let g = GroupElement::diagonal(0.5);
        let mu = AtomicMeasure::uniform(&[g, g.inverse()]).unwrap();
        let sq = mu.convolve(&mu, 0.0, ATOM_CAP).unwrap().measure;
        assert_eq!(sq.len(), 4);
        let mut by_t = BTreeMap::new();
        for (h, w) in sq.atoms() {
            *by_t.entry((h.horocycle_height() * 1e6).round() as i64).or_insert(0.0) += w;
        }
        let weights: Vec<f64> = by_t.values().copied().collect();
        assert_eq!(weights, vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn associativity_and_atom_count() {
        let mu = generic_measure();
        let nu = AtomicMeasure::default_walk(0.3);
        let left = mu.convolve(&nu, 0.0, ATOM_CAP).unwrap().measure.convolve(&mu, 0.0, ATOM_CAP).unwrap().measure;
        let right = mu.convolve(&nu.convolve(&mu, 0.0, ATOM_CAP).unwrap().measure, 0.0, ATOM_CAP).unwrap().measure;
        assert_eq!(left.len(), 3 * 4 * 3);
        for ((g, w), (h, v)) in left.atoms().iter().zip(right.atoms()) {
            assert!(g.max_entry_difference(h) < 1e-12 && (w - v).abs() < 1e-12);
        }
    }

    #[test]
    fn pruning_reports_mass() {
        let mu = generic_measure();
        let c = mu.convolve(&mu, 0.05, ATOM_CAP).unwrap();
        let kept: f64 = mu.atoms().iter().flat_map(|a| mu.atoms().iter().map(move |b| a.1 * b.1)).filter(|w| *w >= 0.05).sum();
        assert!((c.dropped_mass - (1.0 - kept)).abs() < 1e-14);
        assert!((c.measure.atoms().iter().map(|a| a.1).sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cap_is_enforced() {
        let mu = AtomicMeasure::default_walk(0.3);
        assert!(matches!(mu.convolution_power(11, ATOM_CAP), Err(MeasureError::AtomCap { .. })));
        assert!(matches!(mu.convolve(&mu, 0.0, 15), Err(MeasureError::AtomCap { .. })));
    }

    #[test]
    fn symmetrization() {
        let g = GroupElement::unipotent(0.7);
        let s = AtomicMeasure::dirac(g).symmetrize();
        assert_eq!(s.atoms(), &[(g, 0.5), (g.inverse(), 0.5)]);
        let walk = AtomicMeasure::default_walk(0.3);
        assert_eq!(walk.symmetrize(), walk);
        let once = generic_measure().symmetrize();
        assert_eq!(once.symmetrize(), once);
    }

    #[test]
    fn zero_step_product_is_identity() {
        assert_eq!(generic_measure().sample_product(0, 7), GroupElement::identity());
    }

    #[test]
    fn sampling_frequencies_match_weights() {
        let mu = generic_measure();
        let draws = mu.sample_products(1, 100_000, 11);
        for (g, w) in mu.atoms() {
            let freq = draws.iter().filter(|h| *h == g).count() as f64 / draws.len() as f64;
            let se = (w * (1.0 - w) / draws.len() as f64).sqrt();
            assert!((freq - w).abs() < 3.0 * se, "{freq} vs {w}");
        }
    }

    #[test]
    fn first_moment_matches_sampling() {
        let mu = generic_measure();
        let draws = mu.sample_products(1, 100_000, 5);
        let k: Vec<f64> = draws.iter().map(|g| g.cartan_norm()).collect();
        let mean = k.iter().sum::<f64>() / k.len() as f64;
        let var = k.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k.len() - 1) as f64;
        assert!((mean - mu.moment(1).unwrap()).abs() < 3.0 * (var / k.len() as f64).sqrt());
    }

    #[test]
    fn sampling_is_deterministic() {
        let mu = AtomicMeasure::default_walk(0.3);
        assert_eq!(mu.sample_products(9, 1000, 3), mu.sample_products(9, 1000, 3));
        assert_ne!(mu.sample_products(9, 1000, 3), mu.sample_products(9, 1000, 4));
    }

    #[test]
    fn product_law_splits() {
        // κ statistics of μ^{*5} against products of μ^{*2} and μ^{*3} draws.
        let mu = generic_measure();
        let whole: Vec<f64> = mu.sample_products(5, 50_000, 1).iter().map(|g| g.cartan_norm()).collect();
        let a = mu.sample_products(2, 50_000, 2);
        let b = mu.sample_products(3, 50_000, 3);
        let split: Vec<f64> = a.iter().zip(&b).map(|(g, h)| (*g * *h).cartan_norm()).collect();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, s2)
        };
        let (m1, v1) = stats(&whole);
        let (m2, v2) = stats(&split);
        assert!((m1 - m2).abs() < 3.0 * ((v1 + v2) / 50_000.0).sqrt());
    }

    #[test]
    fn moments_and_radius() {
        let rot = AtomicMeasure::uniform(&[GroupElement::rotation(0.2), GroupElement::rotation(1.0)]).unwrap();
        assert!(rot.moment(2).unwrap() < 1e-14 && rot.support_radius() < 1e-7);
        let a = AtomicMeasure::dirac(GroupElement::diagonal(-1.3));
        assert!((a.moment(3).unwrap() - 1.3f64.powi(3)).abs() < 1e-12);
        assert!((a.support_radius() - 1.3).abs() < 1e-13);
        let mu = generic_measure();
        let brute: f64 = mu.atoms().iter().map(|(g, w)| w * cartan(g).t.powi(4)).sum();
        assert!((mu.moment(4).unwrap() - brute).abs() < 1e-14);
        assert!(mu.moment(5).is_err());
        let walk = AtomicMeasure::default_walk(0.3);
        assert!((walk.support_radius() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ball_volume_against_riemann_sum() {
        let delta = 0.4;
        let (np, nt) = (2000, 2000);
        let tmax = 1.0;
        let mut s = 0.0;
        for i in 0..np {
            let psi = TAU * (i as f64 + 0.5) / np as f64;
            for j in 0..nt {
                let t = tmax * (j as f64 + 0.5) / nt as f64;
                let g = GroupElement::diagonal(t) * GroupElement::rotation(psi);
                if g.frobenius_distance(&GroupElement::identity()) < delta {
                    s += t.sinh();
                }
            }
        }
        s *= (TAU / np as f64) * (tmax / nt as f64);
        let v = frobenius_ball_volume(delta);
        assert!((s / v - 1.0).abs() < 5e-3, "{s} vs {v}");
    }

    #[test]
    fn flattening_of_a_dirac_mass() {
        let e = AtomicMeasure::dirac(GroupElement::identity());
        let f = e.flattening_l2(3, 0.05, 10_000, 1).unwrap();
        assert!((f.estimate - frobenius_ball_volume(0.05).powf(-0.5)).abs() < 1e-9);
    }

    #[test]
    fn flattening_at_one_step_matches_double_sum() {
        let mu = AtomicMeasure::default_walk(0.3);
        let delta = 0.35;
        let exact: f64 = mu
            .atoms()
            .iter()
            .flat_map(|(g, w)| mu.atoms().iter().map(move |(h, v)| w * v * f64::from(u8::from(g.frobenius_distance(h) < delta))))
            .sum();
        let vol = frobenius_ball_volume(delta);
        let f = mu.flattening_l2(1, delta, 100_000, 9).unwrap();
        assert!((f.estimate - (exact / vol).sqrt()).abs() < 3.0 * f.stderr + 1e-12);
    }

    #[test]
    fn subgroup_distances() {
        let g = GroupElement::diagonal(0.9);
        assert!(SubgroupFamily::Diagonal.distance(&g) < 1e-7);
        assert!(SubgroupFamily::Borel.distance(&(g * GroupElement::unipotent(2.0))) < 1e-7);
        assert!(SubgroupFamily::Unipotent.distance(&GroupElement::unipotent(-3.0)) < 1e-12);
        assert!(SubgroupFamily::Rotations.distance(&GroupElement::rotation(2.0)) < 1e-7);
        // brute force against a parameter scan
        let m = GroupElement::rotation(0.3) * GroupElement::diagonal(0.5) * GroupElement::unipotent(0.2);
        let scan = (0..20_000)
            .map(|i| GroupElement::rotation(TAU * i as f64 / 20_000.0).frobenius_distance(&m))
            .fold(f64::INFINITY, f64::min);
        assert!((SubgroupFamily::Rotations.distance(&m) - scan).abs() < 1e-6);
    }

    #[test]
    fn concentration_extremes() {
        let e = AtomicMeasure::dirac(GroupElement::identity());
        let r = e.subgroup_concentration(4, 0.05, 10_000, 1).unwrap();
        assert!(r.masses.values().all(|m| *m == 1.0));
        let k = GroupElement::rotation(0.7);
        let conj_a = AtomicMeasure::uniform(&[GroupElement::diagonal(0.3), GroupElement::diagonal(-0.2)]).unwrap().conjugate(&k);
        let r = conj_a.subgroup_concentration(5, 0.05, 10_000, 2).unwrap();
        assert!(r.masses["A"] > 0.999);
    }
}
