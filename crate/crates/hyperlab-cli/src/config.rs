//! Experiment configuration: a TOML document with the sections `[measure]`,
//! `[operator]`, `[llt]`, `[furstenberg]` and `[output]`. Everything is
//! checked in [`ExperimentConfig::validate`] before any numerics run.

use std::path::{Path, PathBuf};

use hyperlab::boundary_operators::{FourierTruncation, ModeSpace, ALIASING_RATIO};
use hyperlab::measures::AtomicMeasure;
use hyperlab::rank_one_group::GroupElement;
use hyperlab::spherical_analysis::TestFunctionX;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: MeasureSection,
    pub operator: OperatorSection,
    pub llt: LltSection,
    pub furstenberg: FurstenbergSection,
    pub output: OutputSection,
}

/// Atoms given either as generator words scaled by `epsilon` or as matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub epsilon: Option<f64>,
    /// `K`, `A` or `N` with an optional sign: `exp(±ε·X)` for the rotation,
    /// diagonal and upper unipotent generators.
    pub words: Option<Vec<String>>,
    /// Row-major `[[a, b], [c, d]]`; rescaled to determinant 1 with a notice.
    pub matrices: Option<Vec<[[f64; 2]; 2]>>,
    /// Uniform when omitted.
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub symmetrize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub max_mode: usize,
    pub nodes: usize,
    pub r_max: f64,
    pub r_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    /// Bump centered at `k_θ a_D·o`.
    Gaussian { theta: f64, distance: f64, width: f64 },
}

/// `k_θ a_D`, the group element sending `o` to the polar point `(θ, D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarPoint {
    pub theta: f64,
    pub distance: f64,
}

impl PolarPoint {
    pub fn element(&self) -> GroupElement {
        GroupElement::rotation(self.theta) * GroupElement::diagonal(self.distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LltSection {
    pub f: TestFunctionSpec,
    pub basepoint: PolarPoint,
    pub n_range: Vec<usize>,
    /// 0 disables sampling.
    pub mc_samples: usize,
    #[serde(default = "default_mc_max_n")]
    pub mc_max_n: usize,
    pub seed: u64,
}

fn default_mc_max_n() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FurstenbergSection {
    /// High-mode cut levels `L`; the compressions keep `|m| ≥ 2^{L−1}`.
    pub levels: Vec<u32>,
    #[serde(default = "default_test_functions")]
    pub test_functions: usize,
    pub seed: u64,
}

fn default_test_functions() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.measure()?;
        let op = &self.operator;
        if op.max_mode == 0 {
            return Err(invalid("operator.max_mode", "must be positive"));
        }
        if op.nodes < ALIASING_RATIO * op.max_mode {
            return Err(invalid("operator.nodes", format!("{} is below {ALIASING_RATIO}·max_mode = {}", op.nodes, ALIASING_RATIO * op.max_mode)));
        }
        if !(op.r_max.is_finite() && op.r_max > 0.0) {
            return Err(invalid("operator.r_max", "must be a positive number"));
        }
        if op.r_nodes < 16 {
            return Err(invalid("operator.r_nodes", "need at least 16 nodes"));
        }
        let llt = &self.llt;
        match &llt.f {
            TestFunctionSpec::Gaussian { theta, distance, width } => {
                if !(theta.is_finite() && *distance >= 0.0 && distance.is_finite()) {
                    return Err(invalid("llt.f", "theta must be finite and distance non-negative"));
                }
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(invalid("llt.f.width", "must be positive"));
                }
            }
        }
        if !(llt.basepoint.theta.is_finite() && llt.basepoint.distance.is_finite() && llt.basepoint.distance >= 0.0) {
            return Err(invalid("llt.basepoint", "theta must be finite and distance non-negative"));
        }
        if llt.n_range.is_empty() || llt.n_range.contains(&0) || !llt.n_range.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("llt.n_range", "must be non-empty, positive and strictly increasing"));
        }
        if llt.mc_samples != 0 && llt.mc_samples < 10_000 {
            return Err(invalid("llt.mc_samples", "0 or at least 10000"));
        }
        let top_level = usize::BITS - op.max_mode.leading_zeros();
        let fz = &self.furstenberg;
        if fz.levels.is_empty() || fz.levels.iter().any(|l| *l == 0 || *l > top_level) {
            return Err(invalid("furstenberg.levels", format!("levels must lie in 1..={top_level} for max_mode {}", op.max_mode)));
        }
        if fz.test_functions == 0 {
            return Err(invalid("furstenberg.test_functions", "must be positive"));
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "list at least one of csv, json, svg"));
        }
        Ok(())
    }

    /// The walk measure, with notices for any renormalized matrix.
    pub fn measure_with_notices(&self) -> Result<(AtomicMeasure, Vec<String>), CliError> {
        let m = &self.measure;
        let mut notices = Vec::new();
        let elements: Vec<GroupElement> = match (&m.words, &m.matrices) {
            (Some(words), None) => {
                let eps = m.epsilon.ok_or_else(|| invalid("measure.epsilon", "required with words"))?;
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(invalid("measure.epsilon", "must be positive"));
                }
                words.iter().map(|w| parse_word(w, eps)).collect::<Result<_, _>>()?
            }
            (None, Some(mats)) => {
                let mut out = Vec::with_capacity(mats.len());
                for (i, [[a, b], [c, d]]) in mats.iter().enumerate() {
                    let (g, det) = GroupElement::renormalized(*a, *b, *c, *d).map_err(|e| invalid(&format!("measure.matrices[{i}]"), e))?;
                    if (det - 1.0).abs() > 1e-12 {
                        notices.push(format!("matrix {i} has determinant {det}; rescaled by {}", det.sqrt().recip()));
                    }
                    out.push(g);
                }
                out
            }
            _ => return Err(invalid("measure", "give exactly one of `words` or `matrices`")),
        };
        let weights = match &m.weights {
            Some(w) if w.len() != elements.len() => {
                return Err(invalid("measure.weights", format!("{} weights for {} atoms", w.len(), elements.len())));
            }
            Some(w) => w.clone(),
            None => vec![1.0 / elements.len().max(1) as f64; elements.len()],
        };
        let mu = AtomicMeasure::new(elements.into_iter().zip(weights).collect()).map_err(|e| invalid("measure", e))?;
        Ok((if m.symmetrize { mu.symmetrize() } else { mu }, notices))
    }

    pub fn measure(&self) -> Result<AtomicMeasure, CliError> {
        self.measure_with_notices().map(|(m, _)| m)
    }

    pub fn truncation(&self) -> FourierTruncation {
        FourierTruncation { max_mode: self.operator.max_mode, nodes: self.operator.nodes, space: ModeSpace::Boundary }
    }
}

fn parse_word(word: &str, eps: f64) -> Result<GroupElement, CliError> {
    let (sign, letter) = match word.trim().strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, word.trim().trim_start_matches('+')),
    };
    let s = sign * eps;
    match letter {
        "K" => Ok(GroupElement::exp_rotation_generator(s)),
        "A" => Ok(GroupElement::exp_diagonal_generator(s)),
        "N" => Ok(GroupElement::unipotent(s)),
        _ => Err(invalid("measure.words", format!("unknown generator word {word:?}; use K, A or N with an optional sign"))),
    }
}

impl TestFunctionSpec {
    pub fn build(&self) -> Result<TestFunctionX, CliError> {
        match self {
            Self::Gaussian { theta, distance, width } => TestFunctionX::gaussian_at(*theta, *distance, *width).map_err(|e| invalid("llt.f", e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT: &str = include_str!("../../../configs/default.toml");

    #[test]
    fn shipped_default_parses() {
        let cfg = ExperimentConfig::parse(DEFAULT).unwrap();
        let mu = cfg.measure().unwrap();
        assert_eq!(mu, AtomicMeasure::default_walk(0.3));
    }

    #[test]
    fn missing_section_names_the_field() {
        let text = DEFAULT.replace("[operator]", "[unused]");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("operator"), "{err}");
    }

    #[test]
    fn aliasing_guard_is_enforced() {
        let text = DEFAULT.replace("nodes = 512", "nodes = 100");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("operator.nodes"), "{err}");
    }

    #[test]
    fn non_unimodular_matrix_gets_a_notice() {
        let text = DEFAULT.replace("words = [\"K\", \"-K\", \"A\", \"-A\"]", "matrices = [[[2.0, 0.0], [0.0, 2.0]], [[1.0, 0.5], [0.0, 1.0]]]");
        let cfg = ExperimentConfig::parse(&text.replace("epsilon = 0.3\n", "")).unwrap();
        let (mu, notices) = cfg.measure_with_notices().unwrap();
        assert_eq!(notices.len(), 1);
        assert_eq!(mu.atoms()[0].0, GroupElement::identity());
    }

    #[test]
    fn bad_words_and_ranges_are_rejected() {
        for (from, to) in [
            ("\"-A\"]", "\"-Q\"]"),
            ("n_range = [8, 16, 32, 64, 128, 256]", "n_range = [16, 8]"),
            ("mc_samples = 100000", "mc_samples = 10"),
            ("levels = [1, 2, 3, 4, 5, 6, 7]", "levels = [9]"),
        ] {
            assert!(DEFAULT.contains(from), "{from}");
            assert!(ExperimentConfig::parse(&DEFAULT.replace(from, to)).is_err(), "{to}");
        }
    }
}
