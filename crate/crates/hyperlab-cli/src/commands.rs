//! The `decompose`, `spectrum`, `llt` and `furstenberg` commands.

use std::f64::consts::PI;

use hyperlab::boundary_operators::{
    grid_positivity, lambda_curve_cached, spectral_summary_with_stability, CurvePoint, HessianEstimate, MatrixCache,
};
use hyperlab::furstenberg_lab::{
    fixed_point_residual, high_mode_decay_curve, smoothness_report, stationarity_residual, stationary_density, HighModeCurve,
    AGMON_CONSTANT, FIXED_POINT_TOLERANCE,
};
use hyperlab::llt_lab::{
    run_convergence, split_grid, LltConfig, RunOptions, SpectralContext, DELTA0_SCAN_LIMIT, DELTA0_SCAN_STEP, HESSIAN_STEP,
    LINE_PLANCHEREL_CONSTANT, LIMIT_TOLERANCE, PSI_NODES,
};
use hyperlab::measures::{AtomicMeasure, ATOM_CAP, MC_CHUNKS};
use hyperlab::rank_one_group::{cartan, iwasawa, GroupElement};
use hyperlab::spherical_analysis::PLANCHEREL_CONSTANT;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{num, opt, Artifacts, LinePlot, Series};

/// Flags shared by the computing commands.
pub struct RunFlags {
    pub cache: Option<MatrixCache>,
    pub no_mc: bool,
}

/// Step of the λ-curve beyond the δ₀ scan range.
const COARSE_STEP: f64 = 0.25;
/// Points per axis in the ψ₀ profile.
const PROFILE_RADII: usize = 13;
const DENSITY_SAMPLES: usize = 256;
/// Largest number of sampled matrix products one `llt` run may request.
pub const MC_PRODUCT_BUDGET: u64 = 2_000_000_000;

pub fn decompose(matrix: &str) -> Result<(), CliError> {
    let m: [[f64; 2]; 2] = serde_json::from_str(matrix)
        .map_err(|e| CliError::Validation(format!("expected a matrix like [[1,0],[1,1]], got {matrix:?}: {e}")))?;
    let (g, det) = GroupElement::renormalized(m[0][0], m[0][1], m[1][0], m[1][1]).map_err(|e| CliError::Validation(e.to_string()))?;
    if (det - 1.0).abs() > 1e-12 {
        println!("notice: determinant {det} is not 1; decomposing the renormalized matrix (scaled by {})", det.sqrt().recip());
    }
    let [a, b, c, d] = g.entries();
    println!("g = [[{a}, {b}], [{c}, {d}]]");
    let iw = iwasawa(&g).map_err(|e| CliError::Validation(e.to_string()))?;
    println!("iwasawa  g = k(theta) a(t) n(x): theta = {}, t = H(g) = {}, x = {}", iw.theta, iw.t, iw.x);
    println!("  reconstruction error (max entry) = {:e}", iw.reconstruct().max_entry_difference(&g));
    let ct = cartan(&g);
    println!("cartan   g = k(theta1) a(t) k(theta2): theta1 = {}, t = kappa(g) = {}, theta2 = {}", ct.theta1, ct.t, ct.theta2);
    println!("  reconstruction error (max entry) = {:e}", ct.reconstruct().max_entry_difference(&g));
    Ok(())
}

fn print_notices(notices: &[String]) {
    for n in notices {
        eprintln!("notice: {n}");
    }
}

#[derive(Serialize)]
struct AtomRecord {
    matrix: [[f64; 2]; 2],
    weight: f64,
}

fn atom_records(mu: &AtomicMeasure) -> Vec<AtomRecord> {
    mu.atoms()
        .iter()
        .map(|(g, w)| {
            let [a, b, c, d] = g.entries();
            AtomRecord { matrix: [[a, b], [c, d]], weight: *w }
        })
        .collect()
}

/// Numerical knobs echoed in every JSON summary.
#[derive(Serialize)]
struct Knobs {
    max_mode: usize,
    quadrature_nodes: usize,
    r_max: f64,
    r_nodes: usize,
    delta0_rule: &'static str,
    delta0_scan_step: f64,
    delta0_scan_limit: f64,
    hessian_step: f64,
    plancherel_constant: f64,
    line_plancherel_constant: f64,
    exact_atom_cap: usize,
    prune_threshold: f64,
    mc_chunks: usize,
}

fn knobs(cfg: &ExperimentConfig) -> Knobs {
    Knobs {
        max_mode: cfg.operator.max_mode,
        quadrature_nodes: cfg.operator.nodes,
        r_max: cfg.operator.r_max,
        r_nodes: cfg.operator.r_nodes,
        delta0_rule: "largest grid |r| such that every node within it keeps gap >= gap(0)/2",
        delta0_scan_step: DELTA0_SCAN_STEP,
        delta0_scan_limit: DELTA0_SCAN_LIMIT,
        hessian_step: HESSIAN_STEP,
        plancherel_constant: PLANCHEREL_CONSTANT,
        line_plancherel_constant: LINE_PLANCHEREL_CONSTANT,
        exact_atom_cap: ATOM_CAP,
        prune_threshold: 0.0,
        mc_chunks: MC_CHUNKS,
    }
}

/// Fine steps up to the δ₀ scan limit, coarse beyond, mirrored, plus the
/// Hessian stencil.
fn spectrum_grid(r_max: f64) -> Vec<f64> {
    let fine_limit = DELTA0_SCAN_LIMIT.min(r_max);
    let fine = (fine_limit / DELTA0_SCAN_STEP).round() as usize;
    let mut half: Vec<f64> = (0..=fine).map(|k| k as f64 * DELTA0_SCAN_STEP).collect();
    let mut r = fine_limit + COARSE_STEP;
    while r <= r_max + 1e-9 {
        half.push(r);
        r += COARSE_STEP;
    }
    let mut grid: Vec<f64> = half.iter().flat_map(|r| [*r, -*r]).collect();
    grid.extend([-2.0 * HESSIAN_STEP, -HESSIAN_STEP, HESSIAN_STEP, 2.0 * HESSIAN_STEP]);
    grid
}

#[derive(Serialize)]
struct SpectrumReport {
    knobs: Knobs,
    atoms: Vec<AtomRecord>,
    sigma: f64,
    sigma_doubled_truncation: f64,
    gap: f64,
    ess_proxy: f64,
    ess_proxy_stable: Option<bool>,
    eigen_residual: f64,
    adjoint_residual: f64,
    eta_min: f64,
    eta_prime_min: f64,
    hessian: Option<HessianEstimate>,
    delta0: Option<f64>,
    c_mu: Option<f64>,
    limit_data_error: Option<String>,
    sup_spectral_radius_high: Option<f64>,
    sup_norm_high: Option<f64>,
    norm_at_zero: f64,
}

pub fn spectrum(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<(), CliError> {
    let (mu, notices) = cfg.measure_with_notices()?;
    print_notices(&notices);
    let trunc = cfg.truncation();
    let mut out = Artifacts::new(&cfg.output)?;
    let (stable, fine) = spectral_summary_with_stability(&mu, &trunc)?;
    let curve = lambda_curve_cached(&mu, &spectrum_grid(cfg.operator.r_max), &trunc, flags.cache.as_ref())?;
    let zero = curve.at(0.0).expect("grid contains 0").clone();
    let (hessian, delta0, c_mu, limit_data_error) = match SpectralContext::from_scan(curve.clone(), cfg.operator.r_max) {
        Ok(ctx) => (Some(ctx.hessian), Some(ctx.delta0), Some(ctx.c_mu), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    let report = SpectrumReport {
        knobs: knobs(cfg),
        atoms: atom_records(&mu),
        sigma: zero.sigma,
        sigma_doubled_truncation: fine.sigma,
        gap: zero.gap,
        ess_proxy: zero.ess_proxy,
        ess_proxy_stable: stable.ess_proxy_stable,
        eigen_residual: zero.residual,
        adjoint_residual: zero.adjoint_residual,
        eta_min: grid_positivity(&zero.eta, &trunc).0,
        eta_prime_min: grid_positivity(&zero.eta_prime, &trunc).0,
        hessian,
        delta0,
        c_mu,
        limit_data_error,
        sup_spectral_radius_high: curve.sup_radius_high,
        sup_norm_high: curve.sup_norm_high,
        norm_at_zero: curve.norm_at_zero,
    };
    let mut points: Vec<&CurvePoint> = curve.points.iter().collect();
    points.sort_by(|a, b| a.r.total_cmp(&b.r));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![num(p.r), num(p.lambda.re), num(p.lambda.im), num(p.lambda.norm()), num(p.gap), num(p.spectral_radius), num(p.norm)])
        .collect();
    out.csv("lambda_curve.csv", &["r", "lambda_re", "lambda_im", "lambda_abs", "gap", "spectral_radius", "operator_norm"], &rows)?;
    out.json("spectrum.json", &report)?;
    out.svg(
        "lambda_curve.svg",
        &LinePlot {
            title: "Perron branch of S_r".into(),
            x_label: "r".into(),
            y_label: "value".into(),
            log_x: false,
            log_y: false,
            series: vec![
                Series { label: "|lambda(r)|".into(), points: points.iter().map(|p| (p.r, p.lambda.norm())).collect() },
                Series { label: "gap(r)".into(), points: points.iter().map(|p| (p.r, p.gap)).collect() },
                Series { label: "rho(S_r)".into(), points: points.iter().map(|p| (p.r, p.spectral_radius)).collect() },
            ],
        },
    )?;
    println!("sigma = {}  gap = {}  delta0 = {}  Q = {}", report.sigma, report.gap, opt(delta0), opt(hessian.map(|h| h.q)));
    if let Some(e) = &report.limit_data_error {
        println!("limit data unavailable: {e}");
    }
    finish(&out);
    Ok(())
}

#[derive(Serialize)]
struct LltSummary<'a> {
    knobs: Knobs,
    atoms: Vec<AtomRecord>,
    test_function: &'a crate::config::TestFunctionSpec,
    basepoint: crate::config::PolarPoint,
    n_range: &'a [usize],
    mc_samples: usize,
    mc_max_n: usize,
    monte_carlo: bool,
    seed: u64,
    psi_nodes: usize,
    limit_tolerance: f64,
    sigma: f64,
    q: f64,
    c2: f64,
    delta0: f64,
    c_mu: f64,
    l1_norm: f64,
    limit_direct: f64,
    limit_boundary: f64,
    limit_relative_gap: f64,
    fitted_slope: f64,
    monotone_after_fit_start: bool,
    low_frequency_slope: f64,
    high_frequency_rate: Option<f64>,
    remainder_rate: Option<f64>,
    bound_ratio: f64,
}

pub fn llt(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<(), CliError> {
    let (mu, notices) = cfg.measure_with_notices()?;
    print_notices(&notices);
    let trunc = cfg.truncation();
    let section = &cfg.llt;
    let monte_carlo = !flags.no_mc && section.mc_samples > 0;
    if monte_carlo {
        let steps: u64 = section.n_range.iter().filter(|n| **n <= section.mc_max_n).map(|n| *n as u64).sum();
        let products = steps.saturating_mul(section.mc_samples as u64);
        if products > MC_PRODUCT_BUDGET {
            return Err(CliError::Budget(format!(
                "Monte Carlo would multiply {products} matrices, above {MC_PRODUCT_BUDGET}; lower llt.mc_samples or llt.mc_max_n, or pass --no-mc"
            )));
        }
    }
    let mut out = Artifacts::new(&cfg.output)?;
    let ctx = SpectralContext::build_cached(&mu, &trunc, flags.cache.as_ref())?;
    let lcfg = LltConfig {
        measure: mu.clone(),
        f: section.f.build()?,
        basepoint: section.basepoint.element(),
        n_range: section.n_range.clone(),
        delta0: ctx.delta0,
        trunc,
        grid: split_grid(ctx.delta0, cfg.operator.r_max, cfg.operator.r_nodes)?,
        mc_samples: section.mc_samples,
        seed: section.seed,
    };
    let opts = RunOptions { exact: true, monte_carlo, mc_max_n: section.mc_max_n, ..RunOptions::default() };
    let report = run_convergence(&lcfg, &ctx, opts)?;

    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                opt(r.lhs_exact),
                r.exact_refusal.clone().unwrap_or_default(),
                opt(r.lhs_mc.map(|m| m.mean)),
                opt(r.lhs_mc.map(|m| m.stderr)),
                num(r.lhs_fourier),
                num(r.rhs_limit),
                opt(r.abs_error_exact),
                opt(r.abs_error_mc),
                num(r.abs_error_fourier),
                num(r.high_freq),
                num(r.low_freq),
                num(r.low_rank_one),
            ]
        })
        .collect();
    out.csv(
        "llt_convergence.csv",
        &[
            "n",
            "lhs_exact",
            "exact_refusal",
            "lhs_mc",
            "mc_stderr",
            "lhs_fourier",
            "rhs_limit",
            "abs_error_exact",
            "abs_error_mc",
            "abs_error_fourier",
            "high_freq",
            "low_freq",
            "low_rank_one",
        ],
        &rows,
    )?;

    let mut profile = Vec::new();
    for theta in [0.0, 0.25 * PI, 0.5 * PI, 0.75 * PI] {
        for i in 0..PROFILE_RADII {
            let t = 0.25 * i as f64;
            let g = GroupElement::rotation(theta) * GroupElement::diagonal(t);
            profile.push(vec![num(theta), num(t), num(ctx.psi_zero(&g))]);
        }
    }
    out.csv("psi0_profile.csv", &["theta", "t", "psi0"], &profile)?;

    let summary = LltSummary {
        knobs: knobs(cfg),
        atoms: atom_records(&mu),
        test_function: &section.f,
        basepoint: section.basepoint,
        n_range: &section.n_range,
        mc_samples: section.mc_samples,
        mc_max_n: section.mc_max_n,
        monte_carlo,
        seed: section.seed,
        psi_nodes: PSI_NODES,
        limit_tolerance: LIMIT_TOLERANCE,
        sigma: ctx.sigma(),
        q: ctx.hessian.q,
        c2: ctx.hessian.c2,
        delta0: ctx.delta0,
        c_mu: ctx.c_mu,
        l1_norm: report.l1_norm,
        limit_direct: report.limit.direct,
        limit_boundary: report.limit.boundary,
        limit_relative_gap: report.limit.relative_gap,
        fitted_slope: report.slope,
        monotone_after_fit_start: report.monotone,
        low_frequency_slope: report.low_slope,
        high_frequency_rate: report.high_rate,
        remainder_rate: report.remainder_rate,
        bound_ratio: report.bound_ratio,
    };
    out.json("llt_summary.json", &summary)?;

    let series = |label: &str, f: &dyn Fn(&hyperlab::llt_lab::ConvergenceRecord) -> Option<f64>| Series {
        label: label.into(),
        points: report.records.iter().filter_map(|r| f(r).map(|v| (r.n as f64, v))).collect(),
    };
    out.svg(
        "llt_error.svg",
        &LinePlot {
            title: "|n^(3/2) sigma^(-n) E f(walk) - limit|".into(),
            x_label: "n".into(),
            y_label: "absolute error".into(),
            log_x: true,
            log_y: true,
            series: vec![
                series("fourier", &|r| Some(r.abs_error_fourier)),
                series("exact", &|r| r.abs_error_exact),
                series("monte carlo", &|r| r.abs_error_mc),
            ],
        },
    )?;
    for r in &report.records {
        println!("n = {:>4}  fourier = {:<22}  |error| = {}", r.n, r.lhs_fourier, r.abs_error_fourier);
    }
    println!("limit = {} (direct {}), fitted slope = {}", report.limit.boundary, report.limit.direct, report.slope);
    finish(&out);
    Ok(())
}

#[derive(Serialize)]
struct FurstenbergVerdict {
    knobs: Knobs,
    atoms: Vec<AtomRecord>,
    levels: Vec<u32>,
    test_functions: usize,
    seed: u64,
    fixed_point_tolerance: f64,
    agmon_constant: f64,
    eigenvalue_re: f64,
    eigenvalue_im: f64,
    eigenvalue_distance: f64,
    mass: f64,
    positivity_min: f64,
    fixed_point_residual: f64,
    stationarity_residual: f64,
    decay_exponent: f64,
    smoothness_class: Option<i64>,
    truncated_fit: bool,
    s0_plus_quarter_at: Option<u32>,
    t0_quarter_at: Option<u32>,
    t0_half_at: Option<u32>,
    t0_non_increasing: bool,
}

pub fn furstenberg(cfg: &ExperimentConfig, _flags: &RunFlags) -> Result<(), CliError> {
    let (mu, notices) = cfg.measure_with_notices()?;
    print_notices(&notices);
    let trunc = cfg.truncation();
    let section = &cfg.furstenberg;
    let mut out = Artifacts::new(&cfg.output)?;
    let psi = stationary_density(&mu, &trunc)?;
    let residual = fixed_point_residual(&psi, &mu)?;
    let stationarity = stationarity_residual(&psi, &mu, section.test_functions, section.seed);
    let decay = smoothness_report(&psi.coefficients)?;
    let (s_plus, t0): (HighModeCurve, HighModeCurve) = high_mode_decay_curve(&mu, &trunc, &section.levels)?;

    let density: Vec<(f64, f64)> = (0..DENSITY_SAMPLES)
        .map(|j| {
            let theta = PI * j as f64 / DENSITY_SAMPLES as f64;
            (theta, psi.eval(theta))
        })
        .collect();
    out.csv("furstenberg_density.csv", &["theta", "density"], &density.iter().map(|(t, v)| vec![num(*t), num(*v)]).collect::<Vec<_>>())?;
    out.csv("fourier_decay.csv", &["level", "block_norm"], &decay.blocks.iter().map(|(l, v)| vec![l.to_string(), num(*v)]).collect::<Vec<_>>())?;
    let curve_rows: Vec<Vec<String>> =
        s_plus.points.iter().zip(&t0.points).map(|((l, a), (_, b))| vec![l.to_string(), num(*a), num(*b)]).collect();
    out.csv("highmode_decay.csv", &["level", "s0_plus_norm", "t0_norm"], &curve_rows)?;

    let verdict = FurstenbergVerdict {
        knobs: knobs(cfg),
        atoms: atom_records(&mu),
        levels: section.levels.clone(),
        test_functions: section.test_functions,
        seed: section.seed,
        fixed_point_tolerance: FIXED_POINT_TOLERANCE,
        agmon_constant: AGMON_CONSTANT,
        eigenvalue_re: psi.eigenvalue.re,
        eigenvalue_im: psi.eigenvalue.im,
        eigenvalue_distance: psi.eigenvalue_distance(),
        mass: psi.mass,
        positivity_min: psi.positivity_min,
        fixed_point_residual: residual,
        stationarity_residual: stationarity,
        decay_exponent: decay.s,
        smoothness_class: decay.m_class,
        truncated_fit: decay.truncated_fit,
        s0_plus_quarter_at: s_plus.quarter_at,
        t0_quarter_at: t0.quarter_at,
        t0_half_at: t0.half_at,
        t0_non_increasing: t0.non_increasing(),
    };
    out.json("furstenberg_verdict.json", &verdict)?;
    out.svg(
        "furstenberg_density.svg",
        &LinePlot {
            title: "stationary density on the boundary".into(),
            x_label: "theta".into(),
            y_label: "density".into(),
            log_x: false,
            log_y: false,
            series: vec![Series { label: "density".into(), points: density }],
        },
    )?;
    out.svg(
        "fourier_decay.svg",
        &LinePlot {
            title: "dyadic block norms".into(),
            x_label: "level".into(),
            y_label: "block norm".into(),
            log_x: false,
            log_y: true,
            series: vec![Series { label: "||P_l density||".into(), points: decay.blocks.iter().map(|(l, v)| (*l as f64, *v)).collect() }],
        },
    )?;
    println!(
        "eigenvalue distance = {:e}  mass = {}  positivity min = {}  stationarity = {:e}  s = {}",
        verdict.eigenvalue_distance, verdict.mass, verdict.positivity_min, verdict.stationarity_residual, verdict.decay_exponent
    );
    finish(&out);
    Ok(())
}

fn finish(out: &Artifacts) {
    for p in out.written() {
        println!("wrote {}", p.display());
    }
}
