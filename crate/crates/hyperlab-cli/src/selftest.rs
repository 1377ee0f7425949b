//! Fast invariant suite behind `hyperlab selftest`.

use std::f64::consts::PI;
use std::time::Instant;

use hyperlab::boundary_operators::{
    assemble_transfer, cache_key, grid_positivity, lambda_curve, FourierTruncation, MatrixCache, ModeSpace, OperatorError,
    OperatorKind,
};
use hyperlab::furstenberg_lab::{agmon_check, casimir_pairings, stationarity_residual, stationary_density, AGMON_CONSTANT};
use hyperlab::llt_lab::{lhs_exact, lhs_monte_carlo, split_grid, LltConfig, DEFAULT_STEP, DEFAULT_WIDTH};
use hyperlab::measures::AtomicMeasure;
use hyperlab::numerics::C64;
use hyperlab::rank_one_group::{cartan, iwasawa, GroupElement};
use hyperlab::spherical_analysis::{c_inverse_sq, legendre_function_series, spherical_function, TestFunctionX};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

type Outcome = Result<(bool, String), String>;

struct Check {
    name: &'static str,
    run: Box<dyn Fn(u64) -> Outcome>,
}

fn check(name: &'static str, run: impl Fn(u64) -> Outcome + 'static) -> Check {
    Check { name, run: Box::new(run) }
}

fn small_trunc() -> FourierTruncation {
    FourierTruncation { max_mode: 32, nodes: 256, space: ModeSpace::Boundary }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn checks() -> Vec<Check> {
    vec![
        check("iwasawa/cartan round trips, |H| <= kappa", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst: f64 = 0.0;
            let mut h_ok = true;
            for _ in 0..10_000 {
                let g = GroupElement::rotation(rng.gen_range(0.0..PI))
                    * GroupElement::diagonal(rng.gen_range(-5.0..5.0))
                    * GroupElement::unipotent(rng.gen_range(-3.0..3.0));
                let iw = iwasawa(&g).map_err(err)?;
                worst = worst.max(iw.reconstruct().max_entry_difference(&g)).max(cartan(&g).reconstruct().max_entry_difference(&g));
                h_ok &= g.horocycle_height().abs() <= g.cartan_norm() + 1e-10;
            }
            Ok((worst < 1e-10 && h_ok, format!("max error {worst:.2e}")))
        }),
        check("c-function equals pi r tanh(pi r)", |_| {
            let worst = (0..=500).map(|i| 0.1 * i as f64).map(|r| (c_inverse_sq(r) - PI * r * (PI * r).tanh()).abs()).fold(0.0, f64::max);
            Ok((worst < 1e-10, format!("max error {worst:.2e}")))
        }),
        check("spherical function at e and a_1", |_| {
            let at_e = spherical_function(0.7, 0.0);
            let oracle = legendre_function_series(C64::new(-0.5, 0.0), 1f64.cosh()).map_err(err)?.re;
            let diff = (spherical_function(0.0, 1.0) - oracle).abs();
            Ok((at_e == 1.0 && diff < 1e-8, format!("|phi_0(a_1) - P(cosh 1)| = {diff:.2e}")))
        }),
        check("Perron data of the default walk (N = 32)", |_| {
            let mu = AtomicMeasure::default_walk(DEFAULT_STEP);
            let curve = lambda_curve(&mu, &[-0.5, 0.0, 0.5], &small_trunc()).map_err(err)?;
            let s0 = curve.at(0.0).expect("grid has 0");
            let conj = (curve.lambda_at(-0.5).unwrap() - curve.lambda_at(0.5).unwrap().conj()).norm();
            let eta_min = grid_positivity(&s0.eta, &s0.trunc).0.min(grid_positivity(&s0.eta_prime, &s0.trunc).0);
            let ok = s0.sigma < 1.0 && s0.gap > 0.0 && eta_min > 0.0 && conj < 1e-10;
            Ok((ok, format!("sigma {:.9}, gap {:.4}, eta min {eta_min:.3}, conj {conj:.1e}", s0.sigma, s0.gap)))
        }),
        check("stationary density of the default walk", |seed| {
            let mu = AtomicMeasure::default_walk(DEFAULT_STEP);
            let psi = stationary_density(&mu, &small_trunc()).map_err(err)?;
            let res = stationarity_residual(&psi, &mu, 16, seed);
            let ok = psi.eigenvalue_distance() < 1e-6 && (psi.mass - 1.0).abs() < 1e-12 && psi.positivity_min > 0.0 && res < 1e-8;
            Ok((ok, format!("eigenvalue distance {:.1e}, positivity {:.3}, residual {res:.1e}", psi.eigenvalue_distance(), psi.positivity_min)))
        }),
        check("circle partial integration and Agmon bound", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<C64> { (0..33).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect() };
            let mut worst_ratio: f64 = 0.0;
            let mut worst_casimir: f64 = 0.0;
            for _ in 0..100 {
                let (a, b) = (draw(&mut rng), draw(&mut rng));
                let (lhs, rhs) = casimir_pairings(&a, &b);
                worst_casimir = worst_casimir.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
                worst_ratio = worst_ratio.max(agmon_check(&a).2);
            }
            Ok((worst_casimir < 1e-10 && worst_ratio <= AGMON_CONSTANT, format!("identity {worst_casimir:.1e}, Agmon ratio {worst_ratio:.3}")))
        }),
        check("exact walk average vs Monte Carlo at n = 4", |seed| {
            let mu = AtomicMeasure::default_walk(DEFAULT_STEP);
            let cfg = LltConfig {
                measure: mu,
                f: TestFunctionX::gaussian(GroupElement::identity(), DEFAULT_WIDTH).map_err(err)?,
                basepoint: GroupElement::identity(),
                n_range: vec![4],
                delta0: 1.0,
                trunc: small_trunc(),
                grid: split_grid(1.0, 20.0, 16).map_err(err)?,
                mc_samples: 100_000,
                seed,
            };
            let exact = lhs_exact(&cfg, 1.0, 4).map_err(err)?;
            let mc = lhs_monte_carlo(&cfg, 1.0, 4);
            let z = (exact - mc.mean).abs() / mc.stderr;
            Ok((z <= 4.5, format!("exact {exact:.6}, mc {:.6} +- {:.1e} ({z:.2} stderr)", mc.mean, mc.stderr)))
        }),
        check("Monte Carlo is reproducible from its seed", |seed| {
            let mu = AtomicMeasure::default_walk(DEFAULT_STEP);
            let same = mu.sample_products(8, 2_000, seed) == mu.sample_products(8, 2_000, seed);
            Ok((same, "two runs identical".into()))
        }),
        check("corrupted cache entry is rejected", |_| {
            let dir = std::env::temp_dir().join(format!("hyperlab-selftest-{}", std::process::id()));
            let outcome = corrupted_cache_detected(&dir);
            let _ = std::fs::remove_dir_all(&dir);
            outcome
        }),
    ]
}

fn corrupted_cache_detected(dir: &std::path::Path) -> Outcome {
    let cache = MatrixCache::new(dir).map_err(err)?;
    let mu = AtomicMeasure::default_walk(DEFAULT_STEP);
    let trunc = FourierTruncation { max_mode: 4, nodes: 32, space: ModeSpace::Boundary };
    let fresh = assemble_transfer(&mu, 0.5, &trunc, OperatorKind::Transfer).map_err(err)?;
    let stored = cache.transfer(&mu, 0.5, &trunc, OperatorKind::Transfer).map_err(err)?;
    let reloaded = cache.transfer(&mu, 0.5, &trunc, OperatorKind::Transfer).map_err(err)?;
    let round_trip = stored.entries == fresh.entries && reloaded.entries == fresh.entries;
    let key = cache_key(&mu, 0.5, &trunc, &OperatorKind::Transfer);
    let file = std::fs::read_dir(dir).map_err(err)?.next().ok_or("cache wrote nothing")?.map_err(err)?.path();
    let mut bytes = std::fs::read(&file).map_err(err)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x5a;
    std::fs::write(&file, bytes).map_err(err)?;
    let detected = matches!(cache.load(&key), Err(OperatorError::CorruptCache { .. }));
    Ok((round_trip && detected, format!("round trip {round_trip}, flipped byte detected {detected}")))
}

pub fn run(seed: u64) -> Result<(), CliError> {
    println!("selftest seed = {seed} (rerun with --seed {seed} to reproduce)");
    println!("{:<44} {:<6} {:>8}  detail", "check", "result", "seconds");
    let mut failures = 0;
    for c in checks() {
        let start = Instant::now();
        let (pass, detail) = match (c.run)(seed) {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        println!("{:<44} {:<6} {:>8.2}  {detail}", c.name, if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    if failures == 0 {
        Ok(())
    } else {
        Err(CliError::SelfTest(failures))
    }
}
