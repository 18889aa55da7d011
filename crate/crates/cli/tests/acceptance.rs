//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use predmkt::combiner::{coalition_utility, Coalition};
use predmkt::deterrence::{
    find_block, overinvestment_example, ridge_example, scan_deterrence_region, DeterrenceScan, SeqOutcome,
};
use predmkt::differentiation::{
    costless_check, covariate_equilibria, diff_surplus_comparison, numerical_weight_derivative, soc_lhs, soc_terms,
    swap_gains, symmetric_candidates, weight_derivative, Classification, CostSchedule, CovariateEquilibrium,
    CovariateGame, FnFamily, Subset,
};
use predmkt::entry::{sweep_variance, SymmetricMarket};
use predmkt::mcoracle::{combined_check, default_ols, ols_checks, McConfig};
use predmkt::pricing::{check_dmr, marginal_prices, psi_map, solve_prices, solve_prices_from};
use predmkt::{MarketConfig, ModelSummary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, secs: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < secs, || {
        format!("runtime {:.2}s over the {secs}s budget", elapsed.as_secs_f64())
    })
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// Independent closed forms for the symmetric market with B = 0.
fn oracle_entrants(v: f64, c: f64) -> usize {
    (1..)
        .take_while(|&j: &usize| c * (j * (j - 1)) as f64 <= v)
        .last()
        .unwrap()
}

fn oracle_consumer(v: f64, n: usize, sigma2: f64, u: f64) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let nf = n as f64;
    -sigma2 - u - (2.0 * nf - 1.0) / (nf * (nf - 1.0)) * v
}

fn figure_sweep() -> Outcome {
    let start = Instant::now();
    let (c, u, sigma2) = (0.25, -5.0, 1.0);
    let grid: Vec<f64> = (1..=320).map(|i| i as f64 / 100.0).collect();
    let rows = sweep_variance(&grid, &SymmetricMarket::figure_defaults(1.0));
    let elapsed = start.elapsed();

    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut prev_total = f64::INFINITY;
    for row in &rows {
        let v = row.variance;
        let o = row.outcome.ok_or_else(|| format!("no outcome at V={v}"))?;
        let n = oracle_entrants(v, c);
        ensure(o.n_entrants == n, || format!("V={v}: {} entrants, expected {n}", o.n_entrants))?;
        let cs = oracle_consumer(v, n, sigma2, u);
        ensure((o.consumer - cs).abs() <= 1e-12, || format!("V={v}: consumer {} vs {cs}", o.consumer))?;
        ensure(o.total <= prev_total + 1e-12, || format!("total surplus rises at V={v}"))?;
        prev_total = o.total;
        if o.consumer > best.0 + 1e-12 {
            best = (o.consumer, v);
        }
    }
    for (v, n) in [(0.49, 1), (0.5, 2), (1.49, 2), (1.5, 3), (2.99, 3), (3.0, 4)] {
        let row = rows.iter().find(|r| r.variance == v).unwrap();
        ensure(row.outcome.unwrap().n_entrants == n, || format!("step at V={v}"))?;
    }
    ensure(best.1 == 0.5 && (best.0 - 3.25).abs() <= 1e-12, || {
        format!("consumer surplus peaks at V={} with {}", best.1, best.0)
    })?;
    for v in [0.5, 1.5, 3.0] {
        let row = rows.iter().find(|r| r.variance == v).unwrap();
        let ps = row.outcome.unwrap().producer;
        ensure(ps.abs() <= 1e-12, || format!("producer surplus {ps} at threshold V={v}"))?;
    }
    within_budget(elapsed, 1.0)?;
    Ok(format!("{} rows, peak CS 3.25 at V=0.5, {:.3}s", rows.len(), elapsed.as_secs_f64()))
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Coalition, MarketConfig) {
    let n = rng.random_range(1..=5);
    let dim = rng.random_range(1..=3);
    let models = (0..n)
        .map(|_| {
            let bias = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            ModelSummary::new(bias, rng.random_range(0.1..2.0), rng.random_range(0.01..0.5)).unwrap()
        })
        .collect();
    let cfg = MarketConfig::new(rng.random_range(0.0..1.5), rng.random_range(-20.0..-0.5), n).unwrap();
    (Coalition::from_summaries(models).unwrap(), cfg)
}

fn price_fixed_points() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (mut accepted, mut drawn, mut worst) = (0, 0, 0.0f64);
    while accepted < 500 {
        drawn += 1;
        let (e, cfg) = random_instance(&mut rng);
        // every model must beat the outside option on its own
        let worst_alone = e
            .summaries()
            .iter()
            .map(|m| -m.error() - cfg.sigma2)
            .fold(f64::INFINITY, f64::min);
        if worst_alone <= cfg.outside_option || !check_dmr(&e, &cfg).map_err(err)?.holds {
            continue;
        }
        accepted += 1;
        let mp = marginal_prices(&e, &cfg).map_err(err)?;
        let sol = solve_prices(&e, &cfg).map_err(err)?;
        let zero = vec![0.0; e.len()];
        let scattered: Vec<f64> = (0..e.len()).map(|_| rng.random_range(-2.0..4.0)).collect();
        for alt in [
            solve_prices_from(&e, &cfg, &zero).map_err(err)?,
            solve_prices_from(&e, &cfg, &scattered).map_err(err)?,
        ] {
            for (a, b) in alt.profile.prices().iter().zip(mp.prices()) {
                worst = worst.max((a - b).abs());
                ensure((a - b).abs() <= 1e-8, || {
                    format!("instance {drawn}: iteration reached {a}, marginal price {b}")
                })?;
            }
        }
        for (a, b) in sol.profile.prices().iter().zip(mp.prices()) {
            ensure((a - b).abs() <= 1e-8, || format!("instance {drawn}: fixed point {a} vs marginal {b}"))?;
        }
        ensure(sol.profile.prices().iter().all(|&p| p >= 0.0), || {
            format!("instance {drawn}: negative price in {:?}", sol.profile.prices())
        })?;
        let psi = psi_map(&sol.profile, &e, &cfg).map_err(err)?;
        let residual = psi
            .prices()
            .iter()
            .zip(sol.profile.prices())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(residual <= 1e-10, || format!("instance {drawn}: residual {residual}"))?;
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, 30.0)?;
    Ok(format!(
        "500 instances ({drawn} drawn), max gap from other starts {worst:.1e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn dmr_theorem() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for i in 0..200 {
        let n = rng.random_range(2..=5);
        let b: f64 = rng.random_range(-1.0..1.0);
        let v = rng.random_range(0.05..3.0);
        let sigma2 = rng.random_range(0.0..2.0);
        let threshold = -b * b - 1.5 * v - sigma2;
        let u = threshold - rng.random_range(1e-3..3.0);
        let m = ModelSummary::scalar(b, v, 0.1).map_err(err)?;
        let e = Coalition::from_summaries(vec![m; n]).map_err(err)?;
        let cfg = MarketConfig::new(sigma2, u, n).map_err(err)?;
        ensure(check_dmr(&e, &cfg).map_err(err)?.holds, || {
            format!("instance {i}: DMR rejected below the threshold")
        })?;
    }

    // three unbiased V=1 models with u = -1.2 sit well above the threshold -2.5
    let m = ModelSummary::scalar(0.0, 1.0, 0.1).map_err(err)?;
    let e = Coalition::from_summaries(vec![m; 3]).map_err(err)?;
    let cfg = MarketConfig::new(1.0, -1.2, 3).map_err(err)?;
    let report = check_dmr(&e, &cfg).map_err(err)?;
    ensure(!report.holds, || "violating instance accepted".into())?;
    let w = report.witness.ok_or("no witness")?;
    ensure(w.inner.iter().all(|i| w.outer.contains(i)) && w.inner.contains(&w.firm), || {
        "witness sets are not nested around the firm".into()
    })?;
    let gain = |set: &[usize]| -> Result<f64, String> {
        let with = e.subset(mask_of(set));
        let without: Vec<usize> = set.iter().copied().filter(|&j| j != w.firm).collect();
        let without = e.subset(mask_of(&without));
        Ok(coalition_utility(&with, &cfg).map_err(err)? - coalition_utility(&without, &cfg).map_err(err)?)
    };
    let (gi, go) = (gain(&w.inner)?, gain(&w.outer)?);
    ensure(gi < go && (gi - w.inner_gain).abs() < 1e-12 && (go - w.outer_gain).abs() < 1e-12, || {
        format!("witness gains {gi}/{go} do not show a violation")
    })?;
    let elapsed = start.elapsed();
    within_budget(elapsed, 10.0)?;
    Ok(format!("200 instances hold, witness gains {gi:.3} < {go:.3}, {:.2}s", elapsed.as_secs_f64()))
}

fn mask_of(set: &[usize]) -> u64 {
    set.iter().fold(0, |m, &j| m | 1 << j)
}

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let mc = McConfig::default();
    let mut checks = Vec::new();
    for d in 0..=4 {
        checks.extend(ols_checks(&default_ols(0..d).map_err(err)?, &mc).map_err(err)?);
    }
    let pair = default_ols([0, 1]).map_err(err)?;
    checks.push(combined_check("same_model", &pair, &pair, 0.5, &mc).map_err(err)?);
    checks.push(combined_check("disjoint", &pair, &default_ols([2, 3]).map_err(err)?, 0.5, &mc).map_err(err)?);
    checks.push(combined_check("overlap", &pair, &default_ols([1, 2]).map_err(err)?, 0.4, &mc).map_err(err)?);
    let elapsed = start.elapsed();
    let failed: Vec<_> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    ensure(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    within_budget(elapsed, 60.0)?;
    Ok(format!("{} checks at {} trials, {:.2}s", checks.len(), mc.trials, elapsed.as_secs_f64()))
}

fn differentiation_conditions() -> Outcome {
    let fam = FnFamily::tradeoff();
    let cands = symmetric_candidates(&fam, 50).map_err(err)?;
    ensure(cands.len() == 1, || format!("{} first-order roots", cands.len()))?;
    let t0 = cands[0].t0;
    ensure((t0 - 0.25).abs() <= 1e-9, || format!("root at {t0}"))?;
    ensure(cands[0].classification == Classification::Candidate, || "root not classified as a candidate".into())?;
    let soc = soc_lhs(&fam, t0).map_err(err)?;
    ensure((soc + 5.0 / 12.0).abs() <= 1e-6, || format!("soc {soc}"))?;

    for t in [0.1, 0.25, 0.4, 0.7] {
        let analytic = weight_derivative(&fam, t).map_err(err)?;
        let numeric = numerical_weight_derivative(&fam, t, 1e-4).map_err(err)?;
        ensure((analytic - numeric).abs() <= 1e-4, || format!("w' at {t}: {analytic} vs {numeric}"))?;
    }

    let b0 = 1.7;
    let rot = FnFamily::rotating(b0, 0.6);
    for t in [0.3, 1.0, 2.5] {
        let angle = soc_terms(&rot, t).map_err(err)?.angle;
        ensure((angle - b0 / 2.0).abs() <= 1e-6, || format!("angle term {angle} at {t}"))?;
    }
    Ok(format!("root {t0:.12}, soc {soc:.9}"))
}

fn convex_game(k: usize) -> CovariateGame {
    CovariateGame {
        k,
        n: 20,
        beta2: 1.0,
        sigma2: 1.0,
        cost: CostSchedule::Quadratic {
            fixed: 0.01,
            linear: 0.0,
            quadratic: 0.1,
        },
    }
}

fn covariate_game(found: &mut Vec<(CovariateGame, CovariateEquilibrium)>) -> Outcome {
    let mut total = 0;
    for k in 1..=6 {
        let game = convex_game(k);
        ensure(game.cost.is_strictly_convex_increasing(k), || "cost not strictly convex".into())?;
        let eqs = covariate_equilibria(&game).map_err(err)?;
        for eq in &eqs {
            ensure(eq.differentiated() || eq.firm1.len() == k, || {
                format!("k={k}: shared model {:?} excludes a covariate", eq.firm1)
            })?;
        }
        let diff: Vec<_> = eqs.iter().filter(|e| e.differentiated()).cloned().collect();
        ensure(!diff.is_empty(), || format!("k={k}: no differentiated equilibrium"))?;
        total += diff.len();
        found.extend(diff.into_iter().map(|e| (game.clone(), e)));
    }

    let game = CovariateGame {
        k: 6,
        n: 20,
        beta2: 1.0,
        sigma2: 26.0,
        cost: CostSchedule::Constant { cost: 0.01 },
    };
    let check = costless_check(&game).map_err(err)?;
    ensure(check.condition.inside, || "ratio outside the interior band".into())?;
    ensure(check.interior(), || format!("maximizer {} not interior", check.continuous_argmax))?;
    let d = check.continuous_argmax;
    for size in [d.floor() as usize, d.ceil() as usize] {
        let shared: Subset = (0..size).collect();
        let best = swap_gains(&game, &shared)
            .map_err(err)?
            .iter()
            .map(|s| s.gain)
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(best > 1e-9, || format!("no profitable swap at shared size {size}"))?;
    }
    Ok(format!("{total} differentiated equilibria for k=1..6, interior maximizer {d:.3}"))
}

fn surplus_property(found: &[(CovariateGame, CovariateEquilibrium)]) -> Outcome {
    ensure(!found.is_empty(), || "no equilibria to check".into())?;
    for (game, eq) in found {
        let cfg = MarketConfig::new(game.sigma2, -20.0, 2).map_err(err)?;
        let m1 = game.summary(&eq.firm1).map_err(err)?;
        let m2 = game.summary(&eq.firm2).map_err(err)?;
        let cmp = diff_surplus_comparison(&m1, &m2, &cfg).map_err(err)?;
        ensure(cmp.holds && cmp.differentiated <= cmp.same_model + 1e-12, || {
            format!("k={} {:?}/{:?}: {} > {}", game.k, eq.firm1, eq.firm2, cmp.differentiated, cmp.same_model)
        })?;
    }
    Ok(format!("{} equilibria", found.len()))
}

fn scan(template: predmkt::deterrence::SeqGameSpec, cf_max: f64) -> Result<DeterrenceScan, String> {
    let cf: Vec<f64> = (0..50).map(|i| cf_max * i as f64 / 49.0).collect();
    let u: Vec<f64> = (0..50).map(|j| -8.0 + 5.5 * j as f64 / 49.0).collect();
    scan_deterrence_region(&template, &cf, &u).map_err(err)
}

fn region(scan: &DeterrenceScan, pick: impl Fn(&SeqOutcome) -> bool, label: &str) -> Result<usize, String> {
    let mask = scan.mask(pick);
    let cells = mask.iter().flatten().filter(|&&b| b).count();
    ensure(cells > 0, || format!("{label} region empty"))?;
    ensure(find_block(&mask, 2, 2).is_some(), || format!("{label} region has no 2x2 block"))?;
    ensure(scan.staircase_holds(), || format!("{label} scan breaks the staircase"))?;
    Ok(cells)
}

fn deterrence_regions() -> Outcome {
    let start = Instant::now();
    let ridge = scan(ridge_example(0.0, -5.0).map_err(err)?, 0.1)?;
    let biased = region(&ridge, |o| o.flags.biased_deterrence, "biased")?;
    let over = scan(overinvestment_example(0.0, -5.0).map_err(err)?, 0.5)?;
    let overinv = region(&over, |o| o.flags.overinvestment_deterrence, "overinvestment")?;
    let elapsed = start.elapsed();
    within_budget(elapsed, 60.0)?;
    Ok(format!(
        "biased {biased} cells, overinvestment {overinv} cells, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn run_verify(threads: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_predmkt"))
        .args(["--seed", "99", "--threads", threads, "verify"])
        .output()
        .map_err(err)?;
    ensure(out.status.code() == Some(0), || {
        format!("verify exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let one = run_verify("1")?;
    let again = run_verify("1")?;
    let eight = run_verify("8")?;
    ensure(one == again, || "reruns with the same seed differ".into())?;
    ensure(one == eight, || "--threads 1 and --threads 8 differ".into())?;
    Ok(format!("3 runs, {} identical bytes", one.len()))
}

fn main() -> ExitCode {
    let mut found = Vec::new();
    let results = [
        ("1 entry sweep", figure_sweep()),
        ("2 price fixed points", price_fixed_points()),
        ("3 decreasing marginal returns", dmr_theorem()),
        ("4 monte carlo decomposition", monte_carlo()),
        ("5 differentiation conditions", differentiation_conditions()),
        ("6 covariate game", covariate_game(&mut found)),
        ("7 surplus under differentiation", surplus_property(&found)),
        ("8 deterrence regions", deterrence_regions()),
        ("9 determinism", determinism()),
    ];
    let mut ok = true;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(why) => {
                ok = false;
                println!("criterion {name}: FAIL ({why})");
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
