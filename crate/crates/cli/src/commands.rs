use anyhow::bail;
use predmkt::deterrence::{
    overinvestment_example, ridge_example, scan_deterrence_region, SeqGameSpec,
};
use predmkt::differentiation::{
    costless_check, covariate_equilibria, diff_surplus_comparison, interior_condition, symmetric_candidates,
    CostSchedule, CovariateGame, FnFamily, ParamFamily,
};
use predmkt::entry::{sweep_variance, SymmetricMarket};
use predmkt::mcoracle::{verify_all, McConfig};
use predmkt::pricing::{check_dmr, marginal_prices, solve_prices, surpluses};
use predmkt::{Coalition, MarketConfig, ModelSummary};
use serde_json::json;

use crate::config::{linspace, DeterConfig, DeterFamily, DiffConfig, FamilyKind, OlsGameConfig, PricesConfig, SweepConfig, VerifyConfig};
use crate::output::{json_document, num, opt, CsvTable, Header};
use crate::UsageError;

/// Rendered output and whether every check in it passed.
pub struct Report {
    pub text: String,
    pub checks_pass: bool,
}

impl Report {
    fn plain(text: String) -> Self {
        Self { text, checks_pass: true }
    }
}

pub fn sweep(cfg: &SweepConfig) -> anyhow::Result<Report> {
    let grid = cfg.grid()?;
    let base = SymmetricMarket {
        bias2: cfg.bias2,
        variance: grid[0],
        sigma2: cfg.sigma2,
        cost: cfg.cost,
        outside_option: cfg.outside_option,
        n_firms: cfg.n_firms,
    };
    let mut table = CsvTable::new(
        Header::new("sweep", cfg)?,
        &[
            "V",
            "n_entrants",
            "price",
            "consumer_surplus",
            "producer_surplus",
            "total_surplus",
            "violations",
        ],
    )?;
    for row in sweep_variance(&grid, &base) {
        let o = row.outcome;
        let violations: Vec<String> = row.violations.iter().map(ToString::to_string).collect();
        table.row([
            num(row.variance),
            o.map(|o| o.n_entrants.to_string()).unwrap_or_default(),
            opt(o.map(|o| o.price)),
            opt(o.map(|o| o.consumer)),
            opt(o.map(|o| o.producer)),
            opt(o.map(|o| o.total)),
            violations.join(";"),
        ])?;
    }
    Ok(Report::plain(table.finish()?))
}

pub fn prices(cfg: &PricesConfig) -> anyhow::Result<Report> {
    if cfg.models.is_empty() {
        bail!(UsageError::new("prices needs at least one model"));
    }
    let summaries = cfg
        .models
        .iter()
        .map(|m| ModelSummary::new(m.bias.clone(), m.variance, m.cost))
        .collect::<predmkt::Result<Vec<_>>>()?;
    let coalition = Coalition::from_summaries(summaries)?;
    let market = MarketConfig::new(cfg.sigma2, cfg.outside_option, cfg.models.len())?;
    let marginal = marginal_prices(&coalition, &market)?;
    let solved = solve_prices(&coalition, &market)?;
    let dmr = check_dmr(&coalition, &market)?;
    let welfare = surpluses(&coalition, &solved.profile, &market)?;
    let result = json!({
        "marginal_prices": marginal.prices(),
        "fixed_point_prices": solved.profile.prices(),
        "residual": solved.residual,
        "iterations": solved.iterations,
        "dmr": dmr,
        "surpluses": welfare,
    });
    Ok(Report::plain(json_document(&Header::new("prices", cfg)?, &result)?))
}

fn family(cfg: &DiffConfig) -> FnFamily {
    match cfg.family {
        FamilyKind::Tradeoff => FnFamily::tradeoff(),
        FamilyKind::Rotating => FnFamily::rotating(cfg.b0, cfg.variance),
        FamilyKind::LinearVariance => FnFamily::linear_variance(cfg.b0, cfg.variance, cfg.slope),
    }
}

pub fn diff(cfg: &DiffConfig) -> anyhow::Result<Report> {
    let fam = family(cfg);
    let (lo, hi) = fam.domain();
    if !(lo < hi) {
        bail!(UsageError::new("empty family domain"));
    }
    let mut table = CsvTable::new(
        Header::new("diff", cfg)?,
        &[
            "t0",
            "foc_residual",
            "soc_term_curvature",
            "soc_term_split",
            "soc_term_angle",
            "soc_lhs",
            "classification",
        ],
    )?;
    for c in symmetric_candidates(&fam, cfg.grid_resolution)? {
        let soc = c.soc;
        table.row([
            num(c.t0),
            num(c.foc_residual),
            opt(soc.map(|s| s.curvature)),
            opt(soc.map(|s| s.split)),
            opt(soc.map(|s| s.angle)),
            opt(soc.map(|s| s.total())),
            c.classification.to_string(),
        ])?;
    }
    Ok(Report::plain(table.finish()?))
}

pub fn olsgame(cfg: &OlsGameConfig) -> anyhow::Result<Report> {
    let game = CovariateGame {
        k: cfg.k,
        n: cfg.n,
        beta2: cfg.beta2,
        sigma2: cfg.sigma2,
        cost: cfg.cost.clone(),
    };
    game.validate()?;
    if game.k > 12 {
        bail!(UsageError::new("olsgame enumerates subset pairs and needs k <= 12"));
    }
    let equilibria = covariate_equilibria(&game)?;
    let market = MarketConfig::new(cfg.sigma2, cfg.outside_option, 2)?;
    let mut comparisons = Vec::new();
    for eq in equilibria.iter().filter(|e| e.differentiated()) {
        let report = diff_surplus_comparison(&game.summary(&eq.firm1)?, &game.summary(&eq.firm2)?, &market)?;
        comparisons.push(json!({ "firm1": eq.firm1, "firm2": eq.firm2, "comparison": report }));
    }
    let surplus_holds = comparisons.iter().all(|c| c["comparison"]["holds"] == true);
    let symmetric_excluding = equilibria
        .iter()
        .filter(|e| !e.differentiated() && e.firm1.len() < game.k)
        .count();

    let costless = CovariateGame {
        sigma2: cfg.costless_sigma2,
        cost: CostSchedule::Constant { cost: 0.1 },
        ..game.clone()
    };
    let result = json!({
        "equilibria": equilibria,
        "n_equilibria": equilibria.len(),
        "n_differentiated": equilibria.iter().filter(|e| e.differentiated()).count(),
        "n_symmetric_excluding_covariate": symmetric_excluding,
        "interior_condition": interior_condition(&game)?,
        "surplus_comparisons": comparisons,
        "surplus_inequality_holds": surplus_holds,
        "costless": costless_check(&costless)?,
    });
    Ok(Report {
        text: json_document(&Header::new("olsgame", cfg)?, &result)?,
        checks_pass: surplus_holds,
    })
}

fn deter_template(cfg: &DeterConfig) -> anyhow::Result<SeqGameSpec> {
    let mut spec = match cfg.family {
        DeterFamily::Ridge => ridge_example(0.0, -1.0)?,
        DeterFamily::Overinvestment => overinvestment_example(0.0, -1.0)?,
        DeterFamily::Custom => {
            if cfg.incumbent_set.is_empty() || cfg.challenger_set.is_empty() {
                bail!(UsageError::new("custom deter family needs incumbent_set and challenger_set"));
            }
            SeqGameSpec {
                incumbent_set: cfg.incumbent_set.clone(),
                challenger_set: cfg.challenger_set.clone(),
                b0: cfg.b0,
                sigma2: cfg.sigma2,
                c_f: 0.0,
                outside_option: -1.0,
            }
        }
    };
    spec.b0 = cfg.b0;
    spec.sigma2 = cfg.sigma2;
    spec.validate()?;
    Ok(spec)
}

pub fn deter(cfg: &DeterConfig) -> anyhow::Result<Report> {
    let (cf_min, cf_max) = cfg.cf_range();
    let resolved = DeterConfig {
        cf_min: Some(cf_min),
        cf_max: Some(cf_max),
        ..cfg.clone()
    };
    let cf = linspace(cf_min, cf_max, cfg.cf_count)?;
    let u = linspace(cfg.u_min, cfg.u_max, cfg.u_count)?;
    if u.iter().any(|&x| x >= 0.0) {
        bail!(UsageError::new("outside options must be negative"));
    }
    let scan = scan_deterrence_region(&deter_template(cfg)?, &cf, &u)?;
    let mut table = CsvTable::new(
        Header::new("deter", &resolved)?,
        &[
            "c_f",
            "outside_option",
            "incumbent_alpha",
            "incumbent_cost",
            "entered",
            "biased_deterrence",
            "overinvestment_deterrence",
        ],
    )?;
    for cell in &scan.cells {
        let o = &cell.outcome;
        table.row([
            num(cell.c_f),
            num(cell.outside_option),
            num(o.incumbent_model.alpha),
            num(o.incumbent_model.cost),
            o.entered.to_string(),
            o.flags.biased_deterrence.to_string(),
            o.flags.overinvestment_deterrence.to_string(),
        ])?;
    }
    Ok(Report::plain(table.finish()?))
}

pub fn verify(cfg: &VerifyConfig) -> anyhow::Result<Report> {
    let mc = McConfig {
        trials: cfg.trials,
        seed: cfg.seed,
        tolerance: cfg.tolerance,
    };
    if mc.validate().is_err() {
        bail!(UsageError::new("verify needs trials >= 2 and tolerance > 0"));
    }
    let checks = verify_all(&mc)?;
    let all_pass = checks.iter().all(|c| c.pass);
    let result = json!({ "checks": checks, "all_pass": all_pass });
    Ok(Report {
        text: json_document(&Header::new("verify", cfg)?, &result)?,
        checks_pass: all_pass,
    })
}
