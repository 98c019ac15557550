use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use packsel::calibration::{
    fit_isotonic, fit_platt, log_loss, reliability_report, CalibrationMap,
};
use packsel::csv_io;
use packsel::lab::{enumerate_breakpoints, sweep_cost_curve, verify_equivalence};
use packsel::model::{augment_dataset, train, FeatureExpansion, MonotoneLogisticModel, TrainConfig};
use packsel::synth::{generate_products, generate_shipments, random_cost_instance, true_probabilities, GeneratorConfig};
use packsel::{
    build_cost_matrices, determine_lambda, evaluate, recommend_new_product, solve_tikhonov_par, Assignment, Budget,
    CostMatrices, Error, LambdaSearchConfig, MaskRuleSet,
};

use crate::settings::Settings;
use crate::{
    BudgetArgs, CalibrateArgs, Cli, Command, CostArgs, EvaluateArgs, Expansion, GenArgs, Method, NewProductArgs,
    PredictArgs, SearchArgs, SolveArgs, SweepArgs, TrainArgs, VerifyArgs,
};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(Error),
    /// The run completed but the budget was unreachable or the
    /// equivalence check failed.
    Rejected(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Rejected(m) => f.write_str(m),
            Failure::Data(e) => write!(f, "{e}"),
        }
    }
}

impl Failure {
    /// True when standard output was closed early, as with `| head`.
    pub fn is_broken_pipe(&self) -> bool {
        let io = match self {
            Failure::Data(Error::Io(e)) => Some(e),
            Failure::Data(Error::Csv(e)) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e),
                _ => None,
            },
            _ => None,
        };
        io.is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(Error::Io(e))
    }
}

type Outcome = std::result::Result<(), Failure>;

struct Ctx {
    settings: Settings,
    json: bool,
}

pub fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set up thread pool: {e}")))?;
    }
    let ctx = Ctx {
        settings: Settings::load(cli.config.as_deref())?,
        json: cli.json,
    };
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(&ctx, a),
        Command::Train(a) => train_model(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Solve(a) => solve(&ctx, a),
        Command::Evaluate(a) => evaluate_file(&ctx, a),
        Command::SearchLambda(a) => search(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::RecommendNew(a) => recommend_new(&ctx, a),
    }
}

/// Writes to `path`, or to standard output when there is none.
fn emit<F>(path: Option<&Path>, write: F) -> Outcome
where
    F: FnOnce(&mut dyn Write) -> packsel::Result<()>,
{
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn print_json(v: &Value) -> Outcome {
    let mut out = io::stdout().lock();
    writeln!(out, "{v}")?;
    Ok(())
}

/// One CSV header line and one data line on standard output.
fn print_row(header: &[&str], row: &[String]) -> Outcome {
    let mut out = io::stdout().lock();
    writeln!(out, "{}", header.join(","))?;
    writeln!(out, "{}", row.join(","))?;
    Ok(())
}

fn open(path: &Path) -> std::result::Result<File, Failure> {
    File::open(path).map_err(|e| Failure::Data(Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    let mut s = String::new();
    io::Read::read_to_string(&mut open(path)?, &mut s)?;
    Ok(s)
}

fn gen_synthetic(ctx: &Ctx, a: GenArgs) -> Outcome {
    let cfg = GeneratorConfig {
        seed: a.seed,
        products: a.products,
        types: a.types,
        feature_dim: a.features,
        shipments_per_product: a.shipments_per_product,
        oversize_rate: a.oversize_rate,
        ..GeneratorConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let products = generate_products(&cfg)?;
    let (shipments, truth) = generate_shipments(&products, &cfg)?;
    let probs = true_probabilities(&products, &truth)?;
    let ids: Vec<String> = products.iter().map(|p| p.id.clone()).collect();

    std::fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    emit(Some(&dir.join("products.csv")), |w| csv_io::write_products(w, &products, cfg.types))?;
    emit(Some(&dir.join("shipments.csv")), |w| csv_io::write_shipments(w, &shipments))?;
    emit(Some(&dir.join("probabilities.csv")), |w| csv_io::write_probabilities(w, &ids, &probs))?;
    std::fs::write(dir.join("truth.model"), truth.to_text())?;

    let damaged = shipments.iter().filter(|s| s.label).count();
    if ctx.json {
        print_json(&json!({
            "products": products.len(),
            "shipments": shipments.len(),
            "damaged": damaged,
        }))
    } else {
        print_row(
            &["products", "shipments", "damaged"],
            &[products.len().to_string(), shipments.len().to_string(), damaged.to_string()],
        )
    }
}

fn train_model(ctx: &Ctx, a: TrainArgs) -> Outcome {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        tau: ctx.settings.tau(a.tau)?,
        max_epochs: ctx.settings.max_epochs(a.max_epochs, defaults.max_epochs)?,
        tolerance: ctx.settings.tolerance(a.tolerance, defaults.tolerance)?,
        initial_step: defaults.initial_step,
        expansion: ctx.settings.expansion(a.expansion.map(|e| match e {
            Expansion::Linear => FeatureExpansion::Linear,
            Expansion::Quadratic => FeatureExpansion::Quadratic,
        }))?,
    };
    if !(cfg.tau > 0.0 && cfg.tau < 1.0) {
        return Err(Failure::Usage(format!("--tau must lie in (0, 1), got {}", cfg.tau)));
    }
    let shipments = csv_io::read_shipments(open(&a.shipments)?, a.types)?;
    let data = if a.no_augment {
        shipments
    } else {
        augment_dataset(&shipments, a.types)
    };
    let fit = train(&data, a.types, &cfg)?;
    if !fit.converged {
        eprintln!(
            "packsel: warning: training stopped after {} epochs without meeting the tolerance",
            fit.epochs
        );
    }
    std::fs::write(&a.out, fit.model.to_text())?;
    if ctx.json {
        print_json(&json!({
            "records": data.len(),
            "loss": fit.loss,
            "baseline_loss": fit.baseline_loss,
            "epochs": fit.epochs,
            "converged": fit.converged,
        }))
    } else {
        print_row(
            &["records", "loss", "baseline_loss", "epochs", "converged"],
            &[
                data.len().to_string(),
                fit.loss.to_string(),
                fit.baseline_loss.to_string(),
                fit.epochs.to_string(),
                fit.converged.to_string(),
            ],
        )
    }
}

fn load_model(path: &Path) -> std::result::Result<MonotoneLogisticModel, Failure> {
    Ok(MonotoneLogisticModel::from_text(&read_text(path)?)?)
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let shipments = csv_io::read_shipments(open(&a.shipments)?, model.types())?;
    let raw = shipments
        .iter()
        .map(|s| packsel::model::predict_probability(&model, &s.features, s.package))
        .collect::<packsel::Result<Vec<f64>>>()?;
    let labels: Vec<bool> = shipments.iter().map(|s| s.label).collect();
    let map = match a.method {
        Method::Isotonic => fit_isotonic(&raw, &labels)?,
        Method::Platt => fit_platt(&raw, &labels)?,
        Method::WeightCorrection => {
            let tau = ctx.settings.tau(a.tau)?;
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Failure::Usage(format!("--tau must lie in (0, 1), got {tau}")));
            }
            CalibrationMap::WeightCorrection { tau }
        }
        Method::Identity => CalibrationMap::Identity,
    };
    std::fs::write(&a.out, map.to_text())?;
    let calibrated = map.apply_all(&raw);
    let before = log_loss(&raw, &labels)?;
    let after = log_loss(&calibrated, &labels)?;
    if let Some(path) = &a.reliability {
        let groups: Vec<usize> = shipments.iter().map(|s| s.package).collect();
        let quantiles = ctx.settings.quantiles(a.quantiles)?;
        let report = reliability_report(&calibrated, &labels, &groups, model.types(), quantiles)?;
        emit(Some(path), |w| csv_io::write_reliability(w, &report))?;
    }
    if ctx.json {
        print_json(&json!({
            "method": map.method(),
            "log_loss_raw": before,
            "log_loss_calibrated": after,
        }))
    } else {
        print_row(
            &["method", "log_loss_raw", "log_loss_calibrated"],
            &[map.method().to_string(), before.to_string(), after.to_string()],
        )
    }
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let map = match &a.calibration {
        Some(p) => CalibrationMap::from_text(&read_text(p)?)?,
        None => CalibrationMap::Identity,
    };
    let table = csv_io::read_products(open(&a.products)?)?;
    if table.types != model.types() {
        return Err(Error::DimensionMismatch(format!(
            "products list {} types, model has {}",
            table.types,
            model.types()
        ))
        .into());
    }
    let mut ids = Vec::with_capacity(table.records.len());
    let mut probs = Vec::with_capacity(table.records.len());
    for r in &table.records {
        ids.push(r.id.clone());
        probs.push(map.apply_all(&model.predict_all(&r.features)?));
    }
    if ctx.json && a.out.is_none() {
        return print_json(&json!({ "product_id": ids, "probabilities": probs }));
    }
    emit(a.out.as_deref(), |w| csv_io::write_probabilities(w, &ids, &probs))
}

struct LoadedCosts {
    ids: Vec<String>,
    costs: CostMatrices,
}

fn load_costs(ctx: &Ctx, a: &CostArgs) -> std::result::Result<LoadedCosts, Failure> {
    load_cost_files(ctx, &a.products, &a.probabilities, a.rules.as_deref())
}

fn load_cost_files(
    ctx: &Ctx,
    products: &Path,
    probabilities: &Path,
    rules: Option<&Path>,
) -> std::result::Result<LoadedCosts, Failure> {
    let table = csv_io::read_products(open(products)?)?;
    let probs = csv_io::read_probabilities(open(probabilities)?)?;
    let ids: Vec<String> = table.records.iter().map(|r| r.id.clone()).collect();
    if probs.ids != ids {
        return Err(Error::DimensionMismatch(
            "probability rows do not list the same products in the same order".into(),
        )
        .into());
    }
    let rules = match rules {
        Some(p) => MaskRuleSet::from_config(&packsel::config::KeyValues::parse(&read_text(p)?)?)?,
        None => MaskRuleSet::default(),
    };
    let catalog = ctx.settings.catalog(table.types)?;
    let costs = build_cost_matrices(&table.records, &catalog, &probs.probs, &rules)?;
    Ok(LoadedCosts { ids, costs })
}

fn check_lambda(lambda: f64) -> Outcome {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--lambda must be finite and non-negative, got {lambda}")))
    }
}

fn solve(ctx: &Ctx, a: SolveArgs) -> Outcome {
    check_lambda(a.lambda)?;
    let loaded = load_costs(ctx, &a.costs)?;
    let outcome = solve_tikhonov_par(&loaded.costs, a.lambda)?;
    let recs = csv_io::recommendations(&loaded.ids, &loaded.costs, &outcome.assignment)?;
    if ctx.json {
        if a.out.is_some() {
            emit(a.out.as_deref(), |w| csv_io::write_recommendations(w, &recs))?;
        }
        let changed = recs.rows.iter().filter(|r| r.current_type != r.recommended_type).count();
        return print_json(&json!({
            "lambda": outcome.lambda,
            "ship_cost": outcome.ship_cost,
            "damage_cost": outcome.damage_cost,
            "objective": outcome.objective,
            "ship_cost_current": recs.ship_cur,
            "damage_cost_current": recs.damage_cur,
            "changed": changed,
        }));
    }
    emit(a.out.as_deref(), |w| csv_io::write_recommendations(w, &recs))
}

fn evaluate_file(ctx: &Ctx, a: EvaluateArgs) -> Outcome {
    check_lambda(a.lambda)?;
    let loaded = load_costs(ctx, &a.costs)?;
    let recs = csv_io::read_recommendations(open(&a.recommendations)?, loaded.costs.types())?;
    let rec_ids: Vec<&str> = recs.rows.iter().map(|r| r.product_id.as_str()).collect();
    if rec_ids != loaded.ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::DimensionMismatch("recommendations do not match the product list".into()).into());
    }
    let assignment = Assignment::new(recs.rows.iter().map(|r| r.recommended_type).collect());
    let out = evaluate(&loaded.costs, &assignment, a.lambda)?;
    let matches = out.ship_cost == recs.ship_new && out.damage_cost == recs.damage_new;
    if !matches {
        eprintln!("packsel: warning: recomputed totals differ from the TOTAL row");
    }
    if ctx.json {
        print_json(&json!({
            "ship_cost": out.ship_cost,
            "damage_cost": out.damage_cost,
            "objective": out.objective,
            "matches_footer": matches,
        }))
    } else {
        print_row(
            &["ship_cost", "damage_cost", "objective", "matches_footer"],
            &[
                out.ship_cost.to_string(),
                out.damage_cost.to_string(),
                out.objective.to_string(),
                matches.to_string(),
            ],
        )
    }
}

fn search_config(
    ctx: &Ctx,
    budget: &BudgetArgs,
    rho: Option<f64>,
    lambda_max: Option<f64>,
    default_gamma: Option<f64>,
) -> std::result::Result<LambdaSearchConfig, Failure> {
    let budget = match (budget.gamma, budget.budget, default_gamma) {
        (Some(g), None, _) => {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Failure::Usage(format!("--gamma must be non-negative, got {g}")));
            }
            Budget::Gamma(g)
        }
        (None, Some(t), _) => {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Failure::Usage(format!("--budget must be non-negative, got {t}")));
            }
            Budget::Absolute(t)
        }
        (None, None, Some(g)) => Budget::Gamma(g),
        (None, None, None) => return Err(Failure::Usage("one of --gamma or --budget is required".into())),
        (Some(_), Some(_), _) => return Err(Failure::Usage("--gamma and --budget are mutually exclusive".into())),
    };
    let rho = ctx.settings.rho(rho)?;
    let lambda_max = ctx.settings.lambda_max(lambda_max)?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Failure::Usage(format!("--rho must be positive, got {rho}")));
    }
    if !(lambda_max.is_finite() && lambda_max > 0.0) {
        return Err(Failure::Usage(format!("--lambda-max must be positive, got {lambda_max}")));
    }
    Ok(LambdaSearchConfig::new(budget).with_rho(rho).with_lambda_max(lambda_max))
}

fn search(ctx: &Ctx, a: SearchArgs) -> Outcome {
    let cfg = search_config(ctx, &a.budget, a.rho, a.lambda_max, None)?;
    let loaded = load_costs(ctx, &a.costs)?;
    let res = determine_lambda(&loaded.costs, &cfg)?;
    if let Some(path) = &a.out {
        let recs = csv_io::recommendations(&loaded.ids, &loaded.costs, &res.outcome.assignment)?;
        emit(Some(path), |w| csv_io::write_recommendations(w, &recs))?;
    }
    if ctx.json {
        print_json(&json!({
            "lambda": res.lambda,
            "iterations": res.iterations,
            "ship_cost": res.outcome.ship_cost,
            "damage_cost": res.outcome.damage_cost,
            "feasible": res.feasible,
            "target": res.target,
        }))?;
    } else {
        emit(None, |w| csv_io::write_search(w, &res))?;
    }
    if res.feasible {
        Ok(())
    } else {
        Err(Failure::Rejected(format!(
            "damage budget {} is not met even at lambda = {}",
            res.target, cfg.lambda_max
        )))
    }
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Outcome {
    let loaded = load_costs(ctx, &a.costs)?;
    let breakpoints = enumerate_breakpoints(&loaded.costs);
    let curve = sweep_cost_curve(&loaded.costs, &breakpoints)?;
    if ctx.json && a.out.is_none() {
        let segments: Vec<Value> = curve
            .iter()
            .map(|s| {
                json!({
                    "lambda_lo": s.lambda_lo,
                    "lambda_hi": if s.lambda_hi.is_finite() { json!(s.lambda_hi) } else { json!("inf") },
                    "ship_cost": s.ship_cost,
                    "damage_cost": s.damage_cost,
                    "objective_mid": s.objective_mid,
                })
            })
            .collect();
        return print_json(&json!({ "breakpoints": breakpoints.len(), "segments": segments }));
    }
    emit(a.out.as_deref(), |w| csv_io::write_sweep(w, &curve))
}

fn verify(ctx: &Ctx, a: VerifyArgs) -> Outcome {
    let cfg = search_config(ctx, &a.budget, a.rho, a.lambda_max, Some(1.0))?;
    let costs = match (&a.products, &a.probabilities) {
        (Some(p), Some(q)) => load_cost_files(ctx, p, q, a.rules.as_deref())?.costs,
        _ => {
            if a.types < 2 {
                return Err(Failure::Usage("--types must be at least 2".into()));
            }
            if !(0.0..=1.0).contains(&a.mask_rate) {
                return Err(Failure::Usage("--mask-rate must lie in [0, 1]".into()));
            }
            random_cost_instance(a.seed, a.size, a.types, a.mask_rate)?
        }
    };
    let target = cfg.target(&costs)?;
    let report = verify_equivalence(&costs, target, cfg.rho, cfg.lambda_max)?;
    if ctx.json {
        print_json(&json!({
            "T": report.budget,
            "lambda_found": report.lambda_found,
            "iterations": report.iterations,
            "D_ivanov": report.damage_ivanov,
            "S_ivanov": report.ship_ivanov,
            "D_tikhonov": report.damage_tikhonov,
            "S_tikhonov": report.ship_tikhonov,
            "delta_bound": report.delta_bound,
            "t_star": report.t_star,
            "verdict": report.verdict,
        }))?;
    } else {
        emit(None, |w| csv_io::write_equivalence(w, &report))?;
    }
    if report.verdict {
        Ok(())
    } else {
        Err(Failure::Rejected("equivalence check failed".into()))
    }
}

fn recommend_new(ctx: &Ctx, a: NewProductArgs) -> Outcome {
    check_lambda(a.lambda)?;
    let n = a.ship.len();
    let mask: Vec<bool> = match &a.mask {
        Some(m) => m.iter().map(|&v| v != 0).collect(),
        None => vec![false; n],
    };
    if a.damage.len() != n || mask.len() != n {
        return Err(Failure::Usage(format!(
            "--ship, --damage and --mask need the same length (got {}, {}, {})",
            n,
            a.damage.len(),
            mask.len()
        )));
    }
    let k = recommend_new_product(&a.ship, &a.damage, &mask, a.lambda)?;
    let name = ctx
        .settings
        .catalog(n)
        .ok()
        .and_then(|c| c.name(k).map(String::from))
        .unwrap_or_else(|| format!("T{}", k + 1));
    if ctx.json {
        print_json(&json!({ "recommended_type": k + 1, "name": name }))
    } else {
        print_row(&["recommended_type", "name"], &[(k + 1).to_string(), name])
    }
}
