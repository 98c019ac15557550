//! Exhaustive oracles and cost-curve analysis for small instances.
//!
//! The budgeted problem (`min S(X)` subject to `D(X) <= T`) is solved here
//! by enumerating every feasible assignment, which is only practical for a
//! handful of products. These routines exist to check the linear-time
//! solver and the bisection search against ground truth.

use crate::catalog::{compute_delta_bound, CostMatrices};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::search::{determine_lambda, Budget, LambdaSearchConfig};
use crate::solver::{solve_tikhonov, Assignment, SolveOutcome};

/// Largest product count the exhaustive searches accept.
pub const MAX_ORACLE_PRODUCTS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedSolution {
    pub assignment: Assignment,
    pub ship_cost: f64,
    pub damage_cost: f64,
}

fn guard(costs: &CostMatrices) -> Result<()> {
    if costs.products() > MAX_ORACLE_PRODUCTS {
        Err(Error::InstanceTooLarge {
            products: costs.products(),
            limit: MAX_ORACLE_PRODUCTS,
        })
    } else {
        Ok(())
    }
}

/// Depth-first walk over every feasible assignment in lexicographic order.
///
/// Running totals are carried as compensated sums in product order, so the
/// `(S, D)` handed to `visit` are bit-identical to what
/// [`crate::solver::evaluate`] reports for the same assignment.
fn for_each_assignment(costs: &CostMatrices, mut visit: impl FnMut(&[usize], f64, f64)) {
    fn walk(
        costs: &CostMatrices,
        i: usize,
        chosen: &mut Vec<usize>,
        ship: CompensatedSum,
        damage: CompensatedSum,
        visit: &mut dyn FnMut(&[usize], f64, f64),
    ) {
        if i == costs.products() {
            visit(chosen, ship.value(), damage.value());
            return;
        }
        for j in 0..costs.types() {
            if costs.is_masked(i, j) {
                continue;
            }
            chosen.push(j);
            walk(
                costs,
                i + 1,
                chosen,
                ship.with(costs.ship_raw(i, j)),
                damage.with(costs.damage(i, j)),
                visit,
            );
            chosen.pop();
        }
    }
    let mut chosen = Vec::with_capacity(costs.products());
    walk(
        costs,
        0,
        &mut chosen,
        CompensatedSum::new(),
        CompensatedSum::new(),
        &mut visit,
    );
}

/// Cheapest shipment among assignments whose damage cost is at most
/// `budget`. Ties go to the smaller damage cost, then the lexicographically
/// smallest assignment.
pub fn brute_force_ivanov(costs: &CostMatrices, budget: f64) -> Result<BudgetedSolution> {
    guard(costs)?;
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    for_each_assignment(costs, |chosen, s, d| {
        if d > budget {
            return;
        }
        let better = match &best {
            None => true,
            Some((_, bs, bd)) => s < *bs || (s == *bs && d < *bd),
        };
        if better {
            best = Some((chosen.to_vec(), s, d));
        }
    });
    best.map(|(chosen, ship_cost, damage_cost)| BudgetedSolution {
        assignment: Assignment::new(chosen),
        ship_cost,
        damage_cost,
    })
    .ok_or(Error::NoFeasibleSolution(budget))
}

/// Exhaustive minimizer of `S(X) + lambda * D(X)`. Ties go to the smaller
/// `D(X)`, then to the lexicographically largest assignment, which matches
/// the per-product preference for more robust types.
pub fn brute_force_tikhonov(costs: &CostMatrices, lambda: f64) -> Result<SolveOutcome> {
    guard(costs)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::NegativeLambda(lambda));
    }
    let mut best: Option<(Vec<usize>, f64, f64, f64)> = None;
    for_each_assignment(costs, |chosen, s, d| {
        let e = s + lambda * d;
        let better = match &best {
            None => true,
            Some((_, be, _, bd)) => e < *be || (e == *be && d <= *bd),
        };
        if better {
            best = Some((chosen.to_vec(), e, s, d));
        }
    });
    let (chosen, objective, ship_cost, damage_cost) =
        best.expect("every product has at least one feasible type");
    Ok(SolveOutcome {
        assignment: Assignment::new(chosen),
        ship_cost,
        damage_cost,
        objective,
        lambda,
    })
}

/// Sorted, exactly de-duplicated `lambda > 0` values at which two feasible
/// types of some product have equal `S + lambda * D`.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointSet {
    lambdas: Vec<f64>,
}

impl BreakpointSet {
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

fn product_crossings(costs: &CostMatrices, i: usize) -> Vec<f64> {
    let feasible: Vec<usize> = costs.feasible_types(i).collect();
    let mut out = Vec::new();
    for (a, &j1) in feasible.iter().enumerate() {
        for &j2 in &feasible[a + 1..] {
            let (d1, d2) = (costs.damage(i, j1), costs.damage(i, j2));
            if d1 == d2 {
                continue;
            }
            let lambda = (costs.ship_raw(i, j2) - costs.ship_raw(i, j1)) / (d1 - d2);
            if lambda > 0.0 && lambda.is_finite() {
                out.push(lambda);
            }
        }
    }
    out
}

/// All pairwise crossings, `O(m n^2)`. The set may include crossings of
/// two non-optimal types; those split a constant interval in two and do
/// no harm.
pub fn enumerate_breakpoints(costs: &CostMatrices) -> BreakpointSet {
    let mut lambdas: Vec<f64> = (0..costs.products())
        .flat_map(|i| product_crossings(costs, i))
        .collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    BreakpointSet { lambdas }
}

/// One constant piece of the cost curve, on the open interval
/// `(lambda_lo, lambda_hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSegment {
    pub lambda_lo: f64,
    /// `f64::INFINITY` for the last piece.
    pub lambda_hi: f64,
    pub ship_cost: f64,
    pub damage_cost: f64,
    pub objective_mid: f64,
    pub sample_lambda: f64,
}

/// Solves at the midpoint of every interval between consecutive
/// breakpoints and at twice the last breakpoint, and checks that damage
/// cost never rises and shipment cost never falls along the way.
pub fn sweep_cost_curve(costs: &CostMatrices, breakpoints: &BreakpointSet) -> Result<Vec<CurveSegment>> {
    let mut edges = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(0.0);
    edges.extend_from_slice(breakpoints.lambdas());
    let mut segments = Vec::with_capacity(edges.len());
    for (k, &lo) in edges.iter().enumerate() {
        let (hi, sample) = match edges.get(k + 1) {
            Some(&hi) => (hi, 0.5 * (lo + hi)),
            None if lo == 0.0 => (f64::INFINITY, 1.0),
            None => (f64::INFINITY, 2.0 * lo),
        };
        let out = solve_tikhonov(costs, sample)?;
        segments.push(CurveSegment {
            lambda_lo: lo,
            lambda_hi: hi,
            ship_cost: out.ship_cost,
            damage_cost: out.damage_cost,
            objective_mid: out.objective,
            sample_lambda: sample,
        });
    }
    for w in segments.windows(2) {
        if w[1].damage_cost > w[0].damage_cost || w[1].ship_cost < w[0].ship_cost {
            return Err(Error::PropertyViolation(format!(
                "cost curve not monotone between lambda {} and {}",
                w[0].sample_lambda, w[1].sample_lambda
            )));
        }
    }
    Ok(segments)
}

/// Largest drop of `D(X_lambda)` between adjacent curve pieces.
pub fn max_damage_jump(curve: &[CurveSegment]) -> f64 {
    curve
        .windows(2)
        .map(|w| w[0].damage_cost - w[1].damage_cost)
        .fold(0.0, f64::max)
}

/// Violations of the two general-position conditions under which the
/// penalized and budgeted problems are equivalent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollinearityReport {
    /// `(product, j1, j2, j3)`: three feasible `(D, S)` points on a line,
    /// or two coincident points (reported with `j3 == j2`).
    pub collinear: Vec<(usize, usize, usize, usize)>,
    /// `(lambda, product_a, product_b)`: two products tie at the same lambda.
    pub shared_crossings: Vec<(f64, usize, usize)>,
}

impl CollinearityReport {
    pub fn is_clean(&self) -> bool {
        self.collinear.is_empty() && self.shared_crossings.is_empty()
    }
}

/// Exact-arithmetic preflight; random real-valued costs pass with
/// probability one.
pub fn check_non_collinearity(costs: &CostMatrices) -> CollinearityReport {
    let mut report = CollinearityReport::default();
    for i in 0..costs.products() {
        let pts: Vec<(usize, f64, f64)> = costs
            .feasible_types(i)
            .map(|j| (j, costs.damage(i, j), costs.ship_raw(i, j)))
            .collect();
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                let (ja, da, sa) = pts[a];
                let (jb, db, sb) = pts[b];
                if da == db && sa == sb {
                    report.collinear.push((i, ja, jb, jb));
                    continue;
                }
                for &(jc, dc, sc) in &pts[b + 1..] {
                    if (db - da) * (sc - sa) == (sb - sa) * (dc - da) {
                        report.collinear.push((i, ja, jb, jc));
                    }
                }
            }
        }
    }
    let mut tagged: Vec<(f64, usize)> = (0..costs.products())
        .flat_map(|i| {
            let mut xs = product_crossings(costs, i);
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            xs.into_iter().map(move |l| (l, i))
        })
        .collect();
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for w in tagged.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 != w[1].1 {
            report.shared_crossings.push((w[0].0, w[0].1, w[1].1));
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub budget: f64,
    /// Lambda whose solution is compared against the budgeted optimum.
    pub lambda_found: f64,
    /// Lambda returned by the bisection search itself.
    pub lambda_search: f64,
    pub iterations: usize,
    pub ship_ivanov: f64,
    pub damage_ivanov: f64,
    pub ship_tikhonov: f64,
    pub damage_tikhonov: f64,
    pub delta_bound: f64,
    pub t_star: f64,
    /// Whether any assignment meets the original budget.
    pub budget_feasible: bool,
    pub verdict: bool,
}

/// Checks that the search's penalized solution is also the budgeted
/// optimum for a budget `T*` in `[T, T + delta)`.
///
/// The search brackets the jump of `D(X_lambda)` across the budget; the
/// bracket is refined with exact breakpoints to the piece just left of the
/// jump, whose damage cost is the smallest value `>= T`. That damage cost
/// is `T*`. When every solution already meets the budget, `T* = T`.
pub fn verify_equivalence(costs: &CostMatrices, budget: f64, rho: f64, lambda_max: f64) -> Result<EquivalenceReport> {
    guard(costs)?;
    let cfg = LambdaSearchConfig::new(Budget::Absolute(budget))
        .with_rho(rho)
        .with_lambda_max(lambda_max);
    let search = determine_lambda(costs, &cfg)?;
    let (lo, hi) = search.bracket;

    let mut edges = vec![lo];
    edges.extend(
        enumerate_breakpoints(costs)
            .lambdas()
            .iter()
            .copied()
            .filter(|&l| l > lo && l < hi),
    );
    edges.push(hi);
    let mut upper_side: Option<SolveOutcome> = None;
    let mut first: Option<SolveOutcome> = None;
    for w in edges.windows(2) {
        let out = solve_tikhonov(costs, 0.5 * (w[0] + w[1]))?;
        if first.is_none() {
            first = Some(out.clone());
        }
        if out.damage_cost >= budget {
            upper_side = Some(out);
        }
    }
    let (tikhonov, t_star) = match upper_side {
        Some(out) => {
            let t = out.damage_cost;
            (out, t)
        }
        None => (first.expect("bracket has at least one piece"), budget),
    };

    let budget_feasible = brute_force_ivanov(costs, budget).is_ok();
    let ivanov = brute_force_ivanov(costs, t_star)?;
    let delta_bound = compute_delta_bound(costs);
    let same = ivanov.ship_cost == tikhonov.ship_cost && ivanov.damage_cost == tikhonov.damage_cost;
    let in_window = t_star >= budget && (t_star < budget + delta_bound || t_star == budget);
    Ok(EquivalenceReport {
        budget,
        lambda_found: tikhonov.lambda,
        lambda_search: search.lambda,
        iterations: search.iterations,
        ship_ivanov: ivanov.ship_cost,
        damage_ivanov: ivanov.damage_cost,
        ship_tikhonov: tikhonov.ship_cost,
        damage_tikhonov: tikhonov.damage_cost,
        delta_bound,
        t_star,
        budget_feasible,
        verdict: same && (!budget_feasible || in_window),
    })
}
