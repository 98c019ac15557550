//! Bisection search for the trade-off weight `lambda` that meets a damage
//! budget.
//!
//! `D(X_lambda)` is a non-increasing step function of `lambda`, so the
//! interval `[0, lambda_max]` can be halved until successive midpoints move
//! by at most `rho`.

use crate::catalog::CostMatrices;
use crate::error::{Error, Result};
use crate::solver::{solve_tikhonov, SolveOutcome};

pub const DEFAULT_RHO: f64 = 0.001;
pub const DEFAULT_LAMBDA_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Absolute damage-cost budget `T`.
    Absolute(f64),
    /// Multiple of the current damage cost, `T = gamma * T_damage^cur`.
    Gamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSearchConfig {
    pub budget: Budget,
    pub rho: f64,
    pub lambda_max: f64,
}

impl LambdaSearchConfig {
    pub fn new(budget: Budget) -> Self {
        LambdaSearchConfig {
            budget,
            rho: DEFAULT_RHO,
            lambda_max: DEFAULT_LAMBDA_MAX,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_lambda_max(mut self, lambda_max: f64) -> Self {
        self.lambda_max = lambda_max;
        self
    }

    /// Resolves the budget to an absolute damage cost.
    pub fn target(&self, costs: &CostMatrices) -> Result<f64> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return Err(Error::Config(format!(
                "lambda_max must be positive, got {}",
                self.lambda_max
            )));
        }
        let target = match self.budget {
            Budget::Absolute(t) => t,
            Budget::Gamma(gamma) => {
                if !(gamma.is_finite() && gamma >= 0.0) {
                    return Err(Error::Config(format!("gamma must be non-negative, got {gamma}")));
                }
                let current = costs.t_damage_cur().ok_or_else(|| {
                    Error::Config("gamma budget needs the current assignment".into())
                })?;
                gamma * current
            }
        };
        if !(target.is_finite() && target >= 0.0) {
            return Err(Error::Config(format!("damage budget must be non-negative, got {target}")));
        }
        Ok(target)
    }

    /// `ceil(log2(lambda_max / rho)) + 1`.
    pub fn iteration_bound(&self) -> usize {
        (self.lambda_max / self.rho).log2().ceil().max(0.0) as usize + 1
    }
}

/// State after one bisection step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchStep {
    pub lambda: f64,
    pub damage_cost: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub outcome: SolveOutcome,
    pub iterations: usize,
    /// False when even `lambda_max` leaves the damage cost above budget.
    pub feasible: bool,
    pub target: f64,
    /// Final bracket: `D(X)` is at least the budget at the lower end (or
    /// the lower end is 0) and below it at the upper end (unless the upper
    /// end never moved).
    pub bracket: (f64, f64),
    pub trace: Vec<SearchStep>,
}

/// Bisection on `[0, lambda_max]`.
///
/// Each step solves at the midpoint, lowers the upper end when the damage
/// cost is under budget and raises the lower end otherwise, and stops once
/// the next midpoint is within `rho` of the current one or the damage cost
/// hits the budget exactly. If the last midpoint overshoots the budget the
/// upper end of the bracket is returned instead, so the returned solution
/// meets the budget whenever any `lambda <= lambda_max` does.
pub fn determine_lambda(costs: &CostMatrices, cfg: &LambdaSearchConfig) -> Result<LambdaSearch> {
    let target = cfg.target(costs)?;
    let mut lo = 0.0_f64;
    let mut hi = cfg.lambda_max;
    let mut mid = 0.5 * (lo + hi);
    let mut trace = Vec::new();
    let mut last;
    loop {
        let lambda = mid;
        last = solve_tikhonov(costs, lambda)?;
        if last.damage_cost < target {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = 0.5 * (lo + hi);
        trace.push(SearchStep {
            lambda,
            damage_cost: last.damage_cost,
            lambda_min: lo,
            lambda_max: hi,
        });
        if (mid - lambda).abs() <= cfg.rho || last.damage_cost == target {
            break;
        }
    }
    let iterations = trace.len();

    let (outcome, feasible) = if last.damage_cost <= target {
        (last, true)
    } else {
        // `hi` is either a midpoint already seen under budget or lambda_max.
        let at_hi = solve_tikhonov(costs, hi)?;
        let ok = at_hi.damage_cost <= target;
        (at_hi, ok)
    };
    Ok(LambdaSearch {
        lambda: outcome.lambda,
        outcome,
        iterations,
        feasible,
        target,
        bracket: (lo, hi),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_product() -> CostMatrices {
        CostMatrices::unmasked(&[vec![1.0, 2.0]], &[vec![10.0, 2.0]]).unwrap()
    }

    #[test]
    fn converges_past_the_single_crossing() {
        // S + lambda D crosses at lambda = (2 - 1) / (10 - 2) = 0.125
        let cfg = LambdaSearchConfig::new(Budget::Absolute(5.0))
            .with_rho(1e-3)
            .with_lambda_max(16.0);
        let res = determine_lambda(&one_product(), &cfg).unwrap();
        assert!(res.feasible);
        assert!(res.lambda >= 0.125);
        assert_eq!(res.outcome.damage_cost, 2.0);
        assert!(res.iterations <= cfg.iteration_bound());
        let (lo, hi) = res.bracket;
        assert!(lo <= 0.125 && 0.125 <= hi);
        assert!(hi - lo <= 2.0 * 1e-3);
    }

    #[test]
    fn slack_budget_ends_at_small_lambda() {
        let cfg = LambdaSearchConfig::new(Budget::Absolute(11.0));
        let res = determine_lambda(&one_product(), &cfg).unwrap();
        assert!(res.feasible);
        assert!(res.outcome.damage_cost <= 11.0);
        assert!(res.lambda < 0.01);
    }

    #[test]
    fn unreachable_budget_is_flagged() {
        let cfg = LambdaSearchConfig::new(Budget::Absolute(1.0));
        let res = determine_lambda(&one_product(), &cfg).unwrap();
        assert!(!res.feasible);
        assert_eq!(res.lambda, DEFAULT_LAMBDA_MAX);
        assert_eq!(res.outcome.damage_cost, 2.0);
    }

    #[test]
    fn default_bound_is_twenty_one() {
        let cfg = LambdaSearchConfig::new(Budget::Gamma(1.0));
        assert_eq!(cfg.iteration_bound(), 21);
    }

    #[test]
    fn exact_hit_stops_early() {
        // D at the first midpoint (500) is 2 == T
        let cfg = LambdaSearchConfig::new(Budget::Absolute(2.0));
        let res = determine_lambda(&one_product(), &cfg).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.lambda, 500.0);
    }

    #[test]
    fn gamma_uses_current_damage() {
        let costs = one_product().with_current(vec![0]).unwrap();
        let cfg = LambdaSearchConfig::new(Budget::Gamma(0.5));
        assert_eq!(cfg.target(&costs).unwrap(), 5.0);
        assert!(cfg.target(&one_product()).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = one_product();
        for cfg in [
            LambdaSearchConfig::new(Budget::Absolute(1.0)).with_rho(0.0),
            LambdaSearchConfig::new(Budget::Absolute(1.0)).with_lambda_max(-1.0),
            LambdaSearchConfig::new(Budget::Absolute(-1.0)),
            LambdaSearchConfig::new(Budget::Absolute(f64::NAN)),
        ] {
            assert!(determine_lambda(&c, &cfg).is_err());
        }
    }

    #[test]
    fn bracket_is_monotone() {
        let cfg = LambdaSearchConfig::new(Budget::Absolute(5.0));
        let res = determine_lambda(&one_product(), &cfg).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].lambda_min >= w[0].lambda_min);
            assert!(w[1].lambda_max <= w[0].lambda_max);
        }
        assert!(res.trace.iter().all(|s| s.lambda_min <= s.lambda_max));
        assert_eq!(res.iterations, 19);
    }
}
