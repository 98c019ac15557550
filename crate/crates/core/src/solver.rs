//! Linear-time solution of the penalized assignment problem
//! `min_X S(X) + lambda * D(X)`.
//!
//! With no constraints linking different products, the problem splits into
//! one `n`-way argmin per product. Exact ties on `S_ij + lambda * D_ij` go
//! to the smaller `D_ij`, then to the more robust (higher index) type.

use rayon::prelude::*;

use crate::catalog::CostMatrices;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// One package type per product, as zero-based type indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment(Vec<usize>);

impl Assignment {
    pub fn new(chosen: Vec<usize>) -> Self {
        Assignment(chosen)
    }

    pub fn chosen(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl From<Vec<usize>> for Assignment {
    fn from(v: Vec<usize>) -> Self {
        Assignment(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub assignment: Assignment,
    pub ship_cost: f64,
    pub damage_cost: f64,
    pub objective: f64,
    pub lambda: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeLambda(lambda))
    }
}

/// Argmin of `ship[j] + lambda * damage[j]` over unmasked `j`.
#[inline]
pub fn best_type(ship: &[f64], damage: &[f64], mask: &[bool], lambda: f64) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for j in 0..ship.len() {
        if mask[j] {
            continue;
        }
        let (s, d) = (ship[j], damage[j]);
        let e = s + lambda * d;
        let take = match best {
            None => true,
            Some((_, be, bd)) => e < be || (e == be && d <= bd),
        };
        if take {
            best = Some((j, e, d));
        }
    }
    best.map(|(j, _, _)| j)
}

/// Solves every product independently. Runs in `O(m n)`.
pub fn solve_tikhonov(costs: &CostMatrices, lambda: f64) -> Result<SolveOutcome> {
    check_lambda(lambda)?;
    let chosen = (0..costs.products())
        .map(|i| {
            best_type(costs.ship_row(i), costs.damage_row(i), costs.mask_row(i), lambda)
                .ok_or(Error::InfeasibleProduct(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(costs, Assignment(chosen), lambda))
}

/// Same result as [`solve_tikhonov`], with rows split across the current
/// rayon pool.
pub fn solve_tikhonov_par(costs: &CostMatrices, lambda: f64) -> Result<SolveOutcome> {
    check_lambda(lambda)?;
    let chosen = (0..costs.products())
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            best_type(costs.ship_row(i), costs.damage_row(i), costs.mask_row(i), lambda)
                .ok_or(Error::InfeasibleProduct(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(costs, Assignment(chosen), lambda))
}

fn aggregate(costs: &CostMatrices, assignment: Assignment, lambda: f64) -> SolveOutcome {
    let mut ship = CompensatedSum::new();
    let mut damage = CompensatedSum::new();
    for (i, &j) in assignment.chosen().iter().enumerate() {
        ship.add(costs.ship_raw(i, j));
        damage.add(costs.damage(i, j));
    }
    let (ship_cost, damage_cost) = (ship.value(), damage.value());
    SolveOutcome {
        assignment,
        ship_cost,
        damage_cost,
        objective: ship_cost + lambda * damage_cost,
        lambda,
    }
}

/// `S(X)`, `D(X)` and `E(X)` of a given assignment.
pub fn evaluate(costs: &CostMatrices, assignment: &Assignment, lambda: f64) -> Result<SolveOutcome> {
    check_lambda(lambda)?;
    if assignment.len() != costs.products() {
        return Err(Error::LengthMismatch {
            left: assignment.len(),
            right: costs.products(),
        });
    }
    for (i, &j) in assignment.chosen().iter().enumerate() {
        if j >= costs.types() {
            return Err(Error::IndexOutOfRange {
                index: j,
                count: costs.types(),
            });
        }
        if costs.is_masked(i, j) {
            return Err(Error::InfeasibleAssignment { product: i, package: j });
        }
    }
    Ok(aggregate(costs, assignment.clone(), lambda))
}

/// Recommendation for a product without sales history, from per-unit
/// costs. Sales velocity scales a product's whole row, so it never changes
/// the argmin and can be left out.
pub fn recommend_new_product(
    unit_ship: &[f64],
    unit_damage: &[f64],
    mask: &[bool],
    lambda: f64,
) -> Result<usize> {
    check_lambda(lambda)?;
    if unit_damage.len() != unit_ship.len() || mask.len() != unit_ship.len() {
        return Err(Error::DimensionMismatch(format!(
            "row lengths {} / {} / {}",
            unit_ship.len(),
            unit_damage.len(),
            mask.len()
        )));
    }
    let mut ship = unit_ship.to_vec();
    let mut mask = mask.to_vec();
    for (s, m) in ship.iter_mut().zip(mask.iter_mut()) {
        if s.is_infinite() {
            *m = true;
            *s = 0.0;
        }
    }
    best_type(&ship, unit_damage, &mask, lambda).ok_or(Error::InfeasibleProduct(0))
}
