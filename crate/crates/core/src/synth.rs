//! Seeded generators for products, shipments and cost matrices.
//!
//! Every product draws from its own ChaCha stream keyed by its index, so
//! output for product `i` does not depend on how many products come before
//! or after it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::catalog::{CostMatrices, PackageCatalog, ProductFlags, ProductRecord, ShipCost};
use crate::error::{Error, Result};
use crate::model::{MonotoneLogisticModel, ShipmentRecord};
use crate::numeric::logit;

const PRODUCT_STREAM: u64 = 0;
const SHIPMENT_STREAM: u64 = 1;
const TRUTH_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub products: usize,
    pub types: usize,
    pub feature_dim: usize,
    /// Damage rate per type at the all-zero feature vector, least robust
    /// first. Must be non-increasing. `None` spaces rates evenly on the
    /// logit scale from 0.25 down to 0.01.
    pub base_damage_rates: Option<Vec<f64>>,
    /// Standard deviation of the ground-truth feature weights.
    pub weight_scale: f64,
    /// Per-unit cost of the least robust type, split evenly between
    /// material and transport.
    pub base_ship_range: (f64, f64),
    /// Added per step up in robustness.
    pub ship_step_range: (f64, f64),
    pub damage_cost_range: (f64, f64),
    pub velocity_range: (f64, f64),
    pub fragile_rate: f64,
    pub liquid_rate: f64,
    pub hazardous_rate: f64,
    /// Chance that a product is too big for some of the least robust types.
    pub oversize_rate: f64,
    pub shipments_per_product: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            products: 100,
            types: 8,
            feature_dim: 3,
            base_damage_rates: None,
            weight_scale: 0.8,
            base_ship_range: (0.5, 3.0),
            ship_step_range: (0.05, 0.6),
            damage_cost_range: (5.0, 60.0),
            velocity_range: (1.0, 200.0),
            fragile_rate: 0.15,
            liquid_rate: 0.1,
            hazardous_rate: 0.05,
            oversize_rate: 0.0,
            shipments_per_product: 20,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} range must satisfy 0 < lo <= hi, got ({lo}, {hi})")))
    }
}

fn check_rate(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.types < 2 {
            return Err(Error::Config("need at least two package types".into()));
        }
        self.damage_rates()?;
        if !(self.weight_scale.is_finite() && self.weight_scale >= 0.0) {
            return Err(Error::Config("weight scale must be non-negative".into()));
        }
        check_range("base ship cost", self.base_ship_range)?;
        check_range("ship cost step", self.ship_step_range)?;
        check_range("damage cost", self.damage_cost_range)?;
        check_range("sales velocity", self.velocity_range)?;
        check_rate("fragile rate", self.fragile_rate)?;
        check_rate("liquid rate", self.liquid_rate)?;
        check_rate("hazardous rate", self.hazardous_rate)?;
        check_rate("oversize rate", self.oversize_rate)?;
        Ok(())
    }

    pub fn damage_rates(&self) -> Result<Vec<f64>> {
        let rates = match &self.base_damage_rates {
            Some(r) => r.clone(),
            None => {
                let (hi, lo) = (logit(0.25), logit(0.01));
                let steps = (self.types - 1) as f64;
                (0..self.types)
                    .map(|k| crate::numeric::sigmoid(hi + (lo - hi) * k as f64 / steps))
                    .collect()
            }
        };
        if rates.len() != self.types {
            return Err(Error::Config(format!(
                "{} base damage rates for {} types",
                rates.len(),
                self.types
            )));
        }
        if rates.iter().any(|&p| !(p > 0.0 && p < 1.0)) || rates.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config("base damage rates must lie in (0, 1) and not increase".into()));
        }
        Ok(rates)
    }

    pub fn catalog(&self) -> Result<PackageCatalog> {
        PackageCatalog::with_len(self.types)
    }
}

fn stream(seed: u64, kind: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// The model that generated the labels: weights on raw features, offsets
/// matching the configured base rates.
pub fn ground_truth_model(cfg: &GeneratorConfig) -> Result<MonotoneLogisticModel> {
    cfg.validate()?;
    let rates = cfg.damage_rates()?;
    let betas: Vec<f64> = rates.iter().map(|&p| logit(p)).collect();
    let eps: Vec<f64> = betas.windows(2).map(|w| (w[0] - w[1]).max(0.0)).collect();
    let mut rng = stream(cfg.seed, TRUTH_STREAM, 0);
    let weights: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| cfg.weight_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    MonotoneLogisticModel::linear(cfg.types, weights, eps, betas[cfg.types - 1])
}

/// Products with standard-normal features and per-unit shipping costs that
/// strictly increase with robustness.
pub fn generate_products(cfg: &GeneratorConfig) -> Result<Vec<ProductRecord>> {
    cfg.validate()?;
    let n = cfg.types;
    Ok((0..cfg.products)
        .map(|i| {
            let mut rng = stream(cfg.seed, PRODUCT_STREAM, i);
            let features: Vec<f64> = (0..cfg.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
            let flags = ProductFlags {
                fragile: rng.random_bool(cfg.fragile_rate),
                liquid: rng.random_bool(cfg.liquid_rate),
                hazardous: rng.random_bool(cfg.hazardous_rate),
            };
            let mut unit = uniform(&mut rng, cfg.base_ship_range);
            let mut ship_costs = Vec::with_capacity(n);
            for k in 0..n {
                if k > 0 {
                    unit += uniform(&mut rng, cfg.ship_step_range);
                }
                ship_costs.push(ShipCost::Feasible {
                    material: 0.5 * unit,
                    transport: 0.5 * unit,
                });
            }
            let oversize_upto = if rng.random_bool(cfg.oversize_rate) {
                rng.random_range(1..n)
            } else {
                0
            };
            ship_costs[..oversize_upto].fill(ShipCost::Oversize);
            ProductRecord {
                id: format!("P{:06}", i + 1),
                features,
                flags,
                current_type: rng.random_range(oversize_upto..n),
                sales_velocity: uniform(&mut rng, cfg.velocity_range),
                damage_cost: uniform(&mut rng, cfg.damage_cost_range),
                ship_costs,
            }
        })
        .collect())
}

/// `cfg.shipments_per_product` shipments per product in uniformly drawn
/// package types, labelled by the ground-truth model. Returns the model
/// alongside the shipments.
pub fn generate_shipments(
    products: &[ProductRecord],
    cfg: &GeneratorConfig,
) -> Result<(Vec<ShipmentRecord>, MonotoneLogisticModel)> {
    let truth = ground_truth_model(cfg)?;
    let mut out = Vec::with_capacity(products.len() * cfg.shipments_per_product);
    for (i, p) in products.iter().enumerate() {
        let probs = truth.predict_all(&p.features)?;
        let mut rng = stream(cfg.seed, SHIPMENT_STREAM, i);
        for _ in 0..cfg.shipments_per_product {
            let k = rng.random_range(0..cfg.types);
            let label = rng.random::<f64>() < probs[k];
            out.push(ShipmentRecord {
                product_id: p.id.clone(),
                features: p.features.clone(),
                package: k,
                label,
            });
        }
    }
    Ok((out, truth))
}

/// Ground-truth damage probabilities for every product and type.
pub fn true_probabilities(products: &[ProductRecord], truth: &MonotoneLogisticModel) -> Result<Vec<Vec<f64>>> {
    products.iter().map(|p| truth.predict_all(&p.features)).collect()
}

/// Random cost instance for the solver oracles: per-product shipping costs
/// increasing and damage costs decreasing in the type index, each cell
/// masked with probability `mask_rate` (at least one cell per row stays
/// open), and a random feasible current assignment.
pub fn random_cost_instance(seed: u64, products: usize, types: usize, mask_rate: f64) -> Result<CostMatrices> {
    check_rate("mask rate", mask_rate)?;
    if types == 0 {
        return Err(Error::Config("need at least one package type".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ship = Vec::with_capacity(products * types);
    let mut damage = Vec::with_capacity(products * types);
    let mut mask = Vec::with_capacity(products * types);
    let mut current = Vec::with_capacity(products);
    for _ in 0..products {
        let scale = rng.random_range(0.5..20.0);
        let mut s = rng.random_range(0.0..1.0) * scale;
        let mut d = rng.random_range(5.0..10.0) * scale;
        let row_start = mask.len();
        for _ in 0..types {
            ship.push(s);
            damage.push(d);
            mask.push(rng.random_bool(mask_rate));
            s += rng.random_range(0.01..1.0) * scale;
            d *= rng.random_range(0.3..0.95);
        }
        let row = &mut mask[row_start..];
        if row.iter().all(|&m| m) {
            row[rng.random_range(0..types)] = false;
        }
        let open: Vec<usize> = (0..types).filter(|&j| !row[j]).collect();
        current.push(open[rng.random_range(0..open.len())]);
    }
    CostMatrices::new(types, ship, damage, mask)?.with_current(current)
}
