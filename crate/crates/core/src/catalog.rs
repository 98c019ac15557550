//! Product and package data model, business-rule masks and the shipment /
//! damage cost matrices.
//!
//! Package types are indexed from 0 in ascending robustness: index 0 is the
//! least protective option and `n - 1` the most protective. CSV files and
//! the CLI use the same order but count from 1.

use std::collections::HashSet;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Ordered list of package types, least robust first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageCatalog {
    names: Vec<String>,
}

impl PackageCatalog {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "a catalog needs at least 2 package types, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() || !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate or empty package type `{name}`")));
            }
        }
        Ok(PackageCatalog { names })
    }

    /// The eight e-commerce package types: no additional packaging, special
    /// and small polybags, jiffy mailer, custom pack, T-folder, variable
    /// height box and carton.
    pub fn standard() -> Self {
        PackageCatalog::new(["NAP", "PL", "PS", "JM", "CP", "T", "V", "C"]).expect("valid")
    }

    /// Placeholder names `T1..Tn` for catalogs read from bare CSV files.
    /// Eight-type catalogs get the standard names.
    pub fn with_len(n: usize) -> Result<Self> {
        if n == 8 {
            return Ok(Self::standard());
        }
        PackageCatalog::new((1..=n).map(|k| format!("T{k}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShipCost {
    Feasible { material: f64, transport: f64 },
    /// The product does not fit even the largest container of this type.
    Oversize,
}

impl ShipCost {
    pub fn total(material: f64) -> Self {
        ShipCost::Feasible {
            material,
            transport: 0.0,
        }
    }

    pub fn per_unit(&self) -> Option<f64> {
        match *self {
            ShipCost::Feasible {
                material,
                transport,
            } => Some(material + transport),
            ShipCost::Oversize => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProductFlags {
    pub fragile: bool,
    pub liquid: bool,
    pub hazardous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub flags: ProductFlags,
    pub current_type: usize,
    pub sales_velocity: f64,
    pub damage_cost: f64,
    pub ship_costs: Vec<ShipCost>,
}

impl ProductRecord {
    pub fn validate(&self, types: usize) -> Result<()> {
        if self.ship_costs.len() != types {
            return Err(Error::DimensionMismatch(format!(
                "product `{}` has {} ship costs for {} types",
                self.id,
                self.ship_costs.len(),
                types
            )));
        }
        if self.current_type >= types {
            return Err(Error::IndexOutOfRange {
                index: self.current_type,
                count: types,
            });
        }
        if self.ship_costs[self.current_type] == ShipCost::Oversize {
            return Err(Error::Config(format!(
                "product `{}` is marked oversize for its current type",
                self.id
            )));
        }
        let bad = |v: f64| !v.is_finite() || v < 0.0;
        if bad(self.sales_velocity) || bad(self.damage_cost) {
            return Err(Error::Config(format!(
                "product `{}`: sales velocity and damage cost must be finite and non-negative",
                self.id
            )));
        }
        for cost in &self.ship_costs {
            if let ShipCost::Feasible {
                material,
                transport,
            } = *cost
            {
                if bad(material) || bad(transport) {
                    return Err(Error::Config(format!(
                        "product `{}`: ship costs must be finite and non-negative",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Net shipment cost `S`, net damage cost `D` and infeasibility mask `M`,
/// stored row-major (one row per product).
///
/// Masked cells never take part in any optimum. Shipment cost for an
/// oversize cell is stored as `0.0` and reported as `None` by [`Self::ship`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    products: usize,
    types: usize,
    ship: Vec<f64>,
    damage: Vec<f64>,
    mask: Vec<bool>,
    current: Option<Vec<usize>>,
    t_damage_cur: Option<f64>,
}

impl CostMatrices {
    /// Builds matrices from flat row-major data.
    ///
    /// An infinite shipment cost is accepted only as a marker of an
    /// infeasible cell: the cell is masked and the value discarded.
    pub fn new(types: usize, ship: Vec<f64>, damage: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if types == 0 {
            return Err(Error::DimensionMismatch("zero package types".into()));
        }
        if !ship.len().is_multiple_of(types) || damage.len() != ship.len() || mask.len() != ship.len() {
            return Err(Error::DimensionMismatch(format!(
                "S has {}, D has {}, M has {} cells for {} types",
                ship.len(),
                damage.len(),
                mask.len(),
                types
            )));
        }
        let mut ship = ship;
        let mut mask = mask;
        for (cell, (s, masked)) in ship.iter_mut().zip(mask.iter_mut()).enumerate() {
            if *s == f64::INFINITY {
                *masked = true;
                *s = 0.0;
            } else if !s.is_finite() || *s < 0.0 {
                return Err(Error::Config(format!(
                    "invalid shipment cost {s} at product {}, type {}",
                    cell / types,
                    cell % types
                )));
            }
        }
        if let Some((cell, d)) = damage
            .iter()
            .enumerate()
            .find(|(_, d)| !d.is_finite() || **d < 0.0)
        {
            return Err(Error::Config(format!(
                "invalid damage cost {d} at product {}, type {}",
                cell / types,
                cell % types
            )));
        }
        let products = ship.len() / types;
        for i in 0..products {
            if mask[i * types..(i + 1) * types].iter().all(|&m| m) {
                return Err(Error::InfeasibleProduct(i));
            }
        }
        Ok(CostMatrices {
            products,
            types,
            ship,
            damage,
            mask,
            current: None,
            t_damage_cur: None,
        })
    }

    pub fn from_rows(ship: &[Vec<f64>], damage: &[Vec<f64>], mask: &[Vec<bool>]) -> Result<Self> {
        let types = ship.first().map_or(0, Vec::len);
        if damage.len() != ship.len() || mask.len() != ship.len() {
            return Err(Error::DimensionMismatch("row counts of S, D, M differ".into()));
        }
        let ragged = ship
            .iter()
            .chain(damage)
            .map(Vec::len)
            .chain(mask.iter().map(Vec::len))
            .any(|len| len != types);
        if ragged {
            return Err(Error::DimensionMismatch("ragged cost rows".into()));
        }
        CostMatrices::new(
            types,
            ship.concat(),
            damage.concat(),
            mask.concat(),
        )
    }

    /// Unmasked matrices.
    pub fn unmasked(ship: &[Vec<f64>], damage: &[Vec<f64>]) -> Result<Self> {
        let mask: Vec<Vec<bool>> = ship.iter().map(|r| vec![false; r.len()]).collect();
        Self::from_rows(ship, damage, &mask)
    }

    /// Attaches the current assignment and records `T_damage^cur`.
    pub fn with_current(mut self, current: Vec<usize>) -> Result<Self> {
        if current.len() != self.products {
            return Err(Error::LengthMismatch {
                left: current.len(),
                right: self.products,
            });
        }
        if let Some(&bad) = current.iter().find(|&&j| j >= self.types) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                count: self.types,
            });
        }
        let total: CompensatedSum = current
            .iter()
            .enumerate()
            .map(|(i, &j)| self.damage(i, j))
            .collect();
        self.t_damage_cur = Some(total.value());
        self.current = Some(current);
        Ok(self)
    }

    pub fn products(&self) -> usize {
        self.products
    }

    pub fn types(&self) -> usize {
        self.types
    }

    #[inline]
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.types + j]
    }

    /// Shipment cost, `None` when the cell is masked.
    pub fn ship(&self, i: usize, j: usize) -> Option<f64> {
        let c = i * self.types + j;
        (!self.mask[c]).then_some(self.ship[c])
    }

    /// Raw stored shipment cost, including values under the mask.
    #[inline]
    pub fn ship_raw(&self, i: usize, j: usize) -> f64 {
        self.ship[i * self.types + j]
    }

    #[inline]
    pub fn damage(&self, i: usize, j: usize) -> f64 {
        self.damage[i * self.types + j]
    }

    #[inline]
    pub fn ship_row(&self, i: usize) -> &[f64] {
        &self.ship[i * self.types..(i + 1) * self.types]
    }

    #[inline]
    pub fn damage_row(&self, i: usize) -> &[f64] {
        &self.damage[i * self.types..(i + 1) * self.types]
    }

    #[inline]
    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.types..(i + 1) * self.types]
    }

    pub fn feasible_types(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.mask_row(i)
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .map(|(j, _)| j)
    }

    pub fn current(&self) -> Option<&[usize]> {
        self.current.as_deref()
    }

    pub fn t_damage_cur(&self) -> Option<f64> {
        self.t_damage_cur
    }

    /// Flat row-major views of `(S, D, M)`.
    pub fn parts(&self) -> (&[f64], &[f64], &[bool]) {
        (&self.ship, &self.damage, &self.mask)
    }

    /// Copy with product `i`'s `S` and `D` rows multiplied by `factor`.
    pub fn scale_row(&self, i: usize, factor: f64) -> Result<Self> {
        let mut ship = self.ship.clone();
        let mut damage = self.damage.clone();
        for j in 0..self.types {
            ship[i * self.types + j] *= factor;
            damage[i * self.types + j] *= factor;
        }
        let out = CostMatrices::new(self.types, ship, damage, self.mask.clone())?;
        match &self.current {
            Some(cur) => out.with_current(cur.clone()),
            None => Ok(out),
        }
    }
}

/// Business rules that forbid product / package combinations.
///
/// Five rule families exist: oversize products, restricted types for
/// liquid / fragile / hazardous items, no downgrade for high-damage
/// products, no costlier upgrade for very-low-damage products, and
/// category-level bans on shipping without packaging.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRuleSet {
    pub oversize: bool,
    pub restricted_flags: bool,
    pub liquid_forbidden: Vec<String>,
    pub fragile_forbidden: Vec<String>,
    pub hazardous_forbidden: Vec<String>,
    pub high_damage_floor: bool,
    pub high_damage_factor: f64,
    pub low_damage_ceiling: bool,
    pub low_damage_factor: f64,
    pub category_nap_ban: bool,
    /// Zero-based feature columns; a non-zero value marks a banned category.
    pub nap_ban_features: Vec<usize>,
    pub nap_type: String,
}

impl Default for MaskRuleSet {
    /// Only the oversize rule is active.
    fn default() -> Self {
        MaskRuleSet {
            oversize: true,
            restricted_flags: false,
            liquid_forbidden: names(&["JM", "PS", "PL", "NAP"]),
            fragile_forbidden: names(&["T", "CP", "JM", "PS", "PL", "NAP"]),
            hazardous_forbidden: names(&["PS", "PL", "NAP"]),
            high_damage_floor: false,
            high_damage_factor: 2.0,
            low_damage_ceiling: false,
            low_damage_factor: 0.25,
            category_nap_ban: false,
            nap_ban_features: Vec::new(),
            nap_type: "NAP".to_string(),
        }
    }
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

const RULE_KEYS: &[&str] = &[
    "oversize",
    "restricted_flags",
    "liquid_forbidden",
    "fragile_forbidden",
    "hazardous_forbidden",
    "high_damage_floor",
    "high_damage_factor",
    "low_damage_ceiling",
    "low_damage_factor",
    "category_nap_ban",
    "nap_ban_features",
    "nap_type",
];

impl MaskRuleSet {
    /// Every rule disabled.
    pub fn none() -> Self {
        MaskRuleSet {
            oversize: false,
            ..Self::default()
        }
    }

    /// All five families enabled with the standard type lists.
    pub fn all() -> Self {
        MaskRuleSet {
            oversize: true,
            restricted_flags: true,
            high_damage_floor: true,
            low_damage_ceiling: true,
            category_nap_ban: true,
            ..Self::default()
        }
    }

    /// Reads a `key = value` rule file. Missing keys keep their defaults;
    /// `nap_ban_features` lists 1-based feature columns.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        kv.ensure_known(RULE_KEYS)?;
        let mut rules = MaskRuleSet::default();
        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = kv.get_bool(stringify!($field))? {
                    rules.$field = v;
                }
            };
        }
        macro_rules! number {
            ($field:ident) => {
                if let Some(v) = kv.get_parsed::<f64>(stringify!($field))? {
                    rules.$field = v;
                }
            };
        }
        macro_rules! list {
            ($field:ident) => {
                if let Some(v) = kv.get_list(stringify!($field)) {
                    rules.$field = v;
                }
            };
        }
        flag!(oversize);
        flag!(restricted_flags);
        flag!(high_damage_floor);
        flag!(low_damage_ceiling);
        flag!(category_nap_ban);
        number!(high_damage_factor);
        number!(low_damage_factor);
        list!(liquid_forbidden);
        list!(fragile_forbidden);
        list!(hazardous_forbidden);
        if let Some(v) = kv.get("nap_type") {
            rules.nap_type = v.to_string();
        }
        if let Some(cols) = kv.get_list("nap_ban_features") {
            rules.nap_ban_features = cols
                .iter()
                .map(|c| match c.parse::<usize>() {
                    Ok(k) if k >= 1 => Ok(k - 1),
                    _ => Err(Error::Config(format!("bad feature column `{c}`"))),
                })
                .collect::<Result<_>>()?;
        }
        if !(rules.high_damage_factor.is_finite() && rules.high_damage_factor > 0.0)
            || !(rules.low_damage_factor.is_finite() && rules.low_damage_factor >= 0.0)
        {
            return Err(Error::Config("damage thresholds must be positive".into()));
        }
        Ok(rules)
    }

    fn resolve(&self, catalog: &PackageCatalog, list: &[String]) -> Result<Vec<usize>> {
        list.iter()
            .map(|name| {
                catalog
                    .index_of(name)
                    .ok_or_else(|| Error::Config(format!("unknown package type `{name}`")))
            })
            .collect()
    }
}

/// Evaluates the enabled rules for every product.
///
/// `probs` holds the calibrated damage probabilities; the high- and
/// low-damage rules compare each product's probability in its current type
/// against the mean of those current-type probabilities across products.
pub fn build_mask(
    records: &[ProductRecord],
    catalog: &PackageCatalog,
    probs: &[Vec<f64>],
    rules: &MaskRuleSet,
) -> Result<Vec<Vec<bool>>> {
    let n = catalog.len();
    check_inputs(records, catalog, probs)?;

    let resolved = if rules.restricted_flags {
        Some((
            rules.resolve(catalog, &rules.liquid_forbidden)?,
            rules.resolve(catalog, &rules.fragile_forbidden)?,
            rules.resolve(catalog, &rules.hazardous_forbidden)?,
        ))
    } else {
        None
    };
    let nap = if rules.category_nap_ban {
        Some(
            catalog
                .index_of(&rules.nap_type)
                .ok_or_else(|| Error::Config(format!("unknown package type `{}`", rules.nap_type)))?,
        )
    } else {
        None
    };

    let mean_rate = if records.is_empty() {
        0.0
    } else {
        records
            .iter()
            .zip(probs)
            .map(|(r, p)| p[r.current_type])
            .collect::<CompensatedSum>()
            .value()
            / records.len() as f64
    };

    let mut mask = Vec::with_capacity(records.len());
    for (i, (rec, p)) in records.iter().zip(probs).enumerate() {
        let cur = rec.current_type;
        let mut row = vec![false; n];

        if rules.oversize {
            for (j, cost) in rec.ship_costs.iter().enumerate() {
                if matches!(cost, ShipCost::Oversize) {
                    row[j] = true;
                }
            }
        }

        if let Some((liquid, fragile, hazardous)) = &resolved {
            let groups = [
                (rec.flags.liquid, liquid),
                (rec.flags.fragile, fragile),
                (rec.flags.hazardous, hazardous),
            ];
            for (flagged, forbidden) in groups {
                if flagged {
                    for &j in forbidden.iter().filter(|&&j| j != cur) {
                        row[j] = true;
                    }
                }
            }
        }

        let rate = p[cur];
        if rules.high_damage_floor && rate > rules.high_damage_factor * mean_rate {
            row[..cur].iter_mut().for_each(|m| *m = true);
        }
        if rules.low_damage_ceiling && rate < rules.low_damage_factor * mean_rate {
            if let Some(s_cur) = rec.ship_costs[cur].per_unit() {
                let s_cur = s_cur * rec.sales_velocity;
                for (m, cost) in row[cur + 1..n].iter_mut().zip(&rec.ship_costs[cur + 1..n]) {
                    if let Some(s) = cost.per_unit() {
                        if s * rec.sales_velocity > s_cur {
                            *m = true;
                        }
                    }
                }
            }
        }

        if let Some(nap) = nap {
            let banned = rules
                .nap_ban_features
                .iter()
                .any(|&f| rec.features.get(f).is_some_and(|&v| v != 0.0));
            if banned {
                row[nap] = true;
            }
        }

        if row.iter().all(|&m| m) {
            return Err(Error::InfeasibleProduct(i));
        }
        mask.push(row);
    }
    Ok(mask)
}

fn check_inputs(records: &[ProductRecord], catalog: &PackageCatalog, probs: &[Vec<f64>]) -> Result<()> {
    let n = catalog.len();
    if probs.len() != records.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability rows for {} products",
            probs.len(),
            records.len()
        )));
    }
    for (rec, p) in records.iter().zip(probs) {
        rec.validate(n)?;
        if p.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "product `{}` has {} probabilities for {} types",
                rec.id,
                p.len(),
                n
            )));
        }
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::DomainError(*bad));
        }
    }
    Ok(())
}

/// `S_ij = C_ship(i, j) * s_vel(i)` and `D_ij = p_ij * s_vel(i) * C_damage(i)`,
/// masked by `rules`, with `T_damage^cur` taken at each product's current type.
pub fn build_cost_matrices(
    records: &[ProductRecord],
    catalog: &PackageCatalog,
    probs: &[Vec<f64>],
    rules: &MaskRuleSet,
) -> Result<CostMatrices> {
    let mask = build_mask(records, catalog, probs, rules)?;
    let n = catalog.len();
    let mut ship = Vec::with_capacity(records.len() * n);
    let mut damage = Vec::with_capacity(records.len() * n);
    for (rec, p) in records.iter().zip(probs) {
        for (cost, &prob) in rec.ship_costs.iter().zip(p) {
            ship.push(match cost.per_unit() {
                Some(c) => c * rec.sales_velocity,
                None => f64::INFINITY,
            });
            damage.push(prob * rec.sales_velocity * rec.damage_cost);
        }
    }
    let flat_mask = mask.concat();
    if let Some(cell) = ship
        .iter()
        .zip(&flat_mask)
        .position(|(s, m)| s.is_infinite() && !m)
    {
        return Err(Error::Config(format!(
            "product `{}` is oversize for type {} but the oversize rule is disabled",
            records[cell / n].id,
            cell % n + 1
        )));
    }
    CostMatrices::new(n, ship, damage, flat_mask)?
        .with_current(records.iter().map(|r| r.current_type).collect())
}

/// Upper bound on the largest jump of `D(X_lambda)`: the widest spread of
/// feasible damage costs within any single product.
pub fn compute_delta_bound(costs: &CostMatrices) -> f64 {
    (0..costs.products())
        .map(|i| {
            let (lo, hi) = costs
                .feasible_types(i)
                .map(|j| costs.damage(i, j))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                    (lo.min(d), hi.max(d))
                });
            hi - lo
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(id: &str, flags: ProductFlags, current: usize, costs: &[f64]) -> ProductRecord {
        ProductRecord {
            id: id.into(),
            features: vec![0.0, 0.0],
            flags,
            current_type: current,
            sales_velocity: 1.0,
            damage_cost: 1.0,
            ship_costs: costs.iter().map(|&c| ShipCost::total(c)).collect(),
        }
    }

    fn std_costs() -> Vec<f64> {
        (1..=8).map(f64::from).collect()
    }

    #[test]
    fn catalog_rejects_duplicates_and_short_lists() {
        assert!(PackageCatalog::new(["A"]).is_err());
        assert!(PackageCatalog::new(["A", "A"]).is_err());
        let c = PackageCatalog::standard();
        assert_eq!(c.index_of("NAP"), Some(0));
        assert_eq!(c.index_of("C"), Some(7));
        assert_eq!(PackageCatalog::with_len(3).unwrap().names(), ["T1", "T2", "T3"]);
    }

    #[test]
    fn ship_cost_is_sum_times_velocity() {
        let cat = PackageCatalog::new(["A", "B"]).unwrap();
        let rec = ProductRecord {
            ship_costs: vec![
                ShipCost::Feasible {
                    material: 1.0,
                    transport: 2.0,
                },
                ShipCost::total(5.0),
            ],
            ..product("p", ProductFlags::default(), 0, &[0.0, 0.0])
        };
        let costs = build_cost_matrices(&[rec], &cat, &[vec![0.5, 0.1]], &MaskRuleSet::none()).unwrap();
        assert_eq!(costs.ship(0, 0), Some(3.0));
    }

    #[test]
    fn damage_cost_is_probability_velocity_and_unit_cost() {
        let cat = PackageCatalog::new(["A", "B"]).unwrap();
        let rec = ProductRecord {
            sales_velocity: 10.0,
            damage_cost: 4.0,
            ..product("p", ProductFlags::default(), 0, &[1.0, 2.0])
        };
        let costs = build_cost_matrices(&[rec], &cat, &[vec![0.5, 0.25]], &MaskRuleSet::none()).unwrap();
        assert_eq!(costs.damage(0, 0), 20.0);
        assert_eq!(costs.damage(0, 1), 10.0);
        assert_eq!(costs.t_damage_cur(), Some(20.0));
    }

    #[test]
    fn two_by_two_matrices_match_hand_computation() {
        // Hand table:
        //   p1: m=(1, 2) s=(0.5, 1) vel 3, C_dmg 10, p=(0.2, 0.1), cur 1
        //   p2: m=(4, 6) s=(1, 1)   vel 2, C_dmg 5,  p=(0.4, 0.05), cur 0
        //   S = [[4.5, 9], [10, 14]]  D = [[6, 3], [4, 0.5]]  T_cur = 3 + 4
        let cat = PackageCatalog::new(["A", "B"]).unwrap();
        let fc = |m, s| ShipCost::Feasible {
            material: m,
            transport: s,
        };
        let p1 = ProductRecord {
            sales_velocity: 3.0,
            damage_cost: 10.0,
            ship_costs: vec![fc(1.0, 0.5), fc(2.0, 1.0)],
            ..product("p1", ProductFlags::default(), 1, &[0.0, 0.0])
        };
        let p2 = ProductRecord {
            sales_velocity: 2.0,
            damage_cost: 5.0,
            ship_costs: vec![fc(4.0, 1.0), fc(6.0, 1.0)],
            ..product("p2", ProductFlags::default(), 0, &[0.0, 0.0])
        };
        let costs = build_cost_matrices(
            &[p1, p2],
            &cat,
            &[vec![0.2, 0.1], vec![0.4, 0.05]],
            &MaskRuleSet::none(),
        )
        .unwrap();
        let (s, d, m) = costs.parts();
        assert_eq!(s, &[4.5, 9.0, 10.0, 14.0]);
        let expected_d = [6.0, 3.0, 4.0, 0.5];
        for (a, b) in d.iter().zip(expected_d) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(m.iter().all(|&x| !x));
        assert!((costs.t_damage_cur().unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn liquid_product_in_carton_is_kept_out_of_weak_types() {
        let cat = PackageCatalog::standard();
        let flags = ProductFlags {
            liquid: true,
            ..Default::default()
        };
        let rules = MaskRuleSet {
            restricted_flags: true,
            ..MaskRuleSet::none()
        };
        let rec = product("l", flags, 7, &std_costs());
        let mask = build_mask(&[rec], &cat, &[vec![0.1; 8]], &rules).unwrap();
        // NAP PL PS JM CP T V C
        assert_eq!(mask[0], [true, true, true, true, false, false, false, false]);
    }

    #[test]
    fn no_flags_and_no_rules_leave_row_open() {
        let cat = PackageCatalog::standard();
        let rec = product("x", ProductFlags::default(), 3, &std_costs());
        let mask = build_mask(&[rec], &cat, &[vec![0.1; 8]], &MaskRuleSet::none()).unwrap();
        assert!(mask[0].iter().all(|&m| !m));
    }

    #[test]
    fn fragile_product_keeps_its_current_polybag() {
        let cat = PackageCatalog::standard();
        let flags = ProductFlags {
            fragile: true,
            ..Default::default()
        };
        let rules = MaskRuleSet {
            restricted_flags: true,
            ..MaskRuleSet::none()
        };
        let ps = cat.index_of("PS").unwrap();
        let rec = product("f", flags, ps, &std_costs());
        let mask = build_mask(&[rec], &cat, &[vec![0.1; 8]], &rules).unwrap();
        // fragile forbids T, CP, JM, PS, PL, NAP; PS is exempt as the current type
        assert_eq!(mask[0], [true, true, false, true, true, true, false, false]);
    }

    #[test]
    fn hazardous_rule_masks_polybags_and_nap() {
        let cat = PackageCatalog::standard();
        let flags = ProductFlags {
            hazardous: true,
            ..Default::default()
        };
        let rules = MaskRuleSet {
            restricted_flags: true,
            ..MaskRuleSet::none()
        };
        let rec = product("h", flags, 5, &std_costs());
        let mask = build_mask(&[rec], &cat, &[vec![0.1; 8]], &rules).unwrap();
        assert_eq!(mask[0], [true, true, true, false, false, false, false, false]);
    }

    #[test]
    fn damage_rate_rules_use_global_mean() {
        let cat = PackageCatalog::new(["A", "B", "C"]).unwrap();
        let rules = MaskRuleSet {
            high_damage_floor: true,
            low_damage_ceiling: true,
            ..MaskRuleSet::none()
        };
        // current-type rates 0.9, 0.1, 0.02 (mean 0.34): high > 0.68, low < 0.085
        let recs = vec![
            product("high", ProductFlags::default(), 2, &[1.0, 2.0, 3.0]),
            product("mid", ProductFlags::default(), 1, &[1.0, 2.0, 3.0]),
            product("low", ProductFlags::default(), 0, &[1.0, 2.0, 1.0]),
        ];
        let probs = vec![
            vec![0.95, 0.93, 0.9],
            vec![0.2, 0.1, 0.05],
            vec![0.02, 0.01, 0.01],
        ];
        let mask = build_mask(&recs, &cat, &probs, &rules).unwrap();
        assert_eq!(mask[0], [true, true, false]);
        assert_eq!(mask[1], [false, false, false]);
        // low-damage product: B costs more than A (masked); C equals A (kept)
        assert_eq!(mask[2], [false, true, false]);
    }

    #[test]
    fn category_ban_masks_nap() {
        let cat = PackageCatalog::standard();
        let rules = MaskRuleSet {
            category_nap_ban: true,
            nap_ban_features: vec![1],
            ..MaskRuleSet::none()
        };
        let mut banned = product("b", ProductFlags::default(), 3, &std_costs());
        banned.features = vec![0.0, 1.0];
        let free = product("f", ProductFlags::default(), 3, &std_costs());
        let mask = build_mask(&[banned, free], &cat, &[vec![0.1; 8], vec![0.1; 8]], &rules).unwrap();
        assert!(mask[0][0] && mask[0][1..].iter().all(|&m| !m));
        assert!(mask[1].iter().all(|&m| !m));
    }

    #[test]
    fn oversize_cells_are_masked_and_full_rows_rejected() {
        let cat = PackageCatalog::new(["A", "B"]).unwrap();
        let mut rec = product("o", ProductFlags::default(), 1, &[1.0, 2.0]);
        rec.ship_costs[0] = ShipCost::Oversize;
        let costs = build_cost_matrices(std::slice::from_ref(&rec), &cat, &[vec![0.3, 0.2]], &MaskRuleSet::default()).unwrap();
        assert!(costs.is_masked(0, 0));
        assert_eq!(costs.ship(0, 0), None);
        assert!(costs.damage(0, 0).is_finite());

        assert!(matches!(
            build_cost_matrices(std::slice::from_ref(&rec), &cat, &[vec![0.3, 0.2]], &MaskRuleSet::none()),
            Err(Error::Config(_))
        ));

        // every type oversize, the current one included
        rec.ship_costs[1] = ShipCost::Oversize;
        assert!(build_mask(&[rec], &cat, &[vec![0.3, 0.2]], &MaskRuleSet::default()).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cat = PackageCatalog::new(["A", "B"]).unwrap();
        let rec = product("p", ProductFlags::default(), 0, &[1.0, 2.0]);
        assert!(matches!(
            build_cost_matrices(std::slice::from_ref(&rec), &cat, &[], &MaskRuleSet::none()),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            build_cost_matrices(&[rec], &cat, &[vec![0.1, 0.2, 0.3]], &MaskRuleSet::none()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn matrices_reject_full_masked_rows_and_bad_values() {
        assert!(matches!(
            CostMatrices::from_rows(&[vec![1.0, 2.0]], &[vec![1.0, 1.0]], &[vec![true, true]]),
            Err(Error::InfeasibleProduct(0))
        ));
        assert!(CostMatrices::unmasked(&[vec![-1.0, 2.0]], &[vec![1.0, 1.0]]).is_err());
        assert!(CostMatrices::unmasked(&[vec![1.0, 2.0]], &[vec![f64::NAN, 1.0]]).is_err());
        let c = CostMatrices::unmasked(&[vec![f64::INFINITY, 2.0]], &[vec![1.0, 1.0]]).unwrap();
        assert!(c.is_masked(0, 0));
    }

    #[test]
    fn delta_bound_examples() {
        let one = CostMatrices::from_rows(&[vec![1.0; 3]], &[vec![5.0, 2.0, 9.0]], &[vec![false, false, true]]).unwrap();
        assert_eq!(compute_delta_bound(&one), 3.0);

        let two = CostMatrices::unmasked(&[vec![1.0; 2], vec![1.0; 2]], &[vec![1.0, 4.0], vec![9.0, 2.0]]).unwrap();
        assert_eq!(compute_delta_bound(&two), 7.0);

        let single = CostMatrices::from_rows(
            &[vec![1.0, 2.0], vec![3.0, 4.0]],
            &[vec![5.0, 1.0], vec![2.0, 8.0]],
            &[vec![false, true], vec![true, false]],
        )
        .unwrap();
        assert_eq!(compute_delta_bound(&single), 0.0);
    }

    #[test]
    fn rules_load_from_config() {
        let kv = KeyValues::parse(
            "restricted_flags = true\nhigh_damage_factor = 3\nnap_ban_features = 2, 4\nliquid_forbidden = NAP\n",
        )
        .unwrap();
        let rules = MaskRuleSet::from_config(&kv).unwrap();
        assert!(rules.oversize && rules.restricted_flags && !rules.high_damage_floor);
        assert_eq!(rules.high_damage_factor, 3.0);
        assert_eq!(rules.nap_ban_features, vec![1, 3]);
        assert_eq!(rules.liquid_forbidden, vec!["NAP"]);

        let bad = KeyValues::parse("restricted = true\n").unwrap();
        assert!(MaskRuleSet::from_config(&bad).is_err());
    }
}
