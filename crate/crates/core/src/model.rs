//! Rank-monotone logistic damage model.
//!
//! The score of product features `z` in package type `k` is
//! `w . phi(z) + beta_k`, where `phi` standardizes (and optionally expands)
//! the features and the package offsets are parameterized as
//! `beta_k = beta_last + eps_k + ... + eps_{n-2}` with every `eps >= 0`.
//! Offsets therefore never increase with robustness and neither does the
//! predicted damage probability, for any feature vector.
//!
//! Training minimizes class-weighted cross-entropy (weight `tau` on
//! undamaged shipments, `1 - tau` on damaged ones) with projected gradient
//! descent, clamping each `eps` at zero after every step.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softplus};
use crate::optim::{minimize_projected, DescentConfig, Objective};

pub const DEFAULT_TAU: f64 = 0.007;

#[derive(Debug, Clone, PartialEq)]
pub struct ShipmentRecord {
    pub product_id: String,
    pub features: Vec<f64>,
    /// Zero-based package type, least robust first.
    pub package: usize,
    /// True when the shipment had packaging-related damage.
    pub label: bool,
}

/// `p_k`: `k` zeros followed by `n - k` ones (zero-based `k`). Its dot
/// product with `[eps_0, .., eps_{n-2}, beta_last]` is the offset `beta_k`.
pub fn encode_package_feature(k: usize, n: usize) -> Result<Vec<f64>> {
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, count: n });
    }
    Ok((0..n).map(|r| if r < k { 0.0 } else { 1.0 }).collect())
}

/// Appends implied shipments: a damaged shipment is copied into every less
/// robust type (still damaged), an undamaged one into every more robust
/// type (still undamaged). Originals come first in input order, followed
/// by the copies of each original in turn.
pub fn augment_dataset(shipments: &[ShipmentRecord], n: usize) -> Vec<ShipmentRecord> {
    let mut out = shipments.to_vec();
    for s in shipments {
        let targets = if s.label { 0..s.package.min(n) } else { (s.package + 1).min(n)..n };
        for k in targets {
            out.push(ShipmentRecord {
                package: k,
                ..s.clone()
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureExpansion {
    #[default]
    Linear,
    /// Features plus all squares and pairwise products.
    Quadratic,
}

impl FeatureExpansion {
    pub fn expanded_dim(self, raw: usize) -> usize {
        match self {
            FeatureExpansion::Linear => raw,
            FeatureExpansion::Quadratic => raw + raw * (raw + 1) / 2,
        }
    }

    fn expand_into(self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(x);
        if self == FeatureExpansion::Quadratic {
            for a in 0..x.len() {
                for b in a..x.len() {
                    out.push(x[a] * x[b]);
                }
            }
        }
    }

    fn tag(self) -> &'static str {
        match self {
            FeatureExpansion::Linear => "linear",
            FeatureExpansion::Quadratic => "quadratic",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "linear" => Some(FeatureExpansion::Linear),
            "quadratic" => Some(FeatureExpansion::Quadratic),
            _ => None,
        }
    }
}

/// Plain parameter bundle; see [`MonotoneLogisticModel::from_parts`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub types: usize,
    pub expansion: FeatureExpansion,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub eps: Vec<f64>,
    pub beta_last: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneLogisticModel {
    parts: ModelParts,
    betas: Vec<f64>,
}

fn offsets(eps: &[f64], beta_last: f64) -> Vec<f64> {
    let mut betas = vec![beta_last; eps.len() + 1];
    for k in (0..eps.len()).rev() {
        betas[k] = betas[k + 1] + eps[k];
    }
    betas
}

impl MonotoneLogisticModel {
    pub fn from_parts(parts: ModelParts) -> Result<Self> {
        if let Some(&bad) = parts.eps.iter().find(|&&e| e.is_nan() || e < 0.0) {
            return Err(Error::Config(format!("package offsets must be non-negative, got {bad}")));
        }
        Self::check_shapes(&parts)?;
        Ok(Self::from_parts_unchecked(parts))
    }

    /// Skips the sign check on `eps`; for constructing deliberately broken
    /// models in tests.
    #[doc(hidden)]
    pub fn from_parts_unchecked(parts: ModelParts) -> Self {
        let betas = offsets(&parts.eps, parts.beta_last);
        MonotoneLogisticModel { parts, betas }
    }

    fn check_shapes(p: &ModelParts) -> Result<()> {
        let raw = p.mean.len();
        let ok = p.types >= 2
            && p.eps.len() + 1 == p.types
            && p.scale.len() == raw
            && p.weights.len() == p.expansion.expanded_dim(raw);
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "model with {} types, {} features, {} weights, {} offsets",
                p.types,
                raw,
                p.weights.len(),
                p.eps.len()
            )));
        }
        let finite = p
            .mean
            .iter()
            .chain(&p.weights)
            .chain(&p.eps)
            .chain(std::iter::once(&p.beta_last))
            .all(|v| v.is_finite())
            && p.scale.iter().all(|s| s.is_finite() && *s > 0.0);
        if !finite {
            return Err(Error::Config("model parameters must be finite, scales positive".into()));
        }
        Ok(())
    }

    /// Linear model on unstandardized features.
    pub fn linear(types: usize, weights: Vec<f64>, eps: Vec<f64>, beta_last: f64) -> Result<Self> {
        let raw = weights.len();
        Self::from_parts(ModelParts {
            types,
            expansion: FeatureExpansion::Linear,
            mean: vec![0.0; raw],
            scale: vec![1.0; raw],
            weights,
            eps,
            beta_last,
        })
    }

    pub fn zeros(types: usize, features: usize) -> Result<Self> {
        Self::linear(types, vec![0.0; features], vec![0.0; types.saturating_sub(1)], 0.0)
    }

    pub fn types(&self) -> usize {
        self.parts.types
    }

    pub fn feature_dim(&self) -> usize {
        self.parts.mean.len()
    }

    pub fn parts(&self) -> &ModelParts {
        &self.parts
    }

    pub fn eps(&self) -> &[f64] {
        &self.parts.eps
    }

    pub fn weights(&self) -> &[f64] {
        &self.parts.weights
    }

    /// Offsets `beta_0 >= beta_1 >= ... >= beta_{n-1}`.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn features(&self, z: &[f64], buf: &mut Vec<f64>) -> Result<()> {
        if z.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} features for a model trained on {}",
                z.len(),
                self.feature_dim()
            )));
        }
        let std: Vec<f64> = z
            .iter()
            .zip(&self.parts.mean)
            .zip(&self.parts.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        self.parts.expansion.expand_into(&std, buf);
        Ok(())
    }

    fn base_score(&self, z: &[f64]) -> Result<f64> {
        let mut buf = Vec::new();
        self.features(z, &mut buf)?;
        Ok(dot(&buf, &self.parts.weights))
    }

    pub fn score(&self, z: &[f64], k: usize) -> Result<f64> {
        let beta = *self.betas.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            count: self.types(),
        })?;
        Ok(self.base_score(z)? + beta)
    }

    /// Damage probability in every package type.
    pub fn predict_all(&self, z: &[f64]) -> Result<Vec<f64>> {
        let base = self.base_score(z)?;
        Ok(self.betas.iter().map(|b| sigmoid(base + b)).collect())
    }

    pub fn to_text(&self) -> String {
        let p = &self.parts;
        let mut s = String::new();
        let _ = writeln!(s, "packsel-model v1");
        let _ = writeln!(s, "types {}", p.types);
        let _ = writeln!(s, "features {}", p.mean.len());
        let _ = writeln!(s, "expansion {}", p.expansion.tag());
        for (key, vals) in [
            ("mean", &p.mean),
            ("scale", &p.scale),
            ("w", &p.weights),
            ("eps", &p.eps),
        ] {
            let _ = write!(s, "{key}");
            for v in vals {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "beta_n {:?}", p.beta_last);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("packsel-model v1") {
            return Err(Error::parse("model header", "expected `packsel-model v1`"));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse("model", format!("missing `{name}` line")))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(name) {
                return Err(Error::parse("model", format!("expected `{name}` line, got `{line}`")));
            }
            Ok(toks.map(String::from).collect())
        };
        let one = |v: Vec<String>, name: &str| -> Result<String> {
            match v.as_slice() {
                [x] => Ok(x.clone()),
                _ => Err(Error::parse("model", format!("`{name}` takes one value"))),
            }
        };
        let floats = |v: Vec<String>, name: &str| -> Result<Vec<f64>> {
            v.iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse("model", format!("bad number `{t}` in `{name}`")))
                })
                .collect()
        };
        let types: usize = one(field("types")?, "types")?
            .parse()
            .map_err(|_| Error::parse("model", "bad type count"))?;
        let features: usize = one(field("features")?, "features")?
            .parse()
            .map_err(|_| Error::parse("model", "bad feature count"))?;
        let expansion = FeatureExpansion::from_tag(&one(field("expansion")?, "expansion")?)
            .ok_or_else(|| Error::parse("model", "unknown expansion"))?;
        let mean = floats(field("mean")?, "mean")?;
        let scale = floats(field("scale")?, "scale")?;
        let weights = floats(field("w")?, "w")?;
        let eps = floats(field("eps")?, "eps")?;
        let beta = floats(field("beta_n")?, "beta_n")?;
        if beta.len() != 1 || mean.len() != features {
            return Err(Error::parse("model", "inconsistent field lengths"));
        }
        Self::from_parts(ModelParts {
            types,
            expansion,
            mean,
            scale,
            weights,
            eps,
            beta_last: beta[0],
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict_probability(model: &MonotoneLogisticModel, z: &[f64], k: usize) -> Result<f64> {
    model.score(z, k).map(sigmoid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    pub monotone: bool,
    /// Largest `p(k + 1) - p(k)` seen, or 0.
    pub worst_violation: f64,
}

pub fn check_rank_monotonicity(model: &MonotoneLogisticModel, samples: &[Vec<f64>]) -> Result<MonotonicityReport> {
    let mut worst = 0.0_f64;
    for z in samples {
        let probs = model.predict_all(z)?;
        for w in probs.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    Ok(MonotonicityReport {
        monotone: worst <= 0.0,
        worst_violation: worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Weight on undamaged shipments; damaged ones get `1 - tau`.
    pub tau: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub initial_step: f64,
    pub expansion: FeatureExpansion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: DEFAULT_TAU,
            max_epochs: 5000,
            tolerance: 1e-12,
            initial_step: 1.0,
            expansion: FeatureExpansion::Linear,
        }
    }
}

impl TrainConfig {
    pub fn balanced() -> Self {
        TrainConfig {
            tau: 0.5,
            ..Self::default()
        }
    }
}

/// Weighted cross-entropy over a fixed training set, as a function of the
/// flat parameter vector `[w.., eps_0..eps_{n-2}, beta_last]`.
#[derive(Debug, Clone)]
pub struct TrainingProblem {
    design: Vec<f64>,
    width: usize,
    packages: Vec<usize>,
    labels: Vec<bool>,
    class_weight: [f64; 2],
    types: usize,
    expansion: FeatureExpansion,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl TrainingProblem {
    /// Standardizes features with statistics of `data` itself.
    pub fn new(data: &[ShipmentRecord], types: usize, tau: f64, expansion: FeatureExpansion) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
        }
        if types < 2 {
            return Err(Error::Config("need at least two package types".into()));
        }
        let first = data.first().ok_or(Error::EmptyInput)?;
        let raw = first.features.len();
        for (i, r) in data.iter().enumerate() {
            if r.features.len() != raw {
                return Err(Error::DimensionMismatch(format!(
                    "record {i} has {} features, expected {raw}",
                    r.features.len()
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature(i));
            }
            if r.package >= types {
                return Err(Error::IndexOutOfRange {
                    index: r.package,
                    count: types,
                });
            }
        }
        let positives = data.iter().filter(|r| r.label).count();
        if positives == 0 || positives == data.len() {
            return Err(Error::SingleClassData);
        }

        let count = data.len() as f64;
        let mut mean = vec![0.0; raw];
        for r in data {
            for (m, v) in mean.iter_mut().zip(&r.features) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; raw];
        for r in data {
            for ((s, v), m) in var.iter_mut().zip(&r.features).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();

        let width = expansion.expanded_dim(raw);
        let mut design = Vec::with_capacity(data.len() * width);
        let mut buf = Vec::with_capacity(width);
        for r in data {
            let std: Vec<f64> = r
                .features
                .iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect();
            expansion.expand_into(&std, &mut buf);
            design.extend_from_slice(&buf);
        }
        Ok(TrainingProblem {
            design,
            width,
            packages: data.iter().map(|r| r.package).collect(),
            labels: data.iter().map(|r| r.label).collect(),
            class_weight: [tau, 1.0 - tau],
            types,
            expansion,
            mean,
            scale,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.width + self.types
    }

    /// Lower bounds: free weights, non-negative offsets, free `beta_last`.
    pub fn lower_bounds(&self) -> Vec<f64> {
        let mut lo = vec![f64::NEG_INFINITY; self.param_dim()];
        lo[self.width..self.width + self.types - 1].fill(0.0);
        lo
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        Objective::value(self, theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.param_dim()];
        self.value_and_gradient(theta, &mut g);
        g
    }

    pub fn model(&self, theta: &[f64]) -> Result<MonotoneLogisticModel> {
        MonotoneLogisticModel::from_parts(self.parts(theta))
    }

    fn parts(&self, theta: &[f64]) -> ModelParts {
        ModelParts {
            types: self.types,
            expansion: self.expansion,
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            weights: theta[..self.width].to_vec(),
            eps: theta[self.width..self.width + self.types - 1].to_vec(),
            beta_last: theta[self.width + self.types - 1],
        }
    }
}

impl Objective for TrainingProblem {
    fn dim(&self) -> usize {
        self.param_dim()
    }

    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (w, rest) = theta.split_at(self.width);
        let (eps, beta_last) = rest.split_at(self.types - 1);
        let betas = offsets(eps, beta_last[0]);
        grad.fill(0.0);
        let mut per_type = vec![0.0; self.types];
        let mut loss = 0.0;
        for (row, (&k, &y)) in self
            .design
            .chunks_exact(self.width.max(1))
            .zip(self.packages.iter().zip(&self.labels))
        {
            let row = &row[..self.width];
            let s = dot(row, w) + betas[k];
            let weight = self.class_weight[y as usize];
            let yf = if y { 1.0 } else { 0.0 };
            loss += weight * (softplus(s) - yf * s);
            let r = weight * (sigmoid(s) - yf);
            for (g, x) in grad[..self.width].iter_mut().zip(row) {
                *g += r * x;
            }
            per_type[k] += r;
        }
        // beta_k contains eps_r for every r >= k
        let mut prefix = 0.0;
        for r in 0..self.types - 1 {
            prefix += per_type[r];
            grad[self.width + r] = prefix;
        }
        grad[self.width + self.types - 1] = prefix + per_type[self.types - 1];
        let inv = 1.0 / self.labels.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss * inv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: MonotoneLogisticModel,
    pub loss: f64,
    /// Loss of the all-zero model (every probability 0.5).
    pub baseline_loss: f64,
    pub epochs: usize,
    /// False when the tolerance was not met within `max_epochs`; the model
    /// is then the best iterate found.
    pub converged: bool,
}

pub fn train(data: &[ShipmentRecord], types: usize, cfg: &TrainConfig) -> Result<TrainedModel> {
    let problem = TrainingProblem::new(data, types, cfg.tau, cfg.expansion)?;
    let start = vec![0.0; problem.param_dim()];
    let baseline_loss = problem.loss(&start);
    let res = minimize_projected(
        &problem,
        &start,
        &problem.lower_bounds(),
        &DescentConfig {
            max_iters: cfg.max_epochs,
            tolerance: cfg.tolerance,
            initial_step: cfg.initial_step,
        },
    );
    Ok(TrainedModel {
        model: problem.model(&res.x)?,
        loss: res.value,
        baseline_loss,
        epochs: res.iterations,
        converged: res.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ship(id: &str, f: &[f64], k: usize, y: bool) -> ShipmentRecord {
        ShipmentRecord {
            product_id: id.into(),
            features: f.to_vec(),
            package: k,
            label: y,
        }
    }

    #[test]
    fn package_encoding() {
        assert_eq!(encode_package_feature(0, 8).unwrap(), vec![1.0; 8]);
        assert_eq!(
            encode_package_feature(7, 8).unwrap(),
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(encode_package_feature(2, 5).unwrap(), vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(matches!(encode_package_feature(5, 5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn encoding_dot_gives_offsets() {
        let eps = [0.3, 0.0, 1.2];
        let m = MonotoneLogisticModel::linear(4, vec![], eps.to_vec(), -2.0).unwrap();
        let tail: Vec<f64> = eps.iter().copied().chain([-2.0]).collect();
        for k in 0..4 {
            let pk = encode_package_feature(k, 4).unwrap();
            let b: f64 = pk.iter().zip(&tail).map(|(a, b)| a * b).sum();
            assert!((b - m.betas()[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn augmentation_examples() {
        let out = augment_dataset(&[ship("a", &[1.0], 2, true)], 5);
        let ks: Vec<_> = out.iter().map(|r| (r.package, r.label)).collect();
        assert_eq!(ks, vec![(2, true), (0, true), (1, true)]);

        assert_eq!(augment_dataset(&[ship("b", &[1.0], 4, false)], 5).len(), 1);

        let n = 6;
        let data = [ship("c", &[0.0], n - 1, true), ship("d", &[0.0], 0, false)];
        let out = augment_dataset(&data, n);
        assert_eq!(out.len(), 2 + (n - 1) + (n - 1));
        assert_eq!(&out[..2], &data);
        assert!(out[2..n + 1].iter().all(|r| r.product_id == "c" && r.label));
        assert!(out[n + 1..].iter().all(|r| r.product_id == "d" && !r.label));
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = MonotoneLogisticModel::zeros(3, 2).unwrap();
        for k in 0..3 {
            assert_eq!(predict_probability(&m, &[4.0, -1.0], k).unwrap(), 0.5);
        }
        assert!(matches!(predict_probability(&m, &[4.0], 0), Err(Error::DimensionMismatch(_))));
        assert!(predict_probability(&m, &[4.0, 1.0], 3).is_err());
    }

    #[test]
    fn score_ln3_gives_three_quarters() {
        let m = MonotoneLogisticModel::linear(2, vec![3f64.ln()], vec![0.0], 0.0).unwrap();
        assert!((predict_probability(&m, &[1.0], 1).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constructor_rejects_negative_offsets() {
        assert!(MonotoneLogisticModel::linear(3, vec![1.0], vec![0.1, -0.1], 0.0).is_err());
        assert!(MonotoneLogisticModel::linear(3, vec![1.0], vec![0.1], 0.0).is_err());
    }

    #[test]
    fn monotonicity_report() {
        let good = MonotoneLogisticModel::linear(3, vec![1.0, -2.0], vec![0.5, 0.0], 0.1).unwrap();
        let samples = vec![vec![0.3, 0.1], vec![-4.0, 2.0]];
        let r = check_rank_monotonicity(&good, &samples).unwrap();
        assert!(r.monotone && r.worst_violation == 0.0);

        let mut parts = good.parts().clone();
        parts.eps[1] = -0.1;
        let bad = MonotoneLogisticModel::from_parts_unchecked(parts);
        let r = check_rank_monotonicity(&bad, &samples).unwrap();
        assert!(!r.monotone && r.worst_violation > 0.0);

        assert!(check_rank_monotonicity(&bad, &[]).unwrap().monotone);
    }

    #[test]
    fn training_rejects_bad_data() {
        let one_class = [ship("a", &[1.0], 0, true), ship("b", &[2.0], 1, true)];
        assert!(matches!(train(&one_class, 2, &TrainConfig::default()), Err(Error::SingleClassData)));
        let nan = [ship("a", &[f64::NAN], 0, true), ship("b", &[2.0], 1, false)];
        assert!(matches!(train(&nan, 2, &TrainConfig::default()), Err(Error::NonFiniteFeature(0))));
        let bad_tau = TrainConfig {
            tau: 1.0,
            ..TrainConfig::default()
        };
        let ok = [ship("a", &[1.0], 0, true), ship("b", &[2.0], 1, false)];
        assert!(train(&ok, 2, &bad_tau).is_err());
        assert!(train(&[], 2, &TrainConfig::default()).is_err());
    }

    /// Oracle: best loss over a grid of (w, beta) for the two-parameter
    /// model with a single type offset, compared with the trained loss.
    #[test]
    fn separable_toy_beats_zero_model_and_grid() {
        let data = [
            ship("a", &[-2.0], 0, false),
            ship("b", &[-1.0], 1, false),
            ship("c", &[1.0], 0, true),
            ship("d", &[2.0], 1, true),
        ];
        let cfg = TrainConfig {
            max_epochs: 300,
            ..TrainConfig::balanced()
        };
        let fit = train(&data, 2, &cfg).unwrap();
        assert!(fit.loss < fit.baseline_loss);
        assert!((fit.baseline_loss - 0.5 * 2f64.ln()).abs() < 1e-12);

        let problem = TrainingProblem::new(&data, 2, 0.5, FeatureExpansion::Linear).unwrap();
        let mut grid_best = f64::INFINITY;
        for a in -40..=40 {
            for b in -20..=20 {
                let theta = [a as f64 * 0.25, 0.0, b as f64 * 0.25];
                grid_best = grid_best.min(problem.loss(&theta));
            }
        }
        assert!(fit.loss <= grid_best + 1e-9, "{} vs grid {}", fit.loss, grid_best);
    }

    #[test]
    fn type_independent_damage_drives_offsets_to_zero() {
        let mut data = Vec::new();
        for (i, &(x, y)) in [(0.5, true), (-0.2, false), (1.5, true), (-1.0, false), (0.1, false), (0.9, false)]
            .iter()
            .enumerate()
        {
            for k in 0..4 {
                data.push(ship(&format!("p{i}"), &[x], k, y));
            }
        }
        let cfg = TrainConfig {
            tolerance: 1e-15,
            max_epochs: 20_000,
            ..TrainConfig::balanced()
        };
        let fit = train(&data, 4, &cfg).unwrap();
        for e in fit.model.eps() {
            assert!(e.abs() < 1e-3, "eps {e}");
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let parts = ModelParts {
            types: 3,
            expansion: FeatureExpansion::Quadratic,
            mean: vec![0.1, 1.0 / 3.0],
            scale: vec![2.5, 1e-300],
            weights: vec![0.1 + 0.2, -7.0e-17, 1e300, 5.0, -0.0],
            eps: vec![0.0, std::f64::consts::PI],
            beta_last: -1.0 / 7.0,
        };
        let m = MonotoneLogisticModel::from_parts(parts).unwrap();
        let back = MonotoneLogisticModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.weights().iter().zip(m.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(MonotoneLogisticModel::from_text("garbage").is_err());
        assert!(MonotoneLogisticModel::from_text(&m.to_text().replace("eps 0.0", "eps -1.0")).is_err());
    }

    #[test]
    fn quadratic_expansion_layout() {
        let mut out = Vec::new();
        FeatureExpansion::Quadratic.expand_into(&[2.0, 3.0], &mut out);
        assert_eq!(out, vec![2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(FeatureExpansion::Quadratic.expanded_dim(2), 5);
    }

    fn random_data(seed: u64, rows: usize, features: usize, types: usize) -> Vec<ShipmentRecord> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..rows)
            .map(|i| {
                let f: Vec<f64> = (0..features).map(|_| rng.random_range(-2.0..2.0)).collect();
                let k = rng.random_range(0..types);
                let lift = if f[0] > 0.0 { 0.6 * (1.0 - k as f64 / types as f64) } else { 0.0 };
                let y = rng.random_bool(0.1 + lift);
                ship(&format!("p{i}"), &f, k, y || i == 0)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for expansion in [FeatureExpansion::Linear, FeatureExpansion::Quadratic] {
            let data = random_data(1, 60, 3, 5);
            let problem = TrainingProblem::new(&data, 5, 0.007, expansion).unwrap();
            for _ in 0..5 {
                let theta: Vec<f64> = (0..problem.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = problem.gradient(&theta);
                let h = 1e-5;
                let fd: Vec<f64> = (0..theta.len())
                    .map(|k| {
                        let (mut up, mut down) = (theta.clone(), theta.clone());
                        up[k] += h;
                        down[k] -= h;
                        (problem.loss(&up) - problem.loss(&down)) / (2.0 * h)
                    })
                    .collect();
                let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let err = g.iter().zip(&fd).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(err / scale < 1e-5, "relative error {}", err / scale);
            }
        }
    }

    /// Weighted cross-entropy on explicitly appended `p_k` columns, written
    /// independently of `TrainingProblem`'s offset bookkeeping.
    struct DenseProblem {
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
        weights: [f64; 2],
    }

    impl Objective for DenseProblem {
        fn dim(&self) -> usize {
            self.rows[0].len()
        }

        fn value_and_gradient(&self, v: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            let mut loss = 0.0;
            for (x, &y) in self.rows.iter().zip(&self.labels) {
                let s = dot(x, v);
                let p = 1.0 / (1.0 + (-s).exp());
                let w = self.weights[y as usize];
                loss -= w * if y { p.ln() } else { (1.0 - p).ln() };
                let r = w * (p - if y { 1.0 } else { 0.0 });
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
            let inv = 1.0 / self.rows.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            loss * inv
        }
    }

    #[test]
    fn appended_encoding_gives_same_scores() {
        let types = 4;
        let data = random_data(3, 80, 2, types);
        let cfg = TrainConfig {
            tau: 0.3,
            max_epochs: 30_000,
            tolerance: 0.0,
            ..TrainConfig::default()
        };
        let fit = train(&data, types, &cfg).unwrap();

        let problem = TrainingProblem::new(&data, types, cfg.tau, cfg.expansion).unwrap();
        let width = problem.width;
        let rows: Vec<Vec<f64>> = problem
            .design
            .chunks_exact(width)
            .zip(&problem.packages)
            .map(|(x, &k)| {
                let mut r = x.to_vec();
                r.extend(encode_package_feature(k, types).unwrap());
                r
            })
            .collect();
        let dense = DenseProblem {
            rows: rows.clone(),
            labels: problem.labels.clone(),
            weights: [cfg.tau, 1.0 - cfg.tau],
        };
        let mut lower = vec![f64::NEG_INFINITY; width + types];
        lower[width..width + types - 1].fill(0.0);
        let res = minimize_projected(
            &dense,
            &vec![0.0; width + types],
            &lower,
            &DescentConfig {
                max_iters: 30_000,
                tolerance: 0.0,
                initial_step: 1.0,
            },
        );
        for (r, rec) in rows.iter().zip(&data) {
            let dense_score = dot(r, &res.x);
            let score = fit.model.score(&rec.features, rec.package).unwrap();
            assert!((dense_score - score).abs() < 1e-6, "{dense_score} vs {score}");
        }
    }

    #[test]
    fn trained_models_are_rank_monotone() {
        let data = random_data(5, 200, 3, 6);
        let fit = train(&augment_dataset(&data, 6), 6, &TrainConfig::default()).unwrap();
        assert!(fit.loss <= fit.baseline_loss);
        let samples: Vec<Vec<f64>> = random_data(9, 100, 3, 6).into_iter().map(|r| r.features).collect();
        let report = check_rank_monotonicity(&fit.model, &samples).unwrap();
        assert!(report.monotone && report.worst_violation == 0.0);
    }

    proptest::proptest! {
        #[test]
        fn augmenting_twice_adds_no_new_triples(
            rows in proptest::collection::vec((0usize..5, proptest::bool::ANY, 0u8..4), 1..12)
        ) {
            let data: Vec<ShipmentRecord> = rows
                .iter()
                .map(|&(k, y, id)| ship(&format!("p{id}"), &[id as f64], k, y))
                .collect();
            let triples = |v: &[ShipmentRecord]| {
                v.iter()
                    .map(|r| (r.product_id.clone(), r.package, r.label))
                    .collect::<std::collections::BTreeSet<_>>()
            };
            let once = augment_dataset(&data, 5);
            let twice = augment_dataset(&once, 5);
            proptest::prop_assert_eq!(triples(&once), triples(&twice));
            proptest::prop_assert!(twice.len() >= once.len());
        }
    }
}
