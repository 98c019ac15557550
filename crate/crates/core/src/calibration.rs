//! Post-hoc calibration of damage probabilities and calibration scoring.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numeric::{clamp_probability, logit, sigmoid, softplus, CompensatedSum};
use crate::optim::{minimize_projected, DescentConfig, Objective};

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationMap {
    Identity,
    /// Step function through `(raw, calibrated)` knots, raw strictly
    /// increasing. Between knots the value of the knot to the left applies;
    /// outside the knot range the nearest end value applies.
    Isotonic { knots: Vec<(f64, f64)> },
    /// `sigmoid(a * logit(raw) + b)`.
    Platt { a: f64, b: f64 },
    /// Undoes class weights `tau` / `1 - tau` on a logistic model.
    WeightCorrection { tau: f64 },
}

impl CalibrationMap {
    pub fn method(&self) -> &'static str {
        match self {
            CalibrationMap::Identity => "identity",
            CalibrationMap::Isotonic { .. } => "isotonic",
            CalibrationMap::Platt { .. } => "platt",
            CalibrationMap::WeightCorrection { .. } => "weight_correction",
        }
    }

    /// Always returns a value in `[0, 1]`.
    pub fn apply(&self, raw: f64) -> f64 {
        let raw = if raw.is_nan() { 0.5 } else { raw.clamp(0.0, 1.0) };
        match self {
            CalibrationMap::Identity => raw,
            CalibrationMap::Isotonic { knots } => {
                if knots.is_empty() {
                    return raw;
                }
                let pos = knots.partition_point(|&(x, _)| x <= raw);
                knots[pos.saturating_sub(1)].1
            }
            CalibrationMap::Platt { a, b } => sigmoid(a * logit(clamp_probability(raw)) + b),
            CalibrationMap::WeightCorrection { tau } => {
                sigmoid(logit(clamp_probability(raw)) - ((1.0 - tau) / tau).ln())
            }
        }
    }

    pub fn apply_all(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|&p| self.apply(p)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("packsel-calibration v1\n");
        let _ = writeln!(s, "method {}", self.method());
        match self {
            CalibrationMap::Identity => {}
            CalibrationMap::Isotonic { knots } => {
                for (x, y) in knots {
                    let _ = writeln!(s, "knot {x:?} {y:?}");
                }
            }
            CalibrationMap::Platt { a, b } => {
                let _ = writeln!(s, "a {a:?}\nb {b:?}");
            }
            CalibrationMap::WeightCorrection { tau } => {
                let _ = writeln!(s, "tau {tau:?}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("packsel-calibration v1") {
            return Err(Error::parse("calibration header", "expected `packsel-calibration v1`"));
        }
        let method = lines
            .next()
            .and_then(|l| l.strip_prefix("method "))
            .ok_or_else(|| Error::parse("calibration", "missing method line"))?
            .trim()
            .to_string();
        let mut fields: Vec<(String, Vec<f64>)> = Vec::new();
        for line in lines {
            let mut toks = line.split_whitespace();
            let key = toks.next().unwrap_or_default().to_string();
            let vals = toks
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse("calibration", format!("bad number `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            fields.push((key, vals));
        }
        let scalar = |name: &str| -> Result<f64> {
            match fields.iter().find(|(k, _)| k == name) {
                Some((_, v)) if v.len() == 1 => Ok(v[0]),
                _ => Err(Error::parse("calibration", format!("missing `{name}`"))),
            }
        };
        let map = match method.as_str() {
            "identity" => CalibrationMap::Identity,
            "platt" => CalibrationMap::Platt {
                a: scalar("a")?,
                b: scalar("b")?,
            },
            "weight_correction" => {
                let tau = scalar("tau")?;
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(Error::DomainError(tau));
                }
                CalibrationMap::WeightCorrection { tau }
            }
            "isotonic" => {
                let mut knots = Vec::new();
                for (k, v) in &fields {
                    if k != "knot" || v.len() != 2 {
                        return Err(Error::parse("calibration", format!("unexpected `{k}` line")));
                    }
                    knots.push((v[0], v[1]));
                }
                let ordered = knots.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1);
                let bounded = knots.iter().all(|&(_, y)| (0.0..=1.0).contains(&y));
                if !ordered || !bounded {
                    return Err(Error::parse("calibration", "isotonic knots out of order or range"));
                }
                CalibrationMap::Isotonic { knots }
            }
            other => return Err(Error::parse("calibration", format!("unknown method `{other}`"))),
        };
        Ok(map)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Least-squares non-decreasing fit of `targets` ordered by `raw`, by pool
/// adjacent violators. Points with equal raw value are pooled up front so
/// the fit is a function of the raw score. Fitted values come back in
/// input order.
pub fn isotonic_regression(raw: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    check_lengths(raw.len(), targets.len())?;
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));

    // blocks of (sum, weight, end position in `order`)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    let mut pos = 0;
    while pos < order.len() {
        let mut end = pos + 1;
        while end < order.len() && raw[order[end]] == raw[order[pos]] {
            end += 1;
        }
        let sum: f64 = order[pos..end].iter().map(|&i| targets[i]).sum();
        blocks.push((sum, (end - pos) as f64, end));
        while blocks.len() >= 2 {
            let (s1, w1, _) = blocks[blocks.len() - 2];
            let (s2, w2, e2) = blocks[blocks.len() - 1];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("two blocks") = (s1 + s2, w1 + w2, e2);
        }
        pos = end;
    }

    let mut fitted = vec![0.0; raw.len()];
    let mut start = 0;
    for (sum, weight, end) in blocks {
        for &i in &order[start..end] {
            fitted[i] = sum / weight;
        }
        start = end;
    }
    Ok(fitted)
}

fn check_labels(raw: &[f64], labels: &[bool]) -> Result<()> {
    check_lengths(raw.len(), labels.len())?;
    if let Some(i) = raw.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFiniteFeature(i));
    }
    Ok(())
}

pub fn fit_isotonic(raw: &[f64], labels: &[bool]) -> Result<CalibrationMap> {
    check_labels(raw, labels)?;
    let targets: Vec<f64> = labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    let fitted = isotonic_regression(raw, &targets)?;
    let mut points: Vec<(f64, f64)> = raw.iter().copied().zip(fitted).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|b, a| a.0 == b.0);
    Ok(CalibrationMap::Isotonic { knots: points })
}

struct PlattLoss<'a> {
    x: &'a [f64],
    y: &'a [bool],
}

impl Objective for PlattLoss<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, ab: &[f64], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        grad.fill(0.0);
        for (&x, &y) in self.x.iter().zip(self.y) {
            let s = ab[0] * x + ab[1];
            let yf = if y { 1.0 } else { 0.0 };
            loss += softplus(s) - yf * s;
            let r = sigmoid(s) - yf;
            grad[0] += r * x;
            grad[1] += r;
        }
        let inv = 1.0 / self.x.len() as f64;
        grad[0] *= inv;
        grad[1] *= inv;
        loss * inv
    }
}

/// Fits `sigmoid(a * logit(raw) + b)` by unweighted log-loss. When every
/// raw value is the same the slope is unidentifiable; it is set to zero and
/// the intercept to the logit of the base rate.
pub fn fit_platt(raw: &[f64], labels: &[bool]) -> Result<CalibrationMap> {
    check_labels(raw, labels)?;
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClassData);
    }
    let x: Vec<f64> = raw.iter().map(|&p| logit(clamp_probability(p))).collect();
    if x.iter().all(|&v| v == x[0]) {
        return Ok(CalibrationMap::Platt {
            a: 0.0,
            b: logit(positives as f64 / labels.len() as f64),
        });
    }
    let problem = PlattLoss { x: &x, y: labels };
    let res = minimize_projected(
        &problem,
        &[1.0, 0.0],
        &[f64::NEG_INFINITY; 2],
        &DescentConfig {
            max_iters: 5000,
            tolerance: 1e-14,
            initial_step: 1.0,
        },
    );
    Ok(CalibrationMap::Platt {
        a: res.x[0],
        b: res.x[1],
    })
}

/// Probability under unit class weights, given a probability from a model
/// trained with weight `tau` on class 0 and `1 - tau` on class 1.
pub fn apply_weight_correction(raw: f64, tau: f64) -> Result<f64> {
    if !(raw > 0.0 && raw < 1.0) {
        return Err(Error::DomainError(raw));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::DomainError(tau));
    }
    Ok(sigmoid(logit(raw) - ((1.0 - tau) / tau).ln()))
}

/// Mean cross-entropy with probabilities clamped away from 0 and 1.
pub fn log_loss(p: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(p.len(), labels.len())?;
    let total: CompensatedSum = p
        .iter()
        .zip(labels)
        .map(|(&q, &y)| {
            let q = clamp_probability(q);
            if y {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .collect();
    Ok(total.value() / p.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeReliability {
    pub package: usize,
    pub shipments: usize,
    /// Count-weighted mean of `|damage rate - mean p|` over buckets; `None`
    /// when the type has no shipments.
    pub weighted_abs_diff: Option<f64>,
}

/// Per package type: sorts its shipments by probability (ties by input
/// position), cuts them into `quantiles` buckets whose sizes differ by at
/// most one (fewer when there are fewer shipments), and sums the
/// per-bucket gap between observed damage rate and mean probability,
/// weighted by bucket share. Buckets that would split a run of equal
/// probabilities are merged.
pub fn reliability_report(
    p: &[f64],
    labels: &[bool],
    groups: &[usize],
    types: usize,
    quantiles: usize,
) -> Result<Vec<TypeReliability>> {
    if p.len() != labels.len() || p.len() != groups.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: if p.len() != labels.len() { labels.len() } else { groups.len() },
        });
    }
    if quantiles == 0 {
        return Err(Error::Config("quantiles must be positive".into()));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= types) {
        return Err(Error::IndexOutOfRange { index: g, count: types });
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); types];
    for (i, &g) in groups.iter().enumerate() {
        members[g].push(i);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(package, mut idx)| {
            let count = idx.len();
            if count == 0 {
                return TypeReliability {
                    package,
                    shipments: 0,
                    weighted_abs_diff: None,
                };
            }
            idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
            let buckets = quantiles.min(count);
            let (base, extra) = (count / buckets, count % buckets);
            // equal-count cut points; a cut inside a run of equal scores is
            // dropped, since the scores cannot tell those shipments apart
            let mut cuts = Vec::with_capacity(buckets);
            let mut end = 0;
            for b in 0..buckets {
                end += base + usize::from(b < extra);
                if end == count || p[idx[end - 1]] != p[idx[end]] {
                    cuts.push(end);
                }
            }
            let mut total = CompensatedSum::new();
            let mut start = 0;
            for end in cuts {
                let slice = &idx[start..end];
                let size = slice.len() as f64;
                let mean_p: f64 = slice.iter().map(|&i| p[i]).sum::<f64>() / size;
                let rate = slice.iter().filter(|&&i| labels[i]).count() as f64 / size;
                total.add(size / count as f64 * (rate - mean_p).abs());
                start = end;
            }
            TypeReliability {
                package,
                shipments: count,
                weighted_abs_diff: Some(total.value()),
            }
        })
        .collect())
}
