//! CSV readers and writers for every file the pipeline exchanges.
//!
//! Package types are 1-based in all files and 0-based in memory. Floats are
//! written in shortest round-trip form, so a read after a write returns the
//! same bits.

use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Trim, Writer};

use crate::calibration::TypeReliability;
use crate::catalog::{CostMatrices, ProductFlags, ProductRecord, ShipCost};
use crate::error::{Error, Result};
use crate::lab::{CurveSegment, EquivalenceReport};
use crate::model::ShipmentRecord;
use crate::numeric::CompensatedSum;
use crate::search::LambdaSearch;
use crate::solver::Assignment;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new().trim(Trim::All).from_reader(input)
}

fn at(line: usize, column: &str) -> String {
    format!("line {line}, column `{column}`")
}

fn line_of(rec: &StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

fn parse_f64(rec: &StringRecord, idx: usize, name: &str, line: usize) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or_default();
    raw.parse::<f64>()
        .map_err(|_| Error::parse(at(line, name), format!("not a number: `{raw}`")))
}

fn parse_finite(rec: &StringRecord, idx: usize, name: &str, line: usize) -> Result<f64> {
    let v = parse_f64(rec, idx, name, line)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(at(line, name), format!("must be finite, got `{v}`")))
    }
}

fn parse_flag(rec: &StringRecord, idx: usize, name: &str, line: usize) -> Result<bool> {
    let raw = rec.get(idx).unwrap_or_default();
    crate::config::parse_bool(raw).ok_or_else(|| Error::parse(at(line, name), format!("not a flag: `{raw}`")))
}

/// Parses a 1-based type index and returns it 0-based.
fn parse_type(rec: &StringRecord, idx: usize, name: &str, line: usize, types: usize) -> Result<usize> {
    let raw = rec.get(idx).unwrap_or_default();
    match raw.parse::<usize>() {
        Ok(k) if (1..=types).contains(&k) => Ok(k - 1),
        _ => Err(Error::parse(at(line, name), format!("expected a type index in 1..={types}, got `{raw}`"))),
    }
}

/// Counts a run of `prefix1, prefix2, ..` columns starting at `start`.
fn numbered_run(headers: &StringRecord, start: usize, prefix: &str) -> usize {
    headers
        .iter()
        .skip(start)
        .enumerate()
        .take_while(|(k, h)| *h == format!("{prefix}{}", k + 1))
        .count()
}

fn expect_headers(headers: &StringRecord, start: usize, names: &[&str]) -> Result<()> {
    for (k, name) in names.iter().enumerate() {
        let got = headers.get(start + k).unwrap_or_default();
        if got != *name {
            return Err(Error::parse(
                "header",
                format!("expected column {} to be `{name}`, found `{got}`", start + k + 1),
            ));
        }
    }
    Ok(())
}

fn check_width(rec: &StringRecord, width: usize, line: usize) -> Result<()> {
    if rec.len() != width {
        return Err(Error::parse(
            format!("line {line}"),
            format!("{} fields, header has {width}", rec.len()),
        ));
    }
    Ok(())
}

pub struct ProductTable {
    pub records: Vec<ProductRecord>,
    pub types: usize,
    pub features: usize,
}

const PRODUCT_FIXED: [&str; 6] = [
    "fragile",
    "liquid",
    "hazardous",
    "current_type",
    "sales_velocity",
    "damage_cost",
];

/// Product CSV. `inf` marks an oversize type and is accepted only in the
/// ship-cost columns; each ship cost is the per-unit total of material and
/// transport.
pub fn read_products<R: Read>(input: R) -> Result<ProductTable> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    expect_headers(&headers, 0, &["product_id"])?;
    let features = numbered_run(&headers, 1, "feature_");
    expect_headers(&headers, 1 + features, &PRODUCT_FIXED)?;
    let cost_start = 1 + features + PRODUCT_FIXED.len();
    let types = numbered_run(&headers, cost_start, "ship_cost_type");
    if types < 2 || cost_start + types != headers.len() {
        return Err(Error::parse(
            "header",
            "expected ship_cost_type1..ship_cost_typeN (N >= 2) as the last columns",
        ));
    }
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, row + 2);
        check_width(&rec, headers.len(), line)?;
        let mut feats = Vec::with_capacity(features);
        for f in 0..features {
            feats.push(parse_finite(&rec, 1 + f, &headers[1 + f], line)?);
        }
        let base = 1 + features;
        let mut ship_costs = Vec::with_capacity(types);
        for t in 0..types {
            let name = &headers[cost_start + t];
            let v = parse_f64(&rec, cost_start + t, name, line)?;
            ship_costs.push(if v == f64::INFINITY {
                ShipCost::Oversize
            } else if v.is_finite() && v >= 0.0 {
                ShipCost::total(v)
            } else {
                return Err(Error::parse(at(line, name), format!("invalid ship cost `{v}`")));
            });
        }
        let record = ProductRecord {
            id: rec[0].to_string(),
            features: feats,
            flags: ProductFlags {
                fragile: parse_flag(&rec, base, "fragile", line)?,
                liquid: parse_flag(&rec, base + 1, "liquid", line)?,
                hazardous: parse_flag(&rec, base + 2, "hazardous", line)?,
            },
            current_type: parse_type(&rec, base + 3, "current_type", line, types)?,
            sales_velocity: parse_finite(&rec, base + 4, "sales_velocity", line)?,
            damage_cost: parse_finite(&rec, base + 5, "damage_cost", line)?,
            ship_costs,
        };
        record
            .validate(types)
            .map_err(|e| Error::parse(format!("line {line}"), e.to_string()))?;
        records.push(record);
    }
    Ok(ProductTable {
        records,
        types,
        features,
    })
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_products<W: Write>(out: W, records: &[ProductRecord], types: usize) -> Result<()> {
    let features = records.first().map_or(0, |r| r.features.len());
    let mut w = Writer::from_writer(out);
    let mut header = vec!["product_id".to_string()];
    header.extend((1..=features).map(|f| format!("feature_{f}")));
    header.extend(PRODUCT_FIXED.iter().map(|s| s.to_string()));
    header.extend((1..=types).map(|t| format!("ship_cost_type{t}")));
    w.write_record(&header)?;
    for r in records {
        r.validate(types)?;
        if r.features.len() != features {
            return Err(Error::DimensionMismatch(format!("product `{}` feature count", r.id)));
        }
        let mut row = vec![r.id.clone()];
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.extend([
            flag(r.flags.fragile).to_string(),
            flag(r.flags.liquid).to_string(),
            flag(r.flags.hazardous).to_string(),
            (r.current_type + 1).to_string(),
            r.sales_velocity.to_string(),
            r.damage_cost.to_string(),
        ]);
        row.extend(r.ship_costs.iter().map(|c| match c.per_unit() {
            Some(v) => v.to_string(),
            None => "inf".to_string(),
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shipment CSV. `types` bounds the package index.
pub fn read_shipments<R: Read>(input: R, types: usize) -> Result<Vec<ShipmentRecord>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    expect_headers(&headers, 0, &["product_id"])?;
    let features = numbered_run(&headers, 1, "feature_");
    expect_headers(&headers, 1 + features, &["package_index", "label"])?;
    if headers.len() != features + 3 {
        return Err(Error::parse("header", "unexpected columns after `label`"));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, row + 2);
        check_width(&rec, headers.len(), line)?;
        let mut feats = Vec::with_capacity(features);
        for f in 0..features {
            feats.push(parse_finite(&rec, 1 + f, &headers[1 + f], line)?);
        }
        let label = match &rec[features + 2] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(at(line, "label"), format!("expected 0 or 1, got `{other}`"))),
        };
        out.push(ShipmentRecord {
            product_id: rec[0].to_string(),
            features: feats,
            package: parse_type(&rec, features + 1, "package_index", line, types)?,
            label,
        });
    }
    Ok(out)
}

pub fn write_shipments<W: Write>(out: W, shipments: &[ShipmentRecord]) -> Result<()> {
    let features = shipments.first().map_or(0, |s| s.features.len());
    let mut w = Writer::from_writer(out);
    let mut header = vec!["product_id".to_string()];
    header.extend((1..=features).map(|f| format!("feature_{f}")));
    header.extend(["package_index".to_string(), "label".to_string()]);
    w.write_record(&header)?;
    for s in shipments {
        if s.features.len() != features {
            return Err(Error::DimensionMismatch(format!("shipment of `{}` feature count", s.product_id)));
        }
        let mut row = vec![s.product_id.clone()];
        row.extend(s.features.iter().map(|v| v.to_string()));
        row.push((s.package + 1).to_string());
        row.push(flag(s.label).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Damage probabilities per product and type: `product_id,p_type1..N`.
pub struct ProbabilityTable {
    pub ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

pub fn read_probabilities<R: Read>(input: R) -> Result<ProbabilityTable> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    expect_headers(&headers, 0, &["product_id"])?;
    let types = numbered_run(&headers, 1, "p_type");
    if types == 0 || headers.len() != types + 1 {
        return Err(Error::parse("header", "expected product_id,p_type1..p_typeN"));
    }
    let mut table = ProbabilityTable {
        ids: Vec::new(),
        probs: Vec::new(),
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, row + 2);
        check_width(&rec, headers.len(), line)?;
        let mut p = Vec::with_capacity(types);
        for t in 0..types {
            let v = parse_f64(&rec, t + 1, &headers[t + 1], line)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(at(line, &headers[t + 1]), format!("probability out of range: {v}")));
            }
            p.push(v);
        }
        table.ids.push(rec[0].to_string());
        table.probs.push(p);
    }
    Ok(table)
}

pub fn write_probabilities<W: Write>(out: W, ids: &[String], probs: &[Vec<f64>]) -> Result<()> {
    if ids.len() != probs.len() {
        return Err(Error::LengthMismatch {
            left: ids.len(),
            right: probs.len(),
        });
    }
    let types = probs.first().map_or(0, Vec::len);
    let mut w = Writer::from_writer(out);
    let mut header = vec!["product_id".to_string()];
    header.extend((1..=types).map(|t| format!("p_type{t}")));
    w.write_record(&header)?;
    for (id, p) in ids.iter().zip(probs) {
        let mut row = vec![id.clone()];
        row.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationRow {
    pub product_id: String,
    pub current_type: usize,
    pub recommended_type: usize,
    pub ship_cur: f64,
    pub ship_new: f64,
    pub damage_cur: f64,
    pub damage_new: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendations {
    pub rows: Vec<RecommendationRow>,
    pub ship_cur: f64,
    pub ship_new: f64,
    pub damage_cur: f64,
    pub damage_new: f64,
}

/// Per-product current versus recommended costs, with totals summed in
/// product order.
pub fn recommendations(ids: &[String], costs: &CostMatrices, assignment: &Assignment) -> Result<Recommendations> {
    let current = costs
        .current()
        .ok_or_else(|| Error::Config("recommendations need the current assignment".into()))?;
    if ids.len() != costs.products() || assignment.len() != costs.products() {
        return Err(Error::LengthMismatch {
            left: ids.len().min(assignment.len()),
            right: costs.products(),
        });
    }
    let mut sums = [CompensatedSum::new(); 4];
    let rows = ids
        .iter()
        .zip(current)
        .zip(assignment.chosen())
        .enumerate()
        .map(|(i, ((id, &cur), &new))| {
            let row = RecommendationRow {
                product_id: id.clone(),
                current_type: cur,
                recommended_type: new,
                ship_cur: costs.ship_raw(i, cur),
                ship_new: costs.ship_raw(i, new),
                damage_cur: costs.damage(i, cur),
                damage_new: costs.damage(i, new),
            };
            for (s, v) in sums.iter_mut().zip([row.ship_cur, row.ship_new, row.damage_cur, row.damage_new]) {
                s.add(v);
            }
            row
        })
        .collect();
    Ok(Recommendations {
        rows,
        ship_cur: sums[0].value(),
        ship_new: sums[1].value(),
        damage_cur: sums[2].value(),
        damage_new: sums[3].value(),
    })
}

const RECOMMENDATION_HEADER: [&str; 7] = [
    "product_id",
    "current_type",
    "recommended_type",
    "S_cur",
    "S_new",
    "D_cur",
    "D_new",
];

pub const TOTAL_ROW: &str = "TOTAL";

pub fn write_recommendations<W: Write>(out: W, rec: &Recommendations) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(RECOMMENDATION_HEADER)?;
    for r in &rec.rows {
        w.write_record([
            r.product_id.clone(),
            (r.current_type + 1).to_string(),
            (r.recommended_type + 1).to_string(),
            r.ship_cur.to_string(),
            r.ship_new.to_string(),
            r.damage_cur.to_string(),
            r.damage_new.to_string(),
        ])?;
    }
    w.write_record([
        TOTAL_ROW.to_string(),
        String::new(),
        String::new(),
        rec.ship_cur.to_string(),
        rec.ship_new.to_string(),
        rec.damage_cur.to_string(),
        rec.damage_new.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Reads a recommendation file back; a product literally named `TOTAL` is
/// not supported.
pub fn read_recommendations<R: Read>(input: R, types: usize) -> Result<Recommendations> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    expect_headers(&headers, 0, &RECOMMENDATION_HEADER)?;
    let mut rows = Vec::new();
    let mut totals = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, row + 2);
        check_width(&rec, RECOMMENDATION_HEADER.len(), line)?;
        if totals.is_some() {
            return Err(Error::parse(format!("line {line}"), "rows after the TOTAL row"));
        }
        let nums = (3..7)
            .map(|c| parse_finite(&rec, c, RECOMMENDATION_HEADER[c], line))
            .collect::<Result<Vec<_>>>()?;
        if &rec[0] == TOTAL_ROW {
            totals = Some(nums);
            continue;
        }
        rows.push(RecommendationRow {
            product_id: rec[0].to_string(),
            current_type: parse_type(&rec, 1, "current_type", line, types)?,
            recommended_type: parse_type(&rec, 2, "recommended_type", line, types)?,
            ship_cur: nums[0],
            ship_new: nums[1],
            damage_cur: nums[2],
            damage_new: nums[3],
        });
    }
    let t = totals.ok_or_else(|| Error::parse("recommendations", "missing TOTAL row"))?;
    Ok(Recommendations {
        rows,
        ship_cur: t[0],
        ship_new: t[1],
        damage_cur: t[2],
        damage_new: t[3],
    })
}

pub fn write_sweep<W: Write>(out: W, curve: &[CurveSegment]) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(["lambda_lo", "lambda_hi", "ship_cost", "damage_cost", "objective_mid"])?;
    for s in curve {
        w.write_record([
            s.lambda_lo.to_string(),
            s.lambda_hi.to_string(),
            s.ship_cost.to_string(),
            s.damage_cost.to_string(),
            s.objective_mid.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_search<W: Write>(out: W, res: &LambdaSearch) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(["lambda", "iterations", "ship_cost", "damage_cost", "feasible"])?;
    w.write_record([
        res.lambda.to_string(),
        res.iterations.to_string(),
        res.outcome.ship_cost.to_string(),
        res.outcome.damage_cost.to_string(),
        res.feasible.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_equivalence<W: Write>(out: W, r: &EquivalenceReport) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record([
        "T",
        "lambda_found",
        "D_ivanov",
        "S_ivanov",
        "D_tikhonov",
        "S_tikhonov",
        "delta_bound",
        "t_star",
        "verdict",
    ])?;
    w.write_record([
        r.budget.to_string(),
        r.lambda_found.to_string(),
        r.damage_ivanov.to_string(),
        r.ship_ivanov.to_string(),
        r.damage_tikhonov.to_string(),
        r.ship_tikhonov.to_string(),
        r.delta_bound.to_string(),
        r.t_star.to_string(),
        r.verdict.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// `package_type,weighted_abs_diff,n_shipments`; the metric is left empty
/// for types without shipments.
pub fn write_reliability<W: Write>(out: W, report: &[TypeReliability]) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(["package_type", "weighted_abs_diff", "n_shipments"])?;
    for r in report {
        w.write_record([
            (r.package + 1).to_string(),
            r.weighted_abs_diff.map_or_else(String::new, |v| v.to_string()),
            r.shipments.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRODUCTS: &str = "\
product_id,feature_1,feature_2,fragile,liquid,hazardous,current_type,sales_velocity,damage_cost,ship_cost_type1,ship_cost_type2,ship_cost_type3
A,0.5,-1,0,1,0,3,10,4,inf,2.5,3
B,1e-3,2,1,0,0,1,0.5,12,1,1.25,2
";

    #[test]
    fn reads_products() {
        let t = read_products(PRODUCTS.as_bytes()).unwrap();
        assert_eq!((t.types, t.features, t.records.len()), (3, 2, 2));
        let a = &t.records[0];
        assert_eq!(a.ship_costs[0], ShipCost::Oversize);
        assert_eq!(a.ship_costs[1].per_unit(), Some(2.5));
        assert!(a.flags.liquid && !a.flags.fragile);
        assert_eq!(a.current_type, 2);
        assert_eq!(t.records[1].features, vec![1e-3, 2.0]);
    }

    #[test]
    fn product_round_trip_is_exact() {
        let t = read_products(PRODUCTS.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_products(&mut buf, &t.records, t.types).unwrap();
        let back = read_products(buf.as_slice()).unwrap();
        assert_eq!(back.records, t.records);
        let mut again = Vec::new();
        write_products(&mut again, &back.records, back.types).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_malformed_products() {
        let bad_inf = PRODUCTS.replace("10,4,inf", "inf,4,inf");
        assert!(read_products(bad_inf.as_bytes()).is_err());
        let bad_type = PRODUCTS.replace(",3,10,", ",4,10,");
        assert!(read_products(bad_type.as_bytes()).is_err());
        let oversize_current = PRODUCTS.replace("0,1,0,3,10,4,inf", "0,1,0,1,10,4,inf");
        assert!(read_products(oversize_current.as_bytes()).is_err());
        let short = PRODUCTS.replace("2.5,3\n", "2.5\n");
        assert!(read_products(short.as_bytes()).is_err());
        let header = PRODUCTS.replace("fragile", "fragil");
        assert!(read_products(header.as_bytes()).is_err());
        let neg = PRODUCTS.replace("1.25,2", "-1.25,2");
        assert!(read_products(neg.as_bytes()).is_err());
    }

    #[test]
    fn shipments_round_trip() {
        let text = "product_id,feature_1,package_index,label\nA,0.25,2,1\nB,-3,1,0\n";
        let s = read_shipments(text.as_bytes(), 3).unwrap();
        assert_eq!(s[0].package, 1);
        assert!(s[0].label && !s[1].label);
        let mut buf = Vec::new();
        write_shipments(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
        assert!(read_shipments(text.as_bytes(), 1).is_err());
        assert!(read_shipments(text.replace(",1\nB", ",2\nB").as_bytes(), 3).is_err());
    }

    #[test]
    fn probabilities_round_trip() {
        let ids = vec!["x".to_string(), "y".to_string()];
        let probs = vec![vec![0.1, 1.0 / 3.0], vec![0.5, 0.0]];
        let mut buf = Vec::new();
        write_probabilities(&mut buf, &ids, &probs).unwrap();
        let t = read_probabilities(buf.as_slice()).unwrap();
        assert_eq!(t.ids, ids);
        assert_eq!(t.probs, probs);
        assert!(read_probabilities("product_id,p_type1\nx,1.5\n".as_bytes()).is_err());
    }

    #[test]
    fn recommendation_totals_round_trip() {
        let costs = CostMatrices::unmasked(&[vec![1.0, 4.0], vec![2.0, 3.0]], &[vec![6.0, 1.0], vec![5.0, 1.0]])
            .unwrap()
            .with_current(vec![0, 0])
            .unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let rec = recommendations(&ids, &costs, &Assignment::new(vec![1, 0])).unwrap();
        assert_eq!((rec.ship_cur, rec.ship_new, rec.damage_cur, rec.damage_new), (3.0, 6.0, 11.0, 6.0));
        let mut buf = Vec::new();
        write_recommendations(&mut buf, &rec).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.ends_with("TOTAL,,,3,6,11,6\n"));
        assert_eq!(read_recommendations(buf.as_slice(), 2).unwrap(), rec);
    }
}
