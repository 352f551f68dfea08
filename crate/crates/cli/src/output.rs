//! CSV and table rendering.

use anyhow::{bail, Context, Result};

use relalloc::{AllocationPlan, RiskRow};

pub const CONVERGENCE_HEADER: [&str; 8] = [
    "m",
    "scheme",
    "risk_estimate",
    "std_error",
    "m_times_risk",
    "target_constant",
    "replications",
    "seed",
];

/// 17 significant digits in scientific notation; always round-trips.
#[must_use]
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .with_context(|| format!("column {name}: bad number {field:?}"))
}

/// Renders convergence rows as CSV.
pub fn convergence_csv(rows: &[RiskRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CONVERGENCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.scheme.clone(),
            format_float(r.risk_estimate),
            format_opt(r.std_error),
            format_float(r.m_times_risk),
            format_opt(r.target_constant),
            r.replications.to_string(),
            r.seed.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Parses CSV produced by [`convergence_csv`].
pub fn parse_convergence_csv(text: &str) -> Result<Vec<RiskRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CONVERGENCE_HEADER {
        bail!("unexpected CSV header {header:?}");
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .with_context(|| format!("column {}: bad number {:?}", CONVERGENCE_HEADER[i], &rec[i]))
            };
            Ok(RiskRow {
                m: rec[0].parse().context("column m")?,
                scheme: rec[1].to_owned(),
                risk_estimate: num(2)?,
                std_error: parse_opt(&rec[3], "std_error")?,
                m_times_risk: num(4)?,
                target_constant: parse_opt(&rec[5], "target_constant")?,
                replications: rec[6].parse().context("column replications")?,
                seed: rec[7].parse().context("column seed")?,
                squared_error: None,
            })
        })
        .collect()
}

/// Aligned text table of a plan.
#[must_use]
pub fn plan_table(plan: &AllocationPlan) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("m".into(), plan.total.to_string()),
        ("L".into(), plan.stage_one.to_string()),
    ];
    if let Some(lt) = plan.stage_one_component {
        rows.push(("L_tilde".into(), lt.to_string()));
    }
    for (i, mi) in plan.per_subsystem.iter().enumerate() {
        rows.push((format!("m_{}", i + 1), mi.to_string()));
    }
    if let Some(groups) = &plan.per_component {
        for (i, g) in groups.iter().enumerate() {
            for (j, x) in g.iter().enumerate() {
                rows.push((format!("m_{},{}", i + 1, j + 1), x.to_string()));
            }
        }
    }
    let key_width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let val_width = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<key_width$}  {v:>val_width$}\n"))
        .collect()
}
