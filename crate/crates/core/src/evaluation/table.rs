//! Mean/min/max RMSE grid over dependence × geometry × design.

use crate::estimators::{DependenceKind, MatrixDesign};
use crate::manifold::GeometryKind;

use super::{Condition, CvReport};

/// Placeholder for conditions without a report.
pub const MISSING: &str = "—";

/// Scientific notation with a two-digit signed exponent, e.g. `1.70E-03`.
pub fn format_sci(value: f64) -> String {
    if !value.is_finite() {
        return format!("{value}");
    }
    if value == 0.0 {
        return "0.00E+00".into();
    }
    let s = format!("{value:.2E}");
    let (mantissa, exp) = s.split_once('E').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}E{sign}{:02}", exp.abs())
}

/// The twelve conditions in display order.
pub fn condition_grid() -> Vec<Condition> {
    let mut rows = Vec::with_capacity(12);
    for design in [MatrixDesign::Spatiofrequential, MatrixDesign::Spatial] {
        for dependence in DependenceKind::ALL {
            for geometry in GeometryKind::ALL {
                rows.push(Condition { dependence, geometry, design });
            }
        }
    }
    rows
}

/// Rendered table plus one warning per missing cell group.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub warnings: Vec<String>,
}

/// Renders one block of three columns (RMSE, Min, Max) per target, in the
/// order targets first appear among `reports`.
pub fn render_table(reports: &[CvReport]) -> RenderedTable {
    let mut targets: Vec<String> = Vec::new();
    for r in reports {
        let t = r.target.clone().unwrap_or_else(|| "target".into());
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    if targets.is_empty() {
        targets.push("target".into());
    }

    let mut warnings = Vec::new();
    let mut header_top = vec![String::new(), String::new(), String::new()];
    let mut header = vec!["Dep".to_string(), "Approach".into(), "Design".into()];
    for t in &targets {
        header_top.extend([t.clone(), String::new(), String::new()]);
        header.extend(["RMSE".to_string(), "Min".into(), "Max".into()]);
    }
    let mut body: Vec<Vec<String>> = Vec::new();
    for (k, cond) in condition_grid().into_iter().enumerate() {
        // the dependence label sits on the middle row of its block
        let dep = if k % 3 == 1 { cond.dependence.label() } else { "" };
        let mut row = vec![
            dep.to_string(),
            cond.geometry.label().to_string(),
            cond.design.label().to_string(),
        ];
        for t in &targets {
            let found = reports.iter().find(|r| {
                r.condition == Some(cond) && r.target.as_deref().unwrap_or("target") == t
            });
            match found {
                Some(r) => row.extend([
                    format_sci(r.summary.mean),
                    format_sci(r.summary.min),
                    format_sci(r.summary.max),
                ]),
                None => {
                    warnings.push(format!(
                        "no report for {} {} {} ({t})",
                        cond.dependence, cond.geometry, cond.design
                    ));
                    row.extend([MISSING.to_string(), MISSING.to_string(), MISSING.to_string()]);
                }
            }
        }
        body.push(row);
    }

    let ncols = header.len();
    let width = |i: usize| {
        std::iter::once(&header[i])
            .chain(std::iter::once(&header_top[i]))
            .chain(body.iter().map(|r| &r[i]))
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..ncols).map(width).collect();
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(c);
            out.extend(std::iter::repeat_n(' ', widths[i] - c.chars().count()));
        }
        out.trim_end().to_string()
    };
    let rule: String = "-".repeat(widths.iter().sum::<usize>() + 2 * (ncols - 1));

    let mut text = String::new();
    text.push_str(&line(&header_top));
    text.push('\n');
    text.push_str(&line(&header));
    text.push('\n');
    for (k, row) in body.iter().enumerate() {
        if k % 3 == 0 {
            text.push_str(&rule);
            text.push('\n');
        }
        text.push_str(&line(row));
        text.push('\n');
    }
    text.push_str(&rule);
    text.push('\n');
    RenderedTable { text, warnings }
}
