//! CSV emission and the plain-text summary.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::SweepResult;

pub const CSV_HEADER: &str = "sweep_m,scheme,mean_se_bps_hz,ci95,infeasible_frac,trials";

/// Formats with 9 significant digits in the shorter of fixed and scientific
/// notation, trailing zeros trimmed.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("`e` formatting has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders the result as CSV, rows sorted by sweep value then series label.
pub fn render_csv(result: &SweepResult) -> Result<String> {
    let mut rows = Vec::new();
    for point in &result.points {
        for s in &point.series {
            rows.push((point.sweep_value, s.series.label(), s));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (i, (sweep, label, s)) in rows.iter().enumerate() {
        let row = i + 1;
        for (column, v) in [
            ("sweep_m", *sweep),
            ("mean_se_bps_hz", s.mean_se),
            ("ci95", s.ci95),
            ("infeasible_frac", s.infeasible_fraction),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
        }
        if s.non_finite > 0 {
            return Err(Error::NonFinite {
                row,
                column: "mean_se_bps_hz",
            });
        }
        writeln!(
            out,
            "{},{},{},{},{},{}",
            format_sig9(*sweep),
            label,
            format_sig9(s.mean_se),
            format_sig9(s.ci95),
            format_sig9(s.infeasible_fraction),
            s.trials
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// Writes the CSV; nothing is written if any value is non-finite.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let text = render_csv(result)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Human-readable table: one line per sweep point, NOMA/OMA ratio included
/// where both are present.
pub fn summary(result: &SweepResult) -> String {
    let mut out = String::new();
    for point in &result.points {
        write!(out, "{:>8} m", format_sig9(point.sweep_value)).unwrap();
        for s in &point.series {
            write!(
                out,
                "  {}={:.4}±{:.4} (infeasible {:.1}%)",
                s.series.label(),
                s.mean_se,
                s.ci95,
                100.0 * s.infeasible_fraction
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}
