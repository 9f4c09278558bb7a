//! Byte-stable CSV emission shared by the command line and the test suites.
//!
//! Barrier curves live in `[0, 1]` and use six fixed decimals. Training
//! metrics span several magnitudes and use six significant digits in the
//! style of C's `%g`.

use std::fmt::Write;

use crate::moe::{CrossValidation, TrainReport};
use crate::sss::BarrierCurve;

/// `%g` with six significant digits: fixed notation for exponents in
/// `[-4, 6)`, scientific otherwise, trailing zeros removed.
pub fn fmt_g(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_fixed6(v: f64) -> String {
    format!("{v:.6}")
}

pub const BARRIER_HEADER: &str = "mu_target,mu_measured_mean,success_greedy,success_omp,trials,k,bound";

pub fn barrier_csv(curve: &BarrierCurve) -> String {
    let mut out = format!("{BARRIER_HEADER}\n");
    for g in 0..curve.mu_grid.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_fixed6(curve.mu_grid[g]),
            fmt_fixed6(curve.mu_measured_mean[g]),
            fmt_fixed6(curve.success_rate_greedy[g]),
            fmt_fixed6(curve.success_rate_omp[g]),
            curve.trials_per_point,
            curve.k,
            fmt_fixed6(curve.theoretical_bound)
        )
        .expect("writing to a String");
    }
    out
}

pub const RUN_HEADER: &str = "fold,epoch,loss_task,loss_aux,loss_reg,test_acc,eff_rank,coherence,marg_entropy";

pub fn run_csv(reports: &[TrainReport]) -> String {
    let mut out = format!("{RUN_HEADER}\n");
    for r in reports {
        for e in &r.records {
            let vals = [e.loss_task, e.loss_aux, e.loss_reg, e.test_acc, e.eff_rank, e.coherence, e.marg_entropy];
            let cells: Vec<String> = vals.iter().map(|&v| fmt_g(v)).collect();
            writeln!(out, "{},{},{}", r.fold, e.epoch, cells.join(",")).expect("writing to a String");
        }
    }
    out
}

pub const HEATMAP_HEADER: &str = "expert,class,freq";

/// Fold-averaged specialization matrix in long form.
pub fn heatmap_csv(cv: &CrossValidation) -> String {
    let mut out = format!("{HEATMAP_HEADER}\n");
    let maps: Vec<&Vec<Vec<f64>>> = cv.reports.iter().map(|r| &r.heatmap).filter(|h| !h.is_empty()).collect();
    let Some(first) = maps.first() else { return out };
    for e in 0..first.len() {
        for c in 0..first[e].len() {
            let mean = maps.iter().map(|m| m[e][c]).sum::<f64>() / maps.len() as f64;
            writeln!(out, "{e},{c},{}", fmt_g(mean)).expect("writing to a String");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (1.0 / 11.0, "0.0909091"),
            (2.302587, "2.30259"),
            (15.557123, "15.5571"),
            (123456.7, "123457"),
            (999999.6, "1e+06"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-0.5, "-0.5"),
            (0.099999996, "0.1"),
        ];
        for (v, want) in cases {
            assert_eq!(fmt_g(v), want, "{v}");
        }
    }

    #[test]
    fn fixed_bound() {
        assert_eq!(fmt_fixed6(1.0 / 11.0), "0.090909");
    }
}
