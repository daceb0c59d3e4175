use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{EvalError, EvalReport};

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed,
/// scientific notation when the exponent is below −4 or at least 6.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mant), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g6).unwrap_or_default()
}

/// Best and second-best counts of one run across assays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WinRow {
    pub model: String,
    pub best: usize,
    pub second: usize,
}

/// Ranks runs by mean MAE per assay over the assays every run covers.
/// Equal MAEs keep the order of `runs`.
pub fn win_table(runs: &[&EvalReport]) -> Vec<WinRow> {
    let maes: Vec<BTreeMap<String, f64>> = runs.iter().map(|r| r.assay_mae()).collect();
    let mut rows: Vec<WinRow> = runs
        .iter()
        .map(|r| WinRow {
            model: r.model.clone(),
            best: 0,
            second: 0,
        })
        .collect();
    let Some(first) = maes.first() else {
        return rows;
    };
    for assay in first.keys() {
        let Some(mut scored) = maes
            .iter()
            .enumerate()
            .map(|(i, m)| m.get(assay).map(|&v| (v, i)))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        rows[scored[0].1].best += 1;
        if let Some(&(_, i)) = scored.get(1) {
            rows[i].second += 1;
        }
    }
    rows
}

/// Writes `results.json`, `summary.csv` and `boxplot.csv` into `dir`
/// (created if needed), plus `wins.csv` over `report` and `compared` when
/// `compared` is non-empty. Returns the paths written.
pub fn emit_report(
    report: &EvalReport,
    dir: &Path,
    compared: &[&EvalReport],
) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), EvalError> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };

    // Value maps are BTreeMaps, so keys come out sorted.
    let value = serde_json::to_value(report).map_err(|e| EvalError::Format(e.to_string()))?;
    let mut json = serde_json::to_string_pretty(&value).map_err(|e| EvalError::Format(e.to_string()))?;
    json.push('\n');
    put("results.json", json)?;

    let mut csv = String::from("assay_id,split_id,n_train,n_test,mae,r2,tau_b,rank_abs_tau,rank_gate\n");
    for c in &report.cells {
        let (tau, open) = match &c.ranking {
            Some(r) => (fmt_g6(r.abs_tau), if r.gate_open { "open" } else { "closed" }),
            None => (String::new(), ""),
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            c.assay_id,
            c.split_id,
            c.n_train,
            c.n_test,
            fmt_g6(c.mae),
            opt(c.r2),
            opt(c.tau_b),
            tau,
            open
        )
        .expect("string write");
    }
    put("summary.csv", csv)?;

    let mut bp = String::from("metric,n,median,q1,q3,whisker_lo,whisker_hi,mean\n");
    for (metric, b) in &report.aggregates {
        writeln!(
            bp,
            "{metric},{},{},{},{},{},{},{}",
            b.n,
            fmt_g6(b.median),
            fmt_g6(b.q1),
            fmt_g6(b.q3),
            fmt_g6(b.whisker_lo),
            fmt_g6(b.whisker_hi),
            fmt_g6(b.mean)
        )
        .expect("string write");
    }
    put("boxplot.csv", bp)?;

    if !compared.is_empty() {
        let runs: Vec<&EvalReport> = std::iter::once(report).chain(compared.iter().copied()).collect();
        let mut wins = String::from("model,best,second\n");
        for r in win_table(&runs) {
            writeln!(wins, "{},{},{}", r.model, r.best, r.second).expect("string write");
        }
        put("wins.csv", wins)?;
    }
    Ok(written)
}

/// Reads a `results.json` written by [`emit_report`].
pub fn load_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EvalError::Format(e.to_string()))
}
