//! Side-by-side comparison of finished runs.

use std::path::PathBuf;

use mmfuse::eval::{mean_std, MetricsReport};

use crate::error::{CliError, CliResult};
use crate::run::read_metrics;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub error_mean: f64,
    pub error_std: f64,
    /// Present only when every run of the method reported an AUC.
    pub auc: Option<(f64, f64)>,
    pub over_learn: Option<(f64, f64)>,
    pub rank: Option<usize>,
}

fn summary_of(values: Vec<Option<f64>>) -> Option<(f64, f64)> {
    let v: Option<Vec<f64>> = values.into_iter().collect();
    v.filter(|v| !v.is_empty()).map(|v| mean_std(&v))
}

/// Groups runs by method in first-appearance order and ranks them by mean
/// test error. Equal means keep input order.
pub fn summarize(reports: &[MetricsReport]) -> CliResult<Vec<MethodSummary>> {
    if reports.len() < 2 {
        return Err(CliError::Other("compare needs at least two metrics files".into()));
    }
    let fp = &reports[0].dataset_fingerprint;
    if let Some(r) = reports.iter().find(|r| &r.dataset_fingerprint != fp) {
        return Err(CliError::Other(format!(
            "runs were evaluated on different test data ({} vs {})",
            &fp[..fp.len().min(12)],
            &r.dataset_fingerprint[..r.dataset_fingerprint.len().min(12)]
        )));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out: Vec<MethodSummary> = methods
        .iter()
        .map(|&m| {
            let mine: Vec<&MetricsReport> = reports.iter().filter(|r| r.method == m).collect();
            let errs: Vec<f64> = mine.iter().map(|r| r.error_rate).collect();
            let (error_mean, error_std) = mean_std(&errs);
            MethodSummary {
                method: m.to_string(),
                runs: mine.len(),
                error_mean,
                error_std,
                auc: summary_of(mine.iter().map(|r| r.auc).collect()),
                over_learn: summary_of(mine.iter().map(|r| r.over_learn_error).collect()),
                rank: None,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[a].error_mean.total_cmp(&out[b].error_mean));
    for (rank, &i) in order.iter().enumerate() {
        out[i].rank = Some(rank + 1);
    }
    Ok(out)
}

fn pct(v: Option<(f64, f64)>) -> String {
    v.map_or("-".into(), |(m, s)| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s))
}

/// Text table; the best method is marked `*`, the second `+`.
pub fn render_table(rows: &[MethodSummary]) -> String {
    let mut s = format!(
        "{:<20} {:>4} {:>16} {:>16} {:>16}\n",
        "method", "runs", "error %", "auc %", "over-learn %"
    );
    for r in rows {
        let mark = match r.rank {
            Some(1) => "*",
            Some(2) => "+",
            _ => " ",
        };
        s.push_str(&format!(
            "{:<20} {:>4} {:>16} {:>16} {:>16}\n",
            format!("{}{mark}", r.method),
            r.runs,
            pct(Some((r.error_mean, r.error_std))),
            pct(r.auc),
            pct(r.over_learn),
        ));
    }
    s
}

pub fn render_csv(rows: &[MethodSummary]) -> String {
    let opt = |v: Option<(f64, f64)>| v.map_or(",".into(), |(m, s)| format!("{m},{s}"));
    let mut s = String::from("method,runs,error_mean,error_std,auc_mean,auc_std,over_learn_mean,over_learn_std,rank\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.runs,
            r.error_mean,
            r.error_std,
            opt(r.auc),
            opt(r.over_learn),
            r.rank.unwrap_or(0)
        ));
    }
    s
}

pub fn cmd_compare(paths: &[PathBuf]) -> CliResult<Vec<MethodSummary>> {
    let reports = paths
        .iter()
        .map(|p| {
            let p = if p.is_dir() { p.join(crate::run::METRICS_FILE) } else { p.clone() };
            read_metrics(&p)
        })
        .collect::<CliResult<Vec<_>>>()?;
    summarize(&reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmfuse::eval::METRICS_VERSION;

    fn report(method: &str, err: f64) -> MetricsReport {
        MetricsReport {
            version: METRICS_VERSION,
            method: method.into(),
            kind: method.into(),
            beta: 0.5,
            error_rate: err,
            errors: (err * 100.0) as usize,
            auc: Some(1.0 - err),
            test_loss: 0.3,
            per_modality: vec![],
            over_learn_error: None,
            best_dev_metric: err,
            samples: 100,
            param_count: 10,
            seed: 1,
            config_fingerprint: "c".into(),
            dataset_fingerprint: "d".into(),
            created_at: 0,
        }
    }

    #[test]
    fn groups_and_ranks() {
        let rows = summarize(&[report("add", 0.2), report("mul", 0.1), report("add", 0.3), report("mul", 0.1)]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, "add");
        assert!((rows[0].error_mean - 0.25).abs() < 1e-12);
        assert_eq!(rows[1].rank, Some(1));
        assert_eq!(rows[0].rank, Some(2));
        assert!(render_table(&rows).contains("mul*"));
    }

    #[test]
    fn ties_keep_first_input() {
        let rows = summarize(&[report("b", 0.1), report("a", 0.1)]).unwrap();
        assert_eq!(rows[0].rank, Some(1));
        assert_eq!(rows[1].rank, Some(2));
    }

    #[test]
    fn mismatched_test_data_is_rejected() {
        let mut r = report("x", 0.1);
        r.dataset_fingerprint = "other".into();
        assert!(summarize(&[report("a", 0.1), r]).is_err());
        assert!(summarize(&[report("a", 0.1)]).is_err());
    }
}
