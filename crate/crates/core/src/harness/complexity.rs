//! Parameter-count and Hessian-cost arithmetic, checked against the
//! published figures.

use super::report::Report;
use crate::ann::{complexity_ratios, count_parameters, count_parameters_paper, published_operands, StageCount, MATINV_EXPONENT};
use crate::error::Result;
use crate::mst::default_config_2nd;

/// Input length the published counts assume.
pub const REFERENCE_INPUT: usize = 1024;
pub const PUBLISHED_STAGE_PARAMS: [usize; 3] = [10_340, 1_145, 705];
pub const PUBLISHED_TOTAL: usize = 674_480;
/// Serial speedup, parallel speedup, serial memory, parallel memory.
pub const PUBLISHED_RATIOS: [f64; 4] = [334.0, 19_982.0, 4_168.0, 70.0];

fn row(report: &mut Report, item: &str, value: String, published: String, flag: &str) -> Result<()> {
    report.push(vec![item.into(), value, published, flag.into()])
}

fn ratio_rows(report: &mut Report, prefix: &str, total: f64, stages: &[StageCount]) -> Result<()> {
    let r = complexity_ratios(total, stages, MATINV_EXPONENT)?;
    let names = ["serial_speedup", "parallel_speedup", "serial_memory", "parallel_memory"];
    let values = [r.serial_speedup, r.parallel_speedup, r.serial_mem, r.parallel_mem];
    for ((name, v), p) in names.iter().zip(values).zip(PUBLISHED_RATIOS) {
        row(report, &format!("{prefix}{name}"), format!("{v:.3}"), format!("{p}"), "")?;
    }
    Ok(())
}

/// Rows `item,value,published,flag`; `flag` is `mismatch` where a
/// recomputed count differs from the published one.
pub fn run_complexity_report() -> Result<Report> {
    let mut report = Report::new("complexity", &["item", "value", "published", "flag"]);
    let cfg = default_config_2nd(12)?;
    let mut n_in = REFERENCE_INPUT;
    let mut counted = Vec::new();
    for (s, c) in cfg.iter().enumerate() {
        let sizes = c.sizes(n_in);
        let paper = count_parameters_paper(&sizes)?;
        let full = count_parameters(&sizes)?;
        let published = PUBLISHED_STAGE_PARAMS[s];
        let flag = if paper == published { "" } else { "mismatch" };
        row(&mut report, &format!("stage{}_mlps", s + 1), c.n_mlps.to_string(), String::new(), "")?;
        row(&mut report, &format!("stage{}_params", s + 1), paper.to_string(), published.to_string(), flag)?;
        row(&mut report, &format!("stage{}_params_with_output", s + 1), full.to_string(), String::new(), "")?;
        if flag == "mismatch" {
            let shown: Vec<String> = sizes.windows(2).take(sizes.len() - 2).map(|w| format!("{}x{}+{}", w[0], w[1], w[1])).collect();
            report.notes.push(format!(
                "stage {} per-MLP count {} = {} differs from the published {published}",
                s + 1,
                shown.join(" + "),
                paper
            ));
        }
        counted.push(StageCount { n_mlps: c.n_mlps, params: paper as f64 });
        n_in = c.n_mlps;
    }
    let from_published: usize = cfg.iter().zip(PUBLISHED_STAGE_PARAMS).map(|(c, p)| c.n_mlps * p).sum();
    let flag = if from_published == PUBLISHED_TOTAL { "" } else { "mismatch" };
    row(&mut report, "total_from_published_stage_counts", from_published.to_string(), PUBLISHED_TOTAL.to_string(), flag)?;
    if flag == "mismatch" {
        report.notes.push(format!(
            "the published per-stage counts sum to {from_published}, not the published total {PUBLISHED_TOTAL}"
        ));
    }
    let recounted: f64 = counted.iter().map(|s| s.n_mlps as f64 * s.params).sum();
    row(&mut report, "total_recounted", format!("{recounted}"), PUBLISHED_TOTAL.to_string(), "")?;
    let (total, stages) = published_operands();
    ratio_rows(&mut report, "", total, &stages)?;
    ratio_rows(&mut report, "recounted_", recounted, &counted)?;
    row(&mut report, "matrix_inversion_exponent", MATINV_EXPONENT.to_string(), String::new(), "")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_total_discrepancy_is_flagged() {
        let r = run_complexity_report().unwrap();
        assert_eq!(r.value(&[("item", "total_from_published_stage_counts")], "value").unwrap(), 675_900.0);
        assert!(r.select(&[("item", "total_from_published_stage_counts"), ("flag", "mismatch")]).len() == 1);
        assert!(r.notes.iter().any(|n| n.contains("675900") && n.contains("674480")));
        assert_eq!(r.value(&[("item", "stage3_params")], "value").unwrap(), 705.0);
        let s = r.value(&[("item", "serial_speedup")], "value").unwrap();
        assert!((s - 334.0).abs() <= 1.0);
    }
}
