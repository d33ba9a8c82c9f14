use reviewir::objective::fmt_metric;
use reviewir::pipeline::GridCell;

/// Metric grid of one training run.
#[derive(Clone, Debug)]
pub struct RunTable {
    pub label: String,
    pub cells: Vec<GridCell>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Stage x dataset PSNR and SSIM tables per run, then the final-stage means
/// of every run side by side.
pub fn render_report(runs: &[RunTable]) -> String {
    let mut s = String::new();
    let mut finals = Vec::new();
    for run in runs {
        let mut datasets: Vec<&str> = Vec::new();
        let mut stages: Vec<(usize, &str)> = Vec::new();
        for c in &run.cells {
            if !datasets.contains(&c.dataset.as_str()) {
                datasets.push(&c.dataset);
            }
            if !stages.iter().any(|(k, _)| *k == c.stage) {
                stages.push((c.stage, &c.trained));
            }
        }
        stages.sort();
        s.push_str(&format!("run: {}\n", run.label));
        let mut last = (f64::NAN, f64::NAN);
        for (metric, pick) in [("psnr", (|c: &GridCell| c.report.psnr) as fn(&GridCell) -> f64), ("ssim", |c| c.report.ssim)] {
            s.push_str(&format!("[{metric}]\nstage\ttrained\t{}\tmean\n", datasets.join("\t")));
            for (k, trained) in &stages {
                let row: Vec<f64> = datasets
                    .iter()
                    .map(|d| {
                        run.cells
                            .iter()
                            .find(|c| c.stage == *k && c.dataset == *d)
                            .map(pick)
                            .unwrap_or(f64::NAN)
                    })
                    .collect();
                let m = mean(&row);
                let cols: Vec<String> = row.iter().map(|v| fmt_metric(*v)).collect();
                s.push_str(&format!("{k}\t{trained}\t{}\t{}\n", cols.join("\t"), fmt_metric(m)));
                if metric == "psnr" {
                    last.0 = m;
                } else {
                    last.1 = m;
                }
            }
        }
        s.push('\n');
        finals.push((run.label.as_str(), last));
    }
    if runs.len() > 1 {
        s.push_str("[final]\nrun\tmean_psnr\tmean_ssim\n");
        for (label, (p, q)) in finals {
            s.push_str(&format!("{label}\t{}\t{}\n", fmt_metric(p), fmt_metric(q)));
        }
    }
    s
}
