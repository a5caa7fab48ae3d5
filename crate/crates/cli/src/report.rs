//! CSV report writers. All outputs use `.` decimals and LF line endings.

use tsa_core::dynamics::Trajectory;
use tsa_core::graph::GraphSample;
use tsa_core::metrics::CrCurve;
use tsa_core::train::CvReport;

use crate::assess::BatchTimingReport;

/// Fold-wise metrics plus mean/std rows, rates reported as percentages.
pub fn cv_report_csv(report: &CvReport) -> String {
    let mut out = String::from("fold,acc,f1,tnr,tpr\n");
    for (i, m) in report.per_fold.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4}\n",
            i,
            100.0 * m.acc,
            100.0 * m.f1,
            100.0 * m.tnr,
            100.0 * m.tpr
        ));
    }
    out.push_str(&format!(
        "mean,{:.4},{:.4},{:.4},{:.4}\n",
        100.0 * report.mean.acc,
        100.0 * report.mean.f1,
        100.0 * report.mean.tnr,
        100.0 * report.mean.tpr
    ));
    out.push_str(&format!(
        "std,{:.4},{:.4},{:.4},{:.4}\n",
        100.0 * report.std.acc,
        100.0 * report.std.f1,
        100.0 * report.std.tnr,
        100.0 * report.std.tpr
    ));
    out
}

pub fn cr_curve_csv(curve: &CrCurve) -> String {
    let mut out = String::from("k,cr\n");
    for (k, cr) in curve.thresholds.iter().zip(&curve.cr) {
        out.push_str(&format!("{k:.6},{cr:.6}\n"));
    }
    out
}

/// Per-scenario assessment rows.
pub fn assess_csv(report: &BatchTimingReport) -> String {
    let mut out = String::from("scenario_id,label,source,margin,elapsed\n");
    for s in &report.per_scenario {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            s.seed, s.outcome.label, s.outcome.source, s.outcome.margin, s.outcome.elapsed
        ));
    }
    out
}

/// Rotor trajectory export: `t,delta_1..delta_g,omega_1..omega_g`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let g = traj.delta.first().map_or(0, |d| d.len());
    let mut out = String::from("t");
    for i in 1..=g {
        out.push_str(&format!(",delta_{i}"));
    }
    for i in 1..=g {
        out.push_str(&format!(",omega_{i}"));
    }
    out.push('\n');
    for (step, t) in traj.times.iter().enumerate() {
        out.push_str(&format!("{t:.6}"));
        for v in &traj.delta[step] {
            out.push_str(&format!(",{v:.9}"));
        }
        for v in &traj.omega[step] {
            out.push_str(&format!(",{v:.9}"));
        }
        out.push('\n');
    }
    out
}

/// Histograms of the node features over a dataset, one row per bin per
/// feature; stands in for plotted marginal distributions.
pub fn feature_histogram_csv(samples: &[GraphSample], bins: usize) -> String {
    assert!(bins >= 1);
    let mut out = String::from("feature,bin_lo,bin_hi,count\n");
    for (col, name) in [(0usize, "p"), (1usize, "q")] {
        let values: Vec<f64> = samples
            .iter()
            .flat_map(|s| (0..s.n).map(move |i| s.features[(i, col)]))
            .collect();
        if values.is_empty() {
            continue;
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / bins as f64).max(1e-300);
        let mut counts = vec![0usize; bins];
        for v in &values {
            let bin = (((v - lo) / width) as usize).min(bins - 1);
            counts[bin] += 1;
        }
        for (b, count) in counts.iter().enumerate() {
            out.push_str(&format!(
                "{name},{:.6},{:.6},{count}\n",
                lo + b as f64 * width,
                lo + (b + 1) as f64 * width
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tsa_core::graph::SampleMeta;
    use tsa_core::linalg::Mat;

    #[test]
    fn histogram_counts_every_node() {
        let samples: Vec<GraphSample> = (0..3)
            .map(|i| GraphSample {
                n: 2,
                edges: vec![(0, 1)],
                features: Mat::from_rows(&[&[i as f64, 0.0], &[i as f64 + 0.5, 1.0]]),
                label: 0,
                meta: SampleMeta::default(),
            })
            .collect();
        let csv = feature_histogram_csv(&samples, 5);
        let total_p: usize = csv
            .lines()
            .skip(1)
            .filter(|l| l.starts_with("p,"))
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total_p, 6);
        assert!(csv.ends_with('\n'));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn trajectory_header_shape() {
        let traj = Trajectory {
            times: vec![0.0, 0.005],
            delta: vec![vec![0.1, 0.2], vec![0.15, 0.25]],
            omega: vec![vec![0.0, 0.0], vec![0.5, -0.5]],
            ref_angles: vec![],
            snapshot_injections: None,
            saturated: false,
        };
        let csv = trajectory_csv(&traj);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,delta_1,delta_2,omega_1,omega_2");
        assert_eq!(csv.lines().count(), 3);
    }
}
