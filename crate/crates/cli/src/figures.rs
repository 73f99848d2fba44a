//! Per-figure summaries over every `metrics.csv` below a directory: the
//! training curve per vehicle count and the evaluation metrics against the
//! vehicle count, each as mean and sample standard deviation over runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use iov_bazaar_marl::Mechanism;

use crate::run::{read_metrics, MetricsRow, Phase};
use crate::svg::{line_chart, Series};
use crate::{io_error, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Reward,
    SocialWelfare,
    Budget,
    Latency,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Reward, Metric::SocialWelfare, Metric::Budget, Metric::Latency];

    fn of(self, r: &MetricsRow) -> f64 {
        match self {
            Metric::Reward => r.reward,
            Metric::SocialWelfare => r.social_welfare,
            Metric::Budget => r.budget,
            Metric::Latency => r.latency_s,
        }
    }

    /// Output file stem.
    pub fn stem(self) -> &'static str {
        match self {
            Metric::Reward => "fig5_reward_vs_vehicles",
            Metric::SocialWelfare => "fig6_social_welfare_vs_vehicles",
            Metric::Budget => "fig7_budget_vs_vehicles",
            Metric::Latency => "fig8_latency_vs_vehicles",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Reward => "reward per slot",
            Metric::SocialWelfare => "social welfare per slot",
            Metric::Budget => "budget per slot",
            Metric::Latency => "latency per slot (s)",
        }
    }
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: u32,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Default)]
pub struct Report {
    pub runs: usize,
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Training reward per epoch, keyed by vehicle count.
    pub convergence: BTreeMap<u32, Vec<Point>>,
    /// Evaluation means per vehicle count, keyed by mechanism; one map per
    /// entry of [`Metric::ALL`].
    pub versus_vehicles: Vec<BTreeMap<Mechanism, Vec<Point>>>,
}

fn find_metrics(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| io_error(dir, e))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_metrics(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(path);
        }
    }
    Ok(())
}

fn points(groups: BTreeMap<u32, Vec<f64>>) -> Vec<Point> {
    groups
        .into_iter()
        .map(|(x, v)| {
            let (mean, std) = mean_std(&v);
            Point { x, mean, std, runs: v.len() }
        })
        .collect()
}

/// Reads every run below `dir` and writes the summaries into `dir/figures`.
pub fn figures(dir: &Path) -> Result<Report, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    find_metrics(dir, &mut files)?;
    if files.is_empty() {
        return Err(CliError::Runtime(format!("no metrics.csv below {}", dir.display())));
    }
    let mut report = Report { runs: files.len(), ..Default::default() };

    // (V, epoch) -> one training reward per run.
    let mut curves: BTreeMap<u32, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    // metric -> mechanism -> V -> one evaluation mean per run.
    let mut evals: Vec<BTreeMap<Mechanism, BTreeMap<u32, Vec<f64>>>> = vec![BTreeMap::new(); Metric::ALL.len()];
    for file in &files {
        let rows = read_metrics(file)?;
        for r in rows.iter().filter(|r| r.phase == Phase::Train) {
            curves.entry(r.vehicles).or_default().entry(r.epoch).or_default().push(r.reward);
        }
        let eval: Vec<&MetricsRow> = rows.iter().filter(|r| r.phase == Phase::Eval).collect();
        let Some(first) = eval.first() else {
            report.warnings.push(format!("{} has no evaluation rows", file.display()));
            continue;
        };
        if eval.iter().any(|r| r.mechanism != first.mechanism || r.vehicles != first.vehicles) {
            return Err(CliError::Runtime(format!("{} mixes several runs", file.display())));
        }
        for (k, metric) in Metric::ALL.iter().enumerate() {
            let values: Vec<f64> = eval.iter().map(|r| metric.of(r)).collect();
            let per_run = values.iter().sum::<f64>() / values.len() as f64;
            evals[k].entry(first.mechanism).or_default().entry(first.vehicles).or_default().push(per_run);
        }
    }
    for m in Mechanism::ALL {
        if !evals[0].contains_key(&m) {
            report.warnings.push(format!("no evaluation data for {m}; the vehicle-count figures omit it"));
        }
    }
    if curves.is_empty() {
        report.warnings.push("no training rows; the convergence figure is skipped".into());
    }

    let out = dir.join("figures");
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let mut write = |name: String, contents: String| -> Result<(), CliError> {
        let path = out.join(name);
        fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        report.written.push(path);
        Ok(())
    };

    for (v, by_epoch) in curves {
        let pts = points(by_epoch);
        let mut csv = String::from("epoch,reward_mean,reward_std,runs\n");
        for p in &pts {
            csv.push_str(&format!("{},{},{},{}\n", p.x, p.mean, p.std, p.runs));
        }
        let series = [Series { name: "madrl".into(), points: pts.iter().map(|p| (f64::from(p.x), p.mean, p.std)).collect() }];
        write(format!("fig4_convergence_v{v}.csv"), csv)?;
        write(
            format!("fig4_convergence_v{v}.svg"),
            line_chart(&format!("Training reward, V = {v}"), "epoch", "reward per slot", &series),
        )?;
        report.convergence.insert(v, pts);
    }

    for (k, metric) in Metric::ALL.into_iter().enumerate() {
        let by_mech: BTreeMap<Mechanism, Vec<Point>> =
            std::mem::take(&mut evals[k]).into_iter().map(|(m, g)| (m, points(g))).collect();
        let mut csv = String::from("mechanism,vehicles,mean,std,runs\n");
        let mut series = Vec::new();
        for (m, pts) in &by_mech {
            for p in pts {
                csv.push_str(&format!("{m},{},{},{},{}\n", p.x, p.mean, p.std, p.runs));
            }
            series.push(Series { name: m.to_string(), points: pts.iter().map(|p| (f64::from(p.x), p.mean, p.std)).collect() });
        }
        write(format!("{}.csv", metric.stem()), csv)?;
        write(format!("{}.svg", metric.stem()), line_chart(metric.label(), "vehicles", metric.label(), &series))?;
        report.versus_vehicles.push(by_mech);
    }
    Ok(report)
}
