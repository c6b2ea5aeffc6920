//! Linear contention model for co-located simulations.
//!
//! With `N` simulations of `R` ranks on `M` nodes of `C` vCPUs, the load is
//! `ρ_N = N·R / (M·C)` and the makespan is modelled as
//! `T_N = T_1 · (1 + β·(ρ_N − ρ_1))`. Throughput gain is `N·T_1 / T_N`.
//!
//! `T_1` is held fixed when fitting, leaving `β` as the only free parameter.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alloc::ClusterSpec;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("cluster has no capacity")]
    ZeroCapacity,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("no measured point with N >= 2; beta is unidentifiable")]
    NoSignal,
    #[error("fitted beta {0:.4} is negative; the data contradict the contention model")]
    NegativeBeta(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("measured points lack the N = 1 baseline")]
    MissingBaseline,
    #[error("points must be sorted by N with no duplicates")]
    Unsorted,
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub fn cluster_load(n_sims: u32, ranks_per_sim: u32, cluster: &ClusterSpec) -> Result<f64> {
    let capacity = cluster.total_vcpus();
    if capacity == 0 {
        return Err(ModelError::ZeroCapacity);
    }
    if n_sims == 0 || ranks_per_sim == 0 {
        return Err(ModelError::NonPositive("N and R"));
    }
    Ok(f64::from(n_sims) * f64::from(ranks_per_sim) / capacity as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentionModel {
    pub t1: f64,
    pub rho1: f64,
    pub beta: f64,
}

impl ContentionModel {
    pub fn new(t1: f64, rho1: f64, beta: f64) -> Result<Self> {
        if !(t1 > 0.0 && t1.is_finite()) {
            return Err(ModelError::InvalidModel(format!("T1 = {t1}")));
        }
        if !(rho1 > 0.0 && rho1 <= 1.0) {
            return Err(ModelError::InvalidModel(format!("rho1 = {rho1}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(ModelError::InvalidModel(format!("beta = {beta}")));
        }
        Ok(Self { t1, rho1, beta })
    }

    pub fn for_cluster(t1: f64, ranks_per_sim: u32, cluster: &ClusterSpec, beta: f64) -> Result<Self> {
        Self::new(t1, cluster_load(1, ranks_per_sim, cluster)?, beta)
    }

    /// `ρ_N = N·ρ_1`.
    pub fn load(&self, n_sims: u32) -> f64 {
        f64::from(n_sims) * self.rho1
    }

    pub fn predict_makespan(&self, n_sims: u32) -> f64 {
        self.t1 * (1.0 + self.beta * (self.load(n_sims) - self.rho1))
    }

    pub fn throughput(&self, n_sims: u32) -> f64 {
        f64::from(n_sims) / (1.0 + self.beta * (self.load(n_sims) - self.rho1))
    }
}

pub fn measured_throughput(n_sims: u32, t1: f64, t_n: f64) -> f64 {
    f64::from(n_sims) * t1 / t_n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPoint {
    pub n: u32,
    pub makespan: f64,
    pub ranks_per_sim: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub stderr: f64,
    /// Points with N >= 2 that carried signal.
    pub used: usize,
}

/// Least squares through the origin on `x = ρ_N − ρ_1`, `y = T_N/T_1 − 1`:
/// `β = Σxy / Σx²`. The standard error uses `m − 1` degrees of freedom for
/// `m` points with `N >= 2`, and is zero for a single point.
pub fn fit_beta(points: &[MeasuredPoint], t1: f64, cluster: &ClusterSpec) -> Result<BetaFit> {
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(ModelError::NonPositive("T1"));
    }
    let mut xy = Vec::new();
    for p in points.iter().filter(|p| p.n >= 2) {
        if !(p.makespan > 0.0 && p.makespan.is_finite()) {
            return Err(ModelError::NonPositive("makespan"));
        }
        let x = cluster_load(p.n, p.ranks_per_sim, cluster)? - cluster_load(1, p.ranks_per_sim, cluster)?;
        xy.push((x, p.makespan / t1 - 1.0));
    }
    if xy.is_empty() {
        return Err(ModelError::NoSignal);
    }
    let sxx: f64 = xy.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = xy.iter().map(|(x, y)| x * y).sum();
    let beta = sxy / sxx;
    if beta < 0.0 {
        return Err(ModelError::NegativeBeta(beta));
    }
    let m = xy.len();
    let stderr = if m > 1 {
        let rss: f64 = xy.iter().map(|(x, y)| (y - beta * x).powi(2)).sum();
        (rss / (m - 1) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(BetaFit {
        beta,
        stderr,
        used: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub n: u32,
    pub makespan: f64,
    pub throughput: f64,
    pub efficiency: f64,
    pub degradation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoTable {
    pub rows: Vec<ParetoRow>,
    /// The N >= 2 just before the steepest efficiency drop between
    /// consecutive measured N; `None` when efficiency never drops.
    pub knee: Option<u32>,
}

fn check_sorted_with_baseline(points: &[MeasuredPoint]) -> Result<()> {
    if points.windows(2).any(|w| w[0].n >= w[1].n) {
        return Err(ModelError::Unsorted);
    }
    if points.first().map(|p| p.n) != Some(1) {
        return Err(ModelError::MissingBaseline);
    }
    Ok(())
}

pub fn pareto_table(points: &[MeasuredPoint], t1: f64) -> Result<ParetoTable> {
    check_sorted_with_baseline(points)?;
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(ModelError::NonPositive("T1"));
    }
    let rows: Vec<ParetoRow> = points
        .iter()
        .map(|p| {
            let throughput = measured_throughput(p.n, t1, p.makespan);
            ParetoRow {
                n: p.n,
                makespan: p.makespan,
                throughput,
                efficiency: throughput / f64::from(p.n),
                degradation: (p.makespan - t1) / t1,
            }
        })
        .collect();

    let mut knee = None;
    let mut steepest = 0.0;
    for w in rows.windows(2).filter(|w| w[0].n >= 2) {
        let drop = w[0].efficiency - w[1].efficiency;
        // Strict comparison keeps the smaller N on ties.
        if drop > steepest + 1e-12 {
            steepest = drop;
            knee = Some(w[0].n);
        }
    }
    Ok(ParetoTable { rows, knee })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub n: u32,
    pub predicted: f64,
    pub measured: Option<f64>,
    /// `(predicted − measured) / measured`.
    pub error: Option<f64>,
    pub predicted_throughput: f64,
    /// Beyond the largest measured N.
    pub illustrative: bool,
}

pub fn prediction_table(model: &ContentionModel, points: &[MeasuredPoint], up_to: u32) -> Vec<PredictionRow> {
    let max_measured = points.iter().map(|p| p.n).max().unwrap_or(0);
    (1..=up_to.max(max_measured))
        .map(|n| {
            let predicted = model.predict_makespan(n);
            let measured = points.iter().find(|p| p.n == n).map(|p| p.makespan);
            PredictionRow {
                n,
                predicted,
                measured,
                error: measured.map(|m| (predicted - m) / m),
                predicted_throughput: model.throughput(n),
                illustrative: n > max_measured,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub n: u32,
    pub total_time: f64,
    pub total_cost: f64,
    pub cost_per_sim: f64,
    /// `None` for the single-simulation baseline.
    pub saving_vs_single: Option<f64>,
}

pub fn cost_table(points: &[MeasuredPoint], t1: f64, cluster: &ClusterSpec) -> Result<Vec<CostRow>> {
    check_sorted_with_baseline(points)?;
    let baseline = t1 / 3600.0 * cluster.price_per_hour;
    Ok(points
        .iter()
        .map(|p| {
            let total_cost = p.makespan / 3600.0 * cluster.price_per_hour;
            let cost_per_sim = total_cost / f64::from(p.n);
            CostRow {
                n: p.n,
                total_time: p.makespan,
                total_cost,
                cost_per_sim,
                saving_vs_single: (p.n > 1 && baseline > 0.0).then(|| 1.0 - cost_per_sim / baseline),
            }
        })
        .collect())
}

pub fn pareto_csv(table: &ParetoTable) -> String {
    let mut out = String::from("n,makespan_s,throughput,efficiency,degradation,knee\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{:.1},{:.4},{:.4},{:.4},{}",
            r.n,
            r.makespan,
            r.throughput,
            r.efficiency,
            r.degradation,
            table.knee == Some(r.n)
        );
    }
    out
}

pub fn prediction_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("n,predicted_s,measured_s,error,predicted_throughput,illustrative\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.1},{},{},{:.4},{}",
            r.n,
            r.predicted,
            r.measured.map_or(String::new(), |m| format!("{m:.1}")),
            r.error.map_or(String::new(), |e| format!("{e:.4}")),
            r.predicted_throughput,
            r.illustrative
        );
    }
    out
}

pub fn cost_csv(rows: &[CostRow]) -> String {
    let mut out = String::from("n,total_time_s,total_cost,cost_per_sim,saving\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.0},{:.2},{:.2},{}",
            r.n,
            r.total_time,
            r.total_cost,
            r.cost_per_sim,
            r.saving_vs_single.map_or("baseline".to_string(), |s| format!("{s:.4}"))
        );
    }
    out
}

/// Parses `n,makespan_s` rows (header optional, `#` comments allowed).
pub fn parse_points_csv(text: &str, ranks_per_sim: u32) -> std::result::Result<Vec<MeasuredPoint>, String> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('n') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(format!("line {}: expected `n,makespan_s`", i + 1));
        }
        let n: u32 = cols[0]
            .parse()
            .map_err(|_| format!("line {}: bad N `{}`", i + 1, cols[0]))?;
        let makespan: f64 = cols[1]
            .parse()
            .map_err(|_| format!("line {}: bad makespan `{}`", i + 1, cols[1]))?;
        if n == 0 || !(makespan > 0.0 && makespan.is_finite()) {
            return Err(format!("line {}: N and makespan must be positive", i + 1));
        }
        points.push(MeasuredPoint {
            n,
            makespan,
            ranks_per_sim,
        });
    }
    points.sort_by_key(|p| p.n);
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAKESPANS: [f64; 5] = [1249.0, 1410.0, 1446.0, 1604.0, 1670.0];

    fn measured() -> Vec<MeasuredPoint> {
        MAKESPANS
            .iter()
            .enumerate()
            .map(|(i, &m)| MeasuredPoint {
                n: i as u32 + 1,
                makespan: m,
                ranks_per_sim: 16,
            })
            .collect()
    }

    fn c() -> ClusterSpec {
        ClusterSpec::reference()
    }

    #[test]
    fn load_examples() {
        assert!((cluster_load(1, 16, &c()).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((cluster_load(2, 16, &c()).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cluster_load(6, 16, &c()).unwrap(), 1.0);
        assert!(cluster_load(0, 16, &c()).is_err());
    }

    #[test]
    fn prediction_examples() {
        let m = ContentionModel::for_cluster(1249.0, 16, &c(), 0.773).unwrap();
        assert!((m.predict_makespan(2) - 1410.0).abs() < 0.5);
        let p5 = m.predict_makespan(5);
        assert!((p5 - 1893.0).abs() < 1.0);
        assert!(((p5 - 1670.0) / 1670.0 - 0.134).abs() < 0.001);
        let flat = ContentionModel::new(1249.0, 1.0 / 6.0, 0.0).unwrap();
        assert!((1..=8).all(|n| flat.predict_makespan(n) == 1249.0));
        assert!((1..=8).all(|n| flat.throughput(n) == f64::from(n)));
        assert!(ContentionModel::new(1.0, 0.5, -0.1).is_err());
        assert!(ContentionModel::new(0.0, 0.5, 0.1).is_err());
        assert!(ContentionModel::new(1.0, 1.5, 0.1).is_err());
    }

    #[test]
    fn measured_throughput_examples() {
        assert!((measured_throughput(2, 1249.0, 1410.0) - 1.77).abs() < 0.005);
        assert!((measured_throughput(5, 1249.0, 1670.0) - 3.74).abs() < 0.005);
        assert!((measured_throughput(2, 1179.0, 1286.0) - 1.83).abs() < 0.005);
        assert_eq!(measured_throughput(1, 1249.0, 1249.0), 1.0);
    }

    #[test]
    fn fit_examples() {
        let two = [MeasuredPoint { n: 2, makespan: 1410.0, ranks_per_sim: 16 }];
        let f = fit_beta(&two, 1249.0, &c()).unwrap();
        assert!((f.beta - 0.773).abs() < 0.001);
        assert_eq!(f.stderr, 0.0);

        // Closed form Σxy/Σx² worked by hand: 0.440886 / 0.833333.
        let f = fit_beta(&measured(), 1249.0, &c()).unwrap();
        assert!((f.beta - 0.529).abs() < 0.001, "{}", f.beta);
        assert!(f.stderr > 0.0 && f.stderr < 0.05);
        assert_eq!(f.used, 4);

        let model = ContentionModel::for_cluster(1000.0, 16, &c(), 0.4).unwrap();
        let synth: Vec<_> = (1..=5)
            .map(|n| MeasuredPoint { n, makespan: model.predict_makespan(n), ranks_per_sim: 16 })
            .collect();
        let f = fit_beta(&synth, 1000.0, &c()).unwrap();
        assert!((f.beta - 0.4).abs() < 1e-12);
        assert!(f.stderr < 1e-9);
    }

    #[test]
    fn fit_errors() {
        let only_one = [MeasuredPoint { n: 1, makespan: 1249.0, ranks_per_sim: 16 }];
        assert_eq!(fit_beta(&only_one, 1249.0, &c()), Err(ModelError::NoSignal));
        let faster = [MeasuredPoint { n: 2, makespan: 1000.0, ranks_per_sim: 16 }];
        assert!(matches!(fit_beta(&faster, 1249.0, &c()), Err(ModelError::NegativeBeta(_))));
    }

    #[test]
    fn pareto_examples() {
        let t = pareto_table(&measured(), 1249.0).unwrap();
        let eff: Vec<i64> = t.rows[1..].iter().map(|r| (r.efficiency * 100.0).round() as i64).collect();
        assert_eq!(eff, vec![89, 86, 78, 75]);
        assert_eq!(t.knee, Some(3));
        assert!((t.rows[2].degradation - 0.158).abs() < 0.001);
        assert!((t.rows[4].degradation - 0.337).abs() < 0.001);

        let ideal: Vec<_> = (1..=5).map(|n| MeasuredPoint { n, makespan: 100.0, ranks_per_sim: 16 }).collect();
        let t = pareto_table(&ideal, 100.0).unwrap();
        assert!(t.rows.iter().all(|r| r.efficiency == 1.0));
        assert_eq!(t.knee, None);

        assert_eq!(pareto_table(&measured()[1..], 1249.0), Err(ModelError::MissingBaseline));
        let mut rev = measured();
        rev.reverse();
        assert_eq!(pareto_table(&rev, 1249.0), Err(ModelError::Unsorted));
    }

    #[test]
    fn cost_examples() {
        let rows = cost_table(&measured(), 1249.0, &c()).unwrap();
        assert!((rows[0].total_cost - 1.43).abs() < 0.005);
        assert!((rows[0].cost_per_sim - 1.43).abs() < 0.005);
        assert_eq!(rows[0].saving_vs_single, None);
        assert!((rows[1].total_cost - 1.61).abs() < 0.005);
        assert!((rows[1].cost_per_sim - 0.81).abs() < 0.005);
        assert!((rows[1].saving_vs_single.unwrap() - 0.44).abs() < 0.01);
        assert!((rows[4].cost_per_sim - 0.38).abs() < 0.005);
        assert!((rows[4].saving_vs_single.unwrap() - 0.73).abs() < 0.01);
        assert!(rows.iter().all(|r| (r.cost_per_sim - r.total_cost / f64::from(r.n)).abs() < 1e-15));
    }

    #[test]
    fn prediction_rows_flag_extrapolation() {
        let m = ContentionModel::for_cluster(1249.0, 16, &c(), 0.524).unwrap();
        let rows = prediction_table(&m, &measured(), 6);
        assert_eq!(rows.len(), 6);
        assert!(rows[..5].iter().all(|r| !r.illustrative && r.error.is_some()));
        assert!(rows[5].illustrative && rows[5].measured.is_none());
        assert!(prediction_csv(&rows).lines().nth(6).unwrap().ends_with("true"));
    }

    #[test]
    fn points_csv_parsing() {
        let p = parse_points_csv("n,makespan_s\n2,1410\n1,1249\n", 16).unwrap();
        assert_eq!(p[0].n, 1);
        assert_eq!(p[1].makespan, 1410.0);
        assert!(parse_points_csv("1;1249\n", 16).is_err());
        assert!(parse_points_csv("x,1249\n", 16).is_err());
        assert!(parse_points_csv("0,1249\n", 16).is_err());
    }
}
