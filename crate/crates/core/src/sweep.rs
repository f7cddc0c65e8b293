//! Cartesian parameter sweeps and CSV result tables.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{apply, format_float, render_value, AxisValue, ClusterConfig, Normalize, Point, SweepSpec};
use crate::engine::{simulate_iteration, IterationResult};
use crate::error::{Error, Result};
use crate::strategy::{build_trace, ParallelConfig, ZeroStage};
use crate::workload::{build_graph, LayerGraph, ModelHyperParams, Phase};

/// Builds the trace for one point and simulates it.
pub fn simulate_point(hp: &ModelHyperParams, graph: &LayerGraph, point: &Point) -> Result<IterationResult> {
    hp.validate(point.config.mp)?;
    let node = point.cluster.node_spec();
    let cluster = point.cluster.cluster_spec();
    let trace = build_trace(graph, point.config, point.zero, &node)?;
    simulate_iteration(&trace, point.config, &cluster, &node)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Rendered swept values, in the table's column order.
    pub values: Vec<String>,
    pub result: IterationResult,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    /// Swept parameter paths, sorted.
    pub columns: Vec<String>,
    pub normalize: Option<Normalize>,
    pub rows: Vec<Row>,
}

impl ResultTable {
    /// Table holding a single simulated point, labelled by strategy and ZeRO stage.
    pub fn single(result: IterationResult) -> Self {
        let values = vec![result.config.to_string(), result.zero.index().to_string()];
        ResultTable {
            columns: vec!["mp_dp".into(), "zero".into()],
            normalize: None,
            rows: vec![Row { values, result, normalized: None }],
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = self.columns.clone();
        for p in Phase::ALL {
            h.push(format!("{}_compute_s", p.as_str()));
            h.push(format!("{}_exposed_s", p.as_str()));
        }
        h.extend(["iteration_s", "footprint_bytes", "feasible"].map(String::from));
        if let Some(n) = self.normalize {
            h.push(n.column().into());
        }
        h
    }

    fn record(&self, row: &Row) -> Vec<String> {
        let mut r = row.values.clone();
        match &row.result.breakdown {
            Some(b) => {
                for p in Phase::ALL {
                    let mut t = b.phase_totals(p);
                    if p == Phase::Wg {
                        t.compute_s += b.optimizer_s;
                    }
                    r.push(format_float(t.compute_s));
                    r.push(format_float(t.exposed_s));
                }
                r.push(format_float(b.totals.iteration_s));
            }
            None => r.extend(std::iter::repeat_n(String::new(), 7)),
        }
        r.push(row.result.footprint_bytes.to_string());
        r.push(row.result.feasible.to_string());
        if self.normalize.is_some() {
            r.push(row.normalized.map(format_float).unwrap_or_default());
        }
        r
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for row in &self.rows {
            w.write_record(self.record(row))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `table` as CSV to `path`.
pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::config("sweep", "result table is empty"));
    }
    let file = std::fs::File::create(path)?;
    table.write_csv(std::io::BufWriter::new(file))
}

fn cartesian(spec: &SweepSpec) -> Vec<Vec<&AxisValue>> {
    let mut points: Vec<Vec<&AxisValue>> = vec![Vec::new()];
    for axis in &spec.axes {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    points
}

fn base_point(hp: &ModelHyperParams, cluster: &ClusterConfig, spec: &SweepSpec) -> Result<Point> {
    let config = match &spec.mp_dp {
        Some(s) => s.parse::<ParallelConfig>()?,
        None => cluster.default_strategy(hp.kind)?,
    };
    Ok(Point { cluster: cluster.clone(), config, zero: spec.zero })
}

fn normalized(kind: Normalize, reference: f64, row: f64) -> f64 {
    match kind {
        Normalize::Speedup => reference / row,
        Normalize::Runtime => row / reference,
    }
}

/// Runs every point of the sweep on a pool of `jobs` workers. Rows follow
/// axis order with the first axis outermost.
pub fn run_sweep(
    hp: &ModelHyperParams,
    cluster: &ClusterConfig,
    spec: &SweepSpec,
    base_dir: &Path,
    jobs: usize,
) -> Result<ResultTable> {
    spec.validate()?;
    let graph = build_graph(hp)?;
    let base = base_point(hp, cluster, spec)?;

    let mut order: Vec<usize> = (0..spec.axes.len()).collect();
    order.sort_by(|&a, &b| spec.axes[a].path.cmp(&spec.axes[b].path));
    let columns = order.iter().map(|&i| spec.axes[i].path.clone()).collect();

    let mut points = Vec::new();
    for combo in cartesian(spec) {
        let mut p = base.clone();
        for (axis, value) in spec.axes.iter().zip(&combo) {
            apply(&mut p, &axis.path, value, spec, base_dir)?;
        }
        let values = order.iter().map(|&i| render_value(&spec.axes[i].path, combo[i])).collect::<Vec<_>>();
        points.push((p, values));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let results: Vec<Result<IterationResult>> =
        pool.install(|| points.par_iter().map(|(p, _)| simulate_point(hp, &graph, p)).collect());

    let reference = match spec.normalize {
        Some(_) => {
            let mut p = base.clone();
            for (path, value) in &spec.reference {
                apply(&mut p, path, value, spec, base_dir)?;
            }
            simulate_point(hp, &graph, &p)?.iteration_s()
        }
        None => None,
    };

    let mut rows = Vec::with_capacity(points.len());
    for ((_, values), result) in points.into_iter().zip(results) {
        let result = result?;
        let norm = match (spec.normalize, reference, result.iteration_s()) {
            (Some(kind), Some(r), Some(t)) => Some(normalized(kind, r, t)),
            _ => None,
        };
        rows.push(Row { values, result, normalized: norm });
    }
    Ok(ResultTable { columns, normalize: spec.normalize, rows })
}

/// Simulates `hp` on `cluster` for one strategy.
pub fn simulate_one(
    hp: &ModelHyperParams,
    cluster: &ClusterConfig,
    config: Option<ParallelConfig>,
    zero: ZeroStage,
) -> Result<IterationResult> {
    let graph = build_graph(hp)?;
    let config = match config {
        Some(c) => c,
        None => cluster.default_strategy(hp.kind)?,
    };
    simulate_point(hp, &graph, &Point { cluster: cluster.clone(), config, zero })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{from_toml, Axis};
    use crate::workload::ModelKind;

    fn model() -> ModelHyperParams {
        ModelHyperParams {
            name: None,
            kind: ModelKind::Transformer,
            d_model: 256,
            n_stacks: 2,
            n_heads: 16,
            d_k: 16,
            d_v: 16,
            ff_dim: 1024,
            vocab: 1024,
            seq: 64,
            mini_batch: 1,
            global_batch: 64,
            bytes_per_element: 2,
            dlrm: None,
        }
    }

    fn cluster() -> ClusterConfig {
        from_toml(
            r#"
name = "small"
[node]
peak_tflops = 100.0
on_chip_mb = 1.0
lm_capacity_gb = 16.0
lm_bw_gbps = 1000.0
[network]
nodes = 16
pod_size = 4
topology = "two_level_switch"
intra_bw_gbps = 100.0
inter_bw_gbps = 10.0
collective = "hierarchical"
"#,
        )
        .unwrap()
    }

    fn axis(path: &str, values: Vec<AxisValue>) -> Axis {
        Axis { path: path.into(), values }
    }

    #[test]
    fn empty_axes_give_the_base_point() {
        let t = run_sweep(&model(), &cluster(), &SweepSpec::default(), Path::new("."), 1).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.columns.is_empty());
        assert_eq!(t.rows[0].result.config.to_string(), "MP4_DP4");
    }

    #[test]
    fn product_order_and_columns() {
        let spec = SweepSpec {
            axes: vec![
                axis("node.lm_bw_gbps", vec![AxisValue::Number(500.0), AxisValue::Number(1000.0)]),
                axis("mp_dp", ["16x1", "4x4", "1x16"].map(|s| AxisValue::Text(s.into())).to_vec()),
            ],
            normalize: Some(Normalize::Speedup),
            reference: [("mp_dp".to_string(), AxisValue::Text("4x4".into()))].into(),
            ..Default::default()
        };
        let t = run_sweep(&model(), &cluster(), &spec, Path::new("."), 4).unwrap();
        assert_eq!(t.columns, ["mp_dp", "node.lm_bw_gbps"]);
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.rows[0].values, ["MP16_DP1", "500"]);
        assert_eq!(t.rows[2].values, ["MP1_DP16", "500"]);
        assert_eq!(t.rows[3].values, ["MP16_DP1", "1000"]);
        // The reference point (base bandwidth 1000, MP4_DP4) normalizes to one.
        assert_eq!(t.rows[4].normalized, Some(1.0));
    }

    #[test]
    fn csv_shape() {
        let t = run_sweep(&model(), &cluster(), &SweepSpec::default(), Path::new("."), 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "fp_compute_s,fp_exposed_s,ig_compute_s,ig_exposed_s,wg_compute_s,wg_exposed_s,iteration_s,footprint_bytes,feasible"
        );
    }

    #[test]
    fn infeasible_rows_are_kept() {
        let spec = SweepSpec {
            axes: vec![axis("node.lm_capacity_gb", vec![AxisValue::Number(1e-6), AxisValue::Number(16.0)])],
            ..Default::default()
        };
        let t = run_sweep(&model(), &cluster(), &spec, Path::new("."), 2).unwrap();
        assert!(!t.rows[0].result.feasible);
        assert!(t.rows[1].result.feasible);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",false"));
        assert!(text.lines().nth(1).unwrap().contains(",,,,,,,"));
    }

    #[test]
    fn unknown_path_is_rejected() {
        let spec = SweepSpec { axes: vec![axis("node.speed", vec![AxisValue::Number(1.0)])], ..Default::default() };
        assert!(matches!(run_sweep(&model(), &cluster(), &spec, Path::new("."), 1), Err(Error::Config { .. })));
    }
}
