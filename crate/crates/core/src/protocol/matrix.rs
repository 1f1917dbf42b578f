//! The full experiment matrix and its rendered tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CellProvenance, Context, FeatureStore, ModelKind, ProtocolSettings, Task};
use crate::features::DeviceConfig;
use crate::ingest::Mode;
use crate::ml::TaskKind;

/// What to run: every supported (task, device config, mode, model) cell,
/// once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixPlan {
    pub tasks: Vec<Task>,
    pub device_configs: Vec<DeviceConfig>,
    pub modes: Vec<Mode>,
    /// Empty means the published columns of each task.
    #[serde(default)]
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub selector_k: Vec<usize>,
    #[serde(default)]
    pub settings: ProtocolSettings,
}

impl MatrixPlan {
    pub fn models_for(&self, task: Task) -> Vec<ModelKind> {
        if self.models.is_empty() {
            ModelKind::defaults_for(task)
        } else {
            self.models.iter().copied().filter(|m| m.supports(task)).collect()
        }
    }

    pub fn cell_count(&self) -> usize {
        self.tasks.iter().map(|&t| self.models_for(t).len()).sum::<usize>() * self.device_configs.len() * self.modes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub task: Task,
    pub device_config: DeviceConfig,
    pub mode: Mode,
    pub model: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Done {
        /// One per seed, in seed order.
        metrics: Vec<f64>,
        mean: f64,
        std: f64,
        baseline: f64,
        /// Winning grid point per seed.
        winners: Vec<String>,
    },
    Failed(String),
}

impl CellOutcome {
    pub fn mean(&self) -> Option<f64> {
        match self {
            CellOutcome::Done { mean, .. } => Some(*mean),
            CellOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub key: CellKey,
    pub seed: u64,
    pub error: String,
    /// Numeric breakdown rather than a data problem.
    #[serde(default)]
    pub numeric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub plan: MatrixPlan,
    pub cells: BTreeMap<CellKey, CellOutcome>,
}

impl ResultTable {
    /// Aggregates per-seed runs into cells. A cell fails if any seed failed.
    pub fn assemble(plan: &MatrixPlan, cells: &[CellProvenance], failures: &[Failure]) -> Self {
        let mut runs: BTreeMap<CellKey, Vec<&CellProvenance>> = BTreeMap::new();
        for c in cells {
            let key = CellKey { task: c.task, device_config: c.device_config, mode: c.mode, model: c.model };
            runs.entry(key).or_default().push(c);
        }
        let mut out = BTreeMap::new();
        for (key, mut v) in runs {
            v.sort_by_key(|c| plan.seeds.iter().position(|s| *s == c.seed));
            let metrics: Vec<f64> = v.iter().map(|c| c.metric).collect();
            let n = metrics.len() as f64;
            let mean = metrics.iter().sum::<f64>() / n;
            let std = (metrics.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
            let baseline = v.iter().map(|c| c.baseline).sum::<f64>() / n;
            let winners = v
                .iter()
                .map(|c| {
                    let p = &c.grid[c.winner];
                    let params: Vec<String> = p.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    format!("k={} {}", p.selector_k, params.join(" ")).trim_end().to_string()
                })
                .collect();
            out.insert(key, CellOutcome::Done { metrics, mean, std, baseline, winners });
        }
        for f in failures {
            let prev = out.get(&f.key).and_then(|o| match o {
                CellOutcome::Failed(m) => Some(m.clone()),
                CellOutcome::Done { .. } => None,
            });
            let msg = format!("seed {}: {}", f.seed, f.error);
            out.insert(f.key, CellOutcome::Failed(prev.map_or(msg.clone(), |p| format!("{p}; {msg}"))));
        }
        Self { plan: plan.clone(), cells: out }
    }

    pub fn all_completed(&self) -> bool {
        self.cells.len() == self.plan.cell_count() && self.cells.values().all(|c| c.mean().is_some())
    }

    /// Key of the best completed cell of a task.
    pub fn best(&self, task: Task) -> Option<(CellKey, f64)> {
        let mut best: Option<(CellKey, f64)> = None;
        for (k, c) in self.cells.iter().filter(|(k, _)| k.task == task) {
            let Some(m) = c.mean() else { continue };
            let better = match best {
                None => true,
                Some((_, b)) => match task.kind() {
                    TaskKind::Classify => m > b,
                    TaskKind::Regress => m < b,
                },
            };
            if better {
                best = Some((*k, m));
            }
        }
        best
    }
}

/// Everything a matrix run leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutput {
    pub plan: MatrixPlan,
    pub cells: Vec<CellProvenance>,
    pub failures: Vec<Failure>,
}

impl MatrixOutput {
    pub fn table(&self) -> ResultTable {
        ResultTable::assemble(&self.plan, &self.cells, &self.failures)
    }
}

/// Runs the plan on `jobs` threads (0 = all cores). Per-cell errors are
/// recorded, not raised. Output order does not depend on scheduling.
pub fn full_matrix(store: &FeatureStore<'_>, plan: &MatrixPlan, jobs: usize) -> MatrixOutput {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    pool.install(|| run(store, plan))
}

fn run(store: &FeatureStore<'_>, plan: &MatrixPlan) -> MatrixOutput {
    let mut contexts = Vec::new();
    for &task in &plan.tasks {
        for &dc in &plan.device_configs {
            for &mode in &plan.modes {
                for &seed in &plan.seeds {
                    contexts.push((task, dc, mode, seed));
                }
            }
        }
    }
    let failed = |e: super::ProtocolError| (e.to_string(), e.is_numeric());
    let prepared: Vec<Result<Context, (String, bool)>> = contexts
        .par_iter()
        .map(|&(task, dc, mode, seed)| {
            Context::new(store, task, dc, mode, &plan.selector_k, seed, &plan.settings).map_err(failed)
        })
        .collect();
    let jobs: Vec<(usize, ModelKind)> = contexts
        .iter()
        .enumerate()
        .flat_map(|(i, (task, ..))| plan.models_for(*task).into_iter().map(move |m| (i, m)))
        .collect();
    let results: Vec<Result<CellProvenance, (String, bool)>> = jobs
        .par_iter()
        .map(|&(i, model)| {
            let ctx = prepared[i].as_ref().map_err(Clone::clone)?;
            let grid = plan.settings.grid_for(model, ctx.task);
            log::info!("{} {} {} {} seed {}", ctx.task, ctx.device_config, ctx.mode.as_str(), model, ctx.seed);
            ctx.evaluate(model, &grid, &plan.settings).map(|r| r.provenance).map_err(failed)
        })
        .collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for ((i, model), r) in jobs.into_iter().zip(results) {
        let (task, device_config, mode, seed) = contexts[i];
        match r {
            Ok(p) => cells.push(p),
            Err((error, numeric)) => {
                failures.push(Failure { key: CellKey { task, device_config, mode, model }, seed, error, numeric })
            }
        }
    }
    MatrixOutput { plan: plan.clone(), cells, failures }
}

/// Fit-log entries that mention a user they must not: any test user, or a
/// fold's own validation users. Empty means clean.
pub fn leakage_audit(cells: &[CellProvenance]) -> Vec<String> {
    let mut violations = Vec::new();
    for c in cells {
        let test: BTreeSet<&str> = c.test_users.iter().map(String::as_str).collect();
        for r in &c.fit_records {
            let held_out: BTreeSet<&str> = match r.stage.strip_prefix("fold").and_then(|i| i.parse::<usize>().ok()) {
                Some(i) => c.folds.get(i - 1).into_iter().flatten().map(String::as_str).collect(),
                None => BTreeSet::new(),
            };
            for u in &r.users {
                if test.contains(u.as_str()) || held_out.contains(u.as_str()) {
                    violations.push(format!(
                        "{} {} {} {} seed {}: {} {} fitted on {u}",
                        c.task,
                        c.device_config,
                        c.mode.as_str(),
                        c.model,
                        c.seed,
                        r.stage,
                        r.component
                    ));
                }
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Md,
    Csv,
    Both,
}

fn title(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
}

fn show(task: Task, v: f64) -> String {
    match task.kind() {
        TaskKind::Classify => format!("{:.2}", 100.0 * v),
        TaskKind::Regress => format!("{v:.2}"),
    }
}

/// Markdown table for one task in the published layout. The best cell is in
/// bold; with `overlay`, published values follow in brackets.
pub fn render_markdown(table: &ResultTable, task: Task, overlay: bool) -> String {
    let models = table.plan.models_for(task);
    let best = table.best(task).map(|(k, _)| k);
    let mut s = String::new();
    let unit = match task.kind() {
        TaskKind::Classify => "Accuracy (%)",
        TaskKind::Regress => "MAE",
    };
    let seeds: Vec<String> = table.plan.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "# {}\n", title(task.as_str()));
    let _ = writeln!(s, "{unit} on held-out users, seeds {}. Best cell in bold.", seeds.join(", "));
    if overlay {
        let _ = writeln!(s, "Published values in brackets.");
    }
    let _ = writeln!(s);
    let names: Vec<&str> = models.iter().map(|m| m.name()).collect();
    let _ = writeln!(s, "| Device | Setting | {} | Baseline |", names.join(" | "));
    let _ = writeln!(s, "|---|---|{}---|", "---|".repeat(models.len()));
    for &dc in &table.plan.device_configs {
        for &mode in &table.plan.modes {
            let mut row = vec![title(dc.as_str()), title(mode.as_str())];
            let mut baseline = None;
            for &model in &models {
                let key = CellKey { task, device_config: dc, mode, model };
                let mut cell = match table.cells.get(&key) {
                    Some(CellOutcome::Done { mean, std, metrics, baseline: b, .. }) => {
                        baseline.get_or_insert(*b);
                        let v = show(task, *mean);
                        let v = if metrics.len() > 1 { format!("{v} ± {}", show(task, *std)) } else { v };
                        if Some(key) == best {
                            format!("**{v}**")
                        } else {
                            v
                        }
                    }
                    Some(CellOutcome::Failed(_)) => "failed".into(),
                    None => "".into(),
                };
                if overlay {
                    if let Some(r) = task.reference(dc, mode, model.name()) {
                        let _ = write!(cell, " [{r:.2}]");
                    }
                }
                row.push(cell);
            }
            row.push(baseline.map_or(String::new(), |b| show(task, b)));
            let _ = writeln!(s, "| {} |", row.join(" | "));
        }
    }
    let failed: Vec<String> = table
        .cells
        .iter()
        .filter(|(k, _)| k.task == task)
        .filter_map(|(k, c)| match c {
            CellOutcome::Failed(m) => Some(format!("- {} {} {}: {m}", k.device_config, k.mode.as_str(), k.model)),
            CellOutcome::Done { .. } => None,
        })
        .collect();
    if !failed.is_empty() {
        let _ = writeln!(s, "\nFailures:\n\n{}", failed.join("\n"));
    }
    s
}

/// One row per cell of the task, full precision.
pub fn render_csv(table: &ResultTable, task: Task) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "device", "mode", "model", "status", "mean", "std", "baseline", "per_seed", "winners"])
        .expect("write to memory");
    for (k, c) in table.cells.iter().filter(|(k, _)| k.task == task) {
        let head = [task.as_str(), k.device_config.as_str(), k.mode.as_str(), k.model.name()];
        let rest: [String; 6] = match c {
            CellOutcome::Done { metrics, mean, std, baseline, winners } => [
                "ok".into(),
                mean.to_string(),
                std.to_string(),
                baseline.to_string(),
                metrics.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
                winners.join(";"),
            ],
            CellOutcome::Failed(m) => ["failed".into(), String::new(), String::new(), String::new(), String::new(), m.clone()],
        };
        w.write_record(head.iter().map(|s| s.to_string()).chain(rest)).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8")
}

/// Writes `<task>.md` / `<task>.csv` per task and `provenance.json` into `dir`.
pub fn write_results(dir: &Path, output: &MatrixOutput, format: OutputFormat, overlay: bool) -> Result<(), crate::Error> {
    let io = |p: &Path, e| crate::Error::Path(p.display().to_string(), e);
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let table = output.table();
    for &task in &output.plan.tasks {
        if matches!(format, OutputFormat::Md | OutputFormat::Both) {
            let p = dir.join(format!("{task}.md"));
            std::fs::write(&p, render_markdown(&table, task, overlay)).map_err(|e| io(&p, e))?;
        }
        if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
            let p = dir.join(format!("{task}.csv"));
            std::fs::write(&p, render_csv(&table, task)).map_err(|e| io(&p, e))?;
        }
    }
    let p = dir.join("provenance.json");
    let json = serde_json::to_string_pretty(output).expect("provenance serializes");
    std::fs::write(&p, json).map_err(|e| io(&p, e))?;
    Ok(())
}
