//! Desk-scale sensitivity sweeps: a synthetic classification task, a
//! fixed logistic-regression learner, and noise-parameter grids under the
//! train, test and train+test injection scenarios.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::pipeline::{fit, Config, PreparedSet};
use crate::sampling::{dist, Pcg64, SamplingPlan, SamplingType, SeedSequence};
use crate::table::{Cell, DataTable};

pub const LABEL: &str = "label";
pub const LEARNING_RATE: f64 = 0.1;
pub const ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_numeric: usize,
    pub n_categoric: usize,
    pub n_levels: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            seed: 7,
            n_train: 1000,
            n_test: 1000,
            n_numeric: 4,
            n_categoric: 2,
            n_levels: 5,
        }
    }
}

/// Generated data; both tables carry the `label` column.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub train: DataTable,
    pub test: DataTable,
    /// Noise-free label probabilities.
    pub truth_train: Vec<f64>,
    pub truth_test: Vec<f64>,
}

impl SyntheticTask {
    pub fn numeric_columns(&self) -> Vec<String> {
        (0..self.spec.n_numeric).map(|j| format!("num_{j}")).collect()
    }

    pub fn categoric_columns(&self) -> Vec<String> {
        (0..self.spec.n_categoric).map(|k| format!("cat_{k}")).collect()
    }
}

fn seeded(seed: u64, label: &str) -> Pcg64 {
    let words = [seed as u32, (seed >> 32) as u32];
    Pcg64::from_seed_sequence(&SeedSequence::new(&words, &[crate::sampling::session::fnv1a(label)]))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Latent standard normal features and categoric effects feed a linear
/// logit; labels are Bernoulli draws of its sigmoid.
pub fn generate_task(spec: &TaskSpec) -> Result<SyntheticTask> {
    if spec.n_train == 0 || spec.n_test == 0 || spec.n_levels == 0 {
        return Err(Error::Config("task sizes must be at least 1".into()));
    }
    let mut rng = seeded(spec.seed, "task");
    let weights: Vec<f64> = (0..spec.n_numeric).map(|_| dist::standard_normal(&mut rng)).collect();
    let effects: Vec<Vec<f64>> = (0..spec.n_categoric)
        .map(|_| (0..spec.n_levels).map(|_| 1.5 * dist::standard_normal(&mut rng)).collect())
        .collect();
    let mut make = |n: usize| -> Result<(DataTable, Vec<f64>)> {
        let mut names = Vec::new();
        let mut columns: Vec<Vec<Cell>> = Vec::new();
        let mut logits = vec![0.0; n];
        for (j, w) in weights.iter().enumerate() {
            let col: Vec<f64> = (0..n).map(|_| dist::standard_normal(&mut rng)).collect();
            for (l, x) in logits.iter_mut().zip(&col) {
                *l += w * x;
            }
            names.push(format!("num_{j}"));
            columns.push(col.into_iter().map(Cell::Number).collect());
        }
        for (k, eff) in effects.iter().enumerate() {
            let levels: Vec<usize> = (0..n).map(|_| dist::below(&mut rng, eff.len() as u64) as usize).collect();
            for (l, &c) in logits.iter_mut().zip(&levels) {
                *l += eff[c];
            }
            names.push(format!("cat_{k}"));
            columns.push(levels.iter().map(|c| Cell::Text(format!("L{c}"))).collect());
        }
        let truth: Vec<f64> = logits.iter().map(|&z| sigmoid(2.0 * z)).collect();
        let labels = truth
            .iter()
            .map(|&p| Cell::Number(if dist::uniform01(&mut rng) < p { 1.0 } else { 0.0 }))
            .collect();
        names.push(LABEL.to_string());
        columns.push(labels);
        Ok((DataTable::new(names, columns)?, truth))
    };
    let (train, truth_train) = make(spec.n_train)?;
    let (test, truth_test) = make(spec.n_test)?;
    Ok(SyntheticTask {
        spec: spec.clone(),
        train,
        test,
        truth_train,
        truth_test,
    })
}

/// Where noise is injected; maps to the DP, DT and DB root prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Train,
    Test,
    Traintest,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Train, Scenario::Test, Scenario::Traintest];

    pub fn parse(s: &str) -> Option<Scenario> {
        Some(match s {
            "train" => Scenario::Train,
            "test" => Scenario::Test,
            "traintest" => Scenario::Traintest,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Train => "train",
            Scenario::Test => "test",
            Scenario::Traintest => "traintest",
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Scenario::Train => "DP",
            Scenario::Test => "DT",
            Scenario::Traintest => "DB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Sigma,
    FlipProb,
}

impl Axis {
    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "sigma" => Some(Axis::Sigma),
            "flip_prob" => Some(Axis::FlipProb),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub grid: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub reps: usize,
    /// Numeric injection ratio used while sweeping sigma.
    pub base_flip_prob: f64,
    /// First entropy seed; repetition `r` uses `[seed, r]`.
    pub seed: u32,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            axis: Axis::Sigma,
            grid: vec![0.0, 0.06, 0.3, 1.0],
            scenarios: Scenario::ALL.to_vec(),
            reps: 20,
            base_flip_prob: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario: Scenario,
    pub value: f64,
    pub rep: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub train_activations: u64,
    pub test_activations: u64,
}

/// Full-batch gradient descent logistic regression with fixed settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn train(x: &[Vec<f64>], y: &[f64]) -> LogisticModel {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..ITERATIONS {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (row, &t) in x.iter().zip(y) {
                let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let err = sigmoid(z) - t;
                for (g, a) in gw.iter_mut().zip(row) {
                    *g += err * a;
                }
                gb += err;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= LEARNING_RATE * g / n;
            }
            b -= LEARNING_RATE * gb / n;
        }
        LogisticModel { weights: w, bias: b }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.bias + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>())
    }
}

pub fn accuracy(probs: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let hits = probs.iter().zip(y).filter(|(&p, &t)| (p >= 0.5) == (t >= 0.5)).count();
    hits as f64 / y.len() as f64
}

/// Area under the ROC curve by average ranks; 0.5 when one class is absent.
pub fn auc(probs: &[f64], y: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut ranks = vec![0.0; probs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = y.iter().filter(|&&t| t >= 0.5).count() as f64;
    let neg = y.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    let rank_sum: f64 = ranks.iter().zip(y).filter(|(_, &t)| t >= 0.5).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

fn matrix(set: &PreparedSet) -> (Vec<Vec<f64>>, Vec<f64>) {
    let t = &set.table;
    let rows = (0..t.n_rows())
        .map(|i| (0..t.n_cols()).map(|j| t.column_at(j)[i].as_f64().unwrap_or(0.0)).collect())
        .collect();
    let y = set
        .labels
        .as_ref()
        .map(|(_, c)| c.iter().map(|v| v.as_f64().unwrap_or(0.0)).collect())
        .unwrap_or_default();
    (rows, y)
}

/// Pipeline configuration for one sweep point.
pub fn point_config(task: &SyntheticTask, sweep: &SweepSpec, scenario: Scenario, value: f64) -> Result<Config> {
    let p = scenario.prefix();
    let (numeric, categoric) = match sweep.axis {
        Axis::Sigma => (
            json!({"sigma": value, "test_sigma": value, "flip_prob": sweep.base_flip_prob, "test_flip_prob": sweep.base_flip_prob}),
            json!({"flip_prob": 0.0, "test_flip_prob": 0.0}),
        ),
        Axis::FlipProb => (
            json!({"flip_prob": value, "test_flip_prob": value}),
            json!({"flip_prob": value, "test_flip_prob": value}),
        ),
    };
    let mut assigncat = serde_json::Map::new();
    if task.spec.n_numeric > 0 {
        assigncat.insert(format!("{p}nb"), json!(task.numeric_columns()));
    }
    if task.spec.n_categoric > 0 {
        assigncat.insert(format!("{p}oh"), json!(task.categoric_columns()));
    }
    Config::from_json(json!({
        "labels_column": LABEL,
        "shuffletrain": false,
        "assigncat": Value::Object(assigncat),
        "assignparam": {
            "default_assignparam": {
                format!("{p}nb"): numeric,
                format!("{p}oh"): categoric,
            }
        }
    }))
}

/// Fits the pipeline and the model for one (scenario, value, rep).
pub fn run_point(task: &SyntheticTask, sweep: &SweepSpec, scenario: Scenario, value: f64, rep: usize) -> Result<SweepResult> {
    let config = point_config(task, sweep, scenario, value)?;
    let plan = SamplingPlan::primary(SamplingType::Default, vec![sweep.seed, rep as u32]);
    let out = fit(&task.train, Some(&task.test), &config, &plan)?;
    let test = out.test.as_ref().ok_or_else(|| Error::Internal("test set not prepared".into()))?;
    let (xtr, ytr) = matrix(&out.train);
    let (xte, yte) = matrix(test);
    let model = LogisticModel::train(&xtr, &ytr);
    let probs: Vec<f64> = xte.iter().map(|r| model.predict(r)).collect();
    Ok(SweepResult {
        scenario,
        value,
        rep,
        accuracy: accuracy(&probs, &yte),
        auc: auc(&probs, &yte),
        train_activations: out.train.activations.values().sum(),
        test_activations: test.activations.values().sum(),
    })
}

pub fn run_sweep(task: &SyntheticTask, sweep: &SweepSpec) -> Result<Vec<SweepResult>> {
    if sweep.grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut out = Vec::new();
    for &scenario in &sweep.scenarios {
        for &value in &sweep.grid {
            for rep in 0..sweep.reps {
                out.push(run_point(task, sweep, scenario, value, rep)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Auc,
}

impl Metric {
    fn of(self, r: &SweepResult) -> f64 {
        match self {
            Metric::Accuracy => r.accuracy,
            Metric::Auc => r.auc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub scenario: Scenario,
    pub value: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error per (scenario, value), in first-seen order.
pub fn curves(results: &[SweepResult], metric: Metric) -> Vec<CurvePoint> {
    let mut keys: Vec<(Scenario, f64)> = Vec::new();
    for r in results {
        if !keys.iter().any(|&(s, v)| s == r.scenario && v == r.value) {
            keys.push((r.scenario, r.value));
        }
    }
    keys.into_iter()
        .map(|(scenario, value)| {
            let xs: Vec<f64> = results
                .iter()
                .filter(|r| r.scenario == scenario && r.value == value)
                .map(|r| metric.of(r))
                .collect();
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            CurvePoint {
                scenario,
                value,
                mean,
                stderr,
                n,
            }
        })
        .collect()
}

pub fn curves_csv(results: &[SweepResult], metric: Metric) -> String {
    let mut s = String::from("scenario,value,mean,stderr,n\n");
    for p in curves(results, metric) {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{}", p.scenario.name(), p.value, p.mean, p.stderr, p.n);
    }
    s
}

pub fn emit_curves(results: &[SweepResult], metric: Metric, path: impl AsRef<Path>) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Config("no sweep results to emit".into()));
    }
    let path = path.as_ref();
    std::fs::write(path, curves_csv(results, metric)).map_err(|e| Error::io(path, e))
}

/// P(X >= k) for X ~ Binomial(n, 1/2).
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    // log C(n, i) accumulated incrementally
    let mut log_c = 0.0f64;
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            log_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (log_c - n as f64 * std::f64::consts::LN_2).exp();
        }
    }
    total.min(1.0)
}

/// Decreasing-trend check for one scenario: every step's mean is no
/// higher than the previous one, and the paired per-repetition changes
/// over all steps are predominantly decreases by a one-sided sign test.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendTest {
    pub means: Vec<f64>,
    pub decreases: usize,
    pub increases: usize,
    pub p_value: f64,
    pub monotone: bool,
}

impl TrendTest {
    pub fn passes(&self, alpha: f64) -> bool {
        self.monotone && self.p_value < alpha
    }
}

pub fn trend_test(results: &[SweepResult], scenario: Scenario, grid: &[f64], metric: Metric) -> TrendTest {
    let at = |v: f64| -> Vec<(usize, f64)> {
        let mut xs: Vec<(usize, f64)> = results
            .iter()
            .filter(|r| r.scenario == scenario && r.value == v)
            .map(|r| (r.rep, metric.of(r)))
            .collect();
        xs.sort_by_key(|x| x.0);
        xs
    };
    let series: Vec<Vec<(usize, f64)>> = grid.iter().map(|&v| at(v)).collect();
    let means: Vec<f64> = series
        .iter()
        .map(|s| s.iter().map(|x| x.1).sum::<f64>() / s.len().max(1) as f64)
        .collect();
    let (mut dec, mut inc) = (0, 0);
    for pair in series.windows(2) {
        for (a, b) in pair[0].iter().zip(&pair[1]) {
            if b.1 < a.1 {
                dec += 1;
            } else if b.1 > a.1 {
                inc += 1;
            }
        }
    }
    TrendTest {
        monotone: means.windows(2).all(|w| w[1] <= w[0]),
        means,
        decreases: dec,
        increases: inc,
        p_value: sign_test_p(dec, dec + inc),
    }
}
