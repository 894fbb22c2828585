//! Fit and apply: schema resolution, validation split, noise phases,
//! augmentation, shuffling and basis persistence.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sampling::{
    compute_seed_report, dist, EntropySession, GeneratorSpec, Phase, SamplingPlan, SamplingType, SeedReport,
    SeedUsage, SeedingType,
};
use crate::table::{infer_feature_kind, Cell, DataTable, FeatureKind};
use crate::transforms::{ApplyCtx, TransformPlan};
use crate::tree::catalog::prefix_policy;
use crate::tree::{AssignParam, Catalog, FamilyTree, ProcessEntry};

pub const FORMAT_VERSION: u32 = 1;

/// Augmentation request. An integer count keeps one duplicate noiseless;
/// a float count noises every duplicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub count: u32,
    pub all_noisy: bool,
}

impl AugmentSpec {
    /// From a JSON number; `2` and `2.0` differ.
    pub fn from_number(n: &serde_json::Number) -> Result<AugmentSpec> {
        if let Some(c) = n.as_u64() {
            return Ok(AugmentSpec {
                count: u32::try_from(c).map_err(|_| Error::Config(format!("noise_augment {c} is too large")))?,
                all_noisy: false,
            });
        }
        match n.as_f64() {
            Some(f) if f >= 0.0 && f.fract() == 0.0 && f <= f64::from(u32::MAX) => Ok(AugmentSpec {
                count: f as u32,
                all_noisy: true,
            }),
            _ => Err(Error::Config(format!("noise_augment must be a nonnegative whole number, got {n}"))),
        }
    }

    /// From command-line text; a decimal point or exponent means float.
    pub fn parse(text: &str) -> Result<AugmentSpec> {
        let n: serde_json::Number = text
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid count {text:?}")))?;
        AugmentSpec::from_number(&n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraindataMode {
    #[default]
    Test,
    Train,
    TrainNoNoise,
    TestNoNoise,
}

impl TraindataMode {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "test" | "false" => TraindataMode::Test,
            "train" | "true" => TraindataMode::Train,
            "train_no_noise" => TraindataMode::TrainNoNoise,
            "test_no_noise" => TraindataMode::TestNoNoise,
            _ => return None,
        })
    }

    pub fn phase(self) -> Phase {
        match self {
            TraindataMode::Train | TraindataMode::TrainNoNoise => Phase::Train,
            TraindataMode::Test | TraindataMode::TestNoNoise => Phase::Test,
        }
    }

    pub fn noise(self) -> bool {
        matches!(self, TraindataMode::Train | TraindataMode::Test)
    }
}

/// `sampling_dict` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingDict {
    pub sampling_type: Option<String>,
    pub seeding_type: Option<String>,
    pub stochastic_count_safety_factor: Option<f64>,
    pub sampling_generator: Option<String>,
    pub extra_seed_generator: Option<String>,
}

fn generator(name: &str) -> Result<GeneratorSpec> {
    match name {
        "PCG64" | "pcg64" => Ok(GeneratorSpec::Pcg64),
        "MT19937" | "mt19937" => Ok(GeneratorSpec::Mersenne),
        other => Err(Error::Config(format!(
            "unknown generator {other:?} (expected PCG64 or MT19937; custom generators are library-only)"
        ))),
    }
}

impl SamplingDict {
    pub fn to_plan(&self, entropy_seeds: Vec<u32>) -> Result<SamplingPlan> {
        let mut plan = SamplingPlan {
            entropy_seeds,
            ..SamplingPlan::default()
        };
        if let Some(t) = &self.sampling_type {
            plan.sampling_type =
                SamplingType::parse(t).ok_or_else(|| Error::Config(format!("unknown sampling_type {t:?}")))?;
        }
        if let Some(s) = &self.seeding_type {
            plan.seeding_type =
                Some(SeedingType::parse(s).ok_or_else(|| Error::Config(format!("unknown seeding_type {s:?}")))?);
        }
        if let Some(sf) = self.stochastic_count_safety_factor {
            plan.stochastic_count_safety_factor = sf;
        }
        if let Some(g) = &self.sampling_generator {
            plan.sampling_generator = generator(g)?;
        }
        if let Some(g) = &self.extra_seed_generator {
            plan.extra_seed_generator = match g.as_str() {
                "off" => None,
                other => Some(generator(other)?),
            };
        }
        plan.validate()?;
        Ok(plan)
    }
}

/// The fit configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub labels_column: Option<String>,
    /// Root category to one column name or a list of them.
    pub assigncat: BTreeMap<String, Value>,
    pub assignparam: Value,
    pub transformdict: BTreeMap<String, FamilyTree>,
    pub processdict: BTreeMap<String, ProcessEntry>,
    pub powertransform: Option<String>,
    pub shuffletrain: bool,
    /// Fraction of training rows held out for validation.
    pub valpercent: f64,
    pub orig_headers: bool,
    pub noise_augment: Option<serde_json::Number>,
    #[serde(rename = "NArw_marker")]
    pub narw_marker: bool,
    pub sampling_dict: SamplingDict,
    pub entropy_seeds: Vec<u32>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            labels_column: None,
            assigncat: BTreeMap::new(),
            assignparam: Value::Null,
            transformdict: BTreeMap::new(),
            processdict: BTreeMap::new(),
            powertransform: None,
            shuffletrain: true,
            valpercent: 0.0,
            orig_headers: false,
            noise_augment: None,
            narw_marker: true,
            sampling_dict: SamplingDict::default(),
            entropy_seeds: Vec::new(),
        }
    }
}

impl Config {
    pub fn from_json(v: Value) -> Result<Config> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::from_json(v)
    }

    pub fn sampling_plan(&self) -> Result<SamplingPlan> {
        self.sampling_dict.to_plan(self.entropy_seeds.clone())
    }

    pub fn augment_spec(&self) -> Result<Option<AugmentSpec>> {
        self.noise_augment.as_ref().map(AugmentSpec::from_number).transpose()
    }

    /// Explicit assignments as column → category.
    fn explicit_roots(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (cat, cols) in &self.assigncat {
            let cols: Vec<String> = match cols {
                Value::String(s) => vec![s.clone()],
                Value::Array(items) => items
                    .iter()
                    .map(|v| {
                        v.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| Error::Config(format!("assigncat.{cat}: column names must be strings")))
                    })
                    .collect::<Result<_>>()?,
                other => return Err(Error::Config(format!("assigncat.{cat}: expected a column or list, got {other}"))),
            };
            for col in cols {
                if let Some(prev) = out.insert(col.clone(), cat.clone()) {
                    return Err(Error::Config(format!(
                        "column {col:?} assigned to both {prev:?} and {cat:?}"
                    )));
                }
            }
        }
        Ok(out)
    }
}

/// Root category for a column without an explicit assignment.
pub fn default_root(kind: FeatureKind, powertransform: Option<&str>) -> Result<String> {
    let Some(mode) = powertransform else {
        return Ok(match kind {
            FeatureKind::Numeric => "nmbr",
            FeatureKind::BooleanCategoric => "bnry",
            FeatureKind::Categoric => "1010",
            FeatureKind::Passthrough => "excl",
        }
        .to_string());
    };
    let (prefix, variant) = mode.split_at(mode.len().min(2));
    if prefix_policy(prefix).is_none() || !matches!(variant, "1" | "2") {
        return Err(Error::Config(format!("unknown powertransform {mode:?}")));
    }
    let family = match (kind, variant) {
        (FeatureKind::Numeric, "1") => "nb",
        (FeatureKind::Numeric, _) => "rt",
        (FeatureKind::BooleanCategoric, _) => "bn",
        (FeatureKind::Categoric, "1") => "10",
        (FeatureKind::Categoric, _) => "od",
        (FeatureKind::Passthrough, _) => return Ok("excl".into()),
    };
    Ok(format!("{prefix}{family}"))
}

/// Everything needed to prepare later data consistently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformBasis {
    pub format_version: u32,
    pub labels_column: Option<String>,
    pub shuffletrain: bool,
    pub orig_headers: bool,
    pub train_rows: u64,
    pub transformdict: BTreeMap<String, FamilyTree>,
    pub processdict: BTreeMap<String, ProcessEntry>,
    pub assignparam: Value,
    pub plan: TransformPlan,
    pub seed_report: SeedReport,
}

impl TransformBasis {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::BasisFormat(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<TransformBasis> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::BasisFormat(e.to_string()))?;
        let found = v
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::BasisFormat("missing format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::BasisVersion {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(v).map_err(|e| Error::BasisFormat(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TransformBasis> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TransformBasis::from_json(&text)
    }

    pub fn catalog(&self) -> Result<Catalog> {
        Catalog::builtin().with_user(self.transformdict.clone(), self.processdict.clone())
    }
}

/// A prepared feature table, its labels, and how much noise fired.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub table: DataTable,
    pub labels: Option<(String, Vec<Cell>)>,
    /// Activated entries per noise output column.
    pub activations: BTreeMap<String, u64>,
}

impl PreparedSet {
    /// Features followed by the label column, for writing out.
    pub fn with_labels(&self) -> Result<DataTable> {
        let Some((name, cells)) = &self.labels else {
            return Ok(self.table.clone());
        };
        let (mut names, mut columns, index) = self.table.clone().into_parts();
        names.push(name.clone());
        columns.push(cells.clone());
        DataTable::with_index(names, columns, index)
    }

    fn take_rows(&self, rows: &[usize]) -> PreparedSet {
        PreparedSet {
            table: self.table.take_rows(rows),
            labels: self
                .labels
                .as_ref()
                .map(|(n, c)| (n.clone(), rows.iter().map(|&r| c[r].clone()).collect())),
            activations: self.activations.clone(),
        }
    }

    fn total_activations(&self) -> u64 {
        self.activations.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub train: PreparedSet,
    pub validation: Option<PreparedSet>,
    pub test: Option<PreparedSet>,
    pub basis: TransformBasis,
    pub usage: SeedUsage,
}

/// Fits on `train` and prepares it, plus the validation split and an
/// optional test table on the same basis.
pub fn fit(train: &DataTable, test: Option<&DataTable>, config: &Config, sampling: &SamplingPlan) -> Result<FitOutput> {
    let mut session = EntropySession::new(sampling)?;
    if let Some(label) = &config.labels_column {
        if train.column(label).is_none() {
            return Err(Error::UnknownColumn(label.clone()));
        }
    }
    let explicit = config.explicit_roots()?;
    for col in explicit.keys() {
        if train.column(col).is_none() {
            return Err(Error::Config(format!("assigncat references missing column {col:?}")));
        }
        if config.labels_column.as_deref() == Some(col) {
            return Err(Error::Config(format!("label column {col:?} cannot be assigned a category")));
        }
    }
    if !(0.0..1.0).contains(&config.valpercent) {
        return Err(Error::Config(format!("valpercent must be in [0, 1), got {}", config.valpercent)));
    }
    let augment = config.augment_spec()?;

    // hold out validation rows before anything is fitted
    let n = train.n_rows();
    let n_val = (n as f64 * config.valpercent).round() as usize;
    let (fit_rows, val_rows) = if n_val > 0 {
        let mut idx: Vec<usize> = (0..n).collect();
        dist::shuffle(&mut session.aux_rng("validation_split"), &mut idx);
        let mut val = idx[..n_val].to_vec();
        let mut rest = idx[n_val..].to_vec();
        val.sort_unstable();
        rest.sort_unstable();
        (rest, Some(val))
    } else {
        ((0..n).collect(), None)
    };
    let fit_table = train.take_rows(&fit_rows);

    let catalog = Catalog::builtin().with_user(config.transformdict.clone(), config.processdict.clone())?;
    let assign = AssignParam::from_json(&config.assignparam)?;
    let mut assignments = Vec::new();
    for (name, cells) in fit_table.columns() {
        if config.labels_column.as_deref() == Some(name) {
            continue;
        }
        let kind = infer_feature_kind(cells);
        let root = match explicit.get(name) {
            Some(r) => r.clone(),
            None => default_root(kind, config.powertransform.as_deref())?,
        };
        assignments.push((name.to_string(), root, kind));
    }
    info!("fitting {} columns on {} rows", assignments.len(), fit_table.n_rows());
    let plan = TransformPlan::fit_with(&catalog, &assign, &fit_table, &assignments, config.narw_marker, &mut session)?;

    let rows_test = test.map_or(0, DataTable::n_rows) as u64;
    let shapes = plan.sampling_shapes()?;
    let seed_report = compute_seed_report(
        &shapes,
        fit_table.n_rows() as u64,
        if rows_test > 0 { rows_test } else { fit_table.n_rows() as u64 },
        sampling.stochastic_count_safety_factor,
    );
    let basis = TransformBasis {
        format_version: FORMAT_VERSION,
        labels_column: config.labels_column.clone(),
        shuffletrain: config.shuffletrain,
        orig_headers: config.orig_headers,
        train_rows: fit_table.n_rows() as u64,
        transformdict: config.transformdict.clone(),
        processdict: config.processdict.clone(),
        assignparam: config.assignparam.clone(),
        plan,
        seed_report,
    };
    if basis.orig_headers {
        orig_header_names(&basis)?;
    }

    let train_ctx = ApplyCtx {
        phase: Phase::Train,
        noise: true,
        redraw: false,
    };
    let prepared_train = match augment {
        Some(spec) if spec.count > 0 => augment_with(&basis, &fit_table, spec, train_ctx, &mut session)?,
        _ => {
            let set = prepare(&basis, &fit_table, train_ctx, &mut session)?;
            maybe_shuffle(&basis, set, &session, "shuffletrain")
        }
    };
    let test_ctx = ApplyCtx {
        phase: Phase::Test,
        noise: true,
        redraw: false,
    };
    let validation = match val_rows {
        Some(rows) => Some(prepare(&basis, &train.take_rows(&rows), test_ctx, &mut session)?),
        None => None,
    };
    let prepared_test = match test {
        Some(t) => {
            check_schema(&basis, t)?;
            Some(prepare(&basis, t, test_ctx, &mut session)?)
        }
        None => None,
    };
    let usage = session.usage().clone();
    Ok(FitOutput {
        train: prepared_train,
        validation,
        test: prepared_test,
        basis,
        usage,
    })
}

/// Prepares new data on a fitted basis.
pub fn apply(basis: &TransformBasis, table: &DataTable, mode: TraindataMode, sampling: &SamplingPlan) -> Result<PreparedSet> {
    apply_with_usage(basis, table, mode, sampling).map(|(set, _)| set)
}

/// [`apply`], also returning what the call consumed from the seed bank.
pub fn apply_with_usage(
    basis: &TransformBasis,
    table: &DataTable,
    mode: TraindataMode,
    sampling: &SamplingPlan,
) -> Result<(PreparedSet, SeedUsage)> {
    check_schema(basis, table)?;
    let mut session = EntropySession::new(sampling)?;
    let ctx = ApplyCtx {
        phase: mode.phase(),
        noise: mode.noise(),
        redraw: true,
    };
    let set = prepare(basis, table, ctx, &mut session)?;
    Ok((set, session.usage().clone()))
}

/// Prepares `count + 1` copies of `train` as training data and
/// concatenates them. Row indices are offset per copy.
pub fn augment(basis: &TransformBasis, train: &DataTable, spec: AugmentSpec, sampling: &SamplingPlan) -> Result<PreparedSet> {
    check_schema(basis, train)?;
    let mut session = EntropySession::new(sampling)?;
    let ctx = ApplyCtx {
        phase: Phase::Train,
        noise: true,
        redraw: true,
    };
    augment_with(basis, train, spec, ctx, &mut session)
}

fn augment_with(
    basis: &TransformBasis,
    train: &DataTable,
    spec: AugmentSpec,
    ctx: ApplyCtx,
    session: &mut EntropySession,
) -> Result<PreparedSet> {
    let stride = train.row_index().iter().max().map_or(0, |m| m + 1);
    let mut copies: Vec<PreparedSet> = Vec::with_capacity(spec.count as usize + 1);
    for dup in 0..=spec.count {
        session.set_pass(dup);
        let noise = ctx.noise && (spec.all_noisy || dup > 0);
        let mut set = prepare(basis, train, ApplyCtx { noise, ..ctx }, session)?;
        let index: Vec<u64> = set.table.row_index().iter().map(|&i| i + u64::from(dup) * stride).collect();
        set.table.set_row_index(index)?;
        copies.push(set);
    }
    session.set_pass(0);
    let table = DataTable::concat(&copies.iter().map(|c| c.table.clone()).collect::<Vec<_>>())?;
    let labels = copies[0].labels.as_ref().map(|(name, _)| {
        let cells = copies
            .iter()
            .flat_map(|c| c.labels.as_ref().map(|l| l.1.clone()).unwrap_or_default())
            .collect();
        (name.clone(), cells)
    });
    let mut activations = BTreeMap::new();
    for c in &copies {
        for (k, v) in &c.activations {
            *activations.entry(k.clone()).or_insert(0) += v;
        }
    }
    let set = PreparedSet {
        table,
        labels,
        activations,
    };
    Ok(maybe_shuffle(basis, set, session, "augment_shuffle"))
}

fn maybe_shuffle(basis: &TransformBasis, set: PreparedSet, session: &EntropySession, label: &str) -> PreparedSet {
    if !basis.shuffletrain {
        return set;
    }
    let mut order: Vec<usize> = (0..set.table.n_rows()).collect();
    dist::shuffle(&mut session.aux_rng(label), &mut order);
    set.take_rows(&order)
}

/// Columns the basis needs; extra columns are reported and ignored.
fn check_schema(basis: &TransformBasis, table: &DataTable) -> Result<()> {
    let required = basis.plan.required_columns();
    let missing: Vec<String> = required.iter().filter(|c| table.column(c).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let known: HashSet<&str> = required
        .iter()
        .map(String::as_str)
        .chain(basis.labels_column.as_deref())
        .collect();
    let extra: Vec<&String> = table.names().iter().filter(|n| !known.contains(n.as_str())).collect();
    if !extra.is_empty() {
        warn!("ignoring columns not in the basis: {extra:?}");
    }
    Ok(())
}

fn prepare(basis: &TransformBasis, table: &DataTable, ctx: ApplyCtx, session: &mut EntropySession) -> Result<PreparedSet> {
    let applied = basis.plan.apply(table, ctx, session)?;
    let mut out = applied.table;
    if basis.orig_headers {
        out.rename(orig_header_names(basis)?)?;
    }
    let labels = basis
        .labels_column
        .as_ref()
        .and_then(|l| table.column(l).map(|c| (l.clone(), c.to_vec())));
    let set = PreparedSet {
        table: out,
        labels,
        activations: applied.activations,
    };
    if set.total_activations() > 0 {
        info!("{} entries received noise", set.total_activations());
    }
    Ok(set)
}

/// Original names for a plan where every input has exactly one output.
pub fn orig_header_names(basis: &TransformBasis) -> Result<Vec<String>> {
    basis
        .plan
        .columns
        .iter()
        .map(|c| {
            if c.outputs.len() == 1 {
                Ok(c.source.clone())
            } else {
                Err(Error::Config(format!(
                    "orig_headers needs one output per input; {:?} ({}) returns {}",
                    c.source,
                    c.root,
                    c.outputs.len()
                )))
            }
        })
        .collect()
}
