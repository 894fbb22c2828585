//! Fitted transform nodes and their replay, with or without noise.
//!
//! Fitting walks every column's family tree once over the training rows
//! with noise off, recording one [`Node`] per executed tree category. Each
//! later preparation replays the nodes in the same order; noise nodes fire
//! according to the phase, their parameters and the caller's switch.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::debug;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoders::{narw_marker, CategoricBasis, CategoricEncoding, Moments, NumericBasis, NumericKind, StdBins};
use crate::error::{Error, Result};
use crate::noise::{
    self, adjust_noise_mean, flip_boolean_direct, flip_categoric, mask_noise, sample_bernoulli_mask,
    scale_noise_minmax, swap_noise, FlipTable, MeanAdjustment, NoiseParams, NoiseSpec, ProtectedBasis,
    ProtectedCategoric, ProtectedNumeric, RandomizableParam,
};
use crate::sampling::{EntropySession, Phase, Purpose, SamplingShape};
use crate::table::{suffixed_name, Cell, DataTable, FeatureKind};
use crate::tree::{resolve_params, traverse, AssignParam, Catalog, TransformKind};

/// Fitted state of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Numeric(NumericBasis),
    Categoric(CategoricBasis),
    StdBins(StdBins),
    Missingness,
    Passthrough,
    Noise(Box<NoiseState>),
}

/// Everything a noise node needs at apply time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseState {
    /// Parameters drawn at fit time for randomized entries.
    pub drawn: BTreeMap<String, Value>,
    /// Parameters as resolved at fit time.
    pub params: NoiseParams,
    /// Set when the training data leaves nothing to perturb.
    pub suppressed: Option<String>,
    /// Population std of the eligible training inputs.
    pub train_std: f64,
    /// Training input range, for range-preserving noise.
    pub range: Option<(f64, f64)>,
    /// Mean calibration per phase (train, test).
    pub calibration: [Option<MeanAdjustment>; 2],
    pub flip: Option<FlipTable>,
    pub protected: Option<ProtectedBasis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub category: String,
    pub kind: TransformKind,
    /// Working column this node reads.
    pub input: String,
    /// Original input column it derives from.
    pub source: String,
    pub outputs: Vec<String>,
    /// Merged parameter assignment (possibly randomizable).
    pub params: BTreeMap<String, Value>,
    pub state: NodeState,
}

/// One input column's assignment and surviving outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPlan {
    pub source: String,
    pub feature_kind: FeatureKind,
    pub root: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformPlan {
    /// In input column order.
    pub columns: Vec<ColumnPlan>,
    /// In execution order: sources sorted by name, each tree depth-first.
    pub nodes: Vec<Node>,
}

/// How a replay treats noise.
#[derive(Debug, Clone, Copy)]
pub struct ApplyCtx {
    pub phase: Phase,
    /// Master switch; off for the `*_no_noise` modes.
    pub noise: bool,
    /// Re-draw randomized parameters unless the node retains its basis.
    /// Off inside the fitting call, which uses its own draws.
    pub redraw: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub table: DataTable,
    /// Number of activated entries per noise node output.
    pub activations: BTreeMap<String, u64>,
}

fn phase_slot(phase: Phase) -> usize {
    match phase {
        Phase::Train => 0,
        Phase::Test => 1,
    }
}

fn numeric_kind(kind: TransformKind) -> Option<NumericKind> {
    Some(match kind {
        TransformKind::Zscore => NumericKind::Zscore,
        TransformKind::Minmax => NumericKind::Minmax,
        TransformKind::Retain => NumericKind::Retain,
        _ => return None,
    })
}

fn categoric_encoding(kind: TransformKind) -> Option<CategoricEncoding> {
    Some(match kind {
        TransformKind::Boolean => CategoricEncoding::Boolean,
        TransformKind::Ordinal => CategoricEncoding::Ordinal,
        TransformKind::Onehot => CategoricEncoding::Onehot,
        TransformKind::Binarized => CategoricEncoding::Binarized,
        _ => return None,
    })
}

fn numeric_noise(kind: TransformKind) -> bool {
    matches!(
        kind,
        TransformKind::NumericNoise | TransformKind::ScaledNoise | TransformKind::PassthroughNumericNoise
    )
}

/// Rows a noise node may perturb: source present and input usable.
fn eligibility(kind: TransformKind, input: &[Cell], source_missing: &[bool]) -> Vec<bool> {
    input
        .iter()
        .zip(source_missing)
        .map(|(c, &miss)| {
            !miss
                && if numeric_noise(kind) {
                    c.as_f64().is_some()
                } else {
                    !c.is_missing()
                }
        })
        .collect()
}

fn missing_mask(cells: &[Cell]) -> Vec<bool> {
    cells.iter().map(Cell::is_missing).collect()
}

fn to_minmax(x: f64, (lo, hi): (f64, f64)) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

fn bincount(params: &BTreeMap<String, Value>) -> Result<usize> {
    match params.get("bincount") {
        None | Some(Value::Null) => Ok(6),
        Some(v) => v
            .as_u64()
            .filter(|&b| b >= 1)
            .map(|b| b as usize)
            .ok_or_else(|| Error::Config(format!("bincount must be a positive integer, got {v}"))),
    }
}

/// Largest activation rate a randomizable `flip_prob` can take.
fn rate_bound(param: Option<&RandomizableParam>, fallback: f64) -> f64 {
    match param {
        Some(RandomizableParam::Choice(items)) => items
            .iter()
            .filter_map(Value::as_f64)
            .fold(0.0, f64::max)
            .clamp(0.0, 1.0),
        Some(RandomizableParam::Distribution(_)) => 1.0,
        _ => fallback,
    }
}

struct FitEnv<'a> {
    catalog: &'a Catalog,
    assign: &'a AssignParam,
    raw: &'a DataTable,
}

impl TransformPlan {
    /// Fits the plan for `assignments` (source column, root category,
    /// inferred kind), given in input order.
    pub fn fit(
        catalog: &Catalog,
        assign: &AssignParam,
        train: &DataTable,
        assignments: &[(String, String, FeatureKind)],
        session: &mut EntropySession,
    ) -> Result<TransformPlan> {
        Self::fit_with(catalog, assign, train, assignments, true, session)
    }

    /// [`TransformPlan::fit`] with missing-data markers switchable; when
    /// off, marker categories produce no columns.
    pub fn fit_with(
        catalog: &Catalog,
        assign: &AssignParam,
        train: &DataTable,
        assignments: &[(String, String, FeatureKind)],
        narw_marker: bool,
        session: &mut EntropySession,
    ) -> Result<TransformPlan> {
        let env = FitEnv {
            catalog,
            assign,
            raw: train,
        };
        let mut work: HashMap<String, Vec<Cell>> = HashMap::new();
        let mut seen: HashSet<String> = train.names().iter().cloned().collect();
        let mut nodes = Vec::new();
        let mut outputs: HashMap<String, Vec<String>> = HashMap::new();

        let mut order: Vec<&(String, String, FeatureKind)> = assignments.iter().collect();
        order.sort_by(|a, b| a.0.cmp(&b.0));
        for (source, root, _) in order {
            let raw = train.column(source).ok_or_else(|| Error::UnknownColumn(source.clone()))?;
            work.insert(source.clone(), raw.to_vec());
            let source_missing = missing_mask(raw);
            let survivors = traverse(catalog, root, source, |cat, col| {
                if !narw_marker && catalog.resolve(cat)?.kind == TransformKind::Missingness {
                    return Ok(Vec::new());
                }
                let input = work
                    .get(col)
                    .ok_or_else(|| Error::Internal(format!("column {col:?} not computed")))?
                    .clone();
                let node = fit_node(&env, cat, col, source, &input, &source_missing, &mut seen, session)?;
                let produced = node.transform(&input, &source_missing, train, None, session)?;
                for (name, cells) in node.outputs.iter().zip(produced.0) {
                    work.insert(name.clone(), cells);
                }
                let names = node.outputs.clone();
                nodes.push(node);
                Ok(names)
            })?;
            outputs.insert(source.clone(), survivors);
        }

        let columns = assignments
            .iter()
            .map(|(source, root, kind)| ColumnPlan {
                source: source.clone(),
                feature_kind: *kind,
                root: root.clone(),
                outputs: outputs.remove(source).unwrap_or_default(),
            })
            .collect();
        Ok(TransformPlan { columns, nodes })
    }

    pub fn output_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(|c| c.outputs.iter().cloned()).collect()
    }

    pub fn sources(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.source.clone()).collect()
    }

    pub fn noise_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind.is_noise())
    }

    /// Columns the replay reads: sources plus protected features.
    pub fn required_columns(&self) -> Vec<String> {
        let mut out = self.sources();
        for n in self.noise_nodes() {
            if let NodeState::Noise(s) = &n.state {
                if let Some(f) = &s.params.protected_feature {
                    if !out.contains(f) {
                        out.push(f.clone());
                    }
                }
            }
        }
        out
    }

    /// Sampling footprints of the noise nodes, for seed budgeting.
    pub fn sampling_shapes(&self) -> Result<Vec<SamplingShape>> {
        self.noise_nodes().map(Node::sampling_shape).collect()
    }

    /// Replays every node over `table`.
    pub fn apply(&self, table: &DataTable, ctx: ApplyCtx, session: &mut EntropySession) -> Result<Applied> {
        let mut work: HashMap<String, Vec<Cell>> = HashMap::new();
        let mut activations = BTreeMap::new();
        let mut missing_cache: HashMap<String, Vec<bool>> = HashMap::new();
        for node in &self.nodes {
            if !work.contains_key(&node.input) {
                let raw = table
                    .column(&node.input)
                    .ok_or_else(|| Error::MissingColumns(vec![node.input.clone()]))?;
                work.insert(node.input.clone(), raw.to_vec());
            }
            if !missing_cache.contains_key(&node.source) {
                let raw = table
                    .column(&node.source)
                    .ok_or_else(|| Error::MissingColumns(vec![node.source.clone()]))?;
                missing_cache.insert(node.source.clone(), missing_mask(raw));
            }
            let input = &work[&node.input];
            let (produced, fired) = node.transform(input, &missing_cache[&node.source], table, Some(ctx), session)?;
            if let Some(count) = fired {
                activations.insert(node.outputs[0].clone(), count);
            }
            for (name, cells) in node.outputs.iter().zip(produced) {
                work.insert(name.clone(), cells);
            }
        }
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for plan in &self.columns {
            for out in &plan.outputs {
                let cells = match work.get(out) {
                    Some(c) => c.clone(),
                    None => table
                        .column(out)
                        .ok_or_else(|| Error::MissingColumns(vec![out.clone()]))?
                        .to_vec(),
                };
                names.push(out.clone());
                columns.push(cells);
            }
        }
        let table = DataTable::with_index(names, columns, table.row_index().to_vec())?;
        Ok(Applied { table, activations })
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_node(
    env: &FitEnv<'_>,
    category: &str,
    input_name: &str,
    source: &str,
    input: &[Cell],
    source_missing: &[bool],
    seen: &mut HashSet<String>,
    session: &mut EntropySession,
) -> Result<Node> {
    let resolved = env.catalog.resolve(category)?;
    let params = resolve_params(env.catalog, category, source, input_name, env.assign)?;
    let kind = resolved.kind;
    let base = suffixed_name(input_name, category, seen);
    seen.insert(base.clone());

    let (state, suffixes) = if let Some(nk) = numeric_kind(kind) {
        (NodeState::Numeric(NumericBasis::fit(input, nk)), vec![String::new()])
    } else if let Some(enc) = categoric_encoding(kind) {
        let basis = CategoricBasis::fit(input, enc);
        let suffixes = basis.output_suffixes();
        (NodeState::Categoric(basis), suffixes)
    } else {
        match kind {
            TransformKind::Passthrough => (NodeState::Passthrough, vec![String::new()]),
            TransformKind::Missingness => (NodeState::Missingness, vec![String::new()]),
            TransformKind::StdBins => (
                NodeState::StdBins(StdBins::fit(input, bincount(&params)?)),
                vec![String::new()],
            ),
            _ => {
                let state = fit_noise(env, category, kind, &base, input_name, input, source_missing, &params, session)?;
                (NodeState::Noise(Box::new(state)), vec![String::new()])
            }
        }
    };
    let outputs: Vec<String> = suffixes
        .iter()
        .map(|s| {
            if s.is_empty() {
                base.clone()
            } else {
                let name = suffixed_name(&base, s, seen);
                seen.insert(name.clone());
                name
            }
        })
        .collect();
    debug!("fitted {category} on {input_name} -> {outputs:?}");
    Ok(Node {
        category: category.to_string(),
        kind,
        input: input_name.to_string(),
        source: source.to_string(),
        outputs,
        params,
        state,
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_noise(
    env: &FitEnv<'_>,
    category: &str,
    kind: TransformKind,
    key: &str,
    input_name: &str,
    input: &[Cell],
    source_missing: &[bool],
    params: &BTreeMap<String, Value>,
    session: &mut EntropySession,
) -> Result<NoiseState> {
    let spec = NoiseSpec::from_map(params)?;
    session.begin_transform(key)?;
    let (resolved, drawn) = spec.resolve(|name, p| {
        let op = format!("param:{name}");
        let mut stream = session.stream(
            Purpose {
                category,
                column: input_name,
                op: &op,
            },
            Phase::Train,
        )?;
        p.resolve(false, None, &mut stream)
    })?;

    let eligible = eligibility(kind, input, source_missing);
    let values: Vec<Option<f64>> = input
        .iter()
        .zip(&eligible)
        .map(|(c, &ok)| if ok { c.as_f64() } else { None })
        .collect();
    let moments = Moments::of(values.iter().flatten().copied());

    let mut state = NoiseState {
        drawn,
        params: resolved.clone(),
        suppressed: None,
        train_std: moments.std,
        range: None,
        calibration: [None, None],
        flip: None,
        protected: None,
    };

    let protected_cells = match &resolved.protected_feature {
        Some(f) => Some(env.raw.column(f).ok_or_else(|| Error::UnknownColumn(f.clone()))?),
        None => None,
    };

    match kind {
        TransformKind::NumericNoise | TransformKind::PassthroughNumericNoise => {}
        TransformKind::ScaledNoise => {
            if moments.count == 0 || moments.max <= moments.min {
                state.suppressed = Some("training range is degenerate".into());
            } else {
                let range = (moments.min, moments.max);
                state.range = Some(range);
                if resolved.noise_scaling_bias_offset {
                    let minmax: Vec<f64> = values.iter().flatten().map(|&x| to_minmax(x, range)).collect();
                    for phase in [Phase::Train, Phase::Test] {
                        let p = resolved.phase(phase);
                        if !resolved.fires(phase) || p.flip_prob == 0.0 && !spec.params.get(flip_name(phase)).is_some_and(RandomizableParam::is_random) {
                            continue;
                        }
                        let sigma = scaled_sigma(&resolved, p.sigma, range);
                        let op = match phase {
                            Phase::Train => "calibrate",
                            Phase::Test => "calibrate_test",
                        };
                        let mut stream = session.stream(
                            Purpose {
                                category,
                                column: input_name,
                                op,
                            },
                            Phase::Train,
                        )?;
                        let adj = adjust_noise_mean(&minmax, p.mu, sigma, p.distribution, &mut stream)?;
                        state.calibration[phase_slot(phase)] = Some(adj);
                    }
                }
            }
        }
        TransformKind::CategoricFlip => {
            state.flip = Some(FlipTable::fit(
                input.iter().zip(&eligible).filter(|(_, &ok)| ok).map(|(c, _)| c),
            ));
        }
        TransformKind::SwapNoise | TransformKind::MaskNoise => {}
        other => return Err(Error::Internal(format!("{other:?} is not a noise transform"))),
    }

    if let Some(protected) = protected_cells {
        state.protected = Some(if numeric_noise(kind) {
            ProtectedBasis::Numeric(ProtectedNumeric::fit(
                resolved.protected_feature.as_deref().unwrap_or_default(),
                &values,
                protected,
            ))
        } else {
            let cells: Vec<Option<&Cell>> = input
                .iter()
                .zip(&eligible)
                .map(|(c, &ok)| ok.then_some(c))
                .collect();
            ProtectedBasis::Categoric(ProtectedCategoric::fit(
                resolved.protected_feature.as_deref().unwrap_or_default(),
                &cells,
                protected,
            ))
        });
    }
    Ok(state)
}

fn flip_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Train => "flip_prob",
        Phase::Test => "test_flip_prob",
    }
}

/// Noise scale in [0, 1] units: `sigma` is already relative to the range
/// when `rescale_sigmas` is on, otherwise it is in input units.
fn scaled_sigma(params: &NoiseParams, sigma: f64, (lo, hi): (f64, f64)) -> f64 {
    if params.rescale_sigmas {
        sigma
    } else {
        sigma / (hi - lo)
    }
}

impl Node {
    fn noise_state(&self) -> Option<&NoiseState> {
        match &self.state {
            NodeState::Noise(s) => Some(s),
            _ => None,
        }
    }

    fn spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::from_map(&self.params)
    }

    /// Whether the node would inject under `phase` with noise enabled.
    pub fn fires(&self, phase: Phase) -> bool {
        self.noise_state()
            .is_some_and(|s| s.suppressed.is_none() && s.params.fires(phase))
    }

    pub fn sampling_shape(&self) -> Result<SamplingShape> {
        let state = self
            .noise_state()
            .ok_or_else(|| Error::Internal(format!("{} is not a noise node", self.category)))?;
        let spec = self.spec()?;
        let random = spec.random_names().len() as u64;
        let calibrations = state.calibration.iter().flatten().count() as u64;
        let per_activation_op = match self.kind {
            TransformKind::MaskNoise => false,
            TransformKind::CategoricFlip => !state.params.direct_flip,
            _ => true,
        };
        Ok(SamplingShape {
            fires_train: self.fires(Phase::Train),
            fires_test: self.fires(Phase::Test),
            train_rate: rate_bound(spec.params.get("flip_prob"), state.params.flip_prob),
            test_rate: rate_bound(
                spec.params.get("test_flip_prob").or(spec.params.get("flip_prob")),
                state.params.test_flip_prob,
            ),
            per_activation_op,
            fit_ops: random + calibrations,
            apply_param_ops: if state.params.retain_basis { 0 } else { random },
        })
    }

    /// Output columns for `input`. Noise runs only when `ctx` asks for it;
    /// the second value is the activation count when a noise node fired.
    fn transform(
        &self,
        input: &[Cell],
        source_missing: &[bool],
        raw: &DataTable,
        ctx: Option<ApplyCtx>,
        session: &mut EntropySession,
    ) -> Result<(Vec<Vec<Cell>>, Option<u64>)> {
        let out = match &self.state {
            NodeState::Numeric(b) => vec![b.apply(input)],
            NodeState::Categoric(b) => b.apply(input),
            NodeState::StdBins(b) => vec![b.apply(input)],
            NodeState::Missingness => vec![narw_marker(input)],
            NodeState::Passthrough => vec![input.to_vec()],
            NodeState::Noise(state) => {
                let Some(ctx) = ctx else {
                    return Ok((vec![input.to_vec()], None));
                };
                let (cells, count) = self.apply_noise(state, input, source_missing, raw, ctx, session)?;
                return Ok((vec![cells], count));
            }
        };
        Ok((out, None))
    }

    fn purpose<'a>(&'a self, op: &'a str) -> Purpose<'a> {
        Purpose {
            category: &self.category,
            column: &self.input,
            op,
        }
    }

    fn apply_noise(
        &self,
        state: &NoiseState,
        input: &[Cell],
        source_missing: &[bool],
        raw: &DataTable,
        ctx: ApplyCtx,
        session: &mut EntropySession,
    ) -> Result<(Vec<Cell>, Option<u64>)> {
        session.begin_transform(&self.outputs[0])?;
        if !ctx.noise || !self.fires(ctx.phase) {
            return Ok((input.to_vec(), None));
        }
        let phase = ctx.phase;
        let params = if ctx.redraw && !state.params.retain_basis && !state.drawn.is_empty() {
            let spec = self.spec()?;
            spec.resolve(|name, p| {
                let op = format!("param:{name}");
                let mut stream = session.stream(self.purpose(&op), phase)?;
                p.resolve(false, None, &mut stream)
            })?
            .0
        } else {
            state.params.clone()
        };
        let p = params.phase(phase);
        let eligible = eligibility(self.kind, input, source_missing);
        let mask = {
            let mut stream = session.stream(self.purpose("mask"), phase)?;
            sample_bernoulli_mask(&mut stream, &eligible, p.flip_prob)?
        };
        let active = mask.iter().filter(|&&m| m).count() as u64;

        let protected_cells = match &state.protected {
            Some(_) => {
                let f = params.protected_feature.as_deref().or(state.params.protected_feature.as_deref());
                let f = f.unwrap_or_default();
                Some(raw.column(f).ok_or_else(|| Error::MissingColumns(vec![f.to_string()]))?)
            }
            None => None,
        };
        let ratio = |i: usize| match (&state.protected, protected_cells) {
            (Some(ProtectedBasis::Numeric(pn)), Some(cells)) => pn.ratio(&cells[i]),
            _ => 1.0,
        };

        let out = match self.kind {
            TransformKind::NumericNoise | TransformKind::PassthroughNumericNoise | TransformKind::ScaledNoise => {
                let (mu, sigma) = match self.kind {
                    TransformKind::PassthroughNumericNoise if params.rescale_sigmas => (
                        p.mu * state.train_std,
                        noise::rescale_sigma_passthrough(p.sigma, state.train_std),
                    ),
                    TransformKind::ScaledNoise => {
                        let range = state.range.expect("unsuppressed scaled noise has a range");
                        let mut mu = p.mu;
                        if params.noise_scaling_bias_offset {
                            if let Some(adj) = state.calibration[phase_slot(phase)] {
                                // calibrated at the fit-time mean; keep the
                                // correction when the mean is re-drawn
                                mu += adj.mu - state.params.phase(phase).mu;
                            }
                        }
                        (mu, scaled_sigma(&params, p.sigma, range))
                    }
                    _ => (p.mu, p.sigma),
                };
                let mut stream = session.stream(self.purpose("noise"), phase)?;
                let mut out = input.to_vec();
                for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    let z = p.distribution.standard(stream.entry()?);
                    let n = p.distribution.finish(mu, sigma * ratio(i), z);
                    let x = input[i].as_f64().expect("eligible entries are numeric");
                    out[i] = Cell::Number(match (self.kind, state.range) {
                        (TransformKind::ScaledNoise, Some(range)) => {
                            let m = to_minmax(x, range);
                            let moved = m + scale_noise_minmax(n, m);
                            if range == (0.0, 1.0) {
                                moved
                            } else {
                                (range.0 + moved * (range.1 - range.0)).clamp(range.0, range.1)
                            }
                        }
                        _ => x + n,
                    });
                }
                out
            }
            TransformKind::CategoricFlip => {
                let all_binary = || input.iter().all(|c| matches!(c, Cell::Number(x) if *x == 0.0 || *x == 1.0));
                if params.direct_flip && all_binary() {
                    flip_boolean_direct(input, &mask)
                } else if params.swap_noise {
                    let mut stream = session.stream(self.purpose("choice"), phase)?;
                    swap_noise(input, &mask, &mut stream)?
                } else {
                    let fallback = state
                        .flip
                        .as_ref()
                        .ok_or_else(|| Error::Internal("flip node without a table".into()))?;
                    let table_for = |i: usize| match (&state.protected, protected_cells) {
                        (Some(ProtectedBasis::Categoric(pc)), Some(cells)) => pc.table(&cells[i], fallback),
                        _ => fallback,
                    };
                    let mut stream = session.stream(self.purpose("choice"), phase)?;
                    flip_categoric(input, &mask, table_for, p.weighted, &mut stream)?.0
                }
            }
            TransformKind::SwapNoise => {
                let mut stream = session.stream(self.purpose("choice"), phase)?;
                swap_noise(input, &mask, &mut stream)?
            }
            TransformKind::MaskNoise => mask_noise(input, &mask, &params.mask_value),
            other => return Err(Error::Internal(format!("{other:?} is not a noise transform"))),
        };
        Ok((out, Some(active)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{SamplingPlan, SamplingType};
    use serde_json::json;

    fn session(seed: u32) -> EntropySession {
        EntropySession::new(&SamplingPlan::primary(SamplingType::Default, vec![seed])).unwrap()
    }

    fn table() -> DataTable {
        let x: Vec<Cell> = (0..200).map(|i| Cell::Number((i % 17) as f64)).collect();
        let c: Vec<Cell> = (0..200)
            .map(|i| if i % 13 == 0 { Cell::Missing } else { Cell::Text(["a", "b", "c"][i % 3].into()) })
            .collect();
        DataTable::new(vec!["x".into(), "c".into()], vec![x, c]).unwrap()
    }

    fn fit(roots: &[(&str, &str)], assign: serde_json::Value) -> TransformPlan {
        let t = table();
        let a: Vec<(String, String, FeatureKind)> = roots
            .iter()
            .map(|(s, r)| (s.to_string(), r.to_string(), FeatureKind::Numeric))
            .collect();
        TransformPlan::fit(
            &Catalog::builtin(),
            &AssignParam::from_json(&assign).unwrap(),
            &t,
            &a,
            &mut session(1),
        )
        .unwrap()
    }

    const TRAIN: ApplyCtx = ApplyCtx {
        phase: Phase::Train,
        noise: true,
        redraw: false,
    };

    #[test]
    fn outputs_follow_trees() {
        let plan = fit(&[("x", "DPnb"), ("c", "DP10")], json!(null));
        assert_eq!(plan.columns[0].outputs, vec!["x_DPn3_DPnb", "x_NArw"]);
        assert_eq!(
            plan.columns[1].outputs,
            // ordinal codes 0 (missing) to 3 need three bits
            vec!["c_DPo4_DP10_1010_0", "c_DPo4_DP10_1010_1", "c_DPo4_DP10_1010_2", "c_NArw"]
        );
    }

    #[test]
    fn noise_only_changes_activated_rows() {
        let plan = fit(&[("x", "DPnb"), ("c", "DPod")], json!({"global_assignparam": {"flip_prob": 0.3}}));
        let t = table();
        let clean = plan
            .apply(&t, ApplyCtx { noise: false, ..TRAIN }, &mut session(2))
            .unwrap();
        let noisy = plan.apply(&t, TRAIN, &mut session(2)).unwrap();
        for name in ["x_DPn3_DPnb", "c_DPo3_DPod"] {
            let a = clean.table.column(name).unwrap();
            let b = noisy.table.column(name).unwrap();
            let changed = a.iter().zip(b).filter(|(x, y)| x != y).count() as u64;
            let fired = noisy.activations[name];
            assert!(changed <= fired && fired > 20, "{name}: {changed} of {fired}");
            // missing source rows never change
            for i in (0..200).step_by(13) {
                if name.starts_with('c') {
                    assert_eq!(a[i], b[i]);
                }
            }
        }
    }

    #[test]
    fn dp_does_not_fire_on_test() {
        let plan = fit(&[("x", "DPnb")], json!({"global_assignparam": {"flip_prob": 1.0}}));
        let t = table();
        let ctx = ApplyCtx {
            phase: Phase::Test,
            noise: true,
            redraw: true,
        };
        let a = plan.apply(&t, ctx, &mut session(3)).unwrap();
        let b = plan.apply(&t, ApplyCtx { noise: false, ..ctx }, &mut session(3)).unwrap();
        assert_eq!(a.table, b.table);
        assert!(a.activations.is_empty());
    }

    #[test]
    fn scaled_noise_stays_in_range() {
        let plan = fit(&[("x", "DPmm"), ("c", "excl")], json!({"global_assignparam": {"flip_prob": 1.0, "sigma": 0.5}}));
        let NodeState::Noise(s) = &plan.nodes.iter().find(|n| n.category == "DPmm").unwrap().state else {
            panic!()
        };
        assert!(s.calibration[0].is_some());
        let out = plan.apply(&table(), TRAIN, &mut session(4)).unwrap();
        for c in out.table.column("x_DPm2_DPmm").unwrap() {
            let v = c.as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn shapes_count_randomized_params() {
        let plan = fit(
            &[("x", "DPnb")],
            json!({"DPnb": {"x": {"sigma": [0.1, 0.2], "flip_prob": [0.1, 0.5]}}}),
        );
        let shapes = plan.sampling_shapes().unwrap();
        assert_eq!(shapes.len(), 1);
        assert_eq!(shapes[0].fit_ops, 2);
        assert_eq!(shapes[0].apply_param_ops, 2);
        assert_eq!(shapes[0].train_rate, 0.5);
        assert!(shapes[0].fires_train && !shapes[0].fires_test);
    }

    #[test]
    fn plan_round_trips_through_json() {
        let plan = fit(&[("x", "DPrt"), ("c", "DPoh")], json!(null));
        let text = serde_json::to_string(&plan).unwrap();
        let back: TransformPlan = serde_json::from_str(&text).unwrap();
        assert_eq!(plan, back);
    }
}
