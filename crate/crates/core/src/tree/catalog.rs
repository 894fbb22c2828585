//! Built-in category definitions and user extensions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FamilyTree, MAX_DEPTH};
use crate::error::{Error, Result};

/// The concrete transform functions a category can point at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Zscore,
    Minmax,
    Retain,
    Boolean,
    Ordinal,
    Onehot,
    Binarized,
    Passthrough,
    Missingness,
    StdBins,
    /// Gated distribution noise on a normalized column.
    NumericNoise,
    /// Range-preserving distribution noise on a bounded column.
    ScaledNoise,
    /// Distribution noise on a raw column, scaled by its training std.
    PassthroughNumericNoise,
    /// Weighted activation flips among training values.
    CategoricFlip,
    SwapNoise,
    MaskNoise,
}

const COMMON_NOISE: &[&str] = &["trainnoise", "testnoise", "flip_prob", "test_flip_prob", "retain_basis"];
const DISTRIBUTION: &[&str] = &[
    "sigma",
    "test_sigma",
    "mu",
    "test_mu",
    "noisedistribution",
    "test_noisedistribution",
    "protected_feature",
];

impl TransformKind {
    pub fn is_noise(self) -> bool {
        matches!(
            self,
            TransformKind::NumericNoise
                | TransformKind::ScaledNoise
                | TransformKind::PassthroughNumericNoise
                | TransformKind::CategoricFlip
                | TransformKind::SwapNoise
                | TransformKind::MaskNoise
        )
    }

    pub fn accepts(self, param: &str) -> bool {
        let extra: &[&str] = match self {
            TransformKind::StdBins => return param == "bincount",
            TransformKind::NumericNoise => DISTRIBUTION,
            TransformKind::ScaledNoise => {
                return COMMON_NOISE.contains(&param)
                    || DISTRIBUTION.contains(&param)
                    || param == "rescale_sigmas"
                    || param == "noise_scaling_bias_offset"
            }
            TransformKind::PassthroughNumericNoise => {
                return COMMON_NOISE.contains(&param) || DISTRIBUTION.contains(&param) || param == "rescale_sigmas"
            }
            TransformKind::CategoricFlip => &[
                "weighted",
                "test_weighted",
                "protected_feature",
                "swap_noise",
                "direct_flip",
            ],
            TransformKind::SwapNoise => &[],
            TransformKind::MaskNoise => &["mask_value"],
            _ => return false,
        };
        COMMON_NOISE.contains(&param) || extra.contains(&param)
    }
}

/// A category's transform: either concrete or inherited through a
/// `functionpointer`, plus default parameters layered on top.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functionpointer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformKind>,
    #[serde(default)]
    pub defaultparams: BTreeMap<String, Value>,
}

impl ProcessEntry {
    pub fn concrete(kind: TransformKind, defaults: Value) -> Self {
        ProcessEntry {
            functionpointer: None,
            transform: Some(kind),
            defaultparams: as_map(defaults),
        }
    }

    pub fn pointer(target: &str) -> Self {
        ProcessEntry {
            functionpointer: Some(target.to_string()),
            ..ProcessEntry::default()
        }
    }

    pub fn pointer_with(target: &str, defaults: Value) -> Self {
        ProcessEntry {
            functionpointer: Some(target.to_string()),
            transform: None,
            defaultparams: as_map(defaults),
        }
    }
}

fn as_map(v: Value) -> BTreeMap<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedCategory {
    pub kind: TransformKind,
    pub defaults: BTreeMap<String, Value>,
}

/// Built-in definitions plus user `transformdict` / `processdict`
/// entries, which take precedence by name.
#[derive(Debug, Clone)]
pub struct Catalog {
    builtin_trees: BTreeMap<String, FamilyTree>,
    builtin_process: BTreeMap<String, ProcessEntry>,
    user_trees: BTreeMap<String, FamilyTree>,
    user_process: BTreeMap<String, ProcessEntry>,
    roots: Vec<String>,
}

fn tree(parents: &[&str], auntsuncles: &[&str], cousins: &[&str]) -> FamilyTree {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    FamilyTree {
        parents: v(parents),
        auntsuncles: v(auntsuncles),
        cousins: v(cousins),
        ..FamilyTree::default()
    }
}

/// (trainnoise, testnoise) implied by a root prefix.
pub fn prefix_policy(prefix: &str) -> Option<(bool, bool)> {
    match prefix {
        "DP" => Some((true, false)),
        "DT" => Some((false, true)),
        "DB" => Some((true, true)),
        _ => None,
    }
}

pub const PREFIXES: [&str; 3] = ["DP", "DT", "DB"];

/// Noise families: (suffix, encoding function category or None for
/// passthrough, downstream encoding applied after the noise).
type Family = (&'static str, Option<(&'static str, &'static str)>, Option<&'static str>);

const FAMILIES: &[Family] = &[
    ("nb", Some(("n3", "nmbr")), None),
    ("mm", Some(("m2", "mnmx")), None),
    ("rt", Some(("r2", "retn")), None),
    ("bn", Some(("b2", "bnry")), None),
    ("od", Some(("o3", "ord3")), None),
    ("10", Some(("o4", "ord3")), Some("1010")),
    ("oh", Some(("o5", "ord3")), Some("onht")),
    ("ne", None, None),
    ("pc", None, None),
    ("se", None, None),
    ("sk", None, None),
];

fn noise_defaults(family: &str) -> (TransformKind, Value) {
    let numeric = |sigma: f64, test_sigma: f64| {
        json!({
            "flip_prob": 0.03,
            "test_flip_prob": null,
            "sigma": sigma,
            "test_sigma": test_sigma,
            "mu": 0.0,
            "test_mu": 0.0,
            "noisedistribution": "normal",
            "test_noisedistribution": "normal",
            "retain_basis": false,
            "protected_feature": null,
        })
    };
    let categoric = || {
        json!({
            "flip_prob": 0.03,
            "test_flip_prob": 0.01,
            "weighted": true,
            "test_weighted": true,
            "retain_basis": false,
            "protected_feature": null,
        })
    };
    let extend = |mut base: Value, more: Value| {
        if let (Value::Object(b), Value::Object(m)) = (&mut base, more) {
            b.extend(m);
        }
        base
    };
    match family {
        "nb" => (TransformKind::NumericNoise, numeric(0.06, 0.03)),
        "mm" | "rt" => (
            TransformKind::ScaledNoise,
            extend(numeric(0.03, 0.02), json!({"rescale_sigmas": true, "noise_scaling_bias_offset": true})),
        ),
        "ne" => (
            TransformKind::PassthroughNumericNoise,
            extend(numeric(0.06, 0.03), json!({"rescale_sigmas": true})),
        ),
        "bn" => (TransformKind::CategoricFlip, extend(categoric(), json!({"direct_flip": false}))),
        "10" | "oh" => (TransformKind::CategoricFlip, extend(categoric(), json!({"swap_noise": false}))),
        "od" | "pc" => (TransformKind::CategoricFlip, categoric()),
        "se" => (
            TransformKind::SwapNoise,
            json!({"flip_prob": 0.03, "test_flip_prob": 0.01, "retain_basis": false}),
        ),
        "sk" => (
            TransformKind::MaskNoise,
            json!({"flip_prob": 0.03, "test_flip_prob": 0.01, "retain_basis": false, "mask_value": 0}),
        ),
        _ => unreachable!("unknown noise family {family}"),
    }
}

impl Catalog {
    pub fn builtin() -> Catalog {
        let mut trees = BTreeMap::new();
        let mut process = BTreeMap::new();
        let mut roots = Vec::new();

        let encoders = [
            ("nmbr", TransformKind::Zscore),
            ("mnmx", TransformKind::Minmax),
            ("retn", TransformKind::Retain),
            ("bnry", TransformKind::Boolean),
            ("ord3", TransformKind::Ordinal),
            ("onht", TransformKind::Onehot),
            ("1010", TransformKind::Binarized),
        ];
        for (name, kind) in encoders {
            process.insert(name.to_string(), ProcessEntry::concrete(kind, json!({})));
            trees.insert(name.to_string(), tree(&[name], &[], &["NArw"]));
            roots.push(name.to_string());
        }
        process.insert("excl".into(), ProcessEntry::concrete(TransformKind::Passthrough, json!({})));
        trees.insert("excl".into(), tree(&[], &["excl"], &[]));
        roots.push("excl".into());
        process.insert("NArw".into(), ProcessEntry::concrete(TransformKind::Missingness, json!({})));
        process.insert(
            "bsor".into(),
            ProcessEntry::concrete(TransformKind::StdBins, json!({"bincount": 6})),
        );

        // Noise roots: DP is concrete, DT/DB point at it with their own
        // train/test flags. The noise tree category equals the root.
        for (family, encoding, after) in FAMILIES {
            let (kind, mut defaults) = noise_defaults(family);
            for prefix in PREFIXES {
                let (train, test) = prefix_policy(prefix).expect("known prefix");
                let root = format!("{prefix}{family}");
                let flags = json!({"trainnoise": train, "testnoise": test});
                let entry = if prefix == "DP" {
                    if let (Value::Object(d), Value::Object(f)) = (&mut defaults, flags) {
                        d.extend(f);
                    }
                    ProcessEntry::concrete(kind, defaults.clone())
                } else {
                    ProcessEntry::pointer_with(&format!("DP{family}"), flags)
                };
                process.insert(root.clone(), entry);
                match encoding {
                    Some((enc_suffix, enc_fn)) => {
                        let enc = format!("{prefix}{enc_suffix}");
                        process.insert(enc.clone(), ProcessEntry::pointer(enc_fn));
                        let mut enc_tree = FamilyTree::default();
                        let mut root_tree = tree(&[&enc], &[], &["NArw"]);
                        match after {
                            // noise keeps offspring so the final encoding
                            // can follow it
                            Some(next) => {
                                enc_tree.children = vec![root.clone()];
                                root_tree.coworkers = vec![next.to_string()];
                            }
                            None => enc_tree.coworkers = vec![root.clone()],
                        }
                        trees.insert(enc, enc_tree);
                        trees.insert(root.clone(), root_tree);
                    }
                    None => {
                        trees.insert(root.clone(), tree(&[], &[&root], &[]));
                    }
                }
                roots.push(root);
            }
        }
        Catalog {
            builtin_trees: trees,
            builtin_process: process,
            user_trees: BTreeMap::new(),
            user_process: BTreeMap::new(),
            roots,
        }
    }

    pub fn with_user(
        mut self,
        transformdict: BTreeMap<String, FamilyTree>,
        processdict: BTreeMap<String, ProcessEntry>,
    ) -> Result<Catalog> {
        for (name, entry) in &processdict {
            if entry.functionpointer.is_none() && entry.transform.is_none() {
                return Err(Error::Config(format!(
                    "processdict entry {name:?} needs a functionpointer"
                )));
            }
        }
        self.user_trees = transformdict;
        self.user_process = processdict;
        Ok(self)
    }

    pub fn user_transformdict(&self) -> &BTreeMap<String, FamilyTree> {
        &self.user_trees
    }

    pub fn user_processdict(&self) -> &BTreeMap<String, ProcessEntry> {
        &self.user_process
    }

    /// Built-in root categories in definition order.
    pub fn root_names(&self) -> Vec<String> {
        self.roots.clone()
    }

    /// The category's tree: user, then built-in, then inherited through
    /// its functionpointer.
    pub fn tree(&self, name: &str) -> Option<FamilyTree> {
        let mut current = name.to_string();
        for _ in 0..=MAX_DEPTH {
            if let Some(t) = self.user_trees.get(&current).or_else(|| self.builtin_trees.get(&current)) {
                return Some(t.clone());
            }
            match self.process_entry(&current, false).and_then(|e| e.functionpointer.clone()) {
                Some(next) if next != current => current = next,
                _ => return None,
            }
        }
        None
    }

    fn process_entry(&self, name: &str, builtin_only: bool) -> Option<&ProcessEntry> {
        if builtin_only {
            self.builtin_process.get(name)
        } else {
            self.user_process.get(name).or_else(|| self.builtin_process.get(name))
        }
    }

    /// Follows functionpointers to a concrete transform, layering each
    /// entry's defaults over its target's. A user entry pointing at its own
    /// name extends the built-in definition of that name.
    pub fn resolve(&self, name: &str) -> Result<ResolvedCategory> {
        self.resolve_at(name, false, 0)
    }

    fn resolve_at(&self, name: &str, builtin_only: bool, depth: usize) -> Result<ResolvedCategory> {
        if depth > MAX_DEPTH {
            return Err(Error::TreeDepth(MAX_DEPTH));
        }
        let entry = self
            .process_entry(name, builtin_only)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))?;
        let is_user = !builtin_only && self.user_process.contains_key(name);
        let mut resolved = match (entry.transform, &entry.functionpointer) {
            (Some(kind), _) => ResolvedCategory {
                kind,
                defaults: BTreeMap::new(),
            },
            (None, Some(target)) => {
                let self_extension = is_user && target == name;
                self.resolve_at(target, self_extension || builtin_only, depth + 1)?
            }
            (None, None) => return Err(Error::UnknownCategory(name.to_string())),
        };
        for (k, v) in &entry.defaultparams {
            resolved.defaults.insert(k.clone(), v.clone());
        }
        Ok(resolved)
    }
}
