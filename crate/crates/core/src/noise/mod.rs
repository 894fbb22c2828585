//! Noise parameters and the stochastic perturbation operations.

pub mod ops;
pub mod protected;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sampling::{dist, EntrySource};
use crate::table::Cell;

pub use ops::*;
pub use protected::{ProtectedBasis, ProtectedCategoric, ProtectedNumeric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Normal,
    Laplace,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Both,
    /// Only nonnegative noise.
    Abs,
    /// Only nonpositive noise.
    NegAbs,
}

/// A noise shape plus an optional sign restriction, named like
/// `normal`, `abs_laplace`, `negabs_uniform`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseDistribution {
    pub shape: Shape,
    pub sign: Sign,
}

impl NoiseDistribution {
    pub const NORMAL: NoiseDistribution = NoiseDistribution {
        shape: Shape::Normal,
        sign: Sign::Both,
    };

    pub fn parse(name: &str) -> Option<Self> {
        let (sign, rest) = if let Some(r) = name.strip_prefix("negabs_") {
            (Sign::NegAbs, r)
        } else if let Some(r) = name.strip_prefix("abs_") {
            (Sign::Abs, r)
        } else {
            (Sign::Both, name)
        };
        let shape = match rest {
            "normal" => Shape::Normal,
            "laplace" => Shape::Laplace,
            "uniform" => Shape::Uniform,
            _ => return None,
        };
        Some(NoiseDistribution { shape, sign })
    }

    /// A standard draw of the base shape: scale 1, centered on 0.
    pub fn standard<W: crate::sampling::WordSource + ?Sized>(&self, rng: &mut W) -> f64 {
        match self.shape {
            Shape::Normal => dist::standard_normal(rng),
            Shape::Laplace => dist::standard_laplace(rng),
            Shape::Uniform => dist::standard_uniform(rng),
        }
    }

    /// Maps a standard draw to the final noise value.
    pub fn finish(&self, mu: f64, sigma: f64, z: f64) -> f64 {
        let v = mu + sigma * z;
        match self.sign {
            Sign::Both => v,
            Sign::Abs => v.abs(),
            Sign::NegAbs => -v.abs(),
        }
    }
}

impl fmt::Display for NoiseDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.sign {
            Sign::Both => "",
            Sign::Abs => "abs_",
            Sign::NegAbs => "negabs_",
        };
        let shape = match self.shape {
            Shape::Normal => "normal",
            Shape::Laplace => "laplace",
            Shape::Uniform => "uniform",
        };
        write!(f, "{prefix}{shape}")
    }
}

impl Serialize for NoiseDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NoiseDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        NoiseDistribution::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown noise distribution {s:?}")))
    }
}

/// A continuous distribution a float parameter can be drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum ParamDistribution {
    Uniform { low: f64, high: f64 },
    Normal { loc: f64, scale: f64 },
    Laplace { loc: f64, scale: f64 },
}

/// A parameter value that may be randomized per fit or apply call.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomizableParam {
    Fixed(Value),
    /// Uniform choice among candidates.
    Choice(Vec<Value>),
    Distribution(ParamDistribution),
}

impl RandomizableParam {
    /// Arrays are candidate lists; objects with a `distribution` key are
    /// distribution specs; anything else is fixed.
    pub fn from_value(name: &str, v: &Value) -> Result<Self> {
        match v {
            Value::Array(items) if items.is_empty() => {
                Err(Error::Config(format!("parameter {name:?}: empty candidate list")))
            }
            Value::Array(items) => Ok(RandomizableParam::Choice(items.clone())),
            Value::Object(map) if map.contains_key("distribution") => serde_json::from_value(v.clone())
                .map(RandomizableParam::Distribution)
                .map_err(|e| Error::Config(format!("parameter {name:?}: {e}"))),
            other => Ok(RandomizableParam::Fixed(other.clone())),
        }
    }

    pub fn is_random(&self) -> bool {
        !matches!(self, RandomizableParam::Fixed(_))
    }

    /// Fixed values resolve to themselves without drawing; a retained
    /// stored value wins over a fresh draw.
    pub fn resolve<S: EntrySource + ?Sized>(
        &self,
        retain_basis: bool,
        stored: Option<&Value>,
        src: &mut S,
    ) -> Result<Value> {
        if let (true, Some(v)) = (retain_basis, stored) {
            return Ok(v.clone());
        }
        Ok(match self {
            RandomizableParam::Fixed(v) => v.clone(),
            RandomizableParam::Choice(items) => {
                let rng = src.entry()?;
                items[dist::below(rng, items.len() as u64) as usize].clone()
            }
            RandomizableParam::Distribution(d) => {
                let rng = src.entry()?;
                let x = match *d {
                    ParamDistribution::Uniform { low, high } => low + (high - low) * dist::uniform01(rng),
                    ParamDistribution::Normal { loc, scale } => loc + scale * dist::standard_normal(rng),
                    ParamDistribution::Laplace { loc, scale } => loc + scale * dist::standard_laplace(rng),
                };
                Value::from(x)
            }
        })
    }
}

/// Parameters of one noise transform. Randomizable entries are kept in
/// `NoiseSpec`; `NoiseParams` is the resolved, concrete form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub trainnoise: bool,
    pub testnoise: bool,
    pub flip_prob: f64,
    pub test_flip_prob: f64,
    pub sigma: f64,
    pub test_sigma: f64,
    pub mu: f64,
    pub test_mu: f64,
    pub noisedistribution: NoiseDistribution,
    pub test_noisedistribution: NoiseDistribution,
    pub weighted: bool,
    pub test_weighted: bool,
    pub rescale_sigmas: bool,
    pub retain_basis: bool,
    pub protected_feature: Option<String>,
    pub mask_value: Cell,
    pub noise_scaling_bias_offset: bool,
    pub swap_noise: bool,
    pub direct_flip: bool,
}

/// Per-phase view of the train/test parameter pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseParams {
    pub flip_prob: f64,
    pub sigma: f64,
    pub mu: f64,
    pub distribution: NoiseDistribution,
    pub weighted: bool,
}

impl NoiseParams {
    pub fn phase(&self, phase: crate::sampling::Phase) -> PhaseParams {
        use crate::sampling::Phase;
        match phase {
            Phase::Train => PhaseParams {
                flip_prob: self.flip_prob,
                sigma: self.sigma,
                mu: self.mu,
                distribution: self.noisedistribution,
                weighted: self.weighted,
            },
            Phase::Test => PhaseParams {
                flip_prob: self.test_flip_prob,
                sigma: self.test_sigma,
                mu: self.test_mu,
                distribution: self.test_noisedistribution,
                weighted: self.test_weighted,
            },
        }
    }

    pub fn fires(&self, phase: crate::sampling::Phase) -> bool {
        match phase {
            crate::sampling::Phase::Train => self.trainnoise,
            crate::sampling::Phase::Test => self.testnoise,
        }
    }
}

/// Every parameter name a noise transform understands.
pub const NOISE_PARAMS: &[&str] = &[
    "trainnoise",
    "testnoise",
    "flip_prob",
    "test_flip_prob",
    "sigma",
    "test_sigma",
    "mu",
    "test_mu",
    "noisedistribution",
    "test_noisedistribution",
    "weighted",
    "test_weighted",
    "rescale_sigmas",
    "retain_basis",
    "protected_feature",
    "mask_value",
    "noise_scaling_bias_offset",
    "swap_noise",
    "direct_flip",
];

/// Parameters that accept candidate lists or distributions.
const RANDOMIZABLE: &[&str] = &[
    "flip_prob",
    "test_flip_prob",
    "sigma",
    "test_sigma",
    "mu",
    "test_mu",
    "noisedistribution",
    "test_noisedistribution",
    "weighted",
    "test_weighted",
    "mask_value",
];

/// Unresolved noise parameters, in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub params: BTreeMap<String, RandomizableParam>,
}

impl NoiseSpec {
    pub fn from_map(map: &BTreeMap<String, Value>) -> Result<NoiseSpec> {
        let mut params = BTreeMap::new();
        for (k, v) in map {
            let p = RandomizableParam::from_value(k, v)?;
            if p.is_random() && !RANDOMIZABLE.contains(&k.as_str()) {
                return Err(Error::Config(format!("parameter {k:?} cannot be randomized")));
            }
            params.insert(k.clone(), p);
        }
        Ok(NoiseSpec { params })
    }

    /// Names of the parameters drawn at resolution time, in draw order.
    pub fn random_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|(_, p)| p.is_random())
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn retain_basis(&self) -> bool {
        matches!(self.params.get("retain_basis"), Some(RandomizableParam::Fixed(Value::Bool(true))))
    }

    /// Resolves each parameter by calling `draw` for the random ones, then
    /// builds the concrete parameter set.
    pub fn resolve(
        &self,
        mut draw: impl FnMut(&str, &RandomizableParam) -> Result<Value>,
    ) -> Result<(NoiseParams, BTreeMap<String, Value>)> {
        let mut drawn = BTreeMap::new();
        let mut values = BTreeMap::new();
        for (k, p) in &self.params {
            let v = match p {
                RandomizableParam::Fixed(v) => v.clone(),
                _ => {
                    let v = draw(k, p)?;
                    drawn.insert(k.clone(), v.clone());
                    v
                }
            };
            values.insert(k.clone(), v);
        }
        Ok((NoiseParams::from_values(&values)?, drawn))
    }
}

fn get_f64(m: &BTreeMap<String, Value>, k: &str, default: f64) -> Result<f64> {
    match m.get(k) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::Config(format!("parameter {k:?} must be a number, got {v}"))),
    }
}

fn get_bool(m: &BTreeMap<String, Value>, k: &str, default: bool) -> Result<bool> {
    match m.get(k) {
        None | Some(Value::Null) => Ok(default),
        Some(Value::Bool(b)) => Ok(*b),
        Some(v) => Err(Error::Config(format!("parameter {k:?} must be a boolean, got {v}"))),
    }
}

fn get_dist(m: &BTreeMap<String, Value>, k: &str, default: NoiseDistribution) -> Result<NoiseDistribution> {
    match m.get(k) {
        None | Some(Value::Null) => Ok(default),
        Some(Value::String(s)) => {
            NoiseDistribution::parse(s).ok_or_else(|| Error::Config(format!("unknown noise distribution {s:?}")))
        }
        Some(v) => Err(Error::Config(format!("parameter {k:?} must be a distribution name, got {v}"))),
    }
}

fn check_prob(k: &str, p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::Config(format!("{k} must be in [0, 1], got {p}")))
    }
}

fn check_sigma(k: &str, s: f64) -> Result<f64> {
    if s >= 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Config(format!("{k} must be a finite value >= 0, got {s}")))
    }
}

impl NoiseParams {
    /// Concrete parameters from resolved values. Absent entries fall back
    /// to neutral values; the catalog supplies the real defaults.
    /// `test_flip_prob` and the other `test_*` entries default to their
    /// train counterparts when null or absent.
    pub fn from_values(m: &BTreeMap<String, Value>) -> Result<NoiseParams> {
        let flip_prob = check_prob("flip_prob", get_f64(m, "flip_prob", 0.03)?)?;
        let sigma = check_sigma("sigma", get_f64(m, "sigma", 0.0)?)?;
        let mu = get_f64(m, "mu", 0.0)?;
        let noisedistribution = get_dist(m, "noisedistribution", NoiseDistribution::NORMAL)?;
        let weighted = get_bool(m, "weighted", true)?;
        let protected_feature = match m.get("protected_feature") {
            None | Some(Value::Null) | Some(Value::Bool(false)) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(v) => return Err(Error::Config(format!("protected_feature must be a column name, got {v}"))),
        };
        let mask_value = match m.get("mask_value") {
            None | Some(Value::Null) => Cell::Number(0.0),
            Some(Value::Number(n)) => Cell::Number(n.as_f64().unwrap_or(0.0)),
            Some(Value::String(s)) => Cell::Text(s.clone()),
            Some(v) => return Err(Error::Config(format!("mask_value must be a number or string, got {v}"))),
        };
        Ok(NoiseParams {
            trainnoise: get_bool(m, "trainnoise", true)?,
            testnoise: get_bool(m, "testnoise", false)?,
            flip_prob,
            test_flip_prob: check_prob("test_flip_prob", get_f64(m, "test_flip_prob", flip_prob)?)?,
            sigma,
            test_sigma: check_sigma("test_sigma", get_f64(m, "test_sigma", sigma)?)?,
            mu,
            test_mu: get_f64(m, "test_mu", mu)?,
            noisedistribution,
            test_noisedistribution: get_dist(m, "test_noisedistribution", noisedistribution)?,
            weighted,
            test_weighted: get_bool(m, "test_weighted", weighted)?,
            rescale_sigmas: get_bool(m, "rescale_sigmas", false)?,
            retain_basis: get_bool(m, "retain_basis", false)?,
            protected_feature,
            mask_value,
            noise_scaling_bias_offset: get_bool(m, "noise_scaling_bias_offset", true)?,
            swap_noise: get_bool(m, "swap_noise", false)?,
            direct_flip: get_bool(m, "direct_flip", false)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{Pcg64, SeedSequence};
    use serde_json::json;

    fn rng() -> Pcg64 {
        Pcg64::from_seed_sequence(&SeedSequence::new(&[9], &[]))
    }

    #[test]
    fn distribution_names_round_trip() {
        for name in [
            "normal",
            "laplace",
            "uniform",
            "abs_normal",
            "abs_laplace",
            "abs_uniform",
            "negabs_normal",
            "negabs_laplace",
            "negabs_uniform",
        ] {
            assert_eq!(NoiseDistribution::parse(name).unwrap().to_string(), name);
        }
        assert!(NoiseDistribution::parse("cauchy").is_none());
    }

    #[test]
    fn resolve_fixed_choice_and_retained() {
        let mut r = rng();
        let fixed = RandomizableParam::from_value("sigma", &json!(0.03)).unwrap();
        assert_eq!(fixed.resolve(false, None, &mut r).unwrap(), json!(0.03));
        let single = RandomizableParam::from_value("sigma", &json!([0.01])).unwrap();
        assert_eq!(single.resolve(false, None, &mut r).unwrap(), json!(0.01));
        let list = RandomizableParam::from_value("sigma", &json!([0.01, 0.05, 0.1])).unwrap();
        assert_eq!(list.resolve(true, Some(&json!(0.05)), &mut r).unwrap(), json!(0.05));
        for _ in 0..50 {
            let v = list.resolve(false, None, &mut r).unwrap();
            assert!([json!(0.01), json!(0.05), json!(0.1)].contains(&v));
        }
        assert!(RandomizableParam::from_value("sigma", &json!([])).is_err());
    }

    #[test]
    fn resolve_distribution() {
        let mut r = rng();
        let p = RandomizableParam::from_value(
            "sigma",
            &json!({"distribution": "uniform", "low": 0.02, "high": 0.04}),
        )
        .unwrap();
        for _ in 0..100 {
            let v = p.resolve(false, None, &mut r).unwrap().as_f64().unwrap();
            assert!((0.02..0.04).contains(&v));
        }
    }

    #[test]
    fn test_params_default_to_train_params() {
        let m: BTreeMap<String, Value> = [("flip_prob".to_string(), json!(0.2)), ("sigma".to_string(), json!(0.5))]
            .into_iter()
            .collect();
        let p = NoiseParams::from_values(&m).unwrap();
        assert_eq!(p.test_flip_prob, 0.2);
        assert_eq!(p.test_sigma, 0.5);
        let bad: BTreeMap<String, Value> = [("flip_prob".to_string(), json!(1.5))].into_iter().collect();
        assert!(NoiseParams::from_values(&bad).is_err());
    }
}
