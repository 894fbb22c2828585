//! Layered parameter assignment for tree categories.

use std::collections::BTreeMap;

use serde_json::Value;

use super::Catalog;
use crate::error::{Error, Result};

type ParamMap = BTreeMap<String, Value>;

/// Parsed `assignparam` section.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssignParam {
    /// Passed to every transform; ignored where not accepted.
    pub global: ParamMap,
    /// Per tree category.
    pub default: BTreeMap<String, ParamMap>,
    /// Per tree category, then per column.
    pub specific: BTreeMap<String, BTreeMap<String, ParamMap>>,
}

fn object(v: &Value, what: &str) -> Result<ParamMap> {
    match v {
        Value::Object(m) => Ok(m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        other => Err(Error::Config(format!("{what} must be an object, got {other}"))),
    }
}

impl AssignParam {
    pub fn from_json(v: &Value) -> Result<AssignParam> {
        let mut out = AssignParam::default();
        if v.is_null() {
            return Ok(out);
        }
        for (key, inner) in object(v, "assignparam")? {
            match key.as_str() {
                "global_assignparam" => out.global = object(&inner, "global_assignparam")?,
                "default_assignparam" => {
                    for (cat, params) in object(&inner, "default_assignparam")? {
                        let params = object(&params, &format!("default_assignparam.{cat}"))?;
                        out.default.insert(cat, params);
                    }
                }
                _ => {
                    let mut cols = BTreeMap::new();
                    for (col, params) in object(&inner, &format!("assignparam.{key}"))? {
                        let params = object(&params, &format!("assignparam.{key}.{col}"))?;
                        cols.insert(col, params);
                    }
                    out.specific.insert(key, cols);
                }
            }
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty() && self.default.is_empty() && self.specific.is_empty()
    }
}

/// Final parameter map for `category` applied to `derived_column`, which
/// was derived from the source column `input_column`.
///
/// Later layers win: catalog defaults, global, per-category default,
/// category + source column, category + derived column. Keys the
/// transform does not accept are dropped from the global layer and
/// rejected elsewhere.
pub fn resolve_params(
    catalog: &Catalog,
    category: &str,
    input_column: &str,
    derived_column: &str,
    assign: &AssignParam,
) -> Result<ParamMap> {
    let resolved = catalog.resolve(category)?;
    let accepts = |k: &str| resolved.kind.accepts(k) || resolved.defaults.contains_key(k);
    let mut out = resolved.defaults.clone();
    for (k, v) in &assign.global {
        if accepts(k) {
            out.insert(k.clone(), v.clone());
        }
    }
    let specific = assign.specific.get(category);
    let layers = [
        assign.default.get(category),
        specific.and_then(|m| m.get(input_column)),
        specific.and_then(|m| m.get(derived_column)).filter(|_| derived_column != input_column),
    ];
    for layer in layers.into_iter().flatten() {
        for (k, v) in layer {
            if !accepts(k) {
                return Err(Error::UnknownParam {
                    category: category.to_string(),
                    column: input_column.to_string(),
                    param: k.clone(),
                });
            }
            out.insert(k.clone(), v.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn example() -> AssignParam {
        AssignParam::from_json(&json!({
            "global_assignparam": {"testnoise": true},
            "default_assignparam": {"DPod": {"flip_prob": 0.05}},
            "DPmm": {"targetcolumn": {"noisedistribution": "abs_normal", "sigma": 0.02}}
        }))
        .unwrap()
    }

    #[test]
    fn layered_example() {
        let cat = Catalog::builtin();
        let a = example();
        let mm = resolve_params(&cat, "DPmm", "targetcolumn", "targetcolumn_DPm2", &a).unwrap();
        assert_eq!(mm["sigma"], json!(0.02));
        assert_eq!(mm["noisedistribution"], json!("abs_normal"));
        assert_eq!(mm["testnoise"], json!(true));
        assert_eq!(mm["test_sigma"], json!(0.02));
        let other = resolve_params(&cat, "DPmm", "othercolumn", "othercolumn_DPm2", &a).unwrap();
        assert_eq!(other["sigma"], json!(0.03));
        let od = resolve_params(&cat, "DPod", "c", "c_DPo3", &a).unwrap();
        assert_eq!(od["flip_prob"], json!(0.05));
        assert_eq!(od["testnoise"], json!(true));
        // encoders do not accept testnoise; the global entry is ignored
        let enc = resolve_params(&cat, "DPo3", "c", "c", &a).unwrap();
        assert!(!enc.contains_key("testnoise"));
    }

    #[test]
    fn derived_column_outranks_input_column() {
        let a = AssignParam::from_json(&json!({
            "default_assignparam": {"DPnb": {"sigma": 0.1}},
            "DPnb": {"x": {"sigma": 0.2}, "x_DPn3": {"sigma": 0.3}}
        }))
        .unwrap();
        let cat = Catalog::builtin();
        assert_eq!(resolve_params(&cat, "DPnb", "x", "x_DPn3", &a).unwrap()["sigma"], json!(0.3));
        assert_eq!(resolve_params(&cat, "DPnb", "x", "x_other", &a).unwrap()["sigma"], json!(0.2));
        assert_eq!(resolve_params(&cat, "DPnb", "y", "y_DPn3", &a).unwrap()["sigma"], json!(0.1));
    }

    #[test]
    fn unknown_targeted_param_is_an_error() {
        let a = AssignParam::from_json(&json!({"DPnb": {"x": {"bogus": 1}}})).unwrap();
        let err = resolve_params(&Catalog::builtin(), "DPnb", "x", "x_DPn3", &a).unwrap_err();
        assert!(matches!(err, Error::UnknownParam { ref param, .. } if param == "bogus"));
        let g = AssignParam::from_json(&json!({"global_assignparam": {"bogus": 1}})).unwrap();
        assert!(resolve_params(&Catalog::builtin(), "DPnb", "x", "x_DPn3", &g).is_ok());
    }
}
