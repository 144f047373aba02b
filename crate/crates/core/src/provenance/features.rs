//! Fixed-order context feature vectors with registry-stored min-max bounds.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const FEATURE_DIM: usize = 10;

const BUILTIN: &str = include_str!("../../data/feature_registry.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    pub version: String,
    pub features: Vec<FeatureDef>,
}

impl FeatureRegistry {
    pub fn builtin() -> &'static FeatureRegistry {
        static REG: OnceLock<FeatureRegistry> = OnceLock::new();
        REG.get_or_init(|| FeatureRegistry::from_json(BUILTIN).expect("shipped feature registry"))
    }

    pub fn from_json(text: &str) -> Result<FeatureRegistry, String> {
        let r: FeatureRegistry = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if r.features.len() != FEATURE_DIM {
            return Err(format!("expected {FEATURE_DIM} features, found {}", r.features.len()));
        }
        if let Some(f) = r
            .features
            .iter()
            .find(|f| f.max.partial_cmp(&f.min) != Some(std::cmp::Ordering::Greater))
        {
            return Err(format!("feature `{}` has max <= min", f.name));
        }
        Ok(r)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    /// Min-max normalizes raw values into `[0, 1]`, clamping out-of-range
    /// values to the bounds.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        self.features
            .iter()
            .zip(raw)
            .map(|(f, &x)| ((x - f.min) / (f.max - f.min)).clamp(0.0, 1.0))
            .collect()
    }

    /// Raw feature values read from a context map; `None` if any is missing
    /// or non-finite.
    pub fn raw_from_context(&self, ctx: &Map<String, Value>) -> Option<Vec<f64>> {
        self.features
            .iter()
            .map(|f| ctx.get(&f.name).and_then(Value::as_f64).filter(|v| v.is_finite()))
            .collect()
    }

    pub fn featurize(&self, ctx: &Map<String, Value>) -> Option<Vec<f64>> {
        self.raw_from_context(ctx).map(|raw| self.normalize(&raw))
    }
}
