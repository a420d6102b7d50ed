//! Per-layer solver parameters and the JSON parameter-table format.
//!
//! ```json
//! {"network": "jcddnet-g", "l_max": 2, "layers": [{"mu": 1.0, ...}, ...],
//!  "provenance": "grid-search", "note": "optional"}
//! ```
//!
//! Numbers are written with 17 significant digits so every `f64` survives a
//! round trip.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Network {
    #[serde(rename = "jcddnet-g")]
    JcddnetG,
    #[serde(rename = "jcddnet-s")]
    JcddnetS,
}

impl Network {
    pub fn id(self) -> &'static str {
        match self {
            Self::JcddnetG => "jcddnet-g",
            Self::JcddnetS => "jcddnet-s",
        }
    }

    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Self::JcddnetG => &LayerG::KEYS,
            Self::JcddnetS => &LayerS::KEYS,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed parameter table: {0}")]
    Json(#[from] serde_json::Error),
    #[error("l_max = {l_max} but {layers} layers listed")]
    LayerCount { l_max: usize, layers: usize },
    #[error("layer {layer}: missing key `{key}`")]
    MissingKey { layer: usize, key: String },
    #[error("layer {layer}: unknown key `{key}`")]
    UnknownKey { layer: usize, key: String },
    #[error("layer {layer}: `{key}` = {value} violates {rule}")]
    Constraint { layer: usize, key: String, value: f64, rule: &'static str },
    #[error("table is for {found}, expected {expected}")]
    WrongNetwork { expected: &'static str, found: &'static str },
}

/// One layer of the Gaussian-channel solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerG {
    pub mu: f64,
    pub alpha: f64,
    pub o_lambda: f64,
    pub o_upsilon: f64,
    pub o_r: f64,
    pub o_p: f64,
}

impl LayerG {
    pub const KEYS: [&'static str; 6] = ["mu", "alpha", "o_lambda", "o_upsilon", "o_r", "o_p"];

    pub fn vanilla(mu: f64, alpha: f64) -> Self {
        Self { mu, alpha, o_lambda: 1.0, o_upsilon: 1.0, o_r: 1.0, o_p: 0.0 }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.mu, self.alpha, self.o_lambda, self.o_upsilon, self.o_r, self.o_p]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { mu: v[0], alpha: v[1], o_lambda: v[2], o_upsilon: v[3], o_r: v[4], o_p: v[5] }
    }
}

/// One layer of the sparse-channel solver. `tau` is relative to the
/// Lipschitz constant of the channel-fit gradient (see `jcdd_sparse`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerS {
    pub rho: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub varrho_chi: f64,
    pub varrho_r: f64,
    pub varrho_p: f64,
}

impl LayerS {
    pub const KEYS: [&'static str; 7] = ["rho", "kappa", "epsilon", "tau", "varrho_chi", "varrho_r", "varrho_p"];

    pub fn vanilla(rho: f64, kappa: f64, epsilon: f64) -> Self {
        Self { rho, kappa, epsilon, tau: 1.0, varrho_chi: 1.0, varrho_r: 1.0, varrho_p: 0.0 }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.rho, self.kappa, self.epsilon, self.tau, self.varrho_chi, self.varrho_r, self.varrho_p]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { rho: v[0], kappa: v[1], epsilon: v[2], tau: v[3], varrho_chi: v[4], varrho_r: v[5], varrho_p: v[6] }
    }
}

/// Constraint per key: `Some(true)` strictly positive, `Some(false)`
/// non-negative, `None` any finite value.
fn rule(key: &str) -> Option<bool> {
    match key {
        "alpha" | "kappa" => Some(false),
        "o_r" | "o_p" | "varrho_r" | "varrho_p" => None,
        _ => Some(true),
    }
}

/// Layer table with a fallback for layers past its end.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSchedule<L> {
    pub layers: Vec<L>,
    pub default: L,
}

impl<L: Copy> LayerSchedule<L> {
    pub fn constant(default: L) -> Self {
        Self { layers: Vec::new(), default }
    }

    /// Parameters of 1-based layer `l`.
    pub fn layer(&self, l: usize) -> L {
        self.layers.get(l - 1).copied().unwrap_or(self.default)
    }
}

pub type ScheduleG = LayerSchedule<LayerG>;
pub type ScheduleS = LayerSchedule<LayerS>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamTable {
    pub network: Network,
    pub l_max: usize,
    pub layers: Vec<BTreeMap<String, f64>>,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ParamTable {
    pub fn from_layers_g(layers: &[LayerG], provenance: &str) -> Self {
        Self::from_vectors(Network::JcddnetG, layers.iter().map(|l| l.to_vec()), provenance)
    }

    pub fn from_layers_s(layers: &[LayerS], provenance: &str) -> Self {
        Self::from_vectors(Network::JcddnetS, layers.iter().map(|l| l.to_vec()), provenance)
    }

    fn from_vectors(network: Network, rows: impl Iterator<Item = Vec<f64>>, provenance: &str) -> Self {
        let layers: Vec<BTreeMap<String, f64>> = rows
            .map(|v| network.keys().iter().map(|k| k.to_string()).zip(v).collect())
            .collect();
        Self { network, l_max: layers.len(), layers, provenance: provenance.into(), note: None }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.layers.len() != self.l_max {
            return Err(ParamError::LayerCount { l_max: self.l_max, layers: self.layers.len() });
        }
        let keys = self.network.keys();
        for (idx, layer) in self.layers.iter().enumerate() {
            let l = idx + 1;
            if let Some(k) = layer.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(ParamError::UnknownKey { layer: l, key: k.clone() });
            }
            for &key in keys {
                let &value = layer.get(key).ok_or_else(|| ParamError::MissingKey { layer: l, key: key.into() })?;
                let violated = match rule(key) {
                    _ if !value.is_finite() => Some("finite"),
                    Some(true) if value <= 0.0 => Some("> 0"),
                    Some(false) if value < 0.0 => Some(">= 0"),
                    _ => None,
                };
                if let Some(rule) = violated {
                    return Err(ParamError::Constraint { layer: l, key: key.into(), value, rule });
                }
            }
        }
        Ok(())
    }

    fn rows(&self, expected: Network) -> Result<Vec<Vec<f64>>, ParamError> {
        if self.network != expected {
            return Err(ParamError::WrongNetwork { expected: expected.id(), found: self.network.id() });
        }
        self.validate()?;
        Ok(self.layers.iter().map(|m| expected.keys().iter().map(|k| m[*k]).collect()).collect())
    }

    pub fn layers_g(&self) -> Result<Vec<LayerG>, ParamError> {
        Ok(self.rows(Network::JcddnetG)?.iter().map(|v| LayerG::from_slice(v)).collect())
    }

    pub fn layers_s(&self) -> Result<Vec<LayerS>, ParamError> {
        Ok(self.rows(Network::JcddnetS)?.iter().map(|v| LayerS::from_slice(v)).collect())
    }

    pub fn parse(text: &str) -> Result<Self, ParamError> {
        let table: Self = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ParamError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{{");
        let _ = writeln!(s, "  \"network\": \"{}\",", self.network.id());
        let _ = writeln!(s, "  \"l_max\": {},", self.l_max);
        let _ = writeln!(s, "  \"layers\": [");
        for (i, layer) in self.layers.iter().enumerate() {
            // Keys in the network's canonical order, then any extras.
            let mut keys: Vec<&String> = self
                .network
                .keys()
                .iter()
                .filter_map(|k| layer.get_key_value(*k).map(|(k, _)| k))
                .collect();
            keys.extend(layer.keys().filter(|k| !self.network.keys().contains(&k.as_str())));
            let body: Vec<String> = keys.iter().map(|k| format!("\"{k}\": {:.16e}", layer[*k])).collect();
            let sep = if i + 1 == self.layers.len() { "" } else { "," };
            let _ = writeln!(s, "    {{{}}}{sep}", body.join(", "));
        }
        let _ = writeln!(s, "  ],");
        let _ = write!(s, "  \"provenance\": {}", serde_json::to_string(&self.provenance).expect("string"));
        if let Some(note) = &self.note {
            let _ = write!(s, ",\n  \"note\": {}", serde_json::to_string(note).expect("string"));
        }
        let _ = writeln!(s, "\n}}");
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ParamError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|source| ParamError::Io { path: path.display().to_string(), source })
    }
}

const DEFAULT_G: &str = include_str!("../data/default_g.json");
const DEFAULT_S: &str = include_str!("../data/default_s.json");

/// Grid-searched defaults shipped with the crate.
pub fn default_table_g() -> ParamTable {
    ParamTable::parse(DEFAULT_G).expect("bundled default table is valid")
}

pub fn default_table_s() -> ParamTable {
    ParamTable::parse(DEFAULT_S).expect("bundled default table is valid")
}

pub fn default_layer_g() -> LayerG {
    default_table_g().layers_g().expect("bundled table")[0]
}

pub fn default_layer_s() -> LayerS {
    default_table_s().layers_s().expect("bundled table")[0]
}

/// Schedule from a (possibly shorter) trained table; missing layers fall
/// back to the defaults.
pub fn schedule_g(table: Option<&ParamTable>) -> Result<ScheduleG, ParamError> {
    Ok(LayerSchedule { layers: table.map(|t| t.layers_g()).transpose()?.unwrap_or_default(), default: default_layer_g() })
}

pub fn schedule_s(table: Option<&ParamTable>) -> Result<ScheduleS, ParamError> {
    Ok(LayerSchedule { layers: table.map(|t| t.layers_s()).transpose()?.unwrap_or_default(), default: default_layer_s() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_g() -> ParamTable {
        let layers = [LayerG::vanilla(0.3, 0.05), LayerG { mu: 1.0 / 3.0, alpha: 0.0, o_lambda: 1.1, o_upsilon: 0.9, o_r: 1.2, o_p: -0.1 }];
        ParamTable::from_layers_g(&layers, "tuned")
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut t = sample_g();
        t.note = Some("two \"layers\"".into());
        let text = t.to_json();
        assert!(text.contains("3.3333333333333331e-1"), "{text}");
        assert_eq!(ParamTable::parse(&text).unwrap(), t);
        let s = ParamTable::from_layers_s(&[LayerS::vanilla(0.5, 0.1, 2.0)], "grid-search");
        assert_eq!(ParamTable::parse(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let t = sample_g();
        let mut bad = t.clone();
        bad.layers[1].remove("o_p");
        assert!(matches!(bad.validate(), Err(ParamError::MissingKey { layer: 2, .. })));
        let mut bad = t.clone();
        bad.layers[0].insert("rho".into(), 1.0);
        assert!(matches!(bad.validate(), Err(ParamError::UnknownKey { layer: 1, .. })));
        let mut bad = t.clone();
        bad.layers[0].insert("mu".into(), 0.0);
        assert!(matches!(bad.validate(), Err(ParamError::Constraint { layer: 1, .. })));
        let mut bad = t.clone();
        bad.l_max = 3;
        assert!(matches!(bad.validate(), Err(ParamError::LayerCount { .. })));
        assert!(ParamTable::parse(r#"{"network":"jcddnet-x","l_max":0,"layers":[],"provenance":""}"#).is_err());
        assert!(matches!(t.layers_s(), Err(ParamError::WrongNetwork { .. })));
    }

    #[test]
    fn schedule_falls_back_to_default() {
        let table = sample_g();
        let sched = schedule_g(Some(&table)).unwrap();
        assert_eq!(sched.layer(2).o_p, -0.1);
        assert_eq!(sched.layer(3), default_layer_g());
        assert_eq!(sched.layer(500), default_layer_g());
    }

    #[test]
    fn bundled_defaults_load() {
        let g = default_layer_g();
        assert_eq!((g.o_lambda, g.o_upsilon, g.o_r, g.o_p), (1.0, 1.0, 1.0, 0.0));
        let s = default_layer_s();
        assert_eq!((s.varrho_chi, s.varrho_r, s.varrho_p), (1.0, 1.0, 0.0));
    }
}
