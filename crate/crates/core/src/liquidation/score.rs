use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PspoError, Result};

pub const LIQUIDATION: &str = "liquidation";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub random: f64,
    pub expert: f64,
}

/// Registry `{env → {random, expert}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferenceScores(pub BTreeMap<String, Reference>);

impl Default for ReferenceScores {
    fn default() -> Self {
        Self(BTreeMap::from([(LIQUIDATION.to_string(), Reference { random: 0.0, expert: 135.0 })]))
    }
}

impl ReferenceScores {
    /// `100 (raw − random) / (expert − random)`.
    pub fn normalize(&self, raw: f64, env: &str) -> Result<f64> {
        let r = self.0.get(env).ok_or_else(|| PspoError::UnknownEnvironment(env.to_string()))?;
        if r.expert == r.random {
            return Err(PspoError::DegenerateReference(env.to_string()));
        }
        Ok(100.0 * (raw - r.random) / (r.expert - r.random))
    }
}

/// [`ReferenceScores::normalize`] with the built-in registry.
pub fn normalized_score(raw: f64, env: &str) -> Result<f64> {
    ReferenceScores::default().normalize(raw, env)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(normalized_score(135.0, LIQUIDATION).unwrap(), 100.0);
        assert_eq!(normalized_score(0.0, LIQUIDATION).unwrap(), 0.0);
        assert_eq!(normalized_score(67.5, LIQUIDATION).unwrap(), 50.0);
        assert!(normalized_score(1.0, "hopper").is_err());
        let degenerate = ReferenceScores(BTreeMap::from([("x".to_string(), Reference { random: 1.0, expert: 1.0 })]));
        assert!(degenerate.normalize(1.0, "x").is_err());
    }

    #[test]
    fn registry_json_round_trip() {
        let json = serde_json::to_string(&ReferenceScores::default()).unwrap();
        assert_eq!(json, r#"{"liquidation":{"random":0.0,"expert":135.0}}"#);
        let back: ReferenceScores = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ReferenceScores::default());
    }
}
