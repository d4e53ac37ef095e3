//! JSON map configurations.
//!
//! ```json
//! {"family": "tent"}
//! {"family": "skew_tent", "a": 0.3}
//! {"family": "markov_tent", "slope": 1.4142135623730951}
//! {"family": "tent_perturbed", "base_slope": 1.8, "eps": 0.05, "shape": "sine_pi"}
//! {"family": "polynomial2", "c": 0.5, "branch1": [0.0, 1.9, -0.2], "branch2": [1.8, -1.8]}
//! ```
//!
//! Every family accepts an optional `"overlap"` (default 0.05), the branch
//! extension past the critical point used for one-sided limits.

use crate::error::{Error, Result};
use crate::map::{PeumMap, Shape};
use crate::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MapConfig {
    Tent,
    SkewTent {
        a: f64,
    },
    MarkovTent {
        slope: f64,
    },
    TentPerturbed {
        base_slope: f64,
        eps: f64,
        #[serde(default = "default_shape")]
        shape: Shape,
    },
    Polynomial2 {
        c: f64,
        branch1: Vec<f64>,
        branch2: Vec<f64>,
    },
}

fn default_shape() -> Shape {
    Shape::SinePi
}

impl MapConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Build and validate the map; the config hash is embedded for output
    /// artifacts and Ulam-matrix caching.
    pub fn build(&self) -> Result<PeumMap> {
        let mut map = match self {
            MapConfig::Tent => sample::tent(),
            MapConfig::SkewTent { a } => {
                if !(0.0 < *a && *a < 1.0) {
                    return Err(Error::Config(format!("skew_tent a={a} not in (0,1)")));
                }
                sample::skew_tent(*a)
            }
            MapConfig::MarkovTent { slope } => {
                if !(1.0 < *slope && *slope <= 2.0) {
                    return Err(Error::Config(format!("markov_tent slope={slope} not in (1,2]")));
                }
                sample::markov_tent(*slope)
            }
            MapConfig::TentPerturbed {
                base_slope,
                eps,
                shape,
            } => sample::tent_perturbed(*base_slope, *eps, *shape),
            MapConfig::Polynomial2 { c, branch1, branch2 } => {
                sample::polynomial2(*c, branch1.clone(), branch2.clone())?
            }
        };
        map.set_config_hash(self.hash());
        Ok(map)
    }

    /// Stable short hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
