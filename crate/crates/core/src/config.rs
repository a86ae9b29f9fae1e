//! Run configuration: one JSON file (plus dotted-path overrides) fully
//! determines every output bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MuSpec;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 = library default.
    pub workers: usize,
    pub m_excursions: u64,
    pub n_max: u64,
    pub nul_samples: u64,
    pub tol: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            workers: 0,
            m_excursions: 1_000_000,
            n_max: 1_000_000,
            nul_samples: 10_000,
            tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSection {
    /// Annulus grid z = e^{z_lo}..e^{z_hi}.
    pub z_lo: i32,
    pub z_hi: i32,
    /// Angular histogram bins (d = 2; d = 1 always uses {+1, -1}).
    pub bins: usize,
}

impl Default for TailSection {
    fn default() -> Self {
        TailSection { z_lo: 2, z_hi: 8, bins: 64 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub xmax: f64,
    pub dx: f64,
    pub tol: f64,
    pub gamma: f64,
    /// "r", "rshift:<c>", or a CSV file path for a tabulated psi.
    pub psi: String,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection { xmax: 60.0, dx: 0.05, tol: 1e-6, gamma: 1.0, psi: "r".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: MuSpec,
    pub run: RunSection,
    pub tail: TailSection,
    pub potential: PotentialSection,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: crate::model::spec_1d(crate::model::ALaw::Lognormal { s: 1.0 }, 1.0),
            run: RunSection::default(),
            tail: TailSection::default(),
            potential: PotentialSection::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Load from a JSON file, then apply `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value: serde_json::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default()).expect("default serializes"),
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Apply one `a.b.c=json_value` override (bare strings allowed).
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            return Err(Error::Config(format!("override path '{path}': '{part}' not an object")));
        }
        let map = node.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("path has at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.run.seed, 1);
        assert_eq!(back.run.m_excursions, 1_000_000);
        assert_eq!(back.tail.z_lo, 2);
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::load(
            None,
            &[
                "run.seed=7".into(),
                "run.m_excursions=500".into(),
                "potential.psi=rshift:2".into(),
                "output=elsewhere".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.m_excursions, 500);
        assert_eq!(cfg.potential.psi, "rshift:2");
        assert_eq!(cfg.output, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_override_rejected() {
        assert!(RunConfig::load(None, &["run.seed".into()]).is_err());
        assert!(RunConfig::load(None, &["run.seed=notanumber".into()]).is_err());
        assert!(RunConfig::load(None, &["run.unknown_key=1".into()]).is_err());
    }

    #[test]
    fn model_override_nested() {
        let cfg = RunConfig::load(
            None,
            &[r#"model.a_law={"type":"two_point","p":1.0}"#.into()],
        )
        .unwrap();
        assert!(matches!(cfg.model.a_law, crate::model::ALaw::TwoPoint { p } if p == 1.0));
    }
}
