//! Values from the `--config` file, overridden by command-line flags.

use std::path::Path;

use packsel::config::KeyValues;
use packsel::model::FeatureExpansion;
use packsel::search::{DEFAULT_LAMBDA_MAX, DEFAULT_RHO};
use packsel::{Error, PackageCatalog, Result};

const KEYS: &[&str] = &[
    "rho",
    "lambda_max",
    "tau",
    "max_epochs",
    "tolerance",
    "expansion",
    "quantiles",
    "type_names",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    kv: KeyValues,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let kv = match path {
            Some(p) => KeyValues::parse(&std::fs::read_to_string(p)?)?,
            None => KeyValues::default(),
        };
        kv.ensure_known(KEYS)?;
        Ok(Settings { kv })
    }

    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.kv.get_parsed(key)?.unwrap_or(default)),
        }
    }

    pub fn rho(&self, flag: Option<f64>) -> Result<f64> {
        self.pick(flag, "rho", DEFAULT_RHO)
    }

    pub fn lambda_max(&self, flag: Option<f64>) -> Result<f64> {
        self.pick(flag, "lambda_max", DEFAULT_LAMBDA_MAX)
    }

    pub fn tau(&self, flag: Option<f64>) -> Result<f64> {
        self.pick(flag, "tau", packsel::model::DEFAULT_TAU)
    }

    pub fn max_epochs(&self, flag: Option<usize>, default: usize) -> Result<usize> {
        self.pick(flag, "max_epochs", default)
    }

    pub fn tolerance(&self, flag: Option<f64>, default: f64) -> Result<f64> {
        self.pick(flag, "tolerance", default)
    }

    pub fn quantiles(&self, flag: Option<usize>) -> Result<usize> {
        self.pick(flag, "quantiles", 20)
    }

    pub fn expansion(&self, flag: Option<FeatureExpansion>) -> Result<FeatureExpansion> {
        if let Some(e) = flag {
            return Ok(e);
        }
        match self.kv.get("expansion") {
            None | Some("linear") => Ok(FeatureExpansion::Linear),
            Some("quadratic") => Ok(FeatureExpansion::Quadratic),
            Some(other) => Err(Error::Config(format!("unknown expansion `{other}`"))),
        }
    }

    /// Names from `type_names`, else `T1..Tn` (standard names for 8 types).
    pub fn catalog(&self, types: usize) -> Result<PackageCatalog> {
        match self.kv.get_list("type_names") {
            Some(names) => {
                if names.len() != types {
                    return Err(Error::Config(format!(
                        "type_names lists {} types, data has {types}",
                        names.len()
                    )));
                }
                PackageCatalog::new(names)
            }
            None => PackageCatalog::with_len(types),
        }
    }
}
