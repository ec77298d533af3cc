//! Experiment configuration: command-line flags layered over an optional
//! JSON file, resolved into fully populated parameter records.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Invalid configuration; reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Parses a value with `FromStr`, turning failures into [`ConfigError`].
pub fn parse<T>(field: &str, value: &str) -> anyhow::Result<T>
where
    T: std::str::FromStr,
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| config_err(format!("{field}: {e}")))
}

/// Contents of a `--config` file. Every key is optional; `params` holds the
/// command's own keys.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved run description; written as `config.json` next to the
/// outputs and accepted back through `--config`.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig<P> {
    pub command: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output: PathBuf,
    pub params: P,
}

/// Overlays the non-null flag values onto the file parameters and
/// deserialises the result, filling absent keys with defaults.
pub fn resolve<A: Serialize, P: DeserializeOwned>(file: Map<String, Value>, flags: &A) -> anyhow::Result<P> {
    let mut merged = file;
    if let Value::Object(flags) = serde_json::to_value(flags).context("serialising flags")? {
        merged.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| config_err(format!("parameters: {e}")))
}

/// Declares a flag struct (every field optional) and the matching resolved
/// parameter struct (every field populated, defaults as given).
macro_rules! params {
    (
        $(#[doc = $sdoc:literal])*
        $args:ident => $params:ident {
            $( #[doc = $doc:literal] $field:ident : $ty:ty = $default:expr, )*
        }
        $( optional {
            $( #[doc = $odoc:literal] $ofield:ident : $oty:ty, )*
        } )?
    ) => {
        $(#[doc = $sdoc])*
        #[derive(clap::Args, serde::Serialize, Debug, Clone, Default)]
        pub struct $args {
            $( #[doc = $doc] #[arg(long)] pub $field: Option<$ty>, )*
            $( $( #[doc = $odoc] #[arg(long)] pub $ofield: Option<$oty>, )* )?
        }

        #[derive(serde::Serialize, serde::Deserialize, Debug, Clone)]
        #[serde(default, deny_unknown_fields)]
        pub struct $params {
            $( pub $field: $ty, )*
            $( $( pub $ofield: Option<$oty>, )* )?
        }

        impl Default for $params {
            fn default() -> Self {
                Self {
                    $( $field: $default, )*
                    $( $( $ofield: None, )* )?
                }
            }
        }
    };
}

pub(crate) use params;

#[cfg(test)]
mod tests {
    use super::*;

    params! {
        /// Test parameters.
        DemoArgs => DemoParams {
            /// Count.
            n: usize = 7,
            /// Name.
            name: String = "x".into(),
        }
        optional {
            /// Path.
            path: PathBuf,
        }
    }

    fn file(v: Value) -> Map<String, Value> {
        match v {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let p: DemoParams = resolve(Map::new(), &DemoArgs::default()).unwrap();
        assert_eq!((p.n, p.name.as_str(), p.path), (7, "x", None));
    }

    #[test]
    fn flags_override_file() {
        let args = DemoArgs { n: Some(3), ..DemoArgs::default() };
        let p: DemoParams = resolve(file(serde_json::json!({"n": 5, "name": "y"})), &args).unwrap();
        assert_eq!((p.n, p.name.as_str()), (3, "y"));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_config_errors() {
        for bad in [serde_json::json!({"bogus": 1}), serde_json::json!({"n": "many"})] {
            let err = resolve::<_, DemoParams>(file(bad), &DemoArgs::default()).unwrap_err();
            assert!(err.downcast_ref::<ConfigError>().is_some());
        }
    }

    #[test]
    fn config_file_rejects_unknown_top_level_keys() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"seed": 1, "colour": 2}"#).is_err());
        let f: ConfigFile = serde_json::from_str(r#"{"seed": 1, "params": {"n": 2}}"#).unwrap();
        assert_eq!((f.seed, f.params.len()), (Some(1), 1));
    }
}
