//! Run configuration: a TOML file plus command-line and environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::{Method, Preprocess};
use crate::completion::{CompletionConfig, CompletionMethod};
use crate::diagnostics::{AlignmentOptions, Axis};
use crate::distcal::MirrorDescentConfig;
use crate::error::{Error, Result};
use crate::matcore::Orientation;
use crate::regress::{Family, RegressConfig};
use crate::synth::{DiscreteParams, LatentParams};

const BUILTIN_PROFILES: &str = include_str!("profiles.toml");

/// Every method name accepted by `--method`.
pub const METHOD_NAMES: [&str; 10] = ["ridge", "lasso", "en", "sc", "nn", "si", "hsv", "ssv", "als", "sp"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub orientation: Option<Orientation>,
    #[serde(flatten)]
    pub methods: BTreeMap<String, toml::Table>,
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    profiles: BTreeMap<String, Profile>,
}

pub fn builtin_profiles() -> BTreeMap<String, Profile> {
    toml::from_str::<ProfileFile>(BUILTIN_PROFILES)
        .expect("embedded profiles parse")
        .profiles
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistcalSection {
    /// Twin answer codes, one row per twin.
    pub codes: Option<PathBuf>,
    /// Human marginals, one row per question.
    pub human_marginals: Option<PathBuf>,
    /// Raw human answer codes, used when marginals are not given.
    pub human_responses: Option<PathBuf>,
    pub k: Option<usize>,
    pub test_frac: f64,
    /// Explicit held-out question indices; overrides the random split.
    pub test_questions: Option<Vec<usize>>,
    pub mirror: MirrorDescentConfig,
}

impl Default for DistcalSection {
    fn default() -> Self {
        Self {
            codes: None,
            human_marginals: None,
            human_responses: None,
            k: None,
            test_frac: 0.2,
            test_questions: None,
            mirror: MirrorDescentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    /// Defaults to the row space for new questions, column space for new users.
    pub axis: Option<Axis>,
    pub alignment: AlignmentOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    #[default]
    Latent,
    Discrete,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub kind: SynthKind,
    pub latent: LatentParams,
    pub discrete: DiscreteParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Hyperparameter profile, e.g. `twin2k.new_user`. Defaults to the
    /// MovieLens profile for the chosen orientation.
    pub profile: Option<String>,
    pub human: Option<PathBuf>,
    pub twin: Option<PathBuf>,
    pub orientation: Orientation,
    pub method: String,
    pub tau: Option<f64>,
    pub fisher_z: bool,
    pub seed: u64,
    pub out: PathBuf,
    /// Per-method overrides on top of the profile.
    pub methods: BTreeMap<String, toml::Table>,
    /// Extra profiles; these shadow built-ins of the same name.
    pub profiles: BTreeMap<String, Profile>,
    pub preprocess: Preprocess,
    pub distcal: DistcalSection,
    pub diagnose: DiagnoseSection,
    pub sweep: SweepSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: None,
            human: None,
            twin: None,
            orientation: Orientation::NewQuestion,
            method: "ridge".into(),
            tau: None,
            fisher_z: false,
            seed: 0,
            out: PathBuf::from("out"),
            methods: BTreeMap::new(),
            profiles: BTreeMap::new(),
            preprocess: Preprocess::default(),
            distcal: DistcalSection::default(),
            diagnose: DiagnoseSection::default(),
            sweep: SweepSection::default(),
            synth: SynthSection::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.human,
            &mut cfg.twin,
            &mut cfg.distcal.codes,
            &mut cfg.distcal.human_marginals,
            &mut cfg.distcal.human_responses,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn profile_name(&self) -> String {
        self.profile.clone().unwrap_or_else(|| format!("movielens.{}", self.orientation.name()))
    }

    pub fn resolve_profile(&self) -> Result<Profile> {
        let name = self.profile_name();
        if let Some(p) = self.profiles.get(&name) {
            return Ok(p.clone());
        }
        builtin_profiles()
            .remove(&name)
            .ok_or_else(|| Error::param(format!("unknown profile '{name}'")))
    }

    /// Builds the configured method: defaults, then profile values, then
    /// `[methods.<name>]` overrides; the run seed is applied last.
    pub fn build_method(&self) -> Result<Method> {
        let name = self.method.to_ascii_lowercase();
        let profile = self.resolve_profile()?;
        if let Some(o) = profile.orientation {
            if o != self.orientation {
                log::warn!(
                    "profile '{}' targets {} but the run uses {}",
                    self.profile_name(),
                    o.name(),
                    self.orientation.name()
                );
            }
        }
        let layers: Vec<&toml::Table> = [profile.methods.get(&name), self.methods.get(&name)]
            .into_iter()
            .flatten()
            .collect();
        if let Some(family) = Family::parse(&name) {
            let mut cfg: RegressConfig = merge(RegressConfig::new(family), &layers, &name)?;
            cfg.family = family;
            cfg.seed = self.seed;
            cfg.validate()?;
            Ok(Method::Regress(cfg))
        } else if let Some(method) = CompletionMethod::parse(&name) {
            let mut cfg: CompletionConfig = merge(CompletionConfig::new(method, 5, 0.0), &layers, &name)?;
            cfg.method = method;
            cfg.seed = self.seed;
            Ok(Method::Completion(cfg))
        } else {
            Err(Error::param(format!(
                "unknown method '{}'; expected one of {}",
                self.method,
                METHOD_NAMES.join(", ")
            )))
        }
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            seed: self.seed,
            ..self.preprocess.clone()
        }
    }

    pub fn axis(&self) -> Axis {
        self.diagnose.axis.unwrap_or(match self.orientation {
            Orientation::NewQuestion => Axis::RowSpace,
            Orientation::NewUser => Axis::ColumnSpace,
        })
    }
}

/// Overlays TOML tables onto the serialized defaults; unknown keys are errors.
fn merge<T: Serialize + for<'de> Deserialize<'de>>(base: T, layers: &[&toml::Table], name: &str) -> Result<T> {
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::param(e.to_string()))?;
    for layer in layers {
        for (k, v) in layer.iter() {
            if k == "family" || k == "method" {
                continue;
            }
            let slot = table
                .get_mut(k)
                .ok_or_else(|| Error::param(format!("method '{name}' has no parameter '{k}'")))?;
            *slot = match (&*slot, v) {
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
                _ => v.clone(),
            };
        }
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::param(format!("method '{name}': {}", e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(method: &str, profile: &str) -> Method {
        RunConfig {
            method: method.into(),
            profile: Some(profile.into()),
            ..Default::default()
        }
        .build_method()
        .unwrap()
    }

    #[test]
    fn profiles_load_table_values() {
        let Method::Regress(en) = with("en", "movielens.new_question") else { panic!() };
        assert_eq!((en.alpha, en.l1_ratio), (0.1, 0.1));
        let Method::Regress(nn) = with("nn", "twin2k.new_user") else { panic!() };
        assert_eq!(nn.hidden_sizes, vec![8, 8]);
        assert_eq!(nn.weight_decay, 0.001);
        let Method::Completion(als) = with("als", "twin2k.new_user") else { panic!() };
        assert_eq!((als.rank, als.lambda), (15, 0.5));
        let Method::Regress(si) = with("si", "movielens.new_question") else { panic!() };
        assert_eq!((si.rank, si.lambda), (50, 100.0));
        assert_eq!(builtin_profiles().len(), 4);
        for p in builtin_profiles().values() {
            assert_eq!(p.methods.len(), 10);
        }
    }

    #[test]
    fn overrides_and_errors() {
        let mut cfg = RunConfig {
            method: "ridge".into(),
            seed: 7,
            ..Default::default()
        };
        cfg.methods.insert("ridge".into(), toml::from_str("lambda = 3").unwrap());
        let Method::Regress(r) = cfg.build_method().unwrap() else { panic!() };
        assert_eq!((r.lambda, r.seed), (3.0, 7));
        cfg.methods.insert("ridge".into(), toml::from_str("lamda = 3").unwrap());
        assert!(cfg.build_method().is_err());
        cfg.method = "xgboost".into();
        assert!(cfg.build_method().is_err());
        cfg.method = "ridge".into();
        cfg.profile = Some("nope".into());
        assert!(cfg.build_method().is_err());
    }

    #[test]
    fn load_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "human = \"h.csv\"\nmethod = \"hsv\"\n[distcal]\ncodes = \"c.csv\"\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.human.unwrap(), dir.path().join("h.csv"));
        assert_eq!(cfg.distcal.codes.unwrap(), dir.path().join("c.csv"));
        std::fs::write(&p, "bogus = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Parse { .. })));
    }
}
