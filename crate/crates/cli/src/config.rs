use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fairgen_core::blackbox::MlpTrainConfig;
use fairgen_core::data::{FeatureKind, TableSchema};
use fairgen_core::lucid_baseline::InverseDesignConfig;
use fairgen_core::lucidgan::TrainConfig;
use fairgen_core::metrics::MetricsConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Adult,
    Compas,
    Csv,
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Proxy,
    Intersectional,
    Lucid,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Proxy => "proxy",
            Mode::Intersectional => "intersectional",
            Mode::Lucid => "lucid",
        }
    }
}

/// Paths for `dataset = "csv"`; relative paths resolve against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    /// Held-out rows; when absent, `test_fraction` of `train` is split off.
    pub test: Option<PathBuf>,
    pub schema: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Where the audited model's predictions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    TrainMlp {
        #[serde(default)]
        mlp: MlpTrainConfig,
    },
    /// Pre-scored test rows. Proxy audits need a second file scored by a
    /// model that never saw the withheld features.
    ScoredCsv {
        scored: PathBuf,
        proxy_scored: Option<PathBuf>,
    },
    /// Program scoring CSV rows on stdin; see the README for the protocol.
    ExternalScorer {
        command: Vec<String>,
        proxy_command: Option<Vec<String>>,
    },
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::TrainMlp {
            mlp: MlpTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    pub withheld: Vec<String>,
}

/// One cross-tab per entry of `conditions`: every category of `vary` is
/// fixed in turn together with the condition's pairs, and the positive sets
/// are tabulated over `axis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionalConfig {
    pub vary: String,
    pub axis: String,
    #[serde(default = "unconditioned")]
    pub conditions: Vec<BTreeMap<String, String>>,
}

fn unconditioned() -> Vec<BTreeMap<String, String>> {
    vec![BTreeMap::new()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Dataset,
    pub out: PathBuf,
    pub seed: u64,
    pub modes: Vec<Mode>,
    /// Rows per canonical set.
    pub samples: usize,
    pub csv: Option<CsvSource>,
    pub model: ModelSource,
    pub proxy: Option<ProxyConfig>,
    pub intersectional: Option<IntersectionalConfig>,
    pub gan: TrainConfig,
    pub lucid: InverseDesignConfig,
    pub metrics: MetricsConfig,
}

/// The config file as written: every key optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    dataset: Option<Dataset>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    modes: Option<Vec<Mode>>,
    samples: Option<usize>,
    csv: Option<CsvSource>,
    model: Option<ModelSource>,
    proxy: Option<ProxyConfig>,
    intersectional: Option<IntersectionalConfig>,
    gan: Option<TrainConfig>,
    lucid: Option<InverseDesignConfig>,
    metrics: Option<MetricsConfig>,
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<Dataset>,
    pub modes: Vec<Mode>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub samples: Option<usize>,
}

fn default_proxy(dataset: Dataset) -> Option<ProxyConfig> {
    match dataset {
        Dataset::Adult | Dataset::Compas => Some(ProxyConfig {
            withheld: vec!["sex".into(), "race".into()],
        }),
        Dataset::Csv => None,
    }
}

fn default_intersectional(dataset: Dataset) -> Option<IntersectionalConfig> {
    let married = |feature: &str, category: &str| {
        BTreeMap::from([(feature.to_string(), category.to_string())])
    };
    let conditions = match dataset {
        Dataset::Adult => vec![
            BTreeMap::new(),
            married("marital-status", "Married-civ-spouse"),
        ],
        Dataset::Compas => vec![BTreeMap::new()],
        Dataset::Csv => return None,
    };
    Some(IntersectionalConfig {
        vary: "sex".into(),
        axis: "race".into(),
        conditions,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Read `path` (if any), apply `overrides` and fill dataset defaults.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let bad = |e: toml::de::Error| CliError::Config(format!("{}: {e}", p.display()));
                let mut table: toml::Table = toml::from_str(&text).map_err(bad)?;
                // A [model] table without `source` configures the built-in classifier.
                if let Some(toml::Value::Table(m)) = table.get_mut("model") {
                    m.entry("source").or_insert_with(|| "train_mlp".into());
                }
                let file = ConfigFile::deserialize(table).map_err(bad)?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                let dir = if dir.is_absolute() {
                    dir
                } else {
                    std::env::current_dir()?.join(dir)
                };
                (file, dir)
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let dataset = overrides.dataset.or(file.dataset).ok_or_else(|| {
            CliError::Config("no dataset given (use --dataset or `dataset` in the config)".into())
        })?;
        let modes = if overrides.modes.is_empty() {
            file.modes.unwrap_or_else(|| vec![Mode::Direct])
        } else {
            overrides.modes.clone()
        };
        let mut csv = file.csv;
        if let Some(c) = &mut csv {
            c.train = resolve(&base, &c.train);
            c.schema = resolve(&base, &c.schema);
            c.test = c.test.as_ref().map(|t| resolve(&base, t));
        }
        let mut model = file.model.unwrap_or_default();
        if let ModelSource::ScoredCsv {
            scored,
            proxy_scored,
        } = &mut model
        {
            *scored = resolve(&base, scored);
            *proxy_scored = proxy_scored.as_ref().map(|p| resolve(&base, p));
        }
        let seed = overrides.seed.or(file.seed).unwrap_or(0);
        let mut gan = file.gan.unwrap_or_default();
        if let Some(e) = overrides.epochs {
            gan.epochs = e;
        }
        gan.seed = seed;
        let mut lucid = file.lucid.unwrap_or_default();
        lucid.seed = seed;
        if let ModelSource::TrainMlp { mlp } = &mut model {
            mlp.seed = seed;
        }
        let samples = overrides.samples.or(file.samples).unwrap_or(1000);
        lucid.samples = samples;
        let config = RunConfig {
            dataset,
            out: overrides
                .out
                .clone()
                .or(file.out.map(|o| resolve(&base, &o)))
                .ok_or_else(|| CliError::Config("no output directory given (use --out)".into()))?,
            seed,
            modes,
            samples,
            csv,
            model,
            proxy: file.proxy.or_else(|| default_proxy(dataset)),
            intersectional: file
                .intersectional
                .or_else(|| default_intersectional(dataset)),
            gan,
            lucid,
            metrics: file.metrics.unwrap_or_default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn has(&self, mode: Mode) -> bool {
        self.modes.contains(&mode)
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.modes.is_empty() {
            return bad("no audit modes selected".into());
        }
        if self.dataset == Dataset::Csv && self.csv.is_none() {
            return bad("dataset `csv` needs a [csv] table with train and schema paths".into());
        }
        if self.dataset != Dataset::Csv && self.csv.is_some() {
            return bad("a [csv] table is only valid with dataset `csv`".into());
        }
        if let Some(c) = &self.csv {
            if !(c.test_fraction > 0.0 && c.test_fraction < 1.0) {
                return bad("csv.test_fraction must lie in (0, 1)".into());
            }
        }
        if self.has(Mode::Proxy) {
            if self.proxy.as_ref().map_or(true, |p| p.withheld.is_empty()) {
                return bad(
                    "proxy mode needs at least one withheld protected feature in [proxy]".into(),
                );
            }
            match &self.model {
                ModelSource::ScoredCsv {
                    proxy_scored: None, ..
                } => return bad("proxy mode with scored_csv needs model.proxy_scored".into()),
                ModelSource::ExternalScorer {
                    proxy_command: None,
                    ..
                } => return bad("proxy mode with external_scorer needs model.proxy_command".into()),
                _ => {}
            }
        }
        if self.has(Mode::Intersectional) && self.intersectional.is_none() {
            return bad("intersectional mode needs an [intersectional] table".into());
        }
        if self.has(Mode::Lucid) && !matches!(self.model, ModelSource::TrainMlp { .. }) {
            return bad(
                "lucid mode needs gradients and therefore model.source = \"train_mlp\"".into(),
            );
        }
        if let ModelSource::ExternalScorer {
            command,
            proxy_command,
        } = &self.model
        {
            if command.is_empty() || proxy_command.as_ref().is_some_and(Vec::is_empty) {
                return bad("external scorer commands must not be empty".into());
            }
        }
        self.gan
            .validate()
            .map_err(|e| CliError::Config(format!("gan: {e}")))?;
        self.lucid
            .validate()
            .map_err(|e| CliError::Config(format!("lucid: {e}")))?;
        Ok(())
    }

    /// Checks against the prepared schema.
    pub fn validate_schema(&self, schema: &TableSchema) -> Result<(), CliError> {
        let categorical = |name: &str, what: &str| -> Result<(), CliError> {
            match schema.feature(name) {
                Ok((_, f)) if f.kind == FeatureKind::Categorical => Ok(()),
                Ok(_) => Err(CliError::Config(format!(
                    "{what} `{name}` is not categorical"
                ))),
                Err(_) => Err(CliError::Config(format!(
                    "{what} `{name}` is not in the schema"
                ))),
            }
        };
        if self.has(Mode::Proxy) {
            for name in &self.proxy.as_ref().expect("validated").withheld {
                categorical(name, "withheld feature")?;
                if !schema.feature(name).expect("checked").1.protected {
                    return Err(CliError::Config(format!(
                        "withheld feature `{name}` is not marked protected"
                    )));
                }
            }
        }
        if self.has(Mode::Intersectional) {
            let ix = self.intersectional.as_ref().expect("validated");
            categorical(&ix.vary, "intersectional.vary")?;
            categorical(&ix.axis, "intersectional.axis")?;
            if ix.conditions.is_empty() {
                return Err(CliError::Config(
                    "intersectional.conditions must not be empty".into(),
                ));
            }
            for cond in &ix.conditions {
                for (f, c) in cond {
                    schema
                        .category(f, c)
                        .map_err(|e| CliError::Config(format!("intersectional condition: {e}")))?;
                    if f == &ix.vary || f == &ix.axis {
                        return Err(CliError::Config(format!(
                            "intersectional condition fixes `{f}`, which is the varied or tabulated feature"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
