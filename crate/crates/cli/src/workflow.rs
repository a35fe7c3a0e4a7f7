//! Pipeline steps over one artifact directory:
//!
//! ```text
//! data/     train.csv test.csv schema.toml ingest.json
//! model/    direct.json proxy.json summary.json      (train_mlp only)
//! scored/   direct.csv proxy.csv
//! gan/      direct.json proxy.json direct_log.json proxy_log.json
//! sets/     canonical sets, one CSV plus JSON sidecar each
//! tables/   frequency tables, cross-tabs, group metrics (CSV)
//! figures/  SVG renderings of the tables
//! report.json report.txt config.toml manifest.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value as Json};

use fairgen_core::blackbox::{
    load_scored_csv, score_table, train_mlp, DifferentiableModel, MlpClassifier, ModelUnderAudit,
    ScoredTable, SubprocessModel,
};
use fairgen_core::data::{self, load_adult, load_compas, load_csv, RawTable, TableSchema};
use fairgen_core::lucid_baseline::{lucid_compare, lucid_generate, Target};
use fairgen_core::lucidgan::{
    proxy_audit_prepare, train, CanonicalSet, GenerationRequest, LucidGan,
};
use fairgen_core::metrics::{
    canonical_delta, disparity, group_metrics, intersectional_crosstab, shared_bins, summarize,
    DisparityKind, DistanceMetric, PairedSummary,
};
use fairgen_core::transforms::{Encoder, EncoderConfig};

use crate::config::{Dataset, Mode, ModelSource, RunConfig};
use crate::error::CliError;
use crate::manifest::Manifest;

/// Which scored table and generator an audit reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Direct,
    Proxy,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Direct => "direct",
            Variant::Proxy => "proxy",
        }
    }
}

pub struct Workspace {
    pub config: RunConfig,
    pub out: PathBuf,
    manifest: Manifest,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

impl Workspace {
    pub fn open(config: RunConfig) -> Result<Self, CliError> {
        let out = config.out.clone();
        std::fs::create_dir_all(&out)?;
        let manifest = Manifest::load_or_new(&out, &config)?;
        std::fs::write(out.join("config.toml"), config.to_toml())?;
        Ok(Self {
            config,
            out,
            manifest,
        })
    }

    fn dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn require(&self, rel: &str, step: &'static str) -> Result<PathBuf, CliError> {
        let p = self.out.join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact { path: p, step })
        }
    }

    pub fn finish(&mut self) -> Result<(), CliError> {
        self.manifest.write(&self.out)
    }

    fn timed<T>(
        &mut self,
        step: &str,
        f: impl FnOnce(&mut Self) -> Result<T, CliError>,
    ) -> Result<T, CliError> {
        let start = Instant::now();
        log::info!("{step}: start");
        let value = f(self)?;
        let secs = start.elapsed().as_secs_f64();
        log::info!("{step}: done in {secs:.1} s");
        self.manifest.runtime(step, secs);
        Ok(value)
    }

    // ---- prepare -------------------------------------------------------

    pub fn prepare(&mut self) -> Result<(), CliError> {
        self.timed("prepare", |ws| {
            let cfg = &ws.config;
            let (train, test, reports) = match cfg.dataset {
                Dataset::Adult => {
                    let s = load_adult()?;
                    (
                        s.train,
                        s.test,
                        json!({"train": s.train_report, "test": s.test_report}),
                    )
                }
                Dataset::Compas => {
                    let s = load_compas(cfg.seed)?;
                    (
                        s.train,
                        s.test,
                        json!({"train": s.train_report, "test": s.test_report}),
                    )
                }
                Dataset::Csv => {
                    let c = cfg.csv.as_ref().expect("validated");
                    let text = std::fs::read_to_string(&c.schema).map_err(|e| {
                        CliError::Data(format!("cannot read schema {}: {e}", c.schema.display()))
                    })?;
                    let schema = TableSchema::from_toml(&text)?;
                    let (all, report) = load_csv(&c.train, &schema)?;
                    match &c.test {
                        Some(t) => {
                            let (test, test_report) = load_csv(t, &schema)?;
                            (all, test, json!({"train": report, "test": test_report}))
                        }
                        None => {
                            let (train, test) = data::split(&all, c.test_fraction, cfg.seed)?;
                            (
                                train,
                                test,
                                json!({"train": report, "split_fraction": c.test_fraction}),
                            )
                        }
                    }
                }
            };
            if train.is_empty() || test.is_empty() {
                return Err(CliError::Data(
                    "prepared train or test split is empty".into(),
                ));
            }
            cfg.validate_schema(train.schema())?;
            let d = ws.dir("data")?;
            train.save_csv(&d.join("train.csv"))?;
            test.save_csv(&d.join("test.csv"))?;
            std::fs::write(d.join("schema.toml"), train.schema().to_toml())?;
            write_json(&d.join("ingest.json"), &reports)?;
            ws.manifest
                .fingerprint("schema", train.schema().fingerprint());
            log::info!(
                "prepared {} train and {} test rows",
                train.len(),
                test.len()
            );
            Ok(())
        })
    }

    pub fn schema(&self) -> Result<TableSchema, CliError> {
        let p = self.require("data/schema.toml", "prepare")?;
        let schema = TableSchema::from_toml(&std::fs::read_to_string(p)?)?;
        self.config.validate_schema(&schema)?;
        Ok(schema)
    }

    fn proxy_schema(&self, schema: &TableSchema) -> Result<TableSchema, CliError> {
        let withheld = &self.config.proxy.as_ref().expect("validated").withheld;
        let names: Vec<&str> = withheld.iter().map(String::as_str).collect();
        Ok(schema.withholding(&names)?)
    }

    fn variant_schema(&self, variant: Variant) -> Result<TableSchema, CliError> {
        let schema = self.schema()?;
        match variant {
            Variant::Direct => Ok(schema),
            Variant::Proxy => self.proxy_schema(&schema),
        }
    }

    fn prepared(&self, name: &str, schema: &TableSchema) -> Result<RawTable, CliError> {
        let p = self.require(&format!("data/{name}.csv"), "prepare")?;
        Ok(load_csv(&p, schema)?.0)
    }

    fn variants(&self) -> Vec<Variant> {
        let mut v = Vec::new();
        if self.config.has(Mode::Direct)
            || self.config.has(Mode::Intersectional)
            || self.config.has(Mode::Lucid)
        {
            v.push(Variant::Direct);
        }
        if self.config.has(Mode::Proxy) {
            v.push(Variant::Proxy);
        }
        v
    }

    // ---- train-model ---------------------------------------------------

    pub fn train_model(&mut self) -> Result<(), CliError> {
        let mlp = match &self.config.model {
            ModelSource::TrainMlp { mlp } => mlp.clone(),
            _ => {
                log::info!("train-model: model source is not train_mlp; nothing to train");
                return Ok(());
            }
        };
        self.timed("train-model", |ws| {
            let d = ws.dir("model")?;
            let mut summary = Map::new();
            for variant in ws.variants() {
                let schema = ws.variant_schema(variant)?;
                let train_rows = ws.prepared("train", &schema)?;
                let test_rows = ws.prepared("test", &schema)?;
                let model = train_mlp(&train_rows, &mlp)?;
                std::fs::write(d.join(format!("{}.json", variant.name())), model.to_json())?;
                ws.manifest
                    .fingerprint(&format!("model_{}", variant.name()), model.fingerprint());
                summary.insert(
                    variant.name().into(),
                    json!({
                        "hidden": model.hidden(),
                        "validation_accuracy": model.validation_accuracy(),
                        "test_accuracy": model.accuracy(&test_rows)?,
                        "inputs": model.input_features(),
                        "search": model.search(),
                    }),
                );
                log::info!(
                    "{} classifier: hidden {:?}, validation accuracy {:.3}",
                    variant.name(),
                    model.hidden(),
                    model.validation_accuracy()
                );
            }
            write_json(&d.join("summary.json"), &summary)?;
            Ok(())
        })
    }

    fn mlp(&self, variant: Variant) -> Result<MlpClassifier, CliError> {
        let p = self.require(&format!("model/{}.json", variant.name()), "train-model")?;
        Ok(MlpClassifier::from_json(&std::fs::read_to_string(p)?)?)
    }

    // ---- score ---------------------------------------------------------

    pub fn score(&mut self) -> Result<(), CliError> {
        self.timed("score", |ws| {
            let d = ws.dir("scored")?;
            for variant in ws.variants() {
                let schema = ws.variant_schema(variant)?;
                let scored = match &ws.config.model {
                    ModelSource::TrainMlp { .. } => {
                        let test = ws.prepared("test", &schema)?;
                        score_table(&ws.mlp(variant)?, &test)?
                    }
                    ModelSource::ScoredCsv {
                        scored,
                        proxy_scored,
                    } => {
                        let path = match variant {
                            Variant::Direct => scored,
                            Variant::Proxy => proxy_scored.as_ref().expect("validated"),
                        };
                        load_scored_csv(path, &schema)?
                    }
                    ModelSource::ExternalScorer {
                        command,
                        proxy_command,
                    } => {
                        let cmd = match variant {
                            Variant::Direct => command,
                            Variant::Proxy => proxy_command.as_ref().expect("validated"),
                        };
                        let inputs = schema.model_inputs().map(|(_, f)| f.name.clone()).collect();
                        let model = SubprocessModel::new(cmd[0].clone(), cmd[1..].to_vec(), inputs);
                        score_table(&model, &ws.prepared("test", &schema)?)?
                    }
                };
                if scored.is_empty() {
                    return Err(CliError::Data("no scored rows".into()));
                }
                scored.save_csv(&d.join(format!("{}.csv", variant.name())))?;
                log::info!("scored {} {} rows", scored.len(), variant.name());
            }
            Ok(())
        })
    }

    fn scored(&self, variant: Variant) -> Result<ScoredTable, CliError> {
        let schema = self.variant_schema(variant)?;
        let p = self.require(&format!("scored/{}.csv", variant.name()), "score")?;
        Ok(load_scored_csv(&p, &schema)?)
    }

    // ---- train-gan -----------------------------------------------------

    pub fn train_gan(&mut self) -> Result<(), CliError> {
        self.timed("train-gan", |ws| {
            // Check every input before the first long training run.
            let inputs: Vec<(Variant, ScoredTable)> = ws
                .variants()
                .into_iter()
                .map(|v| Ok((v, ws.scored(v)?)))
                .collect::<Result<_, CliError>>()?;
            let d = ws.dir("gan")?;
            for (variant, scored) in inputs {
                let scored = match variant {
                    Variant::Direct => scored,
                    Variant::Proxy => {
                        let schema = scored.table().schema().clone();
                        proxy_audit_prepare(&scored, &schema)?.scored
                    }
                };
                let encoder =
                    Encoder::fit(scored.table(), &EncoderConfig::default(), ws.config.seed)?;
                let (gan, log) = train(&scored, &encoder, &ws.config.gan)?;
                std::fs::write(d.join(format!("{}.json", variant.name())), gan.to_json())?;
                write_json(&d.join(format!("{}_log.json", variant.name())), &log)?;
                ws.manifest
                    .fingerprint(&format!("gan_{}", variant.name()), gan.fingerprint());
                log::info!(
                    "{} generator trained in {:.1} s",
                    variant.name(),
                    log.seconds
                );
            }
            Ok(())
        })
    }

    fn gan(&self, variant: Variant) -> Result<LucidGan, CliError> {
        let p = self.require(&format!("gan/{}.json", variant.name()), "train-gan")?;
        Ok(LucidGan::from_json(&std::fs::read_to_string(p)?)?)
    }

    // ---- audit ---------------------------------------------------------

    /// Generate every requested canonical set and write the metrics.
    pub fn run_audits(&mut self) -> Result<(), CliError> {
        // Every artifact the requested modes read, checked up front.
        let mut gans = BTreeMap::new();
        for v in self.variants() {
            if v == Variant::Direct
                && !(self.config.has(Mode::Direct) || self.config.has(Mode::Intersectional))
            {
                continue;
            }
            gans.insert(v.name(), self.gan(v)?);
        }
        let direct_scored = self.scored(Variant::Direct)?;
        let lucid_model = if self.config.has(Mode::Lucid) {
            Some(self.mlp(Variant::Direct)?)
        } else {
            None
        };

        self.timed("audit", |ws| {
            let sets = ws.dir("sets")?;
            let tables = ws.dir("tables")?;
            let n = ws.config.samples;
            let seed = ws.config.seed;
            let mut report = Map::new();
            report.insert("dataset".into(), json!(ws.config.dataset));
            report.insert("seed".into(), json!(seed));
            report.insert("samples".into(), json!(n));
            report.insert(
                "group_metrics".into(),
                ws.group_metrics(&direct_scored, &tables)?,
            );
            let mut modes = Map::new();
            let mut positives: BTreeMap<&str, CanonicalSet> = BTreeMap::new();

            for (mode, variant, offset) in [
                (Mode::Direct, Variant::Direct, 1),
                (Mode::Proxy, Variant::Proxy, 3),
            ] {
                if !ws.config.has(mode) {
                    continue;
                }
                let gan = &gans[variant.name()];
                let pos =
                    gan.generate(&GenerationRequest::new(1.0, n, seed.wrapping_add(offset)))?;
                let neg = gan.generate(&GenerationRequest::new(
                    0.0,
                    n,
                    seed.wrapping_add(offset + 1),
                ))?;
                let mut entry = paired_entry(mode, &pos, &neg, &sets, &tables)?;
                entry.insert(
                    "condition_fidelity".into(),
                    json!(gan.condition_fidelity(10_000, seed)?),
                );
                entry.insert(
                    "prediction_quantiles".into(),
                    json!(gan.prediction_quantiles()),
                );
                if mode == Mode::Proxy {
                    entry.insert(
                        "withheld".into(),
                        json!(ws.config.proxy.as_ref().expect("validated").withheld),
                    );
                }
                modes.insert(mode.name().into(), Json::Object(entry));
                positives.insert(mode.name(), pos);
            }

            if let (Some(d), Some(p)) = (positives.get("direct"), positives.get("proxy")) {
                if !d.is_empty() && !p.is_empty() {
                    let proxy_rows = p.rows.with_schema(d.schema().clone())?;
                    let bins = shared_bins(&[&d.rows, &proxy_rows])?;
                    let deltas = canonical_delta(
                        &summarize(&d.rows, &bins)?,
                        &summarize(&proxy_rows, &bins)?,
                    )?;
                    let mut by_feature = Map::new();
                    for fd in deltas {
                        let cats: Map<String, Json> = fd
                            .labels
                            .into_iter()
                            .zip(fd.delta)
                            .map(|(l, v)| (l, json!(v)))
                            .collect();
                        by_feature.insert(fd.feature, Json::Object(cats));
                    }
                    if let Some(Json::Object(proxy)) = modes.get_mut("proxy") {
                        proxy.insert(
                            "positive_delta_direct_minus_proxy".into(),
                            Json::Object(by_feature),
                        );
                    }
                }
            }

            if ws.config.has(Mode::Intersectional) {
                let entry = ws.intersectional(&gans["direct"], &sets, &tables)?;
                modes.insert("intersectional".into(), entry);
            }

            if let Some(model) = &lucid_model {
                let schema = model.input_encoder().schema(model.positive_label());
                let mut lucid = ws.config.lucid.clone();
                lucid.samples = n;
                let pos = lucid_generate(model, &schema, Target::Positive, &lucid)?;
                let neg = lucid_generate(model, &schema, Target::Negative, &lucid)?;
                let mut entry =
                    paired_entry(Mode::Lucid, &pos.canonical, &neg.canonical, &sets, &tables)?;
                entry.insert(
                    "converged".into(),
                    json!({"positive": pos.converged, "negative": neg.converged}),
                );
                if n > 0 {
                    let cmp = lucid_compare(&pos.canonical, &pos.initial)?;
                    let mut by_feature = Map::new();
                    for fd in cmp.deltas {
                        let cats: Map<String, Json> = fd
                            .labels
                            .into_iter()
                            .zip(fd.delta)
                            .map(|(l, v)| (l, json!(v)))
                            .collect();
                        by_feature.insert(fd.feature, Json::Object(cats));
                    }
                    entry.insert("positive_delta_vs_initial".into(), Json::Object(by_feature));
                }
                modes.insert("lucid".into(), Json::Object(entry));
            }

            report.insert("modes".into(), Json::Object(modes));
            write_json(&ws.out.join("report.json"), &report)?;
            Ok(())
        })
    }

    fn group_metrics(&self, scored: &ScoredTable, tables: &Path) -> Result<Json, CliError> {
        if scored.table().labels().is_none() {
            return Ok(
                json!({"note": "scored rows carry no ground-truth labels; PR/TPR not computed"}),
            );
        }
        let mut w = csv::Writer::from_path(tables.join("group_metrics.csv"))?;
        w.write_record(["feature", "category", "support", "pr", "tpr", "low_support"])?;
        let mut out = Map::new();
        for (_, spec) in scored.table().schema().protected() {
            if !spec.is_categorical() {
                continue;
            }
            let m = group_metrics(scored, &spec.name, &self.config.metrics)?;
            let mut cats = Map::new();
            for c in &m.categories {
                let pct =
                    |v: Option<f64>| v.map(|x| format!("{:.1}", x * 100.0)).unwrap_or_default();
                w.write_record([
                    spec.name.clone(),
                    c.category.clone(),
                    c.support.to_string(),
                    pct(c.pr),
                    pct(c.tpr),
                    c.low_support.to_string(),
                ])?;
                cats.insert(c.category.clone(), serde_json::to_value(c)?);
            }
            let gap = |kind| {
                disparity(&m, kind)
                    .ok()
                    .map(|d| serde_json::to_value(d))
                    .transpose()
            };
            out.insert(
                spec.name.clone(),
                json!({"categories": cats, "dp": gap(DisparityKind::Dp)?, "eop": gap(DisparityKind::Eop)?}),
            );
        }
        w.flush()?;
        Ok(Json::Object(out))
    }

    fn intersectional(&self, gan: &LucidGan, sets: &Path, tables: &Path) -> Result<Json, CliError> {
        let ix = self.config.intersectional.as_ref().expect("validated");
        let schema = gan.encoder().schema().clone();
        let (_, vary) = schema.feature(&ix.vary)?;
        let mut crosstabs = Vec::new();
        for (ci, cond) in ix.conditions.iter().enumerate() {
            let seed = self.config.seed.wrapping_add(10 + ci as u64);
            let mut generated = Vec::new();
            for (k, cat) in vary.categories.iter().enumerate() {
                let mut req =
                    GenerationRequest::new(1.0, self.config.samples, seed).fixing(&ix.vary, cat);
                for (f, c) in cond {
                    req = req.fixing(f, c);
                }
                let set = gan.generate(&req)?;
                set.save(sets, &format!("intersectional_{ci}_{k}"))?;
                generated.push(set);
            }
            let name = format!("crosstab_{ci}");
            if generated.iter().any(CanonicalSet::is_empty) {
                crosstabs.push(
                    json!({"name": name, "condition": cond, "note": "canonical sets are empty"}),
                );
                continue;
            }
            let ct = intersectional_crosstab(&generated.iter().collect::<Vec<_>>(), &ix.axis)?;
            ct.write_csv(std::fs::File::create(tables.join(format!("{name}.csv")))?)?;
            let rows: Map<String, Json> = ct
                .rows
                .iter()
                .map(|r| {
                    let cats: Map<String, Json> = ct
                        .categories
                        .iter()
                        .cloned()
                        .zip(r.percentages.iter().map(|p| json!(p)))
                        .collect();
                    (r.label(), Json::Object(cats))
                })
                .collect();
            let match_rates: Vec<Option<f64>> =
                generated.iter().map(|s| s.condition_match_rate).collect();
            crosstabs.push(json!({
                "name": name,
                "condition": cond,
                "axis": ct.axis,
                "rows": rows,
                "counts": ct.rows.iter().map(|r| r.rows).collect::<Vec<_>>(),
                "condition_match_rate": match_rates,
            }));
        }
        Ok(json!({"vary": ix.vary, "axis": ix.axis, "crosstabs": crosstabs}))
    }
}

/// Save a positive/negative pair and summarize it; the two sets are always
/// written together.
fn paired_entry(
    mode: Mode,
    pos: &CanonicalSet,
    neg: &CanonicalSet,
    sets: &Path,
    tables: &Path,
) -> Result<Map<String, Json>, CliError> {
    let name = mode.name();
    pos.save(sets, &format!("{name}_positive"))?;
    neg.save(sets, &format!("{name}_negative"))?;
    let mut entry = Map::new();
    entry.insert(
        "sets".into(),
        json!({"positive": format!("sets/{name}_positive.csv"), "negative": format!("sets/{name}_negative.csv")}),
    );
    if pos.is_empty() || neg.is_empty() {
        entry.insert("status".into(), json!("empty"));
        entry.insert(
            "note".into(),
            json!("canonical sets are empty; nothing to summarize"),
        );
        return Ok(entry);
    }
    let pair = PairedSummary::new(&pos.rows, &neg.rows)?;
    let mut features = Map::new();
    for (feature, _) in &pair.positive().features {
        let rows = pair
            .frequency_rows(feature)
            .expect("feature of the summary");
        let mut w = csv::Writer::from_path(tables.join(format!("{name}_{feature}.csv")))?;
        w.write_record(["label", "positive", "negative"])?;
        let mut cats = Map::new();
        for (label, p, n) in rows {
            w.write_record([label.clone(), format!("{p:.6}"), format!("{n:.6}")])?;
            cats.insert(label, json!({"positive": p, "negative": n, "gap": p - n}));
        }
        w.flush()?;
        features.insert(feature.clone(), Json::Object(cats));
    }
    let mut distances = Map::new();
    for (w1, js) in pair
        .distances(DistanceMetric::Wasserstein1)
        .iter()
        .zip(pair.distances(DistanceMetric::JensenShannon))
    {
        distances.insert(
            w1.feature.clone(),
            json!({"wasserstein1": w1.value, "jensen_shannon": js.value, "caveat": w1.caveat}),
        );
    }
    entry.insert("status".into(), json!("ok"));
    entry.insert("features".into(), Json::Object(features));
    entry.insert("distances".into(), Json::Object(distances));
    Ok(entry)
}
