use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bofex::bag_of_features::{
    feature_channel, train_codebooks, Codebooks, FeatureVector, LogAssignments, N_CLUSTERS,
};
use bofex::consistency::{consistency_report, corpus_taus, Case, Moment};
use bofex::evaluation::experiment::{
    balanced_subsample, corpus_segments, in_blackout, in_region, run_with_progress, training_ends,
    ExplainedCase, Metrics,
};
use bofex::evaluation::{FoldPlan, ProbSeries, ThresholdTable};
use bofex::fcmh;
use bofex::gbm::{self, GbmModel, SparseMatrix, TrainConfig};
use bofex::shap::{explain_features, ExplainConfig};
use bofex::synthgen::generate;
use bofex::telemetry::{AccidentType, Dataset, Mnemonic, SEGMENT_LEN};
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::report::{self, fmt_time, Figure};
use crate::{
    EvaluateArgs, ExplainArgs, FeaturizeArgs, GenArgs, PredictArgs, ReportArgs, TrainCodebooksArgs,
    TrainFcmhArgs, TrainGbmArgs, TsneArgs,
};

/// Default artifact locations under the work directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn codebooks(&self) -> PathBuf {
        self.root.join("codebooks.json")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features.jsonl")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }
    pub fn explanations(&self) -> PathBuf {
        self.root.join("explanations.jsonl")
    }
    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation")
    }
    pub fn tsne(&self) -> PathBuf {
        self.root.join("tsne")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.html")
    }
    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
}

pub struct Ctx {
    pub cfg: FileConfig,
    pub layout: Layout,
}

fn kind_slug(kind: AccidentType) -> String {
    kind.as_str().to_ascii_lowercase()
}

pub fn gbm_path(dir: &Path, kind: AccidentType) -> PathBuf {
    dir.join(format!("gbm-{}.json", kind_slug(kind)))
}

pub fn fcmh_path(dir: &Path, kind: AccidentType) -> PathBuf {
    dir.join(format!("fcmh-{}.json", kind_slug(kind)))
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(what, path))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    fs::write(path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path, what: &str) -> CliResult<String> {
    require(path, what)?;
    fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = read_file(path, what)?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("malformed {what} {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::internal(e.to_string()))
}

fn load_data(ctx: &Ctx, dir: &Path) -> CliResult<Dataset> {
    require(&dir.join("wells"), "telemetry data")?;
    let data = Dataset::load(dir, &ctx.cfg.limits()?)?;
    if data.logs.is_empty() {
        return Err(CliError::data(format!("no well logs in {}", dir.join("wells").display())));
    }
    Ok(data)
}

fn load_codebooks(path: &Path) -> CliResult<Codebooks> {
    require(path, "codebooks")?;
    Ok(Codebooks::load(path)?)
}

/// GBM models of every type present in `dir`; at least one is required.
fn load_gbms(dir: &Path) -> CliResult<BTreeMap<AccidentType, GbmModel>> {
    let mut out = BTreeMap::new();
    for kind in AccidentType::ALL {
        let p = gbm_path(dir, kind);
        if p.exists() {
            out.insert(kind, GbmModel::load(&p)?);
        }
    }
    if out.is_empty() {
        return Err(CliError::missing(
            "trained GBM model",
            &dir.join("gbm-<type>.json"),
        ));
    }
    Ok(out)
}

pub fn gen(ctx: &Ctx, args: &GenArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg.gen.clone();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.wells {
        cfg.wells = w;
    }
    if let Some(h) = args.hours {
        cfg.hours = h;
    }
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.data());
    let mut m = ManifestBuilder::new("gen", &cfg)?;
    m.seed("gen", cfg.seed);
    let data = generate(&cfg)?;
    data.save(&out)?;
    m.output(&out);
    eprintln!(
        "generated {} wells with {} accidents in {}",
        data.logs.len(),
        data.events.len(),
        out.display()
    );
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

pub fn train_codebooks_cmd(ctx: &Ctx, args: &TrainCodebooksArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg.train_codebooks.clone();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let data_dir = args.data.clone().unwrap_or_else(|| ctx.layout.data());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.codebooks());
    let mut m = ManifestBuilder::new("train-codebooks", &cfg)?;
    m.seed("kmeans", cfg.seed).input(&data_dir);
    let data = load_data(ctx, &data_dir)?;
    let logs: Vec<_> = data.logs.iter().collect();
    let corpus = corpus_segments(&logs, cfg.corpus_every_minutes)?;
    let books = train_codebooks(&corpus, &cfg.bof, cfg.seed)?;
    books.save(&out)?;
    m.output(&out);
    eprintln!("codebooks from {} segments written to {}", corpus.len(), out.display());
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

/// One labeled training window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub well_id: String,
    pub end: usize,
    pub time: i64,
    /// Accident types whose region contains the window end.
    pub labels: Vec<AccidentType>,
    /// Non-zero `(feature, count)` pairs.
    pub counts: Vec<(usize, u16)>,
}

impl FeatureRecord {
    fn vector(&self) -> CliResult<FeatureVector> {
        let mut dense = FeatureVector::zeros().counts().to_vec();
        for &(f, c) in &self.counts {
            let slot = dense
                .get_mut(f)
                .ok_or_else(|| CliError::data(format!("feature index {f} out of range")))?;
            *slot = c;
        }
        Ok(FeatureVector::from_counts(dense)?)
    }
}

pub fn featurize_cmd(ctx: &Ctx, args: &FeaturizeArgs) -> CliResult<()> {
    let cfg = ctx.cfg.featurize.clone();
    let data_dir = args.data.clone().unwrap_or_else(|| ctx.layout.data());
    let cb_path = args.codebooks.clone().unwrap_or_else(|| ctx.layout.codebooks());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.features());
    let mut m = ManifestBuilder::new("featurize", &cfg)?;
    m.input(&data_dir).input(&cb_path);
    let books = load_codebooks(&cb_path)?;
    let data = load_data(ctx, &data_dir)?;
    let ecfg = cfg.as_experiment();
    ecfg.validate()?;
    let mut text = String::new();
    let mut n = 0;
    for log in &data.logs {
        let la = LogAssignments::compute(log, &books);
        for end in training_ends(log, &data.events, &ecfg) {
            let t = log.time_at(end);
            let rec = FeatureRecord {
                well_id: log.well_id().to_string(),
                end,
                time: t,
                labels: AccidentType::ALL
                    .into_iter()
                    .filter(|&k| in_region(&data.events, log.well_id(), k, t))
                    .collect(),
                counts: la.feature_vector(end)?.nonzero().collect(),
            };
            text.push_str(&serde_json::to_string(&rec)?);
            text.push('\n');
            n += 1;
        }
    }
    write_file(&out, text)?;
    m.output(&out);
    eprintln!("{n} training windows written to {}", out.display());
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

fn read_features(path: &Path) -> CliResult<Vec<FeatureRecord>> {
    let text = read_file(path, "feature")?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        out.push(
            serde_json::from_str(line)
                .map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    if out.is_empty() {
        return Err(CliError::data(format!("{} has no training windows", path.display())));
    }
    Ok(out)
}

fn parse_kinds(names: &[String], records: &[FeatureRecord]) -> CliResult<Vec<AccidentType>> {
    if names.is_empty() {
        return Ok(AccidentType::ALL
            .into_iter()
            .filter(|k| records.iter().any(|r| r.labels.contains(k)))
            .collect());
    }
    names
        .iter()
        .map(|n| n.parse::<AccidentType>().map_err(|e| CliError::usage(e.to_string())))
        .collect()
}

fn labels(records: &[FeatureRecord], kind: AccidentType) -> Vec<bool> {
    records.iter().map(|r| r.labels.contains(&kind)).collect()
}

pub fn train_gbm_cmd(ctx: &Ctx, args: &TrainGbmArgs) -> CliResult<()> {
    let mut cfg: TrainConfig = ctx.cfg.train_gbm.clone();
    if let Some(v) = args.trees {
        cfg.estimators = v;
    }
    if let Some(v) = args.depth {
        cfg.max_depth = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let features = args.features.clone().unwrap_or_else(|| ctx.layout.features());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.models());
    let mut m = ManifestBuilder::new("train-gbm", &cfg)?;
    m.input(&features);
    let records = read_features(&features)?;
    let kinds = parse_kinds(&args.kind, &records)?;
    let rows = records.iter().map(FeatureRecord::vector).collect::<CliResult<Vec<_>>>()?;
    let x = SparseMatrix::from_features(rows.iter());
    for kind in kinds {
        let y = labels(&records, kind);
        let kcfg = TrainConfig {
            seed: cfg.seed.wrapping_add(kind.index() as u64),
            ..cfg.clone()
        };
        m.seed(&format!("gbm-{}", kind_slug(kind)), kcfg.seed);
        let model = gbm::train(&x, &y, &kcfg)?;
        let p = gbm_path(&out, kind);
        fs::create_dir_all(&out).map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
        model.save(&p)?;
        m.output(&p);
        eprintln!("{kind}: {} trees written to {}", model.n_trees(), p.display());
    }
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

pub fn train_fcmh_cmd(ctx: &Ctx, args: &TrainFcmhArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg.train_fcmh.clone();
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.max_samples {
        cfg.max_samples = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    let features = args.features.clone().unwrap_or_else(|| ctx.layout.features());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.models());
    let mut m = ManifestBuilder::new("train-fcmh", &cfg)?;
    m.input(&features);
    let records = read_features(&features)?;
    let kinds = parse_kinds(&args.kind, &records)?;
    let rows = records.iter().map(FeatureRecord::vector).collect::<CliResult<Vec<_>>>()?;
    // Every channel block of a window sums to the tau-segment count.
    let taus: usize = rows[0].channel_block(Mnemonic::ALL[0]).iter().map(|&c| c as usize).sum();
    fs::create_dir_all(&out).map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
    for kind in kinds {
        let y = labels(&records, kind);
        let (fx, fy) = balanced_subsample(&rows, &y, cfg.max_samples, cfg.train.seed, kind.index() as u64);
        let mut tcfg = cfg.train.clone();
        tcfg.seed = tcfg.seed.wrapping_add(kind.index() as u64);
        tcfg.model.input_scale = fcmh::input_scale_for(taus);
        m.seed(&format!("fcmh-{}", kind_slug(kind)), tcfg.seed);
        let trained = fcmh::train(&fx, &fy, &tcfg)?;
        let p = fcmh_path(&out, kind);
        trained.model.save(&p)?;
        let log_path = out.join(format!("fcmh-{}-log.json", kind_slug(kind)));
        write_file(&log_path, to_json(&trained.log)?)?;
        m.output(&p).output(&log_path);
        let last = trained.log.last();
        eprintln!(
            "{kind}: {} samples, final loss {:.4}, written to {}",
            fx.len(),
            last.map_or(f64::NAN, |l| l.loss),
            p.display()
        );
    }
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

/// Alarm probabilities of every grid moment of every well.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub kinds: Vec<AccidentType>,
    /// `(well_id, end, time, probability per kind)`
    pub rows: Vec<(String, usize, i64, Vec<f64>)>,
}

impl Predictions {
    fn write(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["well_id".to_string(), "end".into(), "time".into()];
        header.extend(self.kinds.iter().map(|k| k.as_str().to_string()));
        let err = |e: csv::Error| CliError::internal(e.to_string());
        w.write_record(&header).map_err(err)?;
        for (well, end, t, ps) in &self.rows {
            let mut rec = vec![well.clone(), end.to_string(), t.to_string()];
            rec.extend(ps.iter().map(|p| p.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::internal(e.to_string()))?;
        write_file(path, bytes)
    }

    fn read(path: &Path) -> CliResult<Self> {
        require(path, "predictions")?;
        let bad = |e: &dyn std::fmt::Display| CliError::data(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
        let header = r.headers().map_err(|e| bad(&e))?.clone();
        if header.len() < 4 || &header[0] != "well_id" {
            return Err(bad(&"not a predictions file"));
        }
        let kinds = header
            .iter()
            .skip(3)
            .map(|h| h.parse::<AccidentType>())
            .collect::<bofex::Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(&e))?;
            let num = |i: usize| rec.get(i).ok_or_else(|| bad(&"short row"));
            let end = num(1)?.parse().map_err(|e| bad(&e))?;
            let t = num(2)?.parse().map_err(|e| bad(&e))?;
            let ps = (3..rec.len())
                .map(|i| num(i)?.parse::<f64>().map_err(|e| bad(&e)))
                .collect::<CliResult<Vec<_>>>()?;
            rows.push((num(0)?.to_string(), end, t, ps));
        }
        Ok(Predictions { kinds, rows })
    }
}

pub fn predict_cmd(ctx: &Ctx, args: &PredictArgs) -> CliResult<()> {
    let data_dir = args.data.clone().unwrap_or_else(|| ctx.layout.data());
    let cb_path = args.codebooks.clone().unwrap_or_else(|| ctx.layout.codebooks());
    let models = args.models.clone().unwrap_or_else(|| ctx.layout.models());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.predictions());
    let mut m = ManifestBuilder::new("predict", &serde_json::json!({}))?;
    m.input(&data_dir).input(&cb_path).input(&models);
    let books = load_codebooks(&cb_path)?;
    let gbms = load_gbms(&models)?;
    let data = load_data(ctx, &data_dir)?;
    let mut preds = Predictions {
        kinds: gbms.keys().copied().collect(),
        rows: Vec::new(),
    };
    for log in &data.logs {
        let la = LogAssignments::compute(log, &books);
        for end in SEGMENT_LEN..=log.len() {
            let fv = la.feature_vector(end)?;
            let ps = gbms
                .values()
                .map(|g| g.predict_proba(&fv))
                .collect::<bofex::Result<Vec<_>>>()?;
            preds.rows.push((log.well_id().to_string(), end, log.time_at(end), ps));
        }
    }
    preds.write(&out)?;
    m.output(&out);
    eprintln!("{} moments scored, written to {}", preds.rows.len(), out.display());
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighlightRecord {
    pub channel: Mnemonic,
    pub start: String,
    pub end: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopFeature {
    pub feature: usize,
    pub channel: Mnemonic,
    pub cluster: usize,
    pub phi: f64,
}

/// One explained alarm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub well_id: String,
    pub time: String,
    pub end: usize,
    pub kind: AccidentType,
    pub probability: f64,
    pub threshold: f64,
    pub base_value: f64,
    pub highlights: Vec<HighlightRecord>,
    pub top_features: Vec<TopFeature>,
}

pub fn explain_cmd(ctx: &Ctx, args: &ExplainArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg.explain.clone();
    if args.threshold.is_some() {
        cfg.threshold = args.threshold;
    }
    if let Some(v) = args.m_percent {
        cfg.m_percent = v;
    }
    if cfg.stride == 0 {
        return Err(CliError::usage("explain stride must be positive"));
    }
    let ecfg = ExplainConfig::new(cfg.m_percent)?;
    let data_dir = args.data.clone().unwrap_or_else(|| ctx.layout.data());
    let cb_path = args.codebooks.clone().unwrap_or_else(|| ctx.layout.codebooks());
    let models = args.models.clone().unwrap_or_else(|| ctx.layout.models());
    let pred_path = args.predictions.clone().unwrap_or_else(|| ctx.layout.predictions());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.explanations());
    let mut m = ManifestBuilder::new("explain", &cfg)?;
    m.input(&data_dir).input(&cb_path).input(&models).input(&pred_path);

    let gbms = load_gbms(&models)?;
    let books = load_codebooks(&cb_path)?;
    let preds = Predictions::read(&pred_path)?;
    let data = load_data(ctx, &data_dir)?;

    let mut series: Vec<ProbSeries> = Vec::new();
    for (k, &kind) in preds.kinds.iter().enumerate() {
        let mut by_well: BTreeMap<&str, ProbSeries> = BTreeMap::new();
        for (well, _, t, ps) in &preds.rows {
            if in_blackout(&data.events, well, *t, cfg.blackout_seconds) {
                continue;
            }
            let s = by_well.entry(well).or_insert_with(|| ProbSeries {
                well_id: well.clone(),
                kind,
                times: Vec::new(),
                probs: Vec::new(),
            });
            s.times.push(*t);
            s.probs.push(ps[k]);
        }
        series.extend(by_well.into_values());
    }
    let thresholds: BTreeMap<AccidentType, f64> = match cfg.threshold {
        Some(t) => preds.kinds.iter().map(|&k| (k, t)).collect(),
        None => {
            let table = ThresholdTable::fit(&series, &data.events)?;
            let thr_path = out.with_file_name("thresholds.json");
            write_file(&thr_path, to_json(&table)?)?;
            m.output(&thr_path);
            table.entries.iter().map(|e| (e.kind, e.stats.threshold)).collect()
        }
    };

    let mut text = String::new();
    let mut n = 0;
    let mut assignments: BTreeMap<&str, LogAssignments> = BTreeMap::new();
    for (well, end, t, ps) in &preds.rows {
        if end % cfg.stride != 0 || in_blackout(&data.events, well, *t, cfg.blackout_seconds) {
            continue;
        }
        for (k, &kind) in preds.kinds.iter().enumerate() {
            let (Some(&thr), Some(model)) = (thresholds.get(&kind), gbms.get(&kind)) else {
                continue;
            };
            if ps[k] < thr {
                continue;
            }
            if !assignments.contains_key(well.as_str()) {
                let log = data
                    .log(well)
                    .ok_or_else(|| CliError::data(format!("predictions name unknown well {well}")))?;
                assignments.insert(well.as_str(), LogAssignments::compute(log, &books));
            }
            let log = data.log(well).expect("checked above");
            let (fv, idx) = assignments[well.as_str()].featurize(*end)?;
            let ex = explain_features(model, &fv, &idx, &ecfg)?;
            let seg_start = log.time_at(end - SEGMENT_LEN);
            let mut top: Vec<(usize, f64)> = ex
                .attribution
                .values
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, v)| v != 0.0)
                .collect();
            top.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            top.truncate(cfg.top_features);
            let rec = ExplanationRecord {
                well_id: well.clone(),
                time: fmt_time(*t),
                end: *end,
                kind,
                probability: ex.probability,
                threshold: thr,
                base_value: ex.attribution.base_value,
                highlights: ex
                    .highlights
                    .time_intervals(seg_start, log.step())
                    .into_iter()
                    .map(|(channel, a, b)| HighlightRecord {
                        channel,
                        start: fmt_time(a),
                        end: fmt_time(b),
                    })
                    .collect(),
                top_features: top
                    .into_iter()
                    .map(|(f, phi)| TopFeature {
                        feature: f,
                        channel: feature_channel(f),
                        cluster: f % N_CLUSTERS,
                        phi,
                    })
                    .collect(),
            };
            text.push_str(&serde_json::to_string(&rec)?);
            text.push('\n');
            n += 1;
        }
    }
    write_file(&out, text)?;
    m.output(&out);
    eprintln!("{n} alarms explained, written to {}", out.display());
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

/// Probability track of one explained case, around its region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTrack {
    pub well_id: String,
    pub kind: AccidentType,
    pub event_time: i64,
    pub points: Vec<(i64, f64)>,
}

pub fn evaluate_cmd(ctx: &Ctx, args: &EvaluateArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg.evaluate.clone();
    if let Some(v) = args.folds {
        cfg.folds = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let data_dir = args.data.clone().unwrap_or_else(|| ctx.layout.data());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.evaluation());
    let mut m = ManifestBuilder::new("evaluate", &cfg)?;
    m.seed("evaluate", cfg.seed).input(&data_dir);
    let data = load_data(ctx, &data_dir)?;
    let exp = run_with_progress(&data, &cfg, &mut |msg| eprintln!("{msg}"))?;

    let tracks: Vec<CaseTrack> = exp
        .cases
        .iter()
        .map(|c| {
            let from = c.event.region_start - SEGMENT_LEN as i64 * bofex::telemetry::STEP_SECONDS;
            let points = exp
                .series
                .iter()
                .filter(|s| s.well_id == c.event.well_id && s.kind == c.event.kind)
                .flat_map(|s| s.times.iter().copied().zip(s.probs.iter().copied()))
                .filter(|&(t, _)| t >= from && t <= c.event.event_time)
                .collect();
            CaseTrack {
                well_id: c.event.well_id.clone(),
                kind: c.event.kind,
                event_time: c.event.event_time,
                points,
            }
        })
        .collect();

    let files: Vec<(PathBuf, String)> = vec![
        (out.join("metrics.json"), exp.metrics.to_json()? + "\n"),
        (out.join("tables.txt"), report::metrics_text(&exp.metrics)),
        (out.join("folds.json"), to_json(&exp.plan)?),
        (out.join("cases.json"), to_json(&exp.cases)?),
        (out.join("tracks.json"), to_json(&tracks)?),
    ];
    for (p, body) in files {
        write_file(&p, body)?;
        m.output(&p);
    }
    for (k, f) in exp.folds.iter().enumerate() {
        let p = out.join(format!("fold-{k}-codebooks.json"));
        f.codebooks.save(&p)?;
        m.output(&p);
    }
    print!("{}", report::metrics_text(&exp.metrics));
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

fn pick_case(cases: &[ExplainedCase], wanted: Option<usize>, kind: AccidentType) -> CliResult<usize> {
    if let Some(i) = wanted {
        return match cases.get(i) {
            Some(c) if c.moments.len() >= 2 => Ok(i),
            Some(_) => Err(CliError::usage(format!("case {i} has fewer than two alarm moments"))),
            None => Err(CliError::usage(format!("case {i} does not exist ({} cases)", cases.len()))),
        };
    }
    let multi = |c: &&ExplainedCase| c.moments.len() >= 2;
    cases
        .iter()
        .position(|c| multi(&c) && c.event.kind == kind)
        .or_else(|| cases.iter().position(|c| multi(&c)))
        .ok_or_else(|| CliError::data("no explained accident has two or more alarm moments"))
}

#[derive(Serialize)]
struct TsneSummary<'a> {
    case: usize,
    well_id: &'a str,
    kind: AccidentType,
    event_time: i64,
    moments: usize,
    channels: Vec<(Mnemonic, usize, f64)>,
    score: &'a Option<bofex::consistency::ConsistencyScore>,
}

pub fn tsne_cmd(ctx: &Ctx, args: &TsneArgs) -> CliResult<()> {
    let mut cfg = ctx.cfg.tsne.clone();
    if args.case.is_some() {
        cfg.case = args.case;
    }
    let data_dir = args.data.clone().unwrap_or_else(|| ctx.layout.data());
    let eval_dir = args.evaluation.clone().unwrap_or_else(|| ctx.layout.evaluation());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.tsne());
    let mut m = ManifestBuilder::new("tsne", &cfg)?;
    m.seed("tsne", cfg.consistency.tsne.seed).input(&data_dir).input(&eval_dir);

    let cases: Vec<ExplainedCase> = read_json(&eval_dir.join("cases.json"), "explained cases")?;
    let plan: FoldPlan = read_json(&eval_dir.join("folds.json"), "fold plan")?;
    let i = pick_case(&cases, cfg.case, ctx.cfg.evaluate.consistency_kind)?;
    let case = &cases[i];
    let books = load_codebooks(&eval_dir.join(format!("fold-{}-codebooks.json", case.fold)))?;
    let data = load_data(ctx, &data_dir)?;
    let log = data
        .log(&case.event.well_id)
        .ok_or_else(|| CliError::data(format!("well {} is not in the data", case.event.well_id)))?;
    let train: Vec<_> = plan.train_wells(case.fold).iter().filter_map(|w| data.log(w)).collect();
    let corpus = corpus_segments(&train, ctx.cfg.evaluate.corpus_every_minutes)?;
    let sample = corpus_taus(&corpus, &books);
    let cc = Case {
        log,
        codebooks: &books,
        moments: case
            .moments
            .iter()
            .map(|mo| Moment {
                end: mo.end,
                highlights: mo.shap.clone(),
            })
            .collect(),
    };
    let rep = consistency_report(&cc, &data.references, &sample, &cfg.consistency)?;
    let svg_path = out.join("consistency.svg");
    let json_path = out.join("consistency.json");
    write_file(&svg_path, &rep.svg)?;
    let summary = TsneSummary {
        case: i,
        well_id: &case.event.well_id,
        kind: case.event.kind,
        event_time: case.event.event_time,
        moments: case.moments.len(),
        channels: rep
            .embeddings
            .iter()
            .map(|e| (e.channel, e.labels.len(), e.embedding.kl))
            .collect(),
        score: &rep.score,
    };
    write_file(&json_path, to_json(&summary)?)?;
    m.output(&svg_path).output(&json_path);
    eprintln!(
        "case {i} ({} {}): {} channel embeddings written to {}",
        case.event.well_id,
        case.event.kind,
        rep.embeddings.len(),
        out.display()
    );
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}

pub fn report_cmd(ctx: &Ctx, args: &ReportArgs) -> CliResult<()> {
    let cfg = ctx.cfg.report.clone();
    let data_dir = args.data.clone().unwrap_or_else(|| ctx.layout.data());
    let eval_dir = args.evaluation.clone().unwrap_or_else(|| ctx.layout.evaluation());
    let tsne_dir = args.tsne.clone().unwrap_or_else(|| ctx.layout.tsne());
    let out = args.out.clone().unwrap_or_else(|| ctx.layout.report());
    let mut m = ManifestBuilder::new("report", &cfg)?;
    m.input(&data_dir).input(&eval_dir).input(&tsne_dir);

    let metrics: Metrics = read_json(&eval_dir.join("metrics.json"), "metrics")?;
    let cases: Vec<ExplainedCase> = read_json(&eval_dir.join("cases.json"), "explained cases")?;
    let tracks: Vec<CaseTrack> = read_json(&eval_dir.join("tracks.json"), "probability tracks")?;
    let data = load_data(ctx, &data_dir)?;

    let mut figures = Vec::new();
    for (c, track) in cases.iter().zip(&tracks).take(cfg.max_cases) {
        let Some(log) = data.log(&c.event.well_id) else {
            continue;
        };
        // The most confident alarm moment of the case.
        let best = (0..c.moments.len())
            .max_by(|&a, &b| c.moments[a].probability.total_cmp(&c.moments[b].probability))
            .unwrap_or(0);
        if c.moments.is_empty() {
            continue;
        }
        figures.push(Figure {
            title: format!(
                "{} in {}, accident at {}",
                c.event.kind,
                c.event.well_id,
                fmt_time(c.event.event_time)
            ),
            svg: report::case_figure(log, c, best, &track.points, &data.references),
        });
    }
    let tsne_svg = tsne_dir.join("consistency.svg");
    let tsne = if tsne_svg.exists() {
        Some(Figure {
            title: "t-SNE of highlighted, codebook and expert tau-segments".into(),
            svg: read_file(&tsne_svg, "t-SNE figure")?,
        })
    } else {
        None
    };
    write_file(&out, report::html_report(&metrics, &figures, tsne.as_ref()))?;
    m.output(&out);
    eprintln!("report with {} accident figures written to {}", figures.len(), out.display());
    m.finish(&ctx.layout.manifests())?;
    Ok(())
}
