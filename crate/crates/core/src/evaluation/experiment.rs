//! Cross-validated end-to-end run: codebooks, per-type models, pooled alarm
//! metrics and explanation quality for every explainer.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    explanation_counts, random_importance, roc_auc, uniform_importance, FoldPlan, PrCounts, PrMode,
    PrResult, ProbSeries, ThresholdTable, BASELINE_M_PERCENT, DEFAULT_FOLDS, RANDOM_DRAWS,
};
use crate::bag_of_features::{train_codebooks, BofConfig, Codebooks, FeatureVector, LogAssignments};
use crate::consistency::{consistency_score, Case, ConsistencyConfig, ConsistencyScore, Moment};
use crate::error::{Error, Result};
use crate::fcmh::{self, FcmhModel, FcmhTrainConfig};
use crate::gbm::{self, GbmModel, SparseMatrix, TrainConfig};
use crate::shap::{explain_features, highlight, select_by_importance, ExplainConfig, HighlightSet};
use crate::telemetry::{AccidentEvent, AccidentType, Dataset, Segment, TelemetryLog, SEGMENT_LEN, STEP_SECONDS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub seed: u64,
    pub bof: BofConfig,
    /// Minutes between codebook-corpus segments of a training well.
    pub corpus_every_minutes: usize,
    pub gbm: TrainConfig,
    pub fcmh: FcmhTrainConfig,
    /// Balanced FCMH training subsample size per type.
    pub fcmh_max_samples: usize,
    /// Grid steps between positive / negative training windows.
    pub positive_stride: usize,
    pub negative_stride: usize,
    /// Moments within this many seconds after an accident are neither
    /// trained on nor scored.
    pub blackout_seconds: i64,
    pub shap_m_percent: f64,
    pub fcmh_m_percent: f64,
    /// Grid steps between explained alarm moments.
    pub explain_stride: usize,
    /// Grid steps between held-out moments scored by FCMH for its AUC.
    pub fcmh_score_stride: usize,
    pub consistency: ConsistencyConfig,
    pub consistency_kind: AccidentType,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: DEFAULT_FOLDS,
            seed: 0,
            bof: BofConfig {
                max_corpus_per_channel: Some(2000),
                ..BofConfig::default()
            },
            corpus_every_minutes: 30,
            gbm: TrainConfig::default(),
            fcmh: FcmhTrainConfig {
                epochs: 10,
                ..FcmhTrainConfig::default()
            },
            fcmh_max_samples: 160,
            positive_stride: 6,
            negative_stride: 18,
            blackout_seconds: 3600,
            shap_m_percent: crate::shap::DEFAULT_M_PERCENT,
            fcmh_m_percent: fcmh::DEFAULT_M_PERCENT,
            explain_stride: 6,
            fcmh_score_stride: 30,
            consistency: ConsistencyConfig::default(),
            consistency_kind: AccidentType::Stuck,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.bof.validate()?;
        self.gbm.validate()?;
        if self.positive_stride == 0 || self.negative_stride == 0
            || self.explain_stride == 0
            || self.fcmh_score_stride == 0
        {
            return Err(Error::Config("window strides must be positive".into()));
        }
        if self.corpus_every_minutes == 0 {
            return Err(Error::Config("corpus spacing must be positive".into()));
        }
        if self.blackout_seconds < 0 {
            return Err(Error::Config("blackout must be non-negative".into()));
        }
        ExplainConfig::new(self.shap_m_percent)?;
        ExplainConfig::new(self.fcmh_m_percent)?;
        Ok(())
    }
}

/// True when `t` falls in the shutdown hour after an accident of the well.
pub fn in_blackout(events: &[AccidentEvent], well: &str, t: i64, blackout: i64) -> bool {
    events
        .iter()
        .any(|e| e.well_id == well && t > e.event_time && t < e.event_time + blackout)
}

/// True when `t` lies in the region of an accident of `kind` in the well.
pub fn in_region(events: &[AccidentEvent], well: &str, kind: AccidentType, t: i64) -> bool {
    events
        .iter()
        .any(|e| e.kind == kind && e.well_id == well && e.region_contains(t))
}

/// Codebook training corpus: one segment every `every_minutes` of each log.
pub fn corpus_segments<'a>(logs: &[&'a TelemetryLog], every_minutes: usize) -> Result<Vec<Segment<'a>>> {
    let step = (every_minutes * 60 / STEP_SECONDS as usize).max(1);
    let mut corpus = Vec::new();
    for log in logs {
        let mut end = SEGMENT_LEN;
        while end <= log.len() {
            corpus.push(Segment::at_index(log, end)?);
            end += step;
        }
    }
    Ok(corpus)
}

/// Segment ends used for training: every `positive_stride` steps inside an
/// accident region, every `negative_stride` steps elsewhere.
pub fn training_ends(log: &TelemetryLog, events: &[AccidentEvent], cfg: &ExperimentConfig) -> Vec<usize> {
    (SEGMENT_LEN..=log.len())
        .filter(|&end| {
            let t = log.time_at(end);
            if in_blackout(events, log.well_id(), t, cfg.blackout_seconds) {
                return false;
            }
            let any_region = events
                .iter()
                .any(|e| e.well_id == log.well_id() && e.region_contains(t));
            if any_region {
                end % cfg.positive_stride == 0
            } else {
                end % cfg.negative_stride == 0
            }
        })
        .collect()
}

/// Explanations of one covered accident at its alarm moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedMoment {
    pub end: usize,
    pub time: i64,
    pub probability: f64,
    pub shap: HighlightSet,
    pub fcmh: HighlightSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedCase {
    pub event: AccidentEvent,
    pub fold: usize,
    pub threshold: f64,
    pub moments: Vec<ExplainedMoment>,
}

#[derive(Clone, Debug)]
pub struct FoldArtifacts {
    pub codebooks: Codebooks,
    pub gbm: BTreeMap<AccidentType, GbmModel>,
    pub fcmh: BTreeMap<AccidentType, FcmhModel>,
    pub fcmh_log: BTreeMap<AccidentType, Vec<fcmh::EpochLog>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub kind: AccidentType,
    pub cases: usize,
    pub shap: ConsistencyScore,
    /// Same drift statistic on the random explainer's highlights.
    pub random_explainer_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub wells: usize,
    pub events: usize,
    pub folds: usize,
    pub scored_moments: usize,
    pub auc_micro: f64,
    pub auc_per_type: BTreeMap<AccidentType, f64>,
    pub fcmh_auc_micro: f64,
    pub thresholds: ThresholdTable,
    pub explained_cases: usize,
    pub explained_moments: usize,
    /// Largest `|base + sum(phi) - logit|` over all SHAP explanations.
    pub local_accuracy_max_error: f64,
    /// Explainer name, then mode.
    pub explanation: BTreeMap<String, BTreeMap<PrMode, PrResult>>,
    pub consistency: Option<ConsistencySummary>,
}

impl Metrics {
    pub fn pr(&self, explainer: &str, mode: PrMode) -> Option<&PrCounts> {
        self.explanation.get(explainer)?.get(&mode).map(|r| &r.micro)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const EXPLAINERS: [&str; 4] = ["shap", "fcmh", "random", "uniform"];

#[derive(Clone, Debug)]
pub struct Experiment {
    pub metrics: Metrics,
    pub plan: FoldPlan,
    /// GBM alarm probabilities of every scored moment of every well.
    pub series: Vec<ProbSeries>,
    pub cases: Vec<ExplainedCase>,
    pub folds: Vec<FoldArtifacts>,
}

impl Experiment {
    pub fn case_segment<'a>(&self, data: &'a Dataset, case: usize, moment: usize) -> Result<Segment<'a>> {
        let c = &self.cases[case];
        let log = data
            .log(&c.event.well_id)
            .ok_or_else(|| Error::Usage(format!("unknown well {}", c.event.well_id)))?;
        Segment::at_index(log, c.moments[moment].end)
    }
}

pub fn run(data: &Dataset, cfg: &ExperimentConfig) -> Result<Experiment> {
    run_with_progress(data, cfg, &mut |_| {})
}

pub fn run_with_progress(
    data: &Dataset,
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<Experiment> {
    cfg.validate()?;
    let wells = data.well_ids();
    let plan = FoldPlan::new(&wells, &data.events, cfg.folds, cfg.seed)?;
    let kinds: Vec<AccidentType> = AccidentType::ALL
        .into_iter()
        .filter(|k| data.events.iter().any(|e| e.kind == *k))
        .collect();
    if kinds.is_empty() {
        return Err(Error::Evaluation("the dataset has no accidents".into()));
    }
    let taus = cfg.bof.taus_per_channel();

    let mut folds = Vec::with_capacity(cfg.folds);
    let mut assignments: BTreeMap<String, LogAssignments> = BTreeMap::new();
    let mut series = Vec::new();
    let mut fcmh_scores: Vec<(f64, bool)> = Vec::new();
    for fold in 0..cfg.folds {
        let train: Vec<&TelemetryLog> = plan
            .train_wells(fold)
            .iter()
            .filter_map(|w| data.log(w))
            .collect();
        let test: Vec<&TelemetryLog> = plan
            .test_wells(fold)
            .iter()
            .filter_map(|w| data.log(w))
            .collect();

        let corpus = corpus_segments(&train, cfg.corpus_every_minutes)?;
        progress(&format!("fold {fold}: codebooks from {} segments", corpus.len()));
        let codebooks = train_codebooks(&corpus, &cfg.bof, cfg.seed.wrapping_add(fold as u64))?;

        let mut rows: Vec<FeatureVector> = Vec::new();
        let mut row_meta: Vec<(usize, i64)> = Vec::new();
        for (wi, log) in train.iter().enumerate() {
            let la = LogAssignments::compute(log, &codebooks);
            for end in training_ends(log, &data.events, cfg) {
                rows.push(la.feature_vector(end)?);
                row_meta.push((wi, log.time_at(end)));
            }
        }

        let mut art = FoldArtifacts {
            codebooks,
            gbm: BTreeMap::new(),
            fcmh: BTreeMap::new(),
            fcmh_log: BTreeMap::new(),
        };
        for &kind in &kinds {
            let y: Vec<bool> = row_meta
                .iter()
                .map(|&(wi, t)| in_region(&data.events, train[wi].well_id(), kind, t))
                .collect();
            let stream = (fold * AccidentType::ALL.len() + kind.index()) as u64;
            let pos = y.iter().filter(|&&b| b).count();
            progress(&format!(
                "fold {fold}: {kind} models on {} windows ({pos} positive)",
                y.len()
            ));
            let x = SparseMatrix::from_features(rows.iter());
            let gcfg = TrainConfig {
                seed: cfg.gbm.seed.wrapping_add(stream),
                ..cfg.gbm.clone()
            };
            art.gbm.insert(kind, gbm::train(&x, &y, &gcfg)?);

            let (fx, fy) = balanced_subsample(&rows, &y, cfg.fcmh_max_samples, cfg.seed, stream);
            let mut fcfg = cfg.fcmh.clone();
            fcfg.seed = fcfg.seed.wrapping_add(stream);
            fcfg.model.input_scale = fcmh::input_scale_for(taus);
            let trained = fcmh::train(&fx, &fy, &fcfg)?;
            art.fcmh.insert(kind, trained.model);
            art.fcmh_log.insert(kind, trained.log);
        }

        progress(&format!("fold {fold}: scoring {} held-out wells", test.len()));
        for log in &test {
            let la = LogAssignments::compute(log, &art.codebooks);
            let mut per_kind: Vec<ProbSeries> = kinds
                .iter()
                .map(|&kind| ProbSeries {
                    well_id: log.well_id().to_string(),
                    kind,
                    times: Vec::new(),
                    probs: Vec::new(),
                })
                .collect();
            for end in SEGMENT_LEN..=log.len() {
                let t = log.time_at(end);
                if in_blackout(&data.events, log.well_id(), t, cfg.blackout_seconds) {
                    continue;
                }
                let fv = la.feature_vector(end)?;
                for (s, kind) in per_kind.iter_mut().zip(&kinds) {
                    s.times.push(t);
                    s.probs.push(art.gbm[kind].predict_proba(&fv)?);
                    if end % cfg.fcmh_score_stride == 0 {
                        let p = art.fcmh[kind].predict_proba(&fv)?;
                        fcmh_scores.push((p, in_region(&data.events, log.well_id(), *kind, t)));
                    }
                }
            }
            series.extend(per_kind);
            assignments.insert(log.well_id().to_string(), la);
        }
        folds.push(art);
    }

    let (scores, labels): (Vec<f64>, Vec<bool>) = series
        .iter()
        .flat_map(|s| {
            s.times.iter().zip(&s.probs).map(move |(&t, &p)| {
                (p, in_region(&data.events, &s.well_id, s.kind, t))
            })
        })
        .unzip();
    let auc_micro = roc_auc(&scores, &labels)?.auc;
    let mut auc_per_type = BTreeMap::new();
    for &kind in &kinds {
        let (sc, lb): (Vec<f64>, Vec<bool>) = series
            .iter()
            .filter(|s| s.kind == kind)
            .flat_map(|s| {
                s.times
                    .iter()
                    .zip(&s.probs)
                    .map(move |(&t, &p)| (p, in_region(&data.events, &s.well_id, kind, t)))
            })
            .unzip();
        if let Ok(r) = roc_auc(&sc, &lb) {
            auc_per_type.insert(kind, r.auc);
        }
    }
    let (fs, fl): (Vec<f64>, Vec<bool>) = fcmh_scores.into_iter().unzip();
    let fcmh_auc_micro = roc_auc(&fs, &fl)?.auc;
    let thresholds = ThresholdTable::fit(&series, &data.events)?;
    progress(&format!("pooled AUC {auc_micro:.4}, explaining alarms"));

    let mut explanation: BTreeMap<String, BTreeMap<PrMode, PrResult>> = EXPLAINERS
        .iter()
        .map(|e| (e.to_string(), PrMode::ALL.iter().map(|&m| (m, PrResult::default())).collect()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cases = Vec::new();
    let mut random_first: Vec<Vec<HighlightSet>> = Vec::new();
    let mut local_err: f64 = 0.0;
    let shap_cfg = ExplainConfig::new(cfg.shap_m_percent)?;
    let mut events: Vec<&AccidentEvent> = data.events.iter().collect();
    events.sort_by(|a, b| (&a.well_id, a.event_time).cmp(&(&b.well_id, b.event_time)));
    for event in events {
        let Some(threshold) = thresholds.threshold(event.kind) else {
            continue;
        };
        let (Some(log), Some(fold)) = (data.log(&event.well_id), plan.fold_of(&event.well_id)) else {
            continue;
        };
        let s = series
            .iter()
            .find(|s| s.kind == event.kind && s.well_id == event.well_id)
            .expect("every held-out well is scored");
        let la = &assignments[&event.well_id];
        let art = &folds[fold];
        let (gbm_model, fcmh_model) = (&art.gbm[&event.kind], &art.fcmh[&event.kind]);
        let mut moments = Vec::new();
        let mut random_hl = Vec::new();
        for (&t, &p) in s.times.iter().zip(&s.probs) {
            let end = ((t - log.start()) / log.step()) as usize;
            if !event.region_contains(t) || end % cfg.explain_stride != 0 || p < threshold {
                continue;
            }
            let (fv, idx) = la.featurize(end)?;
            let ex = explain_features(gbm_model, &fv, &idx, &shap_cfg)?;
            local_err = local_err.max((ex.attribution.total() - gbm_model.predict_logit(&fv)?).abs());
            let fcmh_hl = match select_by_importance(&fcmh_model.importance(&fv)?, cfg.fcmh_m_percent) {
                Some(sel) => highlight(&sel, &idx)?,
                None => empty(idx.tau_len()),
            };
            let uniform = highlight(
                &select_by_importance(&uniform_importance(fv.len()), BASELINE_M_PERCENT).unwrap_or_default(),
                &idx,
            )?;
            let seg_start = log.time_at(end - SEGMENT_LEN);
            let mut add = |name: &str, hl: &HighlightSet| -> Result<()> {
                for mode in PrMode::ALL {
                    let c = explanation_counts(hl, seg_start, log.step(), &cfg.bof, event, &data.references, mode)?;
                    explanation.get_mut(name).unwrap().get_mut(&mode).unwrap().add(event.kind, &c);
                }
                Ok(())
            };
            add("shap", &ex.highlights)?;
            add("fcmh", &fcmh_hl)?;
            add("uniform", &uniform)?;
            for draw in 0..RANDOM_DRAWS {
                let imp = random_importance(&mut rng, fv.len());
                let hl = match select_by_importance(&imp, BASELINE_M_PERCENT) {
                    Some(sel) => highlight(&sel, &idx)?,
                    None => empty(idx.tau_len()),
                };
                add("random", &hl)?;
                if draw == 0 {
                    random_hl.push(hl);
                }
            }
            moments.push(ExplainedMoment {
                end,
                time: t,
                probability: p,
                shap: ex.highlights,
                fcmh: fcmh_hl,
            });
        }
        if !moments.is_empty() {
            random_first.push(random_hl);
            cases.push(ExplainedCase {
                event: event.clone(),
                fold,
                threshold,
                moments,
            });
        }
    }
    let explained_moments = cases.iter().map(|c| c.moments.len()).sum();
    progress(&format!("{} covered cases, {explained_moments} explanations", cases.len()));

    let consistency = consistency_summary(data, cfg, &cases, &random_first, &folds)?;
    let metrics = Metrics {
        wells: wells.len(),
        events: data.events.len(),
        folds: cfg.folds,
        scored_moments: series.first().map_or(0, |_| {
            series.iter().filter(|s| s.kind == kinds[0]).map(|s| s.times.len()).sum()
        }),
        auc_micro,
        auc_per_type,
        fcmh_auc_micro,
        thresholds,
        explained_cases: cases.len(),
        explained_moments,
        local_accuracy_max_error: local_err,
        explanation,
        consistency,
    };
    Ok(Experiment {
        metrics,
        plan,
        series,
        cases,
        folds,
    })
}

fn empty(tau_len: usize) -> HighlightSet {
    HighlightSet {
        tau_len,
        ..HighlightSet::default()
    }
}

fn consistency_summary(
    data: &Dataset,
    cfg: &ExperimentConfig,
    cases: &[ExplainedCase],
    random_first: &[Vec<HighlightSet>],
    folds: &[FoldArtifacts],
) -> Result<Option<ConsistencySummary>> {
    let mut shap_cases = Vec::new();
    let mut random_cases = Vec::new();
    for (c, rnd) in cases.iter().zip(random_first) {
        if c.event.kind != cfg.consistency_kind || c.moments.len() < 2 {
            continue;
        }
        let log = data.log(&c.event.well_id).expect("case well exists");
        let codebooks = &folds[c.fold].codebooks;
        let mk = |hl: &mut dyn Iterator<Item = (usize, HighlightSet)>| Case {
            log,
            codebooks,
            moments: hl.map(|(end, highlights)| Moment { end, highlights }).collect(),
        };
        shap_cases.push(mk(&mut c.moments.iter().map(|m| (m.end, m.shap.clone()))));
        random_cases.push(mk(&mut c.moments.iter().zip(rnd).map(|(m, h)| (m.end, h.clone()))));
    }
    if shap_cases.is_empty() {
        return Ok(None);
    }
    let shap = match consistency_score(&shap_cases, &cfg.consistency) {
        Ok(s) => s,
        Err(Error::Evaluation(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let no_null = ConsistencyConfig {
        null_draws: 0,
        ..cfg.consistency.clone()
    };
    let random_explainer_drift = consistency_score(&random_cases, &no_null)?.drift;
    Ok(Some(ConsistencySummary {
        kind: cfg.consistency_kind,
        cases: shap_cases.len(),
        shap,
        random_explainer_drift,
    }))
}

/// All positives and an equal number of negatives, at most `max` rows.
/// Equal numbers of positive and negative rows, at most `max` in total,
/// drawn without replacement and kept in their original order.
pub fn balanced_subsample(
    rows: &[FeatureVector],
    y: &[bool],
    max: usize,
    seed: u64,
    stream: u64,
) -> (Vec<FeatureVector>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let half = (max / 2).max(1);
    let mut take = |from: &[usize], k: usize| -> Vec<usize> {
        let mut v: Vec<usize> = index::sample(&mut rng, from.len(), k.min(from.len()))
            .into_iter()
            .map(|j| from[j])
            .collect();
        v.sort_unstable();
        v
    };
    let k = half.min(pos.len()).max(1);
    let mut picked = take(&pos, k);
    picked.extend(take(&neg, k));
    picked.sort_unstable();
    (
        picked.iter().map(|&i| rows[i].clone()).collect(),
        picked.iter().map(|&i| y[i]).collect(),
    )
}
