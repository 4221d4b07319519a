use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SPLIT_SEED_STRIDE};
use super::features::{frame_inputs, sequences_for, FrameInputs};
use super::{
    read_json, write_json, write_text, Layout, RunManifest, BASELINE1, BASELINE2, CODEBOOK, HISTORY, KB, LENET,
    TRANSFORMER,
};
use crate::channel::{beam_rates, ChannelState, PathComponent, RadioParams};
use crate::codebook::{generate_codebook, Codebook};
use crate::error::{Error, Result};
use crate::fusion::{fuse, fused_ranking, grid_search_betas, write_surface_csv, FusionSample, FusionWeights};
use crate::localization::{build_kb, KnowledgeBase};
use crate::metrics::{EvalRecord, MethodMetrics};
use crate::neural::checkpoint;
use crate::neural::{
    evaluate, train, LeNet, LeNetConfig, LeNetInput, Model, Prediction, TrainConfig, TrainReport, Transformer,
};
use crate::scene::dataset::{read_manifest, DatasetWriter, FrameRecord};
use crate::scene::{corrupt, generate_episode, CorruptionProfile};

const TRAIN_SPLIT: u64 = 0;
const VAL_SPLIT: u64 = 1;
const TEST_SPLIT: u64 = 2;
const PREDICT_CHUNK: usize = 256;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

fn name_key(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

fn selected_scenarios(cfg: &ExperimentConfig, only: Option<&str>) -> Result<Vec<String>> {
    match only {
        Some(s) => {
            cfg.preset(s)?;
            Ok(vec![s.to_string()])
        }
        None => Ok(cfg.scenarios.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub config_hash: String,
    /// Split name (`train`, `val/<scenario>`, `test/<scenario>`) → frames.
    pub splits: BTreeMap<String, usize>,
}

fn write_split(
    cfg: &ExperimentConfig,
    codebook: &Codebook,
    dir: &Path,
    split: u64,
    n: usize,
    profile: &CorruptionProfile,
) -> Result<usize> {
    let mut writer = DatasetWriter::create(dir)?;
    let base = split * SPLIT_SEED_STRIDE;
    let (mut produced, mut episode) = (0usize, 0u64);
    while produced < n {
        let len = cfg.data.episode_len.min(n - produced);
        let seed = mix(cfg.seed, base + episode);
        for (k, mut frame) in generate_episode(&cfg.world, seed, len, codebook, &cfg.radio)?
            .into_iter()
            .enumerate()
        {
            frame.id = base + (produced + k) as u64;
            frame.episode = base + episode;
            let noise_seed = mix(mix(cfg.seed, frame.id), name_key(&profile.name));
            writer.push(&corrupt(&frame, profile, noise_seed)?)?;
        }
        produced += len;
        episode += 1;
    }
    Ok(writer.finish()?.len())
}

/// Generates the train split (with the training preset) and, per scenario,
/// the corrupted val and test splits. All scenarios share the same
/// underlying frames; only the sensing corruption differs.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path, scenario: Option<&str>) -> Result<GenSummary> {
    cfg.validate()?;
    let d = &cfg.data;
    if d.n_train == 0 || d.n_val == 0 || d.n_test == 0 {
        return Err(Error::InvalidConfig("every split needs at least one frame".into()));
    }
    let start = Instant::now();
    let layout = Layout::new(out);
    let hash = cfg.hash();
    let mut manifest = RunManifest::load_or_new(&layout, &hash)?;
    let codebook = generate_codebook(&cfg.codebook.to_config())?;
    let scenarios = selected_scenarios(cfg, scenario)?;

    let mut splits = BTreeMap::new();
    let train_profile = cfg.preset(&d.train_corruption)?;
    splits.insert(
        "train".to_string(),
        write_split(
            cfg,
            &codebook,
            &layout.train_dir(),
            TRAIN_SPLIT,
            d.n_train,
            train_profile,
        )?,
    );
    manifest.record(&layout, "data/train", &layout.train_dir());

    let mut val_names = vec![d.train_corruption.clone()];
    val_names.extend(scenarios.iter().filter(|s| **s != d.train_corruption).cloned());
    for s in &val_names {
        let dir = layout.val_dir(s);
        splits.insert(
            format!("val/{s}"),
            write_split(cfg, &codebook, &dir, VAL_SPLIT, d.n_val, cfg.preset(s)?)?,
        );
        manifest.record(&layout, &format!("data/val/{s}"), &dir);
    }
    for s in &scenarios {
        let dir = layout.test_dir(s);
        splits.insert(
            format!("test/{s}"),
            write_split(cfg, &codebook, &dir, TEST_SPLIT, d.n_test, cfg.preset(s)?)?,
        );
        manifest.record(&layout, &format!("data/test/{s}"), &dir);
    }

    let summary = GenSummary {
        config_hash: hash,
        splits,
    };
    write_json(&layout.gen_summary(), &summary)?;
    manifest.record(&layout, "data/gen", &layout.gen_summary());
    manifest
        .wall_clock_s
        .insert("gen".into(), start.elapsed().as_secs_f64());
    manifest.save(&layout)?;
    Ok(summary)
}

fn check_dataset(layout: &Layout, cfg: &ExperimentConfig) -> Result<()> {
    let summary: GenSummary = read_json(&layout.gen_summary())?;
    let hash = cfg.hash();
    if summary.config_hash != hash {
        return Err(Error::ConfigHashMismatch(summary.config_hash, hash));
    }
    Ok(())
}

fn read_split(dir: &Path) -> Result<Vec<FrameRecord>> {
    let records = read_manifest(dir)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_frames: usize,
    /// Train frames for which localization produced a target mask.
    pub semantic_train_frames: usize,
    pub localization_hit_rate: f64,
    pub params: BTreeMap<String, u64>,
    /// Validation Top-1 (%) on the training preset's val split.
    pub val_top1: BTreeMap<String, f64>,
}

fn baseline2_config(cfg: &ExperimentConfig) -> LeNetConfig {
    LeNetConfig {
        extra_features: 2,
        ..cfg.lenet.clone()
    }
}

fn with_gps(inputs: &[FrameInputs], records: &[FrameRecord], kb: &KnowledgeBase) -> Vec<LeNetInput> {
    inputs
        .iter()
        .zip(records)
        .map(|(f, r)| f.full.clone().with_extra(kb.standardizer.transform(r.gps()).to_vec()))
        .collect()
}

fn train_config(cfg: &ExperimentConfig, offset: u64) -> TrainConfig {
    TrainConfig {
        seed: cfg.train.seed.wrapping_add(offset),
        ..cfg.train.clone()
    }
}

fn fit<M: Model>(
    model: &mut M,
    data: (&[M::Input], &[usize]),
    val: (&[M::Input], &[usize]),
    tc: &TrainConfig,
) -> Result<(TrainReport, f64)> {
    let val_opt = (!val.0.is_empty()).then_some(val);
    let report = train(model, data.0, data.1, val_opt, tc)?;
    let top1 = if val.0.is_empty() {
        0.0
    } else {
        100.0 * evaluate(model, val.0, val.1)?.1
    };
    Ok((report, top1))
}

/// Builds the KB, trains the semantic LeNet, the transformer and the
/// baselines, and writes every artifact.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, baseline2: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let layout = Layout::new(out);
    check_dataset(&layout, cfg)?;
    let hash = cfg.hash();
    let mut manifest = RunManifest::load_or_new(&layout, &hash)?;
    let n_beams = cfg.codebook.num_beams;
    let side = cfg.lenet.input;

    let codebook = generate_codebook(&cfg.codebook.to_config())?;
    let cb_path = layout.artifact(CODEBOOK);
    write_text(&cb_path, &codebook.to_json()?)?;
    manifest.record(&layout, "codebook", &cb_path);

    let train_dir = layout.train_dir();
    let records = read_split(&train_dir)?;
    let pairs: Vec<([f64; 2], usize)> = records.iter().map(|r| (r.gps(), r.label)).collect();
    let kb = build_kb(&pairs, n_beams, &cfg.kb)?;
    let kb_path = layout.artifact(KB);
    write_text(&kb_path, &kb.to_json()?)?;
    manifest.record(&layout, "kb", &kb_path);

    let val_dir = layout.val_dir(&cfg.data.train_corruption);
    let val_records = read_manifest(&val_dir)?;
    let inputs = frame_inputs(&train_dir, &records, &kb, side)?;
    let val_inputs = frame_inputs(&val_dir, &val_records, &kb, side)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let val_labels: Vec<usize> = val_records.iter().map(|r| r.label).collect();

    let semantic = |inp: &[FrameInputs], labels: &[usize]| -> (Vec<LeNetInput>, Vec<usize>) {
        inp.iter()
            .zip(labels)
            .filter_map(|(f, &y)| f.semantic.clone().map(|x| (x, y)))
            .unzip()
    };
    let (sem_x, sem_y) = semantic(&inputs, &labels);
    let (sem_vx, sem_vy) = semantic(&val_inputs, &val_labels);
    if sem_x.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut history = BTreeMap::new();
    let mut params = BTreeMap::new();
    let mut val_top1 = BTreeMap::new();
    let save = |name: &str, file: &str, bytes: Vec<u8>, manifest: &mut RunManifest| -> Result<()> {
        let path = layout.artifact(file);
        super::ensure_parent(&path)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        manifest.record(&layout, name, &path);
        Ok(())
    };

    let tc = train_config(cfg, 0);
    let mut lenet = LeNet::new(cfg.lenet.clone(), tc.seed)?;
    let (rep, acc) = fit(&mut lenet, (&sem_x, &sem_y), (&sem_vx, &sem_vy), &tc)?;
    save("lenet", LENET, checkpoint::to_bytes(&lenet)?, &mut manifest)?;
    history.insert("semantic", rep);
    params.insert("semantic".to_string(), lenet.param_count() as u64);
    val_top1.insert("semantic".to_string(), acc);
    drop(sem_x);

    let seqs = sequences_for(&records, &kb.standardizer, cfg.data.seq_len, n_beams);
    let val_seqs = sequences_for(&val_records, &kb.standardizer, cfg.data.seq_len, n_beams);
    let tc = train_config(cfg, 1);
    let mut transformer = Transformer::new(cfg.transformer.clone(), tc.seed)?;
    let (rep, acc) = fit(&mut transformer, (&seqs, &labels), (&val_seqs, &val_labels), &tc)?;
    save(
        "transformer",
        TRANSFORMER,
        checkpoint::to_bytes(&transformer)?,
        &mut manifest,
    )?;
    history.insert("transformer", rep);
    params.insert("transformer".to_string(), transformer.param_count() as u64);
    val_top1.insert("transformer".to_string(), acc);

    let full: Vec<LeNetInput> = inputs.iter().map(|f| f.full.clone()).collect();
    let val_full: Vec<LeNetInput> = val_inputs.iter().map(|f| f.full.clone()).collect();
    let tc = train_config(cfg, 2);
    let mut b1 = LeNet::new(cfg.lenet.clone(), tc.seed)?;
    let (rep, acc) = fit(&mut b1, (&full, &labels), (&val_full, &val_labels), &tc)?;
    save("baseline1", BASELINE1, checkpoint::to_bytes(&b1)?, &mut manifest)?;
    history.insert("baseline1", rep);
    params.insert("baseline1".to_string(), b1.param_count() as u64);
    val_top1.insert("baseline1".to_string(), acc);
    drop((full, val_full));

    let b2_path = layout.artifact(BASELINE2);
    if baseline2 {
        let x = with_gps(&inputs, &records, &kb);
        let vx = with_gps(&val_inputs, &val_records, &kb);
        let tc = train_config(cfg, 3);
        let mut b2 = LeNet::new(baseline2_config(cfg), tc.seed)?;
        let (rep, acc) = fit(&mut b2, (&x, &labels), (&vx, &val_labels), &tc)?;
        save("baseline2", BASELINE2, checkpoint::to_bytes(&b2)?, &mut manifest)?;
        history.insert("baseline2", rep);
        params.insert("baseline2".to_string(), b2.param_count() as u64);
        val_top1.insert("baseline2".to_string(), acc);
    } else if b2_path.exists() {
        // A stale baseline from an earlier run must not leak into reports.
        fs::remove_file(&b2_path).map_err(|e| Error::io(&b2_path, e))?;
        manifest.artifacts.remove("baseline2");
    }

    let hist_path = layout.artifact(HISTORY);
    write_json(&hist_path, &history)?;
    manifest.record(&layout, "train_history", &hist_path);

    let hits = inputs.iter().filter(|f| f.hit).count();
    let summary = TrainSummary {
        train_frames: records.len(),
        semantic_train_frames: sem_y.len(),
        localization_hit_rate: 100.0 * hits as f64 / records.len() as f64,
        params,
        val_top1,
    };
    manifest
        .wall_clock_s
        .insert("train".into(), start.elapsed().as_secs_f64());
    manifest.save(&layout)?;
    Ok(summary)
}

struct Models {
    kb: KnowledgeBase,
    lenet: LeNet,
    transformer: Transformer,
    baseline1: LeNet,
    baseline2: Option<LeNet>,
}

impl Models {
    fn load(layout: &Layout) -> Result<Self> {
        let kb_path = layout.artifact(KB);
        if !kb_path.exists() {
            return Err(Error::MissingArtifact(kb_path));
        }
        let kb_text = fs::read_to_string(&kb_path).map_err(|e| Error::io(&kb_path, e))?;
        let b2 = layout.artifact(BASELINE2);
        Ok(Self {
            kb: KnowledgeBase::from_json(&kb_text)?,
            lenet: checkpoint::load(&layout.artifact(LENET))?,
            transformer: checkpoint::load(&layout.artifact(TRANSFORMER))?,
            baseline1: checkpoint::load(&layout.artifact(BASELINE1))?,
            baseline2: if b2.exists() {
                Some(checkpoint::load(&b2)?)
            } else {
                None
            },
        })
    }
}

fn predict_all<M: Model>(model: &M, inputs: &[&M::Input]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        out.extend(model.predict_batch(chunk)?);
    }
    Ok(out)
}

struct SplitPredictions {
    records: Vec<FrameRecord>,
    inputs: Vec<FrameInputs>,
    semantic: Vec<Option<Prediction>>,
    transformer: Vec<Prediction>,
    baseline1: Vec<Prediction>,
    baseline2: Option<Vec<Prediction>>,
}

fn predict_split(cfg: &ExperimentConfig, models: &Models, dir: &Path) -> Result<SplitPredictions> {
    let records = read_split(dir)?;
    let inputs = frame_inputs(dir, &records, &models.kb, cfg.lenet.input)?;

    let present: Vec<&LeNetInput> = inputs.iter().filter_map(|f| f.semantic.as_ref()).collect();
    let mut sem_iter = predict_all(&models.lenet, &present)?.into_iter();
    let semantic = inputs
        .iter()
        .map(|f| f.semantic.as_ref().and_then(|_| sem_iter.next()))
        .collect();

    let seqs = sequences_for(
        &records,
        &models.kb.standardizer,
        cfg.data.seq_len,
        cfg.codebook.num_beams,
    );
    let transformer = predict_all(&models.transformer, &seqs.iter().collect::<Vec<_>>())?;
    let full: Vec<&LeNetInput> = inputs.iter().map(|f| &f.full).collect();
    let baseline1 = predict_all(&models.baseline1, &full)?;
    let baseline2 = match &models.baseline2 {
        Some(m) => {
            let x = with_gps(&inputs, &records, &models.kb);
            Some(predict_all(m, &x.iter().collect::<Vec<_>>())?)
        }
        None => None,
    };
    Ok(SplitPredictions {
        records,
        inputs,
        semantic,
        transformer,
        baseline1,
        baseline2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BetaFile {
    scenario: String,
    config_hash: String,
    weights: FusionWeights,
    val_top1: f64,
}

/// Calibrates `(β₁, β₂)` per scenario on that scenario's validation split.
pub fn cmd_betasearch(
    cfg: &ExperimentConfig,
    out: &Path,
    scenario: Option<&str>,
) -> Result<BTreeMap<String, FusionWeights>> {
    cfg.validate()?;
    let start = Instant::now();
    let layout = Layout::new(out);
    let hash = cfg.hash();
    let scenarios = selected_scenarios(cfg, scenario)?;
    let mut manifest = RunManifest::load_or_new(&layout, &hash)?;
    let models = Models::load(&layout)?;
    let mut chosen = BTreeMap::new();
    for s in scenarios {
        let p = predict_split(cfg, &models, &layout.val_dir(&s))?;
        let samples: Vec<FusionSample> = p
            .semantic
            .into_iter()
            .zip(p.transformer)
            .zip(&p.records)
            .map(|((semantic, transformer), r)| FusionSample {
                semantic,
                transformer,
                label: r.label,
            })
            .collect();
        let search = grid_search_betas(&samples, &cfg.fusion)?;
        let path = layout.betas(&s);
        write_json(
            &path,
            &BetaFile {
                scenario: s.clone(),
                config_hash: hash.clone(),
                weights: search.weights,
                val_top1: search.top1,
            },
        )?;
        let surface = layout.surface(&s);
        write_surface_csv(&surface, &search.surface)?;
        manifest.record(&layout, &format!("betas/{s}"), &path);
        manifest.record(&layout, &format!("surface/{s}"), &surface);
        chosen.insert(s, search.weights);
    }
    manifest
        .wall_clock_s
        .insert("betasearch".into(), start.elapsed().as_secs_f64());
    manifest.save(&layout)?;
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub config_hash: String,
    pub frames: usize,
    /// Frames where localization found no detection in the window.
    pub no_detection_frames: usize,
    /// Percentage of frames where localization selected the true target.
    pub localization_hit_rate: f64,
    pub weights: FusionWeights,
    /// Percentage of frames where the hybrid took the semantic beam.
    pub semantic_share: f64,
    pub methods: BTreeMap<String, MethodMetrics>,
}

impl ScenarioReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("scenario,method,metric,value\n");
        for (method, m) in &self.methods {
            for (metric, v) in m.rows() {
                out.push_str(&format!("{},{method},{metric},{v}\n", self.scenario));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub scenario: String,
    pub t_max_ms: f64,
    pub frames: usize,
    pub violations: usize,
    pub violating_frames: Vec<u64>,
    pub median_ms: f64,
    pub max_ms: f64,
    pub per_frame_ms: Vec<f64>,
}

fn beam_powers(codebook: &Codebook, radio: &RadioParams, azimuth: f64) -> Result<Vec<f64>> {
    let state = ChannelState::single_path(PathComponent::los(azimuth));
    beam_rates(&state, codebook.config(), codebook.beams(), radio)
}

fn eval_record(r: &FrameRecord, powers: &[f64], ranked: Vec<usize>) -> EvalRecord {
    EvalRecord {
        frame_id: r.frame_id,
        label: r.label,
        power_true: powers[r.label],
        power_pred: powers[ranked[0]],
        power_min: powers.iter().copied().fold(f64::INFINITY, f64::min),
        ranked,
    }
}

/// Scores every method on the test split of each scenario.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, scenario: Option<&str>) -> Result<Vec<ScenarioReport>> {
    cfg.validate()?;
    let start = Instant::now();
    let layout = Layout::new(out);
    let hash = cfg.hash();
    let scenarios = selected_scenarios(cfg, scenario)?;
    let mut manifest = RunManifest::load_or_new(&layout, &hash)?;
    let models = Models::load(&layout)?;
    let codebook = generate_codebook(&cfg.codebook.to_config())?;
    let n = cfg.codebook.num_beams;
    let mut reports = Vec::new();

    for s in scenarios {
        let betas: BetaFile = read_json(&layout.betas(&s))?;
        if betas.config_hash != hash {
            return Err(Error::ConfigHashMismatch(betas.config_hash, hash));
        }
        let p = predict_split(cfg, &models, &layout.test_dir(&s))?;
        let mut per: BTreeMap<&str, Vec<EvalRecord>> = BTreeMap::new();
        let mut semantic_chosen = 0;
        for (i, r) in p.records.iter().enumerate() {
            let powers = beam_powers(&codebook, &cfg.radio, r.target_azimuth)?;
            let sem = p.semantic[i].as_ref();
            let trn = &p.transformer[i];
            let decision = fuse(sem, trn, betas.weights);
            semantic_chosen += usize::from(decision.omega);
            let sem_ranked = sem.map_or_else(|| Prediction::uniform(n).ranked(), Prediction::ranked);
            per.entry("hybrid")
                .or_default()
                .push(eval_record(r, &powers, fused_ranking(&decision, sem, trn)));
            per.entry("semantic")
                .or_default()
                .push(eval_record(r, &powers, sem_ranked));
            per.entry("transformer")
                .or_default()
                .push(eval_record(r, &powers, trn.ranked()));
            per.entry("baseline1")
                .or_default()
                .push(eval_record(r, &powers, p.baseline1[i].ranked()));
            if let Some(b2) = &p.baseline2 {
                per.entry("baseline2")
                    .or_default()
                    .push(eval_record(r, &powers, b2[i].ranked()));
            }
        }

        let lenet_params = models.lenet.param_count() as u64;
        let mut params = BTreeMap::from([
            ("hybrid", lenet_params + models.transformer.param_count() as u64),
            ("semantic", lenet_params),
            ("transformer", models.transformer.param_count() as u64),
            ("baseline1", models.baseline1.param_count() as u64),
        ]);
        if let Some(b2) = &models.baseline2 {
            params.insert("baseline2", b2.param_count() as u64);
        }
        let methods = per
            .iter()
            .map(|(name, recs)| Ok((name.to_string(), MethodMetrics::from_records(recs, params[name])?)))
            .collect::<Result<BTreeMap<_, _>>>()?;

        let frames = p.records.len();
        let report = ScenarioReport {
            scenario: s.clone(),
            config_hash: hash.clone(),
            frames,
            no_detection_frames: p.semantic.iter().filter(|x| x.is_none()).count(),
            localization_hit_rate: 100.0 * p.inputs.iter().filter(|f| f.hit).count() as f64 / frames as f64,
            weights: betas.weights,
            semantic_share: 100.0 * semantic_chosen as f64 / frames as f64,
            methods,
        };
        write_json(&layout.report_json(&s), &report)?;
        write_text(&layout.report_csv(&s), &report.csv())?;
        manifest.record(&layout, &format!("report/{s}"), &layout.report_json(&s));
        manifest.record(&layout, &format!("report_csv/{s}"), &layout.report_csv(&s));

        let per_frame_ms: Vec<f64> = p.inputs.iter().map(|f| f.latency.as_secs_f64() * 1e3).collect();
        let violating_frames: Vec<u64> = per_frame_ms
            .iter()
            .zip(&p.records)
            .filter(|(ms, _)| **ms > cfg.t_max_ms)
            .map(|(_, r)| r.frame_id)
            .collect();
        let mut sorted = per_frame_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let timing = TimingReport {
            scenario: s.clone(),
            t_max_ms: cfg.t_max_ms,
            frames,
            violations: violating_frames.len(),
            violating_frames,
            median_ms: sorted[sorted.len() / 2],
            max_ms: sorted[sorted.len() - 1],
            per_frame_ms,
        };
        write_json(&layout.timing(&s), &timing)?;
        manifest.record(&layout, &format!("timing/{s}"), &layout.timing(&s));
        reports.push(report);
    }
    manifest
        .wall_clock_s
        .insert("eval".into(), start.elapsed().as_secs_f64());
    manifest.save(&layout)?;
    Ok(reports)
}

/// Merges the per-scenario reports of one or more runs into a single CSV
/// keyed by `(scenario, method, metric)`. All runs must share a config hash.
pub fn cmd_report(runs: &[PathBuf]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("no run directories given".into()));
    }
    let mut hash: Option<String> = None;
    let mut rows: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for run in runs {
        let dir = run.join("reports");
        if !dir.is_dir() {
            return Err(Error::MissingArtifact(dir));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let report: ScenarioReport = read_json(&f)?;
            match &hash {
                Some(h) if *h != report.config_hash => {
                    return Err(Error::ConfigHashMismatch(h.clone(), report.config_hash));
                }
                Some(_) => {}
                None => hash = Some(report.config_hash.clone()),
            }
            for (method, m) in &report.methods {
                for (metric, v) in m.rows() {
                    let key = (report.scenario.clone(), method.clone(), metric);
                    if let Some(old) = rows.insert(key.clone(), v) {
                        if old.to_bits() != v.to_bits() {
                            return Err(Error::InvalidInput(format!(
                                "conflicting values for {}/{}/{}: {old} vs {v}",
                                key.0, key.1, key.2
                            )));
                        }
                    }
                }
            }
        }
    }
    let mut out = String::from("scenario,method,metric,value\n");
    for ((s, m, k), v) in rows {
        out.push_str(&format!("{s},{m},{k},{v}\n"));
    }
    Ok(out)
}
