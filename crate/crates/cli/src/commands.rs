//! The pipeline commands. Each reads its inputs, writes everything under
//! an output directory and never modifies its inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use avwws::augment::{read_wav, write_wav, WavFormat};
use avwws::eval::{
    confusion_counts, ensemble_eval, ensemble_votes, metrics, read_labels, read_scores, threshold_sweep,
    uniform_grid, write_labels, write_scores, Metrics, ScoreList,
};
use avwws::features::{
    apply_cmvn, compute_cmvn_stats, compute_fbank, load_video_features, read_features, write_features, FbankConfig,
    FeatureMatrix, Waveform,
};
use avwws::models::{decode_checkpoint, encode_checkpoint, ModelConfig, WwsModel};
use avwws::training::{
    format_history, parse_history, split_training_state, Example, HistoryRecord, Trainer,
};
use avwws::{Error, Result};
use rayon::prelude::*;

use crate::chain::{apply_variant, fingerprint, parse_chain, speed_factor, variant_rng, ChainSettings};
use crate::config::KvConfig;
use crate::manifest::{Manifest, Record, Split};
use crate::settings::{format_model_config, model_config, read_model_config, train_configs};
use crate::synth::{generate, SyntheticSpec};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CMVN_FILE: &str = "cmvn.txt";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
pub const CHECKPOINT_FILE: &str = "checkpoint.avck";
pub const HISTORY_FILE: &str = "history.tsv";
pub const REPORT_FILE: &str = "report.txt";

/// Process exit status for an error: 2 configuration, 4 divergence, 3 for
/// every data problem.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } => 4,
        _ => 3,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| io_err(p, e))
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| io_err(p, e))
}

/// Runs `f` on every item in parallel and gathers failures into one error
/// naming each failing utterance.
fn per_record<T, U, F>(what: &str, items: &[T], id: impl Fn(&T) -> &str + Sync, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let results: Vec<Result<U>> = items.par_iter().map(&f).collect();
    let mut out = Vec::with_capacity(items.len());
    let mut failures = Vec::new();
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(v) => out.push(v),
            Err(e) => failures.push((id(item).to_string(), e)),
        }
    }
    if failures.is_empty() {
        return Ok(out);
    }
    // A configuration problem is the same for every record.
    if failures.iter().all(|(_, e)| matches!(e, Error::Config(_))) {
        return Err(failures.swap_remove(0).1);
    }
    let mut msg = format!("{what} failed for {} of {} utterances:", failures.len(), items.len());
    for (id, e) in &failures {
        write!(msg, "\n  {id}: {e}").unwrap();
    }
    Err(Error::Input(msg))
}

/// Writes the synthetic corpus: float WAV audio, video feature files and a
/// manifest.
pub fn gen_data(spec: &SyntheticSpec, out: &Path) -> Result<Manifest> {
    let clips = generate(spec)?;
    let (audio_dir, video_dir) = (out.join("audio"), out.join("video"));
    create_dir(&audio_dir)?;
    create_dir(&video_dir)?;
    let records = per_record("gen-data", &clips, |c| &c.id, |c| {
        let audio = audio_dir.join(format!("{}.wav", c.id));
        let video = video_dir.join(format!("{}.avwf", c.id));
        write_wav(&audio, &c.audio, WavFormat::Float32)?;
        write_features(&video, &c.video)?;
        Ok(Record {
            id: c.id.clone(),
            audio,
            video: Some(video),
            label: c.label,
            split: c.split.parse()?,
            features: None,
        })
    })?;
    let m = Manifest { records };
    m.save(&out.join(MANIFEST_FILE))?;
    Ok(m)
}

fn mono_fbank(path: &Path, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    let w = read_wav(path)?;
    if w.num_channels() != 1 {
        return Err(Error::Input(format!(
            "{} has {} channels; enhance or mix down before featurizing",
            path.display(),
            w.num_channels()
        )));
    }
    compute_fbank(&w, cfg)
}

/// Log-mel features normalised with CMVN statistics from the train split
/// only. Writes `features/<id>.avwf`, the statistics and a manifest with the
/// feature column filled in.
pub fn featurize(manifest: &Manifest, cfg: &FbankConfig, out: &Path) -> Result<Manifest> {
    let raw = per_record("featurize", &manifest.records, |r| &r.id, |r| mono_fbank(&r.audio, cfg))?;
    let train: Vec<&FeatureMatrix> = manifest
        .records
        .iter()
        .zip(&raw)
        .filter(|(r, _)| r.split == Split::Train)
        .map(|(_, f)| f)
        .collect();
    if train.is_empty() {
        return Err(Error::Input("manifest has no train utterances to estimate CMVN statistics".into()));
    }
    let stats = compute_cmvn_stats(train)?;
    let feat_dir = out.join("features");
    create_dir(&feat_dir)?;
    stats.save(&out.join(CMVN_FILE))?;
    let pairs: Vec<(&Record, &FeatureMatrix)> = manifest.records.iter().zip(&raw).collect();
    let records = per_record("featurize", &pairs, |p| &p.0.id, |(r, f)| {
        let path = feat_dir.join(format!("{}.avwf", r.id));
        write_features(&path, &apply_cmvn(f, &stats)?)?;
        Ok(Record {
            features: Some(path),
            ..(*r).clone()
        })
    })?;
    let m = Manifest { records };
    m.save(&out.join(MANIFEST_FILE))?;
    Ok(m)
}

/// Nearest-frame time scaling of video features to follow a speed change.
fn rescale_video(v: &FeatureMatrix, factor: f64) -> Result<FeatureMatrix> {
    let frames = ((v.frames() as f64 / factor).round() as usize).max(1);
    let mut data = Vec::with_capacity(frames * v.dim());
    for t in 0..frames {
        let src = ((t as f64 * factor).round() as usize).min(v.frames() - 1);
        data.extend_from_slice(v.row(src));
    }
    FeatureMatrix::new(data, frames, v.dim(), v.frame_shift(), v.kind())
}

/// Augmented copies of every utterance, one per chain variant, appended to
/// the unchanged original records. Copies get the variant fingerprint as
/// an id suffix. Noise comes from the negative train utterances.
pub fn augment(manifest: &Manifest, chain: &str, settings: &ChainSettings, seed: u64, out: &Path) -> Result<Manifest> {
    let variants = parse_chain(chain)?;
    let mut records = manifest.records.clone();
    if !variants.is_empty() {
        let noise_pool: Vec<Waveform> = if chain.split_whitespace().any(|s| s.starts_with("noise")) {
            let negatives: Vec<&Record> = manifest.split(Split::Train).filter(|r| r.label == 0).collect();
            per_record("augment", &negatives, |r| &r.id, |r| read_wav(&r.audio))?
        } else {
            Vec::new()
        };
        let (audio_dir, video_dir) = (out.join("audio"), out.join("video"));
        create_dir(&audio_dir)?;
        let jobs: Vec<(&Record, &Vec<_>)> = manifest
            .records
            .iter()
            .flat_map(|r| variants.iter().map(move |v| (r, v)))
            .collect();
        let ids: Vec<String> = jobs.iter().map(|(r, v)| format!("{}_{}", r.id, fingerprint(v))).collect();
        let indexed: Vec<(usize, &(&Record, &Vec<_>))> = jobs.iter().enumerate().collect();
        let copies = per_record("augment", &indexed, |j| &j.1 .0.id, |&(i, &(r, steps))| {
            let id = &ids[i];
            let w = read_wav(&r.audio)?;
            let mut rng = variant_rng(seed, id);
            let y = apply_variant(&w, r.label, steps, settings, &noise_pool, &mut rng)?;
            let audio = audio_dir.join(format!("{id}.wav"));
            write_wav(&audio, &y, WavFormat::Float32)?;
            let factor = speed_factor(steps);
            let video = match &r.video {
                Some(v) if factor != 1.0 => {
                    create_dir(&video_dir)?;
                    let path = video_dir.join(format!("{id}.avwf"));
                    write_features(&path, &rescale_video(&load_video_features(v)?, factor)?)?;
                    Some(path)
                }
                other => other.clone(),
            };
            Ok(Record {
                id: id.clone(),
                audio,
                video,
                label: r.label,
                split: r.split,
                features: None,
            })
        })?;
        records.extend(copies);
    }
    let m = Manifest { records };
    create_dir(out)?;
    m.save(&out.join(MANIFEST_FILE))?;
    Ok(m)
}

fn load_example(r: &Record) -> Result<Example> {
    let path = r
        .features
        .as_ref()
        .ok_or_else(|| Error::Input(format!("{} has no features; run featurize first", r.id)))?;
    let audio = read_features(path)?;
    let video = r.video.as_deref().map(load_video_features).transpose()?;
    Example::new(audio, video, r.label)
}

fn load_examples(records: &[&Record]) -> Result<Vec<Example>> {
    per_record("loading features", records, |r| &r.id, |r| load_example(r))
}

/// Result of a `train` invocation.
#[derive(Debug)]
pub struct TrainReport {
    pub model: WwsModel,
    /// Full history including any resumed part.
    pub history: Vec<HistoryRecord>,
    pub finished: bool,
}

/// Locates the checkpoint and model config given a run directory or a
/// checkpoint file.
fn run_paths(p: &Path) -> (PathBuf, PathBuf) {
    if p.is_dir() {
        (p.join(CHECKPOINT_FILE), p.join(MODEL_CONFIG_FILE))
    } else {
        (p.to_path_buf(), crate::manifest::dir_of(p).join(MODEL_CONFIG_FILE))
    }
}

/// Loads a trained model, dropping any optimiser state in the checkpoint.
pub fn load_model(p: &Path) -> Result<WwsModel> {
    let (ckpt, cfg) = run_paths(p);
    let config = read_model_config(&read_text(&cfg)?)?;
    let bytes = fs::read(&ckpt).map_err(|e| io_err(&ckpt, e))?;
    let (params, _) = split_training_state(decode_checkpoint(&bytes)?)?;
    WwsModel::from_params(config, params)
}

/// Two-stage training on the `train_split` utterances (default `train`).
///
/// Config keys: model and architecture keys (see [`model_config`]),
/// stage keys (see [`train_configs`]) and `stop_after`, which ends this
/// invocation after that many steps so that a later `resume` can finish
/// the run. Writes the model config, a checkpoint carrying optimiser
/// state, and the loss history.
pub fn train(manifest: &Manifest, cfg: &KvConfig, seed: u64, out: &Path, resume: Option<&Path>) -> Result<TrainReport> {
    let split: Split = cfg.get_or("train_split", Split::Train)?;
    let stop_after: Option<u64> = cfg.get("stop_after")?;
    let (stage1, stage2) = train_configs(cfg, seed)?;
    log::info!(
        "stage 1: {} steps at lr {}; stage 2: {} steps at lr {}; batch {}",
        stage1.max_steps,
        stage1.lr_peak,
        stage2.max_steps,
        stage2.lr_peak,
        stage1.batch_size
    );
    let records: Vec<&Record> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(Error::Input(format!("manifest has no {split} utterances")));
    }
    let data = load_examples(&records)?;
    let audio_dim = data[0].audio.dim();
    let video_dim = data.iter().find_map(|e| e.video.as_ref().map(FeatureMatrix::dim)).unwrap_or(0);
    let config: ModelConfig = model_config(cfg, audio_dim, video_dim)?;
    cfg.finish()?;
    if config.is_audio_visual() {
        if let Some(e) = records.iter().zip(&data).find(|(_, e)| e.video.is_none()) {
            return Err(Error::Config(format!(
                "{} needs video features but utterance {} has none",
                config.kind.name(),
                e.0.id
            )));
        }
    }

    let (mut trainer, mut history) = match resume {
        None => (Trainer::new(WwsModel::new(config.clone(), seed)?, &data, stage1, stage2)?, Vec::new()),
        Some(dir) => {
            let (ckpt, cfg_path) = run_paths(dir);
            let saved = read_model_config(&read_text(&cfg_path)?)?;
            if saved != config {
                return Err(Error::Config(format!(
                    "model settings differ from the run being resumed ({})",
                    cfg_path.display()
                )));
            }
            let bytes = fs::read(&ckpt).map_err(|e| io_err(&ckpt, e))?;
            let (params, state) = split_training_state(decode_checkpoint(&bytes)?)?;
            let state = state
                .ok_or_else(|| Error::Input(format!("{} carries no training state", ckpt.display())))?;
            let hist_path = crate::manifest::dir_of(&ckpt).join(HISTORY_FILE);
            let history = if hist_path.is_file() { parse_history(&read_text(&hist_path)?)? } else { Vec::new() };
            let model = WwsModel::from_params(config.clone(), params)?;
            (Trainer::resume(model, state, &data, stage1, stage2)?, history)
        }
    };

    let mut steps = 0u64;
    while stop_after.is_none_or(|n| steps < n) && trainer.step()? {
        steps += 1;
        if let Some(h) = trainer.history().last() {
            if h.step % 50 == 0 {
                log::info!("stage {} step {} loss {:.5} lr {:.3e}", h.stage, h.step, h.loss, h.lr);
            }
        }
    }
    let finished = trainer.is_finished();
    history.extend_from_slice(trainer.history());

    create_dir(out)?;
    write_file(&out.join(MODEL_CONFIG_FILE), format_model_config(&config))?;
    write_file(&out.join(CHECKPOINT_FILE), encode_checkpoint(&trainer.checkpoint_params()))?;
    write_file(&out.join(HISTORY_FILE), format_history(&history))?;
    let model = trainer.into_outcome().model;
    Ok(TrainReport {
        model,
        history,
        finished,
    })
}

/// Scores for every record, in manifest order.
pub fn score_records(model: &WwsModel, records: &[&Record]) -> Result<ScoreList> {
    let values = per_record("scoring", records, |r| &r.id, |r| {
        let e = load_example(r)?;
        if model.config().is_audio_visual() && e.video.is_none() {
            return Err(Error::Config(format!("utterance {} has no video features", r.id)));
        }
        model.predict(&e.audio, e.video.as_ref())
    })?;
    Ok(ScoreList {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        values,
    })
}

/// One line of a metrics report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportLine {
    pub name: String,
    /// Per-model decision thresholds (one for single models, three for the
    /// ensemble).
    pub thresholds: Vec<f64>,
    pub metrics: Metrics,
}

pub fn format_report(header: &str, lines: &[ReportLine]) -> String {
    let mut s = format!("# {header}\nname\tthreshold\tfrr\tfar\tscore\n");
    for l in lines {
        let t: Vec<String> = l.thresholds.iter().map(|t| format!("{t}")).collect();
        writeln!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            l.name,
            t.join(","),
            l.metrics.frr,
            l.metrics.far,
            l.metrics.score
        )
        .unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub split: Split,
    /// One per checkpoint, or a single value shared by all.
    pub thresholds: Vec<f64>,
    /// Choose each model's threshold by sweeping this split.
    pub sweep: bool,
    pub sweep_points: usize,
}

impl EvalOptions {
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        Ok(Self {
            split: cfg.get_or("split", Split::Dev)?,
            thresholds: cfg.list("thresholds")?.unwrap_or_else(|| vec![0.5]),
            sweep: cfg.bool_or("sweep", false)?,
            sweep_points: cfg.get_or("sweep_points", 100)?,
        })
    }
}

fn labels_of(records: &[&Record]) -> ScoreList {
    ScoreList {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        values: records.iter().map(|r| r.label as f64).collect(),
    }
}

fn thresholds_for(given: &[f64], n: usize) -> Result<Vec<f64>> {
    match given.len() {
        1 => Ok(vec![given[0]; n]),
        k if k == n => Ok(given.to_vec()),
        k => Err(Error::Config(format!("{k} thresholds given for {n} models"))),
    }
}

/// Scores the split with every checkpoint, writes `scores_model<k>.txt`,
/// `labels.txt`, optional sweep tables and `report.txt`. With exactly
/// three checkpoints the report also carries the majority-vote ensemble.
pub fn eval(manifest: &Manifest, checkpoints: &[PathBuf], opts: &EvalOptions, out: &Path) -> Result<Vec<ReportLine>> {
    if checkpoints.is_empty() {
        return Err(Error::Config("eval needs at least one checkpoint".into()));
    }
    let fixed = thresholds_for(&opts.thresholds, checkpoints.len())?;
    let records: Vec<&Record> = manifest.split(opts.split).collect();
    if records.is_empty() {
        return Err(Error::Input(format!("manifest has no {} utterances", opts.split)));
    }
    let labels = labels_of(&records);
    let y: Vec<u8> = records.iter().map(|r| r.label).collect();
    create_dir(out)?;
    write_labels(&out.join("labels.txt"), &labels)?;

    let mut lines = Vec::new();
    let mut lists = Vec::new();
    for (k, ckpt) in checkpoints.iter().enumerate() {
        let name = format!("model{}", k + 1);
        let model = load_model(ckpt)?;
        let scores = score_records(&model, &records)?;
        write_scores(&out.join(format!("scores_{name}.txt")), &scores)?;
        let (threshold, m) = if opts.sweep {
            let sweep = threshold_sweep(&scores.values, &y, &uniform_grid(opts.sweep_points))?;
            let mut table = String::from("threshold\tfrr\tfar\tscore\n");
            for (t, m) in &sweep.points {
                writeln!(table, "{t}\t{:?}\t{:?}\t{:?}", m.frr, m.far, m.score).unwrap();
            }
            write_file(&out.join(format!("sweep_{name}.tsv")), table)?;
            (sweep.best_threshold(), sweep.best_metrics())
        } else {
            (fixed[k], metrics(&confusion_counts(&scores.values, &y, fixed[k])?)?)
        };
        lines.push(ReportLine {
            name,
            thresholds: vec![threshold],
            metrics: m,
        });
        lists.push(scores);
    }
    if let [a, b, c] = lists.as_slice() {
        let t = [lines[0].thresholds[0], lines[1].thresholds[0], lines[2].thresholds[0]];
        lines.push(ReportLine {
            name: "ensemble".into(),
            thresholds: t.to_vec(),
            metrics: ensemble_eval([a, b, c], t, &labels)?,
        });
    }
    let header = format!("split {}, {} utterances", opts.split, records.len());
    write_file(&out.join(REPORT_FILE), format_report(&header, &lines))?;
    Ok(lines)
}

/// Majority vote over three score files. Writes `votes.txt` and
/// `report.txt` with the three members and the ensemble.
pub fn vote(scores: [&Path; 3], labels: &Path, thresholds: [f64; 3], out: &Path) -> Result<Vec<ReportLine>> {
    let lists = scores.map(read_scores);
    let [a, b, c] = lists;
    let lists = [a?, b?, c?];
    let labels = read_labels(labels)?;
    let refs = [&lists[0], &lists[1], &lists[2]];
    let votes = ensemble_votes(refs, thresholds, &labels)?;
    let y = labels.labels()?;
    let mut lines = Vec::new();
    for (k, l) in lists.iter().enumerate() {
        lines.push(ReportLine {
            name: format!("model{}", k + 1),
            thresholds: vec![thresholds[k]],
            metrics: metrics(&confusion_counts(&l.values, &y, thresholds[k])?)?,
        });
    }
    lines.push(ReportLine {
        name: "ensemble".into(),
        thresholds: thresholds.to_vec(),
        metrics: ensemble_eval(refs, thresholds, &labels)?,
    });
    create_dir(out)?;
    write_scores(
        &out.join("votes.txt"),
        &ScoreList {
            ids: labels.ids.clone(),
            values: votes.iter().map(|&v| v as f64).collect(),
        },
    )?;
    let header = format!("majority vote, {} utterances", labels.len());
    write_file(&out.join(REPORT_FILE), format_report(&header, &lines))?;
    Ok(lines)
}
