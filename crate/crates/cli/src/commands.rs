use std::fs;
use std::path::{Path, PathBuf};

use amtnet::dataset::{generate_synthetic, window_starts, AuxFactor, Category, SegmentConfig, SplitManifest};
use amtnet::eval::{evaluate, export_embeddings, multi_seed_report, ExportRow};
use amtnet::nn::{load_checkpoint, param_count, save_checkpoint, AmtNet};
use amtnet::signal::{read_feature_cache, read_wav, write_feature_cache, write_wav, CacheKind, FeatureConfig, FeatureExtractor, FeatureKind};
use amtnet::train::{argmax, stack, train_with, Sample};
use anyhow::{bail, Context, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{self, ensure_dir, metadata_csv, wav_name};
use crate::UsageError;

fn require_out(out: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    out.ok_or_else(|| UsageError(format!("{what} needs --out DIR")).into())
}

pub fn extract(cfg: &RunConfig, input: Option<PathBuf>, out: Option<PathBuf>, force: bool) -> Result<()> {
    let out = require_out(out, "extract")?;
    let input = match input {
        Some(p) => p,
        None => cfg.data_root()?,
    };
    cfg.write_to(&out)?;
    let features = cfg.feature_config();
    let segments = cfg.segment_config();
    let extractor = FeatureExtractor::new(features)?;
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&input)
        .into_iter()
        .filter_map(|e| e.ok())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no WAV files under {}", input.display());
    }
    let (mut written, mut skipped, mut failed) = (0usize, 0usize, 0usize);
    for path in &files {
        match extract_file(&extractor, cfg.feature, &segments, path, &out, force) {
            Ok((w, s)) => {
                written += w;
                skipped += s;
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e:#}", path.display());
            }
        }
    }
    println!("{written} cache files written, {skipped} skipped, {failed} files failed");
    if failed > 0 {
        bail!("{failed} of {} files could not be processed", files.len());
    }
    Ok(())
}

fn extract_file(
    extractor: &FeatureExtractor,
    kind: FeatureKind,
    segments: &SegmentConfig,
    path: &Path,
    out: &Path,
    force: bool,
) -> Result<(usize, usize)> {
    let wave = read_wav(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("recording");
    let sr = wave.sample_rate as f64;
    let (mut written, mut skipped) = (0, 0);
    for (k, start) in window_starts(wave.len(), wave.sample_rate, 0.0, f64::INFINITY, segments).into_iter().enumerate() {
        let target = out.join(format!("{stem}_{k:03}.amtf"));
        if target.exists() && !force {
            skipped += 1;
            continue;
        }
        let seg = wave.slice_seconds(start as f64 / sr, segments.length_s)?;
        let fm = extractor.extract(&seg, kind)?;
        write_feature_cache(&target, CacheKind::Feature(kind), &fm.data)?;
        written += 1;
    }
    Ok((written, skipped))
}

pub fn synth(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = require_out(out, "synth")?;
    cfg.write_to(&out)?;
    let recordings = generate_synthetic(&cfg.synthetic.synthetic, cfg.data.synthetic_seed)?;
    let audio = out.join("audio");
    ensure_dir(&audio)?;
    for r in &recordings {
        write_wav(&audio.join(wav_name(r)), &r.waveform)?;
    }
    let metas: Vec<_> = recordings.iter().map(|r| r.meta.clone()).collect();
    fs::write(out.join("metadata.csv"), metadata_csv(&metas))?;
    let split = SplitManifest::holdout(&metas, cfg.synthetic.test_per_class)?;
    fs::write(out.join("split.toml"), split.to_toml_string())?;

    // A config that trains from the written files through the corpus loader.
    let mut corpus = cfg.clone();
    corpus.data.synthetic = false;
    corpus.data.root = Some(audio);
    corpus.data.metadata = Some(out.join("metadata.csv"));
    corpus.data.split = Some(out.join("split.toml"));
    corpus.features = cfg.synthetic_feature_config();
    corpus.segments = cfg.synthetic.segments;
    fs::write(out.join("corpus.toml"), corpus.to_toml())?;
    println!("{} recordings written to {}", recordings.len(), out.display());
    Ok(())
}

fn checkpoint_meta(cfg: &RunConfig, seed: u64, best_epoch: usize, history_checksum: &str) -> serde_json::Value {
    json!({
        "seed": seed,
        "best_epoch": best_epoch,
        "feature": cfg.feature,
        "factor": cfg.train.factor,
        "features": cfg.feature_config(),
        "segments": cfg.segment_config(),
        "history_checksum": history_checksum,
    })
}

pub fn train(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| PathBuf::from("run"));
    cfg.write_to(&out)?;
    let data = data::load(cfg)?;
    if data.train.is_empty() || data.test.is_empty() {
        bail!("the split produced {} train and {} test segments", data.train.len(), data.test.len());
    }
    let mut evaluations = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed-{seed}"));
        ensure_dir(&dir)?;
        let epochs = cfg.train.epochs;
        let outcome = train_with(&cfg.train, data.n_class, &data.train, seed, &mut |e| {
            eprintln!(
                "seed {seed} epoch {}/{epochs}: recog {:.4} aux {} adv {} train {:.3} val {}",
                e.epoch + 1,
                e.loss_recog,
                e.loss_aux.map_or("-".into(), |v| format!("{v:.4}")),
                e.loss_adv.map_or("-".into(), |v| format!("{v:.4}")),
                e.train_acc,
                e.val_acc.map_or("-".into(), |v| format!("{v:.3}")),
            );
        })?;
        let checksum = outcome.history.checksum();
        let meta = checkpoint_meta(cfg, seed, outcome.best_epoch, &checksum);
        save_checkpoint(&dir.join("best.amtc"), &outcome.best, &meta)?;
        save_checkpoint(&dir.join("final.amtc"), &outcome.last, &meta)?;
        fs::write(dir.join("history.jsonl"), outcome.history.to_json_lines())?;
        let evaluation = evaluate(&outcome.best, &data.test, cfg.train.factor, cfg.train.batch_size)?;
        fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&evaluation).expect("serializes"))?;
        println!("seed {seed}: test accuracy {:.4} (best epoch {}, history {checksum})", evaluation.accuracy, outcome.best_epoch + 1);
        evaluations.push(evaluation);
    }
    let mut evaluations = evaluations.into_iter();
    let report = multi_seed_report(&cfg.seeds, |_| Ok(evaluations.next().expect("one evaluation per seed")))?;
    fs::write(out.join("report.txt"), report.to_string())?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{report}");
    Ok(())
}

fn load_model(path: &Path) -> Result<(AmtNet<f32>, serde_json::Value)> {
    if !path.exists() {
        bail!(UsageError(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((ck.model, ck.meta))
}

fn meta_factor(meta: &serde_json::Value, cfg: &RunConfig) -> AuxFactor {
    serde_json::from_value(meta["factor"].clone()).unwrap_or(cfg.train.factor)
}

pub fn eval(cfg: &RunConfig, checkpoints: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let models = checkpoints.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let data = data::load(cfg)?;
    let seeds: Vec<u64> = models.iter().enumerate().map(|(i, (_, m))| m["seed"].as_u64().unwrap_or(i as u64)).collect();
    let mut next = models.iter();
    let report = multi_seed_report(&seeds, |_| {
        let (model, meta) = next.next().expect("one model per seed");
        evaluate(model, &data.test, meta_factor(meta, cfg), cfg.train.batch_size)
    })?;
    print!("{report}");
    if let Some(out) = out {
        cfg.write_to(&out)?;
        fs::write(out.join("report.txt"), report.to_string())?;
        fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

/// Feature settings stored with a checkpoint, or the configured ones.
fn meta_features(meta: &serde_json::Value, cfg: &RunConfig) -> (FeatureConfig, SegmentConfig, FeatureKind) {
    let features = serde_json::from_value(meta["features"].clone()).unwrap_or_else(|_| cfg.feature_config());
    let segments = serde_json::from_value(meta["segments"].clone()).unwrap_or_else(|_| cfg.segment_config());
    let kind = serde_json::from_value(meta["feature"].clone()).unwrap_or(cfg.feature);
    (features, segments, kind)
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: Option<PathBuf>) -> Result<()> {
    let (model, meta) = load_model(checkpoint)?;
    let (features, segments, kind) = meta_features(&meta, cfg);
    let mut inputs: Vec<(f64, ndarray::Array2<f32>)> = Vec::new();
    if input.extension().is_some_and(|x| x.eq_ignore_ascii_case("amtf")) {
        let (cache_kind, data) = read_feature_cache(input)?;
        if !matches!(cache_kind, CacheKind::Feature(_)) {
            bail!(UsageError(format!("{} holds embeddings, not features", input.display())));
        }
        inputs.push((0.0, data));
    } else {
        let wave = read_wav(input)?;
        let extractor = FeatureExtractor::new(features)?;
        let sr = wave.sample_rate as f64;
        for start in window_starts(wave.len(), wave.sample_rate, 0.0, f64::INFINITY, &segments) {
            let seg = wave.slice_seconds(start as f64 / sr, segments.length_s)?;
            inputs.push((start as f64 / sr, extractor.extract(&seg, kind)?.data));
        }
        if inputs.is_empty() {
            bail!("{} is shorter than one {} s segment", input.display(), segments.length_s);
        }
    }
    let mut table = String::from("segment\tstart_s\tclass\tname\tprobability\n");
    for (k, (start, feats)) in inputs.into_iter().enumerate() {
        let sample = Sample { features: feats, label: 0, aux: Default::default(), recording_id: 0 };
        let p = model.predict_recognition(&stack(&[&sample])?)?;
        let c = argmax(p.row(0).iter().copied());
        let name = Category::from_index(c).map_or_else(|| format!("class {c}"), |c| c.name().to_string());
        table.push_str(&format!("{k}\t{start:.2}\t{c}\t{name}\t{:.4}\n", p[[0, c]]));
    }
    print!("{table}");
    if let Some(out) = out {
        cfg.write_to(&out)?;
        fs::write(out.join("predictions.tsv"), &table)?;
    }
    Ok(())
}

pub fn embed(cfg: &RunConfig, checkpoint: &Path, out: Option<PathBuf>) -> Result<()> {
    let out = require_out(out, "embed")?;
    let (model, _) = load_model(checkpoint)?;
    cfg.write_to(&out)?;
    let data = data::load(cfg)?;
    let mut samples: Vec<&Sample> = Vec::new();
    let mut rows = Vec::new();
    for (side, set) in [("train", &data.train), ("test", &data.test)] {
        for s in set {
            samples.push(s);
            rows.push(ExportRow { id: format!("{side}:{}", s.recording_id), category: s.label, aux: s.aux });
        }
    }
    export_embeddings(&model, &samples, &rows, &out)?;
    println!("{} embeddings written to {}", samples.len(), out.display());
    Ok(())
}

pub fn prune(cfg: &RunConfig, checkpoint: &Path, out: Option<PathBuf>) -> Result<()> {
    let (model, meta) = load_model(checkpoint)?;
    if !model.has_aux() {
        bail!(UsageError(format!("{} has no auxiliary branch to prune", checkpoint.display())));
    }
    let pruned = model.prune();
    let out = out.unwrap_or_else(|| checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    cfg.write_to(&out)?;
    let target = out.join("pruned.amtc");
    save_checkpoint(&target, &pruned, &meta)?;
    let (full, small) = (param_count(&model), param_count(&pruned));
    println!("parameters: {full} -> {small} (ratio {:.3}); written to {}", small as f64 / full as f64, target.display());
    Ok(())
}

impl RunConfig {
    pub fn synthetic_feature_config(&self) -> FeatureConfig {
        FeatureConfig { sample_rate: self.synthetic.synthetic.sample_rate, ..FeatureConfig::desk() }
    }
}
