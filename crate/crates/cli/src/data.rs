use std::fmt::Write as _;
use std::path::Path;

use amtnet::dataset::{build_split, load_shipsear, parse_metadata_manifest, Category, Recording, RecordingMeta, SplitManifest};
use amtnet::pipeline::{desk_dataset, segment_samples};
use amtnet::signal::FeatureExtractor;
use amtnet::train::Sample;
use anyhow::{Context, Result};

use crate::config::RunConfig;

pub struct Dataset {
    pub n_class: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Loads and featurizes the train and test segments named by the config.
pub fn load(cfg: &RunConfig) -> Result<Dataset> {
    if cfg.data.synthetic {
        let d = desk_dataset(&cfg.synthetic, cfg.feature, cfg.data.synthetic_seed)?;
        log::info!("synthetic data: {} train and {} test segments", d.train.len(), d.test.len());
        return Ok(Dataset { n_class: cfg.synthetic.synthetic.n_classes, train: d.train, test: d.test });
    }
    let root = cfg.data_root()?;
    let meta_path = cfg.data.metadata.clone().unwrap_or_else(|| root.join("metadata.csv"));
    let text = std::fs::read_to_string(&meta_path).with_context(|| format!("reading metadata {}", meta_path.display()))?;
    let mut metas = parse_metadata_manifest(&text)?;
    let manifest = match &cfg.data.split {
        Some(p) => SplitManifest::from_toml_str(&std::fs::read_to_string(p).with_context(|| format!("reading split {}", p.display()))?)?,
        None => SplitManifest::shipsear(),
    };
    metas.retain(|m| manifest.placements(m.id).is_some());
    let recordings = load_shipsear(&root, &metas)?;
    let split = build_split(&manifest, &recordings, &cfg.segments)?;
    log::info!("{} recordings: {} train and {} test segments", recordings.len(), split.train.len(), split.test.len());
    let extractor = FeatureExtractor::new(cfg.features.clone())?;
    let train = segment_samples(&split.train, &recordings, &extractor, cfg.feature)?;
    let test = segment_samples(&split.test, &recordings, &extractor, cfg.feature)?;
    Ok(Dataset { n_class: Category::COUNT, train, test })
}

/// Metadata manifest text for `recordings`, readable by the corpus loader.
pub fn metadata_csv(metas: &[RecordingMeta]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "—".to_string(), |x| format!("{x}"));
    let mut out = String::from("id,category,range_m,depth_m,wind_kmh\n");
    for m in metas {
        writeln!(out, "{},{},{},{},{}", m.id, m.category, cell(m.source_range_m), cell(m.depth_m), cell(m.wind_kmh)).unwrap();
    }
    out
}

/// File name used for generated recordings.
pub fn wav_name(rec: &Recording) -> String {
    format!("{}_{}.wav", rec.meta.id, rec.meta.category.name().to_lowercase().replace(' ', "-"))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use amtnet::dataset::parse_metadata_manifest;

    #[test]
    fn metadata_text_parses_back() {
        let metas = vec![
            RecordingMeta { id: 3, category: Category::Tugboat, source_range_m: Some(40.0), depth_m: None, wind_kmh: Some(0.0), duration_s: 0.0 },
            RecordingMeta { id: 4, category: Category::Sailboat, source_range_m: None, depth_m: Some(7.5), wind_kmh: None, duration_s: 0.0 },
        ];
        assert_eq!(parse_metadata_manifest(&metadata_csv(&metas)).unwrap(), metas);
    }
}
