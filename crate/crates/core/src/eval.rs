//! Segment-level metrics, multi-seed summaries, embedding export and the
//! cosine-similarity robustness analysis.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{AuxFactor, Category, Recording};
use crate::error::{Error, Result};
use crate::nn::AmtNet;
use crate::signal::{write_feature_cache, CacheKind, FeatureExtractor, FeatureKind};
use crate::train::{argmax, stack, Sample};

/// Most probable recognition class per input row; ties go to the lowest index.
pub fn predict_classes(model: &AmtNet<f32>, samples: &[&Sample], batch_size: usize) -> Result<Vec<usize>> {
    Ok(recognition_probabilities(model, samples, batch_size)?
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect())
}

/// Eval-mode recognition probabilities `(N, n_class)`.
pub fn recognition_probabilities(model: &AmtNet<f32>, samples: &[&Sample], batch_size: usize) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((samples.len(), model.config.n_class));
    for (k, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
        let p = model.predict_recognition(&stack(chunk)?)?;
        let start = k * batch_size.max(1);
        out.slice_mut(s![start..start + chunk.len(), ..]).assign(&p);
    }
    Ok(out)
}

pub fn segment_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "need equal, non-empty prediction and label lists (got {} and {})",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// `counts[true][predicted]`.
pub fn confusion(predictions: &[usize], labels: &[usize], n_class: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0; n_class]; n_class];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p < n_class && l < n_class {
            counts[l][p] += 1;
        }
    }
    counts
}

/// Mean and spread of per-seed accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation of the values.
    pub population_stdev: f64,
    /// Population standard deviation divided by the square root of the
    /// number of values; this is the `±` figure that is printed.
    pub spread: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("cannot summarize zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let population_stdev = var.sqrt();
        Ok(Self { mean, population_stdev, spread: population_stdev / n.sqrt(), n: values.len() })
    }
}

impl fmt::Display for Summary {
    /// Percentages with two decimals, e.g. `75.60 ± 0.42`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", percent(self.mean), percent(self.spread))
    }
}

/// Percentage rounded half-up to two decimals. The nudge keeps values such
/// as 0.75595, which are stored just below the halfway point, rounding up.
fn percent(v: f64) -> f64 {
    (v * 1e4 * (1.0 + 1e-12)).round() / 100.0
}

/// Test-set results of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub aux_accuracy: Option<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub segments: usize,
}

pub fn evaluate(model: &AmtNet<f32>, samples: &[Sample], factor: AuxFactor, batch_size: usize) -> Result<Evaluation> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let predictions = predict_classes(model, &refs, batch_size)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let accuracy = segment_accuracy(&predictions, &labels)?;
    let (_, aux_accuracy) = crate::train::accuracy(model, &refs, factor, batch_size)?;
    Ok(Evaluation { accuracy, aux_accuracy, confusion: confusion(&predictions, &labels, model.config.n_class), segments: samples.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub recognition: Summary,
    pub auxiliary: Option<Summary>,
    pub per_seed: Vec<SeedResult>,
    /// Confusion counts summed over seeds.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_results(per_seed: Vec<SeedResult>) -> Result<Self> {
        let acc: Vec<f64> = per_seed.iter().map(|r| r.evaluation.accuracy).collect();
        let recognition = Summary::of(&acc)?;
        let aux: Option<Vec<f64>> = per_seed.iter().map(|r| r.evaluation.aux_accuracy).collect();
        let auxiliary = aux.map(|a| Summary::of(&a)).transpose()?;
        let n_class = per_seed[0].evaluation.confusion.len();
        let mut confusion = vec![vec![0; n_class]; n_class];
        for r in &per_seed {
            for (row, add) in confusion.iter_mut().zip(&r.evaluation.confusion) {
                for (c, a) in row.iter_mut().zip(add) {
                    *c += a;
                }
            }
        }
        Ok(Self { seeds: per_seed.iter().map(|r| r.seed).collect(), recognition, auxiliary, per_seed, confusion })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(f, "seeds\t{}", seeds.join(","))?;
        for r in &self.per_seed {
            write!(f, "seed {}\taccuracy {:.4}", r.seed, r.evaluation.accuracy)?;
            if let Some(a) = r.evaluation.aux_accuracy {
                write!(f, "\taux_accuracy {a:.4}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "recognition\t{} %\t(population stdev {:.2})", self.recognition, 100.0 * self.recognition.population_stdev)?;
        if let Some(a) = &self.auxiliary {
            writeln!(f, "auxiliary\t{a} %")?;
        }
        writeln!(f, "confusion (rows true, columns predicted)")?;
        for (i, row) in self.confusion.iter().enumerate() {
            let name = Category::from_index(i).map_or_else(|| format!("class {i}"), |c| c.name().to_string());
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(f, "{name}\t{}", cells.join("\t"))?;
        }
        Ok(())
    }
}

/// Runs `run` once per seed and aggregates. A failing seed fails the report.
pub fn multi_seed_report(seeds: &[u64], mut run: impl FnMut(u64) -> Result<Evaluation>) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("at least one seed is required".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        per_seed.push(SeedResult { seed, evaluation: run(seed)? });
    }
    EvalReport::from_results(per_seed)
}

pub fn cosine_similarity(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embeddings of length {} and {}", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub ids: Vec<u32>,
    /// `(id_a, id_b, similarity)` for every unordered pair.
    pub pairs: Vec<(u32, u32, f64)>,
    pub mean: f64,
}

/// Pairwise cosine similarities of head embeddings.
pub fn similarity_table(ids: &[u32], embeddings: &Array2<f32>) -> Result<SimilarityTable> {
    if ids.len() < 2 || ids.len() != embeddings.nrows() {
        return Err(Error::InvalidInput("need at least two embeddings, one per id".into()));
    }
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            pairs.push((ids[i], ids[j], cosine_similarity(embeddings.row(i), embeddings.row(j))?));
        }
    }
    let mean = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
    Ok(SimilarityTable { ids: ids.to_vec(), pairs, mean })
}

/// Embeds the first `window_s` seconds of each recording with the
/// recognition branch and compares every pair.
pub fn robustness_analysis(
    model: &AmtNet<f32>,
    extractor: &FeatureExtractor,
    kind: FeatureKind,
    recordings: &[&Recording],
    window_s: f64,
) -> Result<SimilarityTable> {
    let mut samples = Vec::with_capacity(recordings.len());
    for r in recordings {
        if r.waveform.duration_s() < window_s {
            return Err(Error::InvalidInput(format!(
                "recording {} lasts {:.2} s, shorter than the {window_s} s window",
                r.meta.id,
                r.waveform.duration_s()
            )));
        }
        let head = r.waveform.slice_seconds(0.0, window_s)?;
        let fm = extractor.extract(&head, kind)?;
        samples.push(Sample { features: fm.data, label: r.meta.category.index(), aux: Default::default(), recording_id: r.meta.id });
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let (head, _) = embed(model, &refs, 8)?;
    let ids: Vec<u32> = recordings.iter().map(|r| r.meta.id).collect();
    similarity_table(&ids, &head)
}

/// Head embeddings `(N, D)` and flattened shared-layer outputs `(N, C*T'*F')`.
/// A pruned model or the single-branch baseline still has a shared layer,
/// whose output is the max-pooled stem activation.
pub fn embed(model: &AmtNet<f32>, samples: &[&Sample], batch_size: usize) -> Result<(Array2<f32>, Array2<f32>)> {
    let mut heads = Vec::new();
    let mut shared = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let e = model.embeddings(&stack(chunk)?)?;
        heads.push(e.main);
        let n = e.shared.dim().0;
        let width = e.shared.len() / n.max(1);
        let flat = e.shared.as_standard_layout().into_owned().into_shape_with_order((n, width));
        let flat = flat.map_err(|err| Error::Shape(err.to_string()))?;
        shared.push(flat);
    }
    let cat = |parts: Vec<Array2<f32>>| -> Result<Array2<f32>> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
    };
    Ok((cat(heads)?, cat(shared)?))
}

/// Describes one exported row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub id: String,
    pub category: usize,
    pub aux: crate::dataset::AuxLabels,
}

/// Writes `head.amtf`, `shared.amtf` and `index.csv` into `dir`.
pub fn export_embeddings(model: &AmtNet<f32>, samples: &[&Sample], rows: &[ExportRow], dir: &Path) -> Result<()> {
    if samples.len() != rows.len() || samples.is_empty() {
        return Err(Error::InvalidInput("one index row per exported sample is required".into()));
    }
    let (head, shared) = embed(model, samples, 16)?;
    fs::create_dir_all(dir)?;
    write_feature_cache(&dir.join("head.amtf"), CacheKind::HeadEmbedding, &head)?;
    write_feature_cache(&dir.join("shared.amtf"), CacheKind::SharedRepresentation, &shared)?;
    let mut index = fs::File::create(dir.join("index.csv"))?;
    writeln!(index, "row,id,category,range,depth,wind")?;
    let cell = |v: Option<usize>| v.map_or_else(String::new, |c| c.to_string());
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            index,
            "{i},{},{},{},{},{}",
            r.id,
            r.category,
            cell(r.aux.get(AuxFactor::Range)),
            cell(r.aux.get(AuxFactor::Depth)),
            cell(r.aux.get(AuxFactor::Wind))
        )?;
    }
    Ok(())
}

/// Per-sample probe features: the shared-layer output averaged over time,
/// flattened to `(N, C*F')`.
pub fn probe_features(model: &AmtNet<f32>, samples: &[&Sample], batch_size: usize) -> Result<Array2<f64>> {
    let mut rows = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let r = model.shared_forward(&stack(chunk)?)?;
        let pooled = r.mean_axis(Axis(2)).expect("non-empty time axis");
        let n = pooled.dim().0;
        let width = pooled.len() / n.max(1);
        let flat = pooled.as_standard_layout().into_owned().into_shape_with_order((n, width));
        rows.push(flat.map_err(|err| Error::Shape(err.to_string()))?.mapv(f64::from));
    }
    let views: Vec<_> = rows.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Multinomial logistic regression settings for [`linear_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { iterations: 300, learning_rate: 0.5, l2: 1e-3 }
    }
}

/// Fits a softmax regression on standardized `train_x` by full-batch
/// gradient descent and returns its accuracy on `test_x`.
pub fn linear_probe(
    train_x: &Array2<f64>,
    train_y: &[usize],
    test_x: &Array2<f64>,
    test_y: &[usize],
    n_classes: usize,
    config: ProbeConfig,
) -> Result<f64> {
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() || train_y.is_empty() || test_y.is_empty() {
        return Err(Error::InvalidInput("probe inputs and labels disagree in length".into()));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::Shape("probe train and test widths differ".into()));
    }
    let mean = train_x.mean_axis(Axis(0)).expect("non-empty");
    let std = train_x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let xs = (train_x - &mean) / &std;
    let xt = (test_x - &mean) / &std;
    let (n, d) = xs.dim();
    let mut w = Array2::<f64>::zeros((d, n_classes));
    let mut b = ndarray::Array1::<f64>::zeros(n_classes);
    let mut onehot = Array2::<f64>::zeros((n, n_classes));
    for (i, &y) in train_y.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    for _ in 0..config.iterations {
        let logits = xs.dot(&w) + &b;
        let p = crate::nn::softmax_rows(&logits);
        let g = (p - &onehot) / n as f64;
        let gw = xs.t().dot(&g) + &w * config.l2;
        let gb = g.sum_axis(Axis(0));
        w.scaled_add(-config.learning_rate, &gw);
        b.scaled_add(-config.learning_rate, &gb);
    }
    let scores = xt.dot(&w) + &b;
    let pred: Vec<usize> = scores.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
    segment_accuracy(&pred, test_y)
}
