use std::fs;
use std::path::{Path, PathBuf};

use amtnet::dataset::{generate_synthetic, AuxFactor, FactorMode, SyntheticSpec};
use amtnet::signal::{read_feature_cache, read_wav, FeatureExtractor};
use anyhow::{bail, Context, Result};
use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::config::RunConfig;
use crate::{PlotKind, UsageError};

/// Wind speeds (km/h) inside each wind class, used for the generated sample.
const WIND_CLASS_SPEEDS: [f64; 3] = [0.0, 6.0, 15.0];

const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [0, 0, 128],
    [128, 128, 0],
];

pub fn plot(cfg: &RunConfig, kind: PlotKind, input: Option<PathBuf>, wind_class: usize, perplexity: f32, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| PathBuf::from("plots"));
    cfg.write_to(&out)?;
    match kind {
        PlotKind::Spectrogram => {
            let (features, label) = spectrogram_input(cfg, input.as_deref(), wind_class)?;
            let target = out.join(format!("spectrogram_{label}.png"));
            heatmap(&features).save(&target).with_context(|| format!("writing {}", target.display()))?;
            println!("{}", target.display());
        }
        PlotKind::Embedding => {
            let dir = input.ok_or_else(|| UsageError("plot --kind embedding needs --input <export directory>".into()))?;
            for target in embedding_plots(&dir, cfg.train.factor, perplexity, &out)? {
                println!("{}", target.display());
            }
        }
    }
    Ok(())
}

fn spectrogram_input(cfg: &RunConfig, input: Option<&Path>, wind_class: usize) -> Result<(Array2<f32>, String)> {
    let extractor = FeatureExtractor::new(cfg.feature_config())?;
    let name = |p: &Path| p.file_stem().and_then(|s| s.to_str()).unwrap_or("input").to_string();
    match input {
        Some(p) if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("amtf")) => Ok((read_feature_cache(p)?.1, name(p))),
        Some(p) => {
            let wave = read_wav(p)?;
            let seg = cfg.segment_config();
            let wave = if wave.duration_s() > seg.length_s { wave.slice_seconds(0.0, seg.length_s)? } else { wave };
            Ok((extractor.extract(&wave, cfg.feature)?.data, name(p)))
        }
        None => {
            let Some(&speed) = WIND_CLASS_SPEEDS.get(wind_class) else {
                bail!(UsageError(format!("wind class {wind_class} is not one of 0, 1, 2")));
            };
            let spec = SyntheticSpec {
                n_classes: 1,
                recordings_per_class: 1,
                duration_s: cfg.synthetic.segments.length_s,
                range: FactorMode::Off,
                depth: FactorMode::Off,
                wind: FactorMode::Fixed { value: speed },
                ..cfg.synthetic.synthetic.clone()
            };
            let seed = cfg.seeds.first().copied().unwrap_or(0);
            let rec = generate_synthetic(&spec, seed)?.remove(0);
            let extractor = FeatureExtractor::new(cfg.synthetic_feature_config())?;
            Ok((extractor.extract(&rec.waveform, cfg.feature)?.data, format!("synthetic_wind{wind_class}")))
        }
    }
}

/// Time runs left to right, low bins at the bottom.
fn heatmap(data: &Array2<f32>) -> RgbImage {
    let (frames, bins) = data.dim();
    let (lo, hi) = data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    RgbImage::from_fn(frames as u32, bins as u32, |x, y| {
        let v = data[[x as usize, bins - 1 - y as usize]];
        colormap((v - lo) / span)
    })
}

/// Piecewise-linear dark-blue to yellow map on [0, 1].
fn colormap(t: f32) -> Rgb<u8> {
    const STOPS: [[f32; 3]; 5] = [[68., 1., 84.], [59., 82., 139.], [33., 145., 140.], [94., 201., 98.], [253., 231., 37.]];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f32;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

struct IndexRow {
    category: usize,
    factor: Option<usize>,
}

fn read_index(path: &Path, factor: AuxFactor) -> Result<Vec<IndexRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let column = 3 + factor.index();
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 6 {
                bail!("{}: malformed row {line:?}", path.display());
            }
            let category = cells[2].parse().with_context(|| format!("bad category in {line:?}"))?;
            let factor = match cells[column] {
                "" => None,
                c => Some(c.parse().with_context(|| format!("bad factor class in {line:?}"))?),
            };
            Ok(IndexRow { category, factor })
        })
        .collect()
}

fn embedding_plots(dir: &Path, factor: AuxFactor, perplexity: f32, out: &Path) -> Result<Vec<PathBuf>> {
    let (_, head) = read_feature_cache(&dir.join("head.amtf"))?;
    let rows = read_index(&dir.join("index.csv"), factor)?;
    if rows.len() != head.nrows() {
        bail!("index.csv has {} rows but head.amtf has {}", rows.len(), head.nrows());
    }
    let n = rows.len();
    if !(perplexity > 0.0) || (n as f32) < 3.0 * perplexity + 2.0 {
        bail!(UsageError(format!("perplexity {perplexity} needs more than {} points (have {n})", (3.0 * perplexity + 1.0).ceil())));
    }
    let points = tsne(&head, perplexity);
    let by_category = scatter(&points, &rows.iter().map(|r| Some(r.category)).collect::<Vec<_>>());
    let by_factor = scatter(&points, &rows.iter().map(|r| r.factor).collect::<Vec<_>>());
    let a = out.join("embedding_category.png");
    let b = out.join(format!("embedding_{}.png", format!("{factor:?}").to_lowercase()));
    by_category.save(&a)?;
    by_factor.save(&b)?;
    Ok(vec![a, b])
}

fn tsne(data: &Array2<f32>, perplexity: f32) -> Vec<[f32; 2]> {
    let flat: Vec<f32> = data.iter().copied().collect();
    let vectors: Vec<&[f32]> = flat.chunks(data.ncols()).collect();
    let mut t: bhtsne::tSNE<f32, &[f32]> = bhtsne::tSNE::new(&vectors);
    t.perplexity(perplexity).epochs(1000).spectral_init().barnes_hut(0.5, |a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
    });
    t.embedding().chunks(2).map(|p| [p[0], p[1]]).collect()
}

fn scatter(points: &[[f32; 2]], colors: &[Option<usize>]) -> RgbImage {
    const SIZE: u32 = 600;
    const MARGIN: f32 = 20.0;
    let bounds = |k: usize| points.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
    let ((x0, x1), (y0, y1)) = (bounds(0), bounds(1));
    let scale = |v: f32, lo: f32, hi: f32| MARGIN + (v - lo) / (hi - lo).max(1e-12) * (SIZE as f32 - 2.0 * MARGIN);
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    for (p, c) in points.iter().zip(colors) {
        let color = c.map_or(Rgb([200, 200, 200]), |c| Rgb(PALETTE[c % PALETTE.len()]));
        let (cx, cy) = (scale(p[0], x0, x1) as i64, SIZE as i64 - scale(p[1], y0, y1) as i64);
        for dx in -2..=2 {
            for dy in -2..=2 {
                let (x, y) = (cx + dx, cy + dy);
                if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(7.0), colormap(1.0));
    }

    #[test]
    fn heatmap_puts_low_bins_at_the_bottom() {
        let mut d = Array2::<f32>::zeros((3, 4));
        d[[0, 0]] = 1.0;
        let img = heatmap(&d);
        assert_eq!(img.dimensions(), (3, 4));
        assert_eq!(*img.get_pixel(0, 3), colormap(1.0));
        assert_eq!(*img.get_pixel(0, 0), colormap(0.0));
    }
}
