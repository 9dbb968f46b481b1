//! Seeded synthetic insulator-shell corpora.
//!
//! Shells are rendered as textured glass ellipses on a sky background.
//! Broken shells show a pale fracture surface where a chunk of the rim broke
//! off, flash damaged shells carry a brown burn stain. Damage strength varies per image
//! so the classes overlap, and every damaged shell comes with its pixel mask.
//! The fixed convolutional stack from [`shell_network`] plays the role of a
//! pretrained feature extractor; only its head is ever fitted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::dataset::{ClassSet, Sample};
use crate::error::{Error, Result};
use crate::image::{BoundingBox, Image};
use crate::localization::BinaryMask;
use crate::manifest::{ingest_manifest, ManifestLine, Split};
use crate::model_io::save_model_file;
use crate::net::{Conv2d, Dense, Layer, Network, Pool};
use crate::pipeline::labeled_samples;
use crate::pnm;
use crate::rebalance::{
    extract_features, fit_weighted_logreg, replace_head, ClassWeights, SolverConfig,
    Standardization,
};
use crate::tensor::Tensor;

pub const BROKEN: usize = 0;
pub const FLASH: usize = 1;
pub const HEALTHY: usize = 2;

/// Rendering parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellStyle {
    /// Square image side in pixels.
    pub size: usize,
    /// Per-pixel Gaussian noise.
    pub noise: f64,
    /// Damage strength lies in `[min_strength, 1]`, skewed toward the low end.
    pub min_strength: f64,
}

impl Default for ShellStyle {
    fn default() -> Self {
        Self {
            size: 24,
            noise: 0.04,
            min_strength: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticShell {
    pub image: Image,
    pub label: usize,
    /// Damage region; empty for healthy shells.
    pub mask: BinaryMask,
}

const SKY: [f64; 3] = [0.72, 0.80, 0.90];
const GLASS: [f64; 3] = [0.30, 0.42, 0.36];
const BURN: [f64; 3] = [0.42, 0.24, 0.10];
const FRACTURE: [f64; 3] = [0.95, 0.93, 0.85];

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

/// Renders one shell of class `label` (0 broken, 1 flash, 2 healthy).
pub fn render_shell(label: usize, style: &ShellStyle, rng: &mut impl Rng) -> SyntheticShell {
    let s = style.size as f64;
    let noise = Normal::new(0.0, style.noise.max(0.0)).expect("valid sigma");
    let cx = s / 2.0 - 0.5 + rng.random_range(-1.0..1.0);
    let cy = s / 2.0 - 0.5 + rng.random_range(-1.0..1.0);
    let rx = s * rng.random_range(0.38..0.44);
    let ry = s * rng.random_range(0.27..0.33);
    let tint = [0, 1, 2].map(|_| rng.random_range(-0.02..0.02));
    let ridge_freq = rng.random_range(1.8..2.4);
    // squared draw: weak, ambiguous damage is common
    let u: f64 = rng.random_range(0.0..=1.0);
    let strength = style.min_strength + (1.0 - style.min_strength) * u * u;

    // damage disc
    let (dx, dy, dr) = match label {
        BROKEN => {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = s * rng.random_range(0.13..0.18);
            (
                cx + (rx - 1.0) * theta.cos(),
                cy + (ry - 1.0) * theta.sin(),
                r,
            )
        }
        FLASH => {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let rho = rng.random_range(0.0..0.55);
            let r = s * rng.random_range(0.11..0.16);
            (cx + rho * rx * theta.cos(), cy + rho * ry * theta.sin(), r)
        }
        _ => (0.0, 0.0, 0.0),
    };

    let n = style.size;
    let mut data = Vec::with_capacity(n * n * 3);
    let mut bits = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64, y as f64);
            let sky = mix(SKY, [0.62, 0.72, 0.86], fy / s);
            let e = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
            let inside = e <= 1.0;
            let in_damage =
                label != HEALTHY && ((fx - dx).powi(2) + (fy - dy).powi(2)).sqrt() <= dr;
            let mut px = if inside {
                let ridge = 0.07 * (e.sqrt() * ridge_freq * std::f64::consts::PI * 2.0).sin();
                let highlight = 0.12 * (1.0 - ((fy - (cy - ry * 0.5)) / ry).abs()).max(0.0);
                let base = [0, 1, 2].map(|c| GLASS[c] + tint[c] + ridge + highlight);
                if in_damage {
                    match label {
                        BROKEN => mix(base, FRACTURE, strength),
                        _ => mix(base, BURN, strength),
                    }
                } else {
                    base
                }
            } else {
                sky
            };
            for v in &mut px {
                *v += noise.sample(rng);
            }
            data.extend(px);
            bits.push(inside && in_damage);
        }
    }
    SyntheticShell {
        image: Image::new(n, n, 3, data).expect("consistent render"),
        label,
        mask: BinaryMask::new(n, n, bits).expect("consistent mask"),
    }
}

/// Shells with `counts[c]` instances of class `c`, in class-interleaved order.
pub fn corpus(counts: [usize; 3], style: &ShellStyle, seed: u64) -> Vec<SyntheticShell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..3)
        .flat_map(|c| std::iter::repeat_n(c, counts[c]))
        .collect();
    use rand::seq::SliceRandom;
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|l| render_shell(l, style, &mut rng))
        .collect()
}

pub fn to_samples(shells: &[SyntheticShell]) -> Vec<Sample> {
    shells
        .iter()
        .map(|s| Sample::new(s.image.to_tensor(), s.label))
        .collect()
}

/// Applies the 3x3 box blur `passes` times.
pub fn blur(img: &Image, passes: usize) -> Image {
    (0..passes).fold(img.clone(), |acc, _| acc.box_blur())
}

/// First-layer color detectors with their biases. The biases sit just above
/// the glass and sky responses, so a channel stays silent on intact shells
/// and grows with damage strength.
fn detector_filters() -> Vec<([[f64; 9]; 3], f64)> {
    let centre = [0., 0., 0., 0., 1., 0., 0., 0., 0.];
    let flat = [1.0 / 9.0; 9];
    let zero = [0.0; 9];
    let scaled = |k: [f64; 9], f: f64| k.map(|v| v * f);
    vec![
        // burn: red over blue
        ([centre, zero, scaled(centre, -1.0)], -0.06),
        ([flat, zero, scaled(flat, -1.0)], -0.02),
        // fracture: bright, warm white
        ([scaled(centre, 3.0), zero, scaled(centre, -2.0)], -0.60),
        ([scaled(flat, 3.0), zero, scaled(flat, -2.0)], -0.45),
    ]
}

/// Fixed feature extractor for `size x size` RGB shells followed by a zero
/// head: conv 3x3 (4 detectors) - relu - maxpool 2 - conv 3x3 (per-channel
/// smoothing) - relu - avgpool 2 - avgpool 2 - flatten - dense.
pub fn shell_network(size: usize, num_classes: usize) -> Result<Network> {
    let detectors = detector_filters();
    let c = detectors.len();
    let mut w1 = Vec::with_capacity(c * 27);
    let mut b1 = Vec::with_capacity(c);
    for (f, bias) in &detectors {
        for channel in f {
            w1.extend_from_slice(channel);
        }
        b1.push(*bias);
    }
    let conv1 = Conv2d::new(Tensor::new(vec![c, 3, 3, 3], w1)?, Tensor::vector(b1), 1, 1)?;
    let smooth = [1., 2., 1., 2., 4., 2., 1., 2., 1.].map(|v| v / 16.0);
    let mut w2 = vec![0.0; c * c * 9];
    for o in 0..c {
        w2[(o * c + o) * 9..(o * c + o + 1) * 9].copy_from_slice(&smooth);
    }
    let conv2 = Conv2d::new(
        Tensor::new(vec![c, c, 3, 3], w2)?,
        Tensor::zeros(vec![c]),
        1,
        1,
    )?;
    let side = size / 8;
    Network::new(
        vec![3, size, size],
        vec![
            Layer::Conv2d(conv1),
            Layer::Relu,
            Layer::MaxPool(Pool::new(2)),
            Layer::Conv2d(conv2),
            Layer::Relu,
            Layer::AvgPool(Pool::new(2)),
            Layer::AvgPool(Pool::new(2)),
            Layer::Flatten,
            Layer::Dense(Dense::without_bias(Tensor::zeros(vec![
                num_classes,
                c * side * side,
            ]))?),
        ],
    )
}

/// Fits the head on all `samples` with uniform class weights: the
/// imbalance-blind baseline.
pub fn fit_plain_head(net: &Network, samples: &[Sample], solver: &SolverConfig) -> Result<Network> {
    let ex = extract_features(net, samples);
    let rows: Vec<usize> = (0..ex.features.rows()).collect();
    let st = Standardization::fit(&ex.features, &rows);
    let fit = fit_weighted_logreg(
        &st.apply(&ex.features),
        &ClassWeights::uniform(net.num_classes()),
        solver,
    )?;
    replace_head(net, &st.fold(&fit.head)?)
}

pub fn classes() -> ClassSet {
    ClassSet::default()
}

/// A shell pasted into a larger sky scene with its insulator box.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Image,
    pub insulator: BoundingBox,
    /// Shell box relative to the insulator crop.
    pub shell: BoundingBox,
    /// Damage mask in scene coordinates.
    pub mask: BinaryMask,
}

pub fn compose_scene(shell: &SyntheticShell, noise: f64, rng: &mut impl Rng) -> Scene {
    let n = shell.image.width();
    let (px, py) = (rng.random_range(3..9), rng.random_range(3..9));
    let (w, h) = (n + 2 * px, n + 2 * py);
    let noise = Normal::new(0.0, noise.max(0.0)).expect("valid sigma");
    let mut data = Vec::with_capacity(w * h * 3);
    let mut bits = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let inside = (px..px + n).contains(&x) && (py..py + n).contains(&y);
            if inside {
                data.extend_from_slice(shell.image.pixel(x - px, y - py));
                bits.push(shell.mask.get(x - px, y - py));
            } else {
                let sky = mix(SKY, [0.62, 0.72, 0.86], y as f64 / h as f64);
                data.extend(sky.map(|v| v + noise.sample(rng)));
                bits.push(false);
            }
        }
    }
    let (mx, my) = (rng.random_range(1..=px), rng.random_range(1..=py));
    Scene {
        image: Image::new(w, h, 3, data).expect("consistent scene"),
        insulator: BoundingBox::new(px - mx, py - my, n + 2 * mx, n + 2 * my),
        shell: BoundingBox::new(mx, my, n, n),
        mask: BinaryMask::new(w, h, bits).expect("consistent mask"),
    }
}

/// Layout of an on-disk corpus written by [`write_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    /// Shell counts per class (broken, flash, healthy).
    pub train: [usize; 3],
    pub test: [usize; 3],
    pub style: ShellStyle,
    /// Share of test scenes that get blurred.
    pub blurred_fraction: f64,
    pub blur_passes: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            train: [100, 200, 1000],
            test: [50, 50, 50],
            style: ShellStyle::default(),
            blurred_fraction: 0.3,
            blur_passes: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub config: PathBuf,
    /// Head fitted on the imbalanced train split without re-balancing.
    pub model: PathBuf,
}

/// Writes scenes, masks, `manifest.jsonl`, `base.model` and `config.toml`
/// under `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Result<CorpusPaths> {
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let names = classes();
    let mut lines = String::new();
    let parts = [
        (Split::Train, corpus(spec.train, &spec.style, spec.seed)),
        (
            Split::Test,
            corpus(spec.test, &spec.style, spec.seed.wrapping_add(1)),
        ),
    ];
    for (split, shells) in &parts {
        for (i, shell) in shells.iter().enumerate() {
            let id = format!("{split}-{i:04}");
            let mut scene = compose_scene(shell, spec.style.noise, &mut rng);
            if *split == Split::Test && rng.random_bool(spec.blurred_fraction.clamp(0.0, 1.0)) {
                scene.image = blur(&scene.image, spec.blur_passes);
            }
            let image = PathBuf::from(format!("images/{id}.ppm"));
            pnm::write_image(dir.join(&image), &scene.image)?;
            let mask = if shell.label == HEALTHY {
                None
            } else {
                let m = PathBuf::from(format!("masks/{id}.pgm"));
                pnm::write_image(dir.join(&m), &scene.mask.to_image())?;
                Some(m)
            };
            let line = ManifestLine {
                id: Some(id),
                image,
                boxes: vec![scene.insulator],
                shell_boxes: vec![vec![scene.shell]],
                label: Some(names.name(shell.label).to_string()),
                mask,
                split: *split,
            };
            lines.push_str(&serde_json::to_string(&line)?);
            lines.push('\n');
        }
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, lines).map_err(|e| Error::io(&manifest, e))?;

    let net = shell_network(spec.style.size, names.len())?;
    let loaded = ingest_manifest(&manifest, &names)?;
    let train = labeled_samples(&loaded, Split::Train, &net)?;
    let base = fit_plain_head(&net, &train, &SolverConfig::default())?;
    let model = dir.join("base.model");
    save_model_file(&base, &model)?;

    let cfg = PipelineConfig {
        model: Some("base.model".into()),
        manifest: Some("manifest.jsonl".into()),
        seed: spec.seed,
        ..PipelineConfig::default()
    };
    let config = dir.join("config.toml");
    fs::write(&config, cfg.to_toml()?).map_err(|e| Error::io(&config, e))?;
    Ok(CorpusPaths {
        dir: dir.to_path_buf(),
        manifest,
        config,
        model,
    })
}
