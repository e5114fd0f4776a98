//! Synthetic training pairs: phantom base images, random smooth warps and
//! train/validation splitting.
//!
//! A pair keeps the original image as the template, the warped copy as the
//! subject, the applied field, and the subject warped back through the
//! numerically inverted field (the round-trip reference).

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::netpbm::{atomic_write, load_pgm, save_pgm};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::warpfield::{WarpField, DEFAULT_INVERT_ITERATIONS};

/// Exclusive upper bound on any finite difference of a generated field.
pub const MAX_FIELD_GRADIENT: f64 = 0.5;
/// Generators aim below the bound by this factor.
const GRADIENT_MARGIN: f64 = 0.9;
pub const MANIFEST_NAME: &str = "manifest.txt";

/// Default amplitude cap: 5 px at 64x64, proportional to size.
pub fn default_max_amplitude(size: usize) -> f64 {
    5.0 * size as f64 / 64.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WarpKind {
    Linear,
    Spherical,
    Sinusoidal,
    Mixed,
}

impl WarpKind {
    pub const ALL: [WarpKind; 4] = [
        WarpKind::Linear,
        WarpKind::Spherical,
        WarpKind::Sinusoidal,
        WarpKind::Mixed,
    ];
}

impl fmt::Display for WarpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarpKind::Linear => "linear",
            WarpKind::Spherical => "spherical",
            WarpKind::Sinusoidal => "sinusoidal",
            WarpKind::Mixed => "mixed",
        })
    }
}

impl FromStr for WarpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(WarpKind::Linear),
            "spherical" => Ok(WarpKind::Spherical),
            "sinusoidal" => Ok(WarpKind::Sinusoidal),
            "mixed" => Ok(WarpKind::Mixed),
            _ => Err(Error::Config(format!(
                "unknown warp kind {s:?} (linear, spherical, sinusoidal, mixed)"
            ))),
        }
    }
}

/// Shape parameters of a warp; the overall scale comes from the amplitude.
/// Positions are in normalized coordinates `u = (p - c) / (size / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub enum WarpShape {
    /// `phi = G u + offset`.
    Linear {
        gradient: [[f64; 2]; 2],
        offset: [f64; 2],
    },
    /// Radial displacement `sign * d * (1 - |d|^2)^2` with `d = (u - center) / radius`,
    /// zero outside the radius.
    Spherical {
        center: [f64; 2],
        radius: f64,
        sign: f64,
    },
    /// `phi_i = sin(2 pi f_i i / H + rho_i)`, `phi_j = sin(2 pi f_j j / W + rho_j)`.
    Sinusoidal {
        frequency: [f64; 2],
        phase: [f64; 2],
    },
    /// Sum of the parts, each unit-normalized.
    Mixed(Vec<WarpShape>),
}

impl WarpShape {
    pub fn kind(&self) -> WarpKind {
        match self {
            WarpShape::Linear { .. } => WarpKind::Linear,
            WarpShape::Spherical { .. } => WarpKind::Spherical,
            WarpShape::Sinusoidal { .. } => WarpKind::Sinusoidal,
            WarpShape::Mixed(_) => WarpKind::Mixed,
        }
    }

    fn random(kind: WarpKind, rng: &mut impl Rng) -> Self {
        match kind {
            WarpKind::Linear => WarpShape::Linear {
                gradient: [
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                ],
                offset: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
            },
            WarpKind::Spherical => WarpShape::Spherical {
                center: [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)],
                radius: rng.gen_range(0.7..1.2),
                sign: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            },
            WarpKind::Sinusoidal => WarpShape::Sinusoidal {
                frequency: [rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)],
                phase: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
            },
            WarpKind::Mixed => WarpShape::Mixed(vec![
                Self::random(WarpKind::Linear, rng),
                Self::random(WarpKind::Spherical, rng),
                Self::random(WarpKind::Sinusoidal, rng),
            ]),
        }
    }

    /// Unscaled field in f64.
    fn raw(&self, size: usize) -> WarpField<f64> {
        let half = size as f64 / 2.0;
        let c = (size as f64 - 1.0) / 2.0;
        match self {
            WarpShape::Linear { gradient: g, offset } => WarpField::from_fn(size, size, |i, j| {
                let (y, x) = ((i as f64 - c) / half, (j as f64 - c) / half);
                (
                    g[0][0] * y + g[0][1] * x + offset[0],
                    g[1][0] * y + g[1][1] * x + offset[1],
                )
            }),
            WarpShape::Spherical {
                center,
                radius,
                sign,
            } => WarpField::from_fn(size, size, |i, j| {
                let dy = ((i as f64 - c) / half - center[0]) / radius;
                let dx = ((j as f64 - c) / half - center[1]) / radius;
                let t2 = dy * dy + dx * dx;
                if t2 >= 1.0 {
                    return (0.0, 0.0);
                }
                let w = (1.0 - t2) * (1.0 - t2) * sign;
                (dy * w, dx * w)
            }),
            WarpShape::Sinusoidal { frequency, phase } => {
                let n = size as f64;
                WarpField::from_fn(size, size, |i, j| {
                    (
                        (TAU * frequency[0] * i as f64 / n + phase[0]).sin(),
                        (TAU * frequency[1] * j as f64 / n + phase[1]).sin(),
                    )
                })
            }
            WarpShape::Mixed(parts) => {
                let mut acc = WarpField::zeros(size, size);
                for p in parts {
                    acc = acc.add(&unit(p.raw(size))).unwrap();
                }
                acc
            }
        }
    }
}

fn unit(f: WarpField<f64>) -> WarpField<f64> {
    let m = f.max_magnitude();
    if m > 0.0 {
        f.scale(1.0 / m)
    } else {
        f
    }
}

/// A parametric warp: the shape rescaled so its largest displacement
/// magnitude equals `amplitude` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpSpec {
    pub amplitude: f64,
    pub shape: WarpShape,
    /// Seed the spec was drawn from, kept for provenance.
    pub seed: u64,
}

impl WarpSpec {
    pub fn kind(&self) -> WarpKind {
        self.shape.kind()
    }

    /// Draws a random spec of `kind`. The amplitude is uniform in
    /// `[min_amplitude, max_amplitude]` and then reduced if needed so the
    /// field stays within the invertibility bound.
    pub fn random(
        kind: WarpKind,
        size: usize,
        min_amplitude: f64,
        max_amplitude: f64,
        seed: u64,
    ) -> Self {
        let mut rng = substream(seed, "warp-spec");
        let shape = WarpShape::random(kind, &mut rng);
        let lo = min_amplitude.min(max_amplitude);
        let mut amplitude = if max_amplitude > lo {
            rng.gen_range(lo..=max_amplitude)
        } else {
            max_amplitude
        };
        let grad_per_px = unit(shape.raw(size)).max_gradient();
        let limit = MAX_FIELD_GRADIENT * GRADIENT_MARGIN;
        if amplitude * grad_per_px > limit {
            amplitude = limit / grad_per_px;
        }
        WarpSpec {
            amplitude,
            shape,
            seed,
        }
    }
}

/// Renders `spec` at `size x size`, rejecting fields that break the
/// invertibility bound.
pub fn gen_field<T: Scalar>(spec: &WarpSpec, size: usize) -> Result<WarpField<T>> {
    if !(spec.amplitude >= 0.0) || !spec.amplitude.is_finite() {
        return Err(Error::Config(format!("invalid amplitude {}", spec.amplitude)));
    }
    if spec.amplitude == 0.0 {
        return Ok(WarpField::zeros(size, size));
    }
    let field = unit(spec.shape.raw(size)).scale(spec.amplitude);
    let g = field.max_gradient();
    if g >= MAX_FIELD_GRADIENT {
        return Err(Error::Config(format!(
            "{} warp with amplitude {:.3} has max gradient {g:.3} >= {MAX_FIELD_GRADIENT}",
            spec.kind(),
            spec.amplitude
        )));
    }
    Ok(field.cast())
}

fn smoothstep_edge(signed_dist_px: f64) -> f64 {
    // Soft inside indicator with roughly a half-pixel transition.
    1.0 / (1.0 + (-3.0 * signed_dist_px).exp())
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn random(rng: &mut impl Rng, spread: f64, r_lo: f64, r_hi: f64) -> Self {
        Self {
            cy: rng.gen_range(-spread..spread),
            cx: rng.gen_range(-spread..spread),
            ry: rng.gen_range(r_lo..r_hi),
            rx: rng.gen_range(r_lo..r_hi),
            angle: rng.gen_range(-PI..PI),
        }
    }

    /// Approximate signed distance in normalized units, positive inside.
    fn inside(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (u, v) = (c * dy + s * dx, -s * dy + c * dx);
        let r = ((u / self.ry).powi(2) + (v / self.rx).powi(2)).sqrt();
        (1.0 - r) * self.ry.min(self.rx)
    }
}

/// Brain-like phantom: a bright skull ring around a textured interior with
/// dark ventricle-like ellipses and a few blobs. Deterministic per seed and
/// normalized to exactly [0, 1].
pub fn gen_phantom<T: Scalar>(size: usize, seed: u64) -> Result<Image<T>> {
    if size < 16 {
        return Err(Error::Config(format!("phantom size {size} < 16")));
    }
    let mut rng = substream(seed, "phantom");
    let half = size as f64 / 2.0;
    let px = 1.0 / half;
    let head = Ellipse {
        cy: rng.gen_range(-0.05..0.05),
        cx: rng.gen_range(-0.05..0.05),
        ry: rng.gen_range(0.8..0.92),
        rx: rng.gen_range(0.65..0.8),
        angle: rng.gen_range(-0.3..0.3),
    };
    let skull_width = rng.gen_range(0.06..0.1);
    let skull_level = rng.gen_range(0.85..1.0);
    let brain_level = rng.gen_range(0.4..0.55);
    let ventricles: Vec<(Ellipse, f64)> = (0..rng.gen_range(2..=3))
        .map(|_| (Ellipse::random(&mut rng, 0.25, 0.08, 0.2), rng.gen_range(0.05..0.2)))
        .collect();
    let blobs: Vec<(Ellipse, f64)> = (0..rng.gen_range(16..=24))
        .map(|_| (Ellipse::random(&mut rng, 0.55, 0.06, 0.18), rng.gen_range(-0.4..0.45)))
        .collect();
    let gratings: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            let freq = rng.gen_range(1.0..3.5);
            let theta = rng.gen_range(0.0..PI);
            (
                freq * theta.cos(),
                freq * theta.sin(),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.02..0.05),
            )
        })
        .collect();
    let img = Image::from_fn(size, size, |i, j| {
        let y = (i as f64 + 0.5 - half) / half;
        let x = (j as f64 + 0.5 - half) / half;
        let d_head = head.inside(y, x) / px;
        let d_brain = (head.inside(y, x) - skull_width) / px;
        let in_head = smoothstep_edge(d_head);
        let in_brain = smoothstep_edge(d_brain);
        let mut tissue = brain_level;
        for &(fy, fx, ph, amp) in &gratings {
            tissue += amp * (PI * (fy * y + fx * x) + ph).sin();
        }
        for (e, level) in &blobs {
            tissue += level * smoothstep_edge(e.inside(y, x) / px);
        }
        for (e, level) in &ventricles {
            let w = smoothstep_edge(e.inside(y, x) / px);
            tissue = tissue * (1.0 - w) + level * w;
        }
        let skull = skull_level * (in_head - in_brain);
        T::of_f64(skull + tissue * in_brain)
    });
    Ok(img.normalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Validation),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SamplePair<T = f32> {
    /// Template warped by `applied_field`.
    pub subject: Image<T>,
    /// The original image.
    pub template: Image<T>,
    pub applied_field: WarpField<T>,
    /// Subject warped once more by the inverse of `applied_field`.
    pub roundtrip_truth: Image<T>,
}

impl<T: Scalar> SamplePair<T> {
    pub fn new(template: Image<T>, field: WarpField<T>) -> Result<Self> {
        let subject = field.apply(&template)?;
        let roundtrip_truth = field.invert(DEFAULT_INVERT_ITERATIONS).apply(&subject)?;
        Ok(Self {
            subject,
            template,
            applied_field: field,
            roundtrip_truth,
        })
    }
}

/// Border width excluded from round-trip comparisons for `field`.
pub fn interior_margin<T: Scalar>(field: &WarpField<T>) -> usize {
    field.max_magnitude().as_f64().ceil() as usize + 1
}

#[derive(Clone, Debug)]
pub struct DatasetEntry<T = f32> {
    pub pair_id: String,
    pub base_id: usize,
    pub split: Split,
    pub pair: SamplePair<T>,
}

#[derive(Clone, Debug)]
pub struct Dataset<T = f32> {
    pub size: usize,
    pub entries: Vec<DatasetEntry<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetEntry<T>> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_images: usize,
    pub warps_per_image: usize,
    pub size: usize,
    pub seed: u64,
    /// Fraction of base images assigned to validation.
    pub validation_fraction: f64,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
}

impl DatasetConfig {
    pub fn new(n_images: usize, warps_per_image: usize, size: usize, seed: u64) -> Self {
        let max_amplitude = default_max_amplitude(size);
        Self {
            n_images,
            warps_per_image,
            size,
            seed,
            validation_fraction: 0.2,
            min_amplitude: 0.75 * max_amplitude,
            max_amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_images < 2 {
            return Err(Error::Config(format!(
                "need at least 2 base images to split, got {}",
                self.n_images
            )));
        }
        if self.warps_per_image < 1 {
            return Err(Error::Config("warps_per_image must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.max_amplitude >= 0.0 && self.min_amplitude >= 0.0) {
            return Err(Error::Config("amplitudes must be non-negative".into()));
        }
        Ok(())
    }
}

fn pair_id(base: usize, warp: usize) -> String {
    format!("b{base:04}_w{warp}")
}

fn parse_base_id(pair_id: &str) -> Result<usize> {
    pair_id
        .strip_prefix('b')
        .and_then(|s| s.split('_').next())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("pair id {pair_id:?} lacks a base image id")))
}

/// Warps each base image `warps_per_image` times and splits by base image.
/// `cfg.n_images` and `cfg.size` are taken from `images`.
pub fn build_dataset_from_images<T: Scalar>(
    images: Vec<Image<T>>,
    cfg: &DatasetConfig,
) -> Result<Dataset<T>> {
    let cfg = DatasetConfig {
        n_images: images.len(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let size = images[0].height();
    for img in &images {
        if img.shape() != (size, size) {
            return Err(Error::Dimension(format!(
                "base images must all be {size}x{size}, found {}x{}",
                img.height(),
                img.width()
            )));
        }
    }
    let n = images.len();
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(cfg.seed, "split"));
    let mut split = vec![Split::Train; n];
    for &b in &order[..n_val] {
        split[b] = Split::Validation;
    }
    let mut kind_rng = substream(cfg.seed, "warp-kinds");
    let mut entries = Vec::with_capacity(n * cfg.warps_per_image);
    for (base, template) in images.into_iter().enumerate() {
        for w in 0..cfg.warps_per_image {
            let kind = *WarpKind::ALL.choose(&mut kind_rng).unwrap();
            let spec_seed = crate::rng::substream_seed(cfg.seed, &format!("warp/{base}/{w}"));
            let spec = WarpSpec::random(kind, size, cfg.min_amplitude, cfg.max_amplitude, spec_seed);
            let field = gen_field(&spec, size)?;
            entries.push(DatasetEntry {
                pair_id: pair_id(base, w),
                base_id: base,
                split: split[base],
                pair: SamplePair::new(template.clone(), field)?,
            });
        }
    }
    Ok(Dataset { size, entries })
}

/// Phantom-based dataset; a pure function of the config.
pub fn build_dataset<T: Scalar>(cfg: &DatasetConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let images = (0..cfg.n_images)
        .map(|b| gen_phantom(cfg.size, crate::rng::substream_seed(cfg.seed, &format!("base/{b}"))))
        .collect::<Result<Vec<_>>>()?;
    build_dataset_from_images(images, cfg)
}

/// Loads every `.pgm` in `dir` (sorted by name), normalized, as base images.
pub fn load_image_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<Image<T>>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_pgm::<T>(p).map(|img| img.normalize()))
        .collect()
}

/// File names of one pair inside a dataset directory.
pub fn pair_files(pair_id: &str) -> [String; 4] {
    [
        format!("{pair_id}.subject.pgm"),
        format!("{pair_id}.template.pgm"),
        format!("{pair_id}.field.wrp1"),
        format!("{pair_id}.truth.pgm"),
    ]
}

/// Writes all pairs plus `manifest.txt`; returns the manifest path.
pub fn write_dataset<T: Scalar>(ds: &Dataset<T>, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = String::new();
    for e in &ds.entries {
        let [s, t, f, g] = pair_files(&e.pair_id);
        save_pgm(&e.pair.subject, out.join(&s))?;
        save_pgm(&e.pair.template, out.join(&t))?;
        e.pair.applied_field.save(out.join(&f))?;
        save_pgm(&e.pair.roundtrip_truth, out.join(&g))?;
        manifest.push_str(&format!("{} {} {s} {t} {f} {g}\n", e.pair_id, e.split.as_str()));
    }
    let path = out.join(MANIFEST_NAME);
    atomic_write(&path, manifest.as_bytes())?;
    Ok(path)
}

/// Reads a manifest (paths relative to its directory). `manifest` may also
/// name the directory containing `manifest.txt`.
pub fn load_dataset<T: Scalar>(manifest: impl AsRef<Path>) -> Result<Dataset<T>> {
    let mut path = manifest.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_NAME);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::Format(format!(
                "{}:{}: expected 6 columns, found {}",
                path.display(),
                lineno + 1,
                cols.len()
            )));
        }
        let subject = load_pgm(dir.join(cols[2]))?;
        let template = load_pgm(dir.join(cols[3]))?;
        let applied_field = WarpField::load(dir.join(cols[4]))?;
        let roundtrip_truth = load_pgm(dir.join(cols[5]))?;
        entries.push(DatasetEntry {
            pair_id: cols[0].to_string(),
            base_id: parse_base_id(cols[0])?,
            split: cols[1].parse()?,
            pair: SamplePair {
                subject,
                template,
                applied_field,
                roundtrip_truth,
            },
        });
    }
    let size = entries
        .first()
        .map(|e| e.pair.template.height())
        .ok_or_else(|| Error::Format(format!("{} lists no pairs", path.display())))?;
    Ok(Dataset { size, entries })
}
