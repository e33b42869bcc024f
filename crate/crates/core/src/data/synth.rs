//! Procedural benchmark: solid shapes over textured backgrounds.
//!
//! ID and OOD images draw their backgrounds from one shared texture pool, so
//! every OOD image looks like the background of some ID image. The OOD splits
//! are texture-only images and held-out shapes (star, hexagon).

use std::f32::consts::{PI, TAU};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{quantize, Dataset, CHANNELS, ID_TEST, ID_TRAIN, OOD_BACKGROUND, OOD_NOVELSHAPE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Bar,
    Star,
    Hexagon,
}

impl ShapeKind {
    /// In-distribution classes, in label order.
    pub const ID: [ShapeKind; 6] =
        [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Cross, ShapeKind::Ring, ShapeKind::Bar];
    pub const NOVEL: [ShapeKind; 2] = [ShapeKind::Star, ShapeKind::Hexagon];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
            ShapeKind::Bar => "bar",
            ShapeKind::Star => "star",
            ShapeKind::Hexagon => "hexagon",
        }
    }

    /// Stored label byte: the ID class index, or 6/7 for the novel shapes.
    pub fn label(self) -> u8 {
        match self {
            ShapeKind::Disk => 0,
            ShapeKind::Square => 1,
            ShapeKind::Triangle => 2,
            ShapeKind::Cross => 3,
            ShapeKind::Ring => 4,
            ShapeKind::Bar => 5,
            ShapeKind::Star => 6,
            ShapeKind::Hexagon => 7,
        }
    }

    /// Area of the shape at size 1 (size scales linearly).
    fn unit_area(self) -> f32 {
        match self {
            ShapeKind::Disk => PI,
            ShapeKind::Square => 4.0,
            ShapeKind::Triangle => 3.0 * 3f32.sqrt() / 4.0,
            ShapeKind::Cross => 5.0 / 9.0 * 4.0,
            ShapeKind::Ring => PI * (1.0 - RING_INNER * RING_INNER),
            ShapeKind::Bar => 4.0 / BAR_ASPECT,
            ShapeKind::Star => 5.0 * STAR_INNER * (PI / 5.0).sin(),
            ShapeKind::Hexagon => 3.0 * 3f32.sqrt() / 2.0,
        }
    }

    /// Point test in the shape's own frame, size 1.
    fn contains(self, u: f32, v: f32) -> bool {
        match self {
            ShapeKind::Disk => u * u + v * v <= 1.0,
            ShapeKind::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
            ShapeKind::Triangle => in_polygon(&regular(3, 1.0, 1.0), u, v),
            ShapeKind::Cross => {
                let t = 1.0 / 3.0;
                (u.abs() <= 1.0 && v.abs() <= t) || (u.abs() <= t && v.abs() <= 1.0)
            }
            ShapeKind::Ring => {
                let r2 = u * u + v * v;
                (RING_INNER * RING_INNER..=1.0).contains(&r2)
            }
            ShapeKind::Bar => u.abs() <= 1.0 && v.abs() <= 1.0 / BAR_ASPECT,
            ShapeKind::Star => in_polygon(&regular(5, 1.0, STAR_INNER), u, v),
            ShapeKind::Hexagon => in_polygon(&regular(6, 1.0, 1.0), u, v),
        }
    }
}

const RING_INNER: f32 = 0.55;
const BAR_ASPECT: f32 = 2.2;
const STAR_INNER: f32 = 0.5;

/// Vertices of a (possibly star-shaped) regular polygon; inner ≠ outer alternates radii.
fn regular(points: usize, outer: f32, inner: f32) -> Vec<(f32, f32)> {
    if inner == outer {
        (0..points).map(|i| polar(outer, TAU * i as f32 / points as f32 - PI / 2.0)).collect()
    } else {
        (0..2 * points)
            .map(|i| polar(if i % 2 == 0 { outer } else { inner }, PI * i as f32 / points as f32 - PI / 2.0))
            .collect()
    }
}

fn polar(r: f32, a: f32) -> (f32, f32) {
    (r * a.cos(), r * a.sin())
}

/// Even-odd ray casting.
fn in_polygon(poly: &[(f32, f32)], x: f32, y: f32) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

const GRATING_GAIN: f32 = 1.0;
const NOISE_GAIN: f32 = 2.0;

/// Background texture of the shared pool.
#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    Grating { angle: f32, frequency: f32, color_a: [f32; 3], color_b: [f32; 3] },
    Noise { lattice: usize, values: Vec<[f32; 3]> },
}

/// Tinted grey, kept away from the saturated shape palette.
fn texture_color(rng: &mut (impl Rng + ?Sized)) -> [f32; 3] {
    let grey = rng.random_range(0.25..0.75);
    [0; 3].map(|_| grey + rng.random_range(-TINT..TINT))
}

const TINT: f32 = 0.08;

/// Base shape colour per class.
const PALETTE: [[f32; 3]; 6] = [
    [0.9, 0.15, 0.15],
    [0.15, 0.85, 0.2],
    [0.2, 0.25, 0.95],
    [0.95, 0.9, 0.15],
    [0.9, 0.2, 0.9],
    [0.15, 0.9, 0.9],
];
const SHADE: f32 = 0.08;
const PALETTE_SHARE: f32 = 0.0;

impl Texture {
    fn random(index: usize, palette: usize, rng: &mut dyn RngCore) -> Self {
        // some of the pool borrows shape colours
        let color = |rng: &mut dyn RngCore, p: f32| {
            if rng.random::<f32>() < p { PALETTE[rng.random_range(0..palette)] } else { texture_color(rng) }
        };
        if index.is_multiple_of(2) {
            Texture::Grating {
                angle: rng.random_range(0.0..PI),
                frequency: rng.random_range(0.12..0.45),
                color_a: color(rng, PALETTE_SHARE),
                color_b: texture_color(rng),
            }
        } else {
            let lattice = rng.random_range(3..=6);
            Texture::Noise { lattice, values: (0..lattice * lattice).map(|_| color(rng, PALETTE_SHARE / 3.0)).collect() }
        }
    }

    /// Render with a per-image random phase or offset. Channel-major `3×S×S`.
    fn render(&self, side: usize, rng: &mut impl Rng) -> Vec<f32> {
        let plane = side * side;
        let mut out = vec![0.0; CHANNELS * plane];
        match self {
            Texture::Grating { angle, frequency, color_a, color_b } => {
                let phase = rng.random_range(0.0..TAU);
                let (s, c) = angle.sin_cos();
                for y in 0..side {
                    for x in 0..side {
                        let wave = (TAU * frequency * (x as f32 * c + y as f32 * s) + phase).sin();
                        let t = (0.5 + GRATING_GAIN * wave).clamp(0.0, 1.0);
                        for ch in 0..CHANNELS {
                            out[ch * plane + y * side + x] = color_a[ch] * t + color_b[ch] * (1.0 - t);
                        }
                    }
                }
            }
            Texture::Noise { lattice, values } => {
                let l = *lattice;
                let (ox, oy) = (rng.random_range(0.0..l as f32), rng.random_range(0.0..l as f32));
                let cell = side as f32 / l as f32;
                // steep ramp: flat cells with sharp borders
                let smooth = |t: f32| ((t - 0.5) * NOISE_GAIN + 0.5).clamp(0.0, 1.0);
                for y in 0..side {
                    for x in 0..side {
                        let (gx, gy) = (x as f32 / cell + ox, y as f32 / cell + oy);
                        let (x0, y0) = (gx.floor(), gy.floor());
                        let (tx, ty) = (smooth(gx - x0), smooth(gy - y0));
                        let (x0, y0) = (x0 as usize % l, y0 as usize % l);
                        let (x1, y1) = ((x0 + 1) % l, (y0 + 1) % l);
                        for ch in 0..CHANNELS {
                            let v00 = values[y0 * l + x0][ch];
                            let v10 = values[y0 * l + x1][ch];
                            let v01 = values[y1 * l + x0][ch];
                            let v11 = values[y1 * l + x1][ch];
                            let top = v00 + (v10 - v00) * tx;
                            let bottom = v01 + (v11 - v01) * tx;
                            out[ch * plane + y * side + x] = top + (bottom - top) * ty;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Generator configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapesBenchmark {
    pub seed: u64,
    pub classes: usize,
    pub image_side: usize,
    pub texture_pool: usize,
    /// Probability that an ID image's texture comes from its class's own
    /// share of the pool instead of the whole pool.
    pub texture_affinity: f32,
    /// Probability that an ID shape is painted in its class colour rather
    /// than a random class's colour.
    pub color_fidelity: f32,
    pub id_train: usize,
    pub id_test: usize,
    pub ood_background: usize,
    pub ood_novelshape: usize,
}

impl Default for ShapesBenchmark {
    fn default() -> Self {
        ShapesBenchmark {
            seed: 7,
            classes: 6,
            image_side: 32,
            texture_pool: 16,
            texture_affinity: 0.8,
            color_fidelity: 0.85,
            id_train: 6000,
            id_test: 1200,
            ood_background: 1200,
            ood_novelshape: 1200,
        }
    }
}

/// One generated split with its bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSplit {
    pub name: String,
    pub data: Dataset,
    pub texture_ids: Vec<u16>,
    /// Foreground (shape) pixel count per image.
    pub foreground_pixels: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub config: ShapesBenchmark,
    pub textures: Vec<Texture>,
    pub splits: Vec<GeneratedSplit>,
}

impl Benchmark {
    pub fn split(&self, name: &str) -> Option<&GeneratedSplit> {
        self.splits.iter().find(|s| s.name == name)
    }
}

const MIN_FRACTION: f32 = 0.25;
const MAX_FRACTION: f32 = 0.5;

/// Rasterize `kind` at a random size, rotation and position so that it is
/// fully inside the image and covers 25–50% of it. Returns the mask.
fn place_shape(kind: ShapeKind, side: usize, rng: &mut impl Rng) -> Vec<bool> {
    let area = (side * side) as f32;
    let margin = side as isize / 2;
    for attempt in 0.. {
        // shrink the target range if large shapes keep getting clipped
        let hi = 0.45 - 0.15 * (attempt as f32 / 200.0).min(1.0);
        let fraction = rng.random_range(MIN_FRACTION + 0.01..hi);
        let size = (fraction * area / kind.unit_area()).sqrt();
        let angle = rng.random_range(0.0..TAU);
        let jitter = side as f32 / 5.0;
        let cx = side as f32 / 2.0 + rng.random_range(-jitter..jitter);
        let cy = side as f32 / 2.0 + rng.random_range(-jitter..jitter);
        let (s, c) = angle.sin_cos();
        let inside = |x: isize, y: isize| {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            kind.contains((dx * c + dy * s) / size, (-dx * s + dy * c) / size)
        };
        // reject anything that would be clipped by the border
        let clipped = (-margin..side as isize + margin).any(|y| {
            (-margin..side as isize + margin)
                .any(|x| (x < 0 || y < 0 || x >= side as isize || y >= side as isize) && inside(x, y))
        });
        if clipped {
            continue;
        }
        let mask: Vec<bool> = (0..side * side).map(|i| inside((i % side) as isize, (i / side) as isize)).collect();
        let covered = mask.iter().filter(|&&m| m).count() as f32 / area;
        if (MIN_FRACTION..=MAX_FRACTION).contains(&covered) {
            return mask;
        }
    }
    unreachable!()
}

/// The slot's palette colour with a small per-image shade, redrawn while it
/// sits too close to the background's mean colour.
/// Palette colour of `slot`, jittered until it stands out from the background.
fn shape_color(slot: usize, background: &[f32], plane: usize, rng: &mut impl Rng) -> [f32; 3] {
    let mean: Vec<f32> =
        (0..CHANNELS).map(|c| background[c * plane..(c + 1) * plane].iter().sum::<f32>() / plane as f32).collect();
    let gap = |color: &[f32; 3]| (0..CHANNELS).map(|c| (color[c] - mean[c]).abs()).sum::<f32>() / CHANNELS as f32;
    let base = PALETTE[slot];
    let mut best = base;
    for _ in 0..16 {
        let color = base.map(|v| (v + rng.random_range(-SHADE..SHADE)).clamp(0.0, 1.0));
        if gap(&color) >= 0.25 {
            return color;
        }
        if gap(&color) > gap(&best) {
            best = color;
        }
    }
    best
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// How a split ties textures and colours to labels.
#[derive(Clone, Copy)]
struct Style {
    affinity: f32,
    fidelity: f32,
    palette: usize,
}

#[allow(clippy::too_many_arguments)]
fn render_split(
    name: &str,
    count: usize,
    kinds: &[ShapeKind],
    with_shape: bool,
    style: Style,
    textures: &[Texture],
    side: usize,
    rng: &mut ChaCha8Rng,
) -> GeneratedSplit {
    let Style { affinity, fidelity, palette } = style;
    let plane = side * side;
    // balanced label sequence, then shuffled
    let mut order: Vec<usize> = (0..count).map(|i| i % kinds.len().max(1)).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut data = Dataset::empty(side);
    let mut texture_ids = Vec::with_capacity(count);
    let mut foreground_pixels = Vec::with_capacity(count);
    let mut bytes = vec![0u8; CHANNELS * plane];
    // texture t is at home in class t mod K
    let home = |k: usize| -> Vec<usize> { (k..textures.len()).step_by(kinds.len().max(1)).collect() };
    for &k in &order {
        let own = home(k);
        let tid = if affinity > 0.0 && !own.is_empty() && rng.random::<f32>() < affinity {
            own[rng.random_range(0..own.len())]
        } else {
            rng.random_range(0..textures.len())
        };
        let mut image = textures[tid].render(side, rng);
        let mut fg = 0u32;
        let label = if with_shape {
            let kind = kinds[k];
            let mask = place_shape(kind, side, rng);
            // novel shapes borrow a random ID class's colour
            let own = usize::from(kind.label());
            let slot = if own < palette && rng.random::<f32>() < fidelity { own } else { rng.random_range(0..palette) };
            let color = shape_color(slot, &image, plane, rng);
            for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                for c in 0..CHANNELS {
                    image[c * plane + i] = color[c];
                }
                fg += 1;
            }
            kind.label()
        } else {
            8
        };
        bytes.iter_mut().zip(&image).for_each(|(b, &v)| *b = quantize(v));
        data.push(&bytes, label);
        texture_ids.push(tid as u16);
        foreground_pixels.push(fg);
    }
    GeneratedSplit { name: name.to_string(), data, texture_ids, foreground_pixels }
}

/// Generate all four splits. Identical configs give identical bytes.
pub fn generate_benchmark(config: &ShapesBenchmark) -> Result<Benchmark> {
    if config.classes < 2 || config.classes > ShapeKind::ID.len() {
        return Err(Error::Config(format!("classes must be in 2..=6, got {}", config.classes)));
    }
    if config.texture_pool == 0 || config.texture_pool > u16::MAX as usize {
        return Err(Error::Config("texture pool must hold at least one texture".into()));
    }
    for (what, p) in [("texture affinity", config.texture_affinity), ("colour fidelity", config.color_fidelity)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{what} must be in [0, 1], got {p}")));
        }
    }
    if config.image_side < 8 {
        return Err(Error::Config(format!("image side {} is too small", config.image_side)));
    }
    let mut trng = split_rng(config.seed, 0);
    let textures: Vec<Texture> = (0..config.texture_pool).map(|i| Texture::random(i, config.classes, &mut trng)).collect();
    let id_kinds = &ShapeKind::ID[..config.classes];
    let side = config.image_side;
    let id = Style { affinity: config.texture_affinity, fidelity: config.color_fidelity, palette: config.classes };
    let ood = Style { affinity: 0.0, ..id };
    let splits = vec![
        render_split(ID_TRAIN, config.id_train, id_kinds, true, id, &textures, side, &mut split_rng(config.seed, 1)),
        render_split(ID_TEST, config.id_test, id_kinds, true, id, &textures, side, &mut split_rng(config.seed, 2)),
        render_split(OOD_BACKGROUND, config.ood_background, &[], false, ood, &textures, side, &mut split_rng(config.seed, 3)),
        render_split(OOD_NOVELSHAPE, config.ood_novelshape, &ShapeKind::NOVEL, true, ood, &textures, side, &mut split_rng(config.seed, 4)),
    ];
    Ok(Benchmark { config: config.clone(), textures, splits })
}
