//! Synthetic referring-shapes episodes.
//!
//! Each episode is a black canvas with 2–5 non-touching flat-coloured
//! shapes. A referent is described as `"<color> <shape>"`; when two
//! referents share color and shape, a position word (`left`, `right`,
//! `top`, `bottom`, judged by mask centroid against the image centre) is
//! prepended to whichever side tells them apart.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Color {
    pub name: &'static str,
    pub rgb: [u8; 3],
}

pub const PALETTE: [Color; 8] = [
    Color {
        name: "red",
        rgb: [255, 0, 0],
    },
    Color {
        name: "green",
        rgb: [0, 255, 0],
    },
    Color {
        name: "blue",
        rgb: [0, 0, 255],
    },
    Color {
        name: "yellow",
        rgb: [255, 255, 0],
    },
    Color {
        name: "cyan",
        rgb: [0, 255, 255],
    },
    Color {
        name: "magenta",
        rgb: [255, 0, 255],
    },
    Color {
        name: "white",
        rgb: [255, 255, 255],
    },
    Color {
        name: "orange",
        rgb: [255, 128, 0],
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    /// Whether pixel `(y, x)` lies inside the shape centred at `(cy, cx)`
    /// with half-extent `r`. Triangles point up with their base at the
    /// bottom of the bounding square.
    fn contains(self, cy: i64, cx: i64, r: i64, y: i64, x: i64) -> bool {
        let (dy, dx) = (y - cy, x - cx);
        match self {
            ShapeKind::Circle => dy * dy + dx * dx <= r * r,
            ShapeKind::Square => dy.abs() <= r && dx.abs() <= r,
            ShapeKind::Triangle => dy.abs() <= r && 2 * dx.abs() <= dy + r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Left,
    Right,
    Top,
    Bottom,
}

impl Position {
    pub const ALL: [Position; 4] = [
        Position::Left,
        Position::Right,
        Position::Top,
        Position::Bottom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Position::Left => "left",
            Position::Right => "right",
            Position::Top => "top",
            Position::Bottom => "bottom",
        }
    }

    fn parse(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == word)
    }

    /// Centroid test against the centre of a `side x side` image.
    pub fn holds(self, centroid: (f64, f64), side: usize) -> bool {
        let centre = (side as f64 - 1.0) / 2.0;
        let (cy, cx) = centroid;
        match self {
            Position::Left => cx < centre,
            Position::Right => cx > centre,
            Position::Top => cy < centre,
            Position::Bottom => cy > centre,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub side: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Half-extent range of a shape, inclusive.
    pub min_radius: usize,
    pub max_radius: usize,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::for_side(64)
    }
}

impl SynthConfig {
    /// Shape sizes scaled to the canvas.
    pub fn for_side(side: usize) -> Self {
        Self {
            side,
            min_shapes: 2,
            max_shapes: 5,
            min_radius: (side / 10).max(2),
            max_radius: (side / 6).max(3),
            max_attempts: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_shapes < 1 || self.min_shapes > self.max_shapes {
            return Err(Error::Config(format!(
                "bad shape count range {}..={}",
                self.min_shapes, self.max_shapes
            )));
        }
        if self.min_radius < 2 || self.min_radius > self.max_radius {
            return Err(Error::Config(format!(
                "bad radius range {}..={}",
                self.min_radius, self.max_radius
            )));
        }
        if 2 * self.max_radius + 1 > self.side {
            return Err(Error::Config(format!(
                "radius {} does not fit a {} canvas",
                self.max_radius, self.side
            )));
        }
        Ok(())
    }
}

/// One referring expression and the mask it denotes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Referent {
    pub phrase: String,
    pub mask: Mask,
}

/// An image with its ordered referents. The image is stored as interleaved
/// 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub side: usize,
    pub image: Vec<u8>,
    pub referents: Vec<Referent>,
    pub seed: u64,
    pub policy: Option<OrderPolicy>,
}

impl Episode {
    /// `[3, S, S]` tensor with values `byte / 255`.
    pub fn image_tensor(&self) -> Tensor {
        let plane = self.side * self.side;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.image.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        Tensor::new(vec![3, self.side, self.side], data).expect("episode side is positive")
    }

    pub fn phrases(&self) -> Vec<&str> {
        self.referents.iter().map(|r| r.phrase.as_str()).collect()
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.referents.iter().map(|r| r.mask.clone()).collect()
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.side + x);
        [self.image[i], self.image[i + 1], self.image[i + 2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OrderPolicy {
    ByArea,
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    kind: ShapeKind,
    color: usize,
    cy: i64,
    cx: i64,
    r: i64,
}

impl Placed {
    /// Bounding squares separated by at least one background pixel.
    fn clear_of(&self, other: &Placed) -> bool {
        let gap = self.r + other.r + 1;
        (self.cy - other.cy).abs() > gap || (self.cx - other.cx).abs() > gap
    }

    fn mask(&self, side: usize) -> Mask {
        let mut m = Mask::empty(side, side);
        for y in (self.cy - self.r)..=(self.cy + self.r) {
            for x in (self.cx - self.r)..=(self.cx + self.r) {
                if self.kind.contains(self.cy, self.cx, self.r, y, x) {
                    m.set(y as usize, x as usize, true);
                }
            }
        }
        m
    }
}

/// Generates the episode for `seed`. Deterministic in `(seed, config)`.
pub fn generate_episode(seed: u64, config: &SynthConfig) -> Result<Episode> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.side as i64;
    for _ in 0..config.max_attempts {
        let n = rng.random_range(config.min_shapes..=config.max_shapes);
        let mut placed: Vec<Placed> = Vec::with_capacity(n);
        'shapes: for _ in 0..n {
            for _ in 0..100 {
                let r = rng.random_range(config.min_radius..=config.max_radius) as i64;
                let candidate = Placed {
                    kind: ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())],
                    color: rng.random_range(0..PALETTE.len()),
                    cy: rng.random_range(r..side - r),
                    cx: rng.random_range(r..side - r),
                    r,
                };
                if placed.iter().all(|p| p.clear_of(&candidate)) {
                    placed.push(candidate);
                    continue 'shapes;
                }
            }
            break;
        }
        if placed.len() < n {
            continue;
        }
        let masks: Vec<Mask> = placed.iter().map(|p| p.mask(config.side)).collect();
        let Some(phrases) = describe(&placed, &masks, config.side) else {
            continue;
        };

        let mut image = vec![0u8; 3 * config.side * config.side];
        for (p, m) in placed.iter().zip(&masks) {
            for (i, &b) in m.bits().iter().enumerate() {
                if b == 1 {
                    image[3 * i..3 * i + 3].copy_from_slice(&PALETTE[p.color].rgb);
                }
            }
        }
        let referents = phrases
            .into_iter()
            .zip(masks)
            .map(|(phrase, mask)| Referent { phrase, mask })
            .collect();
        return Ok(Episode {
            side: config.side,
            image,
            referents,
            seed,
            policy: None,
        });
    }
    Err(Error::Infeasible(format!(
        "no valid layout for seed {seed} after {} attempts",
        config.max_attempts
    )))
}

/// Minimal unambiguous phrase per shape, or `None` when a layout cannot be
/// described (three of a kind, or a twin pair on the same side of both
/// axes).
fn describe(placed: &[Placed], masks: &[Mask], side: usize) -> Option<Vec<String>> {
    let mut phrases = Vec::with_capacity(placed.len());
    for (i, p) in placed.iter().enumerate() {
        let twins: Vec<usize> = placed
            .iter()
            .enumerate()
            .filter(|(j, q)| *j != i && q.kind == p.kind && q.color == p.color)
            .map(|(j, _)| j)
            .collect();
        let base = format!("{} {}", PALETTE[p.color].name, p.kind.name());
        match twins.as_slice() {
            [] => phrases.push(base),
            [twin] => {
                let mine = masks[i].centroid()?;
                let theirs = masks[*twin].centroid()?;
                let word = Position::ALL
                    .into_iter()
                    .find(|w| w.holds(mine, side) && !w.holds(theirs, side))?;
                phrases.push(format!("{} {base}", word.name()));
            }
            _ => return None,
        }
    }
    Some(phrases)
}

/// Attributes read back from pixels, independent of how the episode was
/// drawn: color from the image under the mask, kind from how much of its
/// bounding box the mask fills, position from its centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedReferent {
    pub color: Option<&'static str>,
    pub kind: ShapeKind,
    pub centroid: (f64, f64),
}

pub fn observe(ep: &Episode, mask: &Mask) -> Option<ObservedReferent> {
    let (top, left, bottom, right) = mask.bounding_box()?;
    let (y0, x0) = (top, left);
    let rgb = ep.pixel(y0, (x0..=right).find(|&x| mask.get(y0, x))?);
    let color = PALETTE.iter().find(|c| c.rgb == rgb).map(|c| c.name);
    let fill = mask.area() as f64 / ((bottom - top + 1) * (right - left + 1)) as f64;
    let kind = if fill > 0.9 {
        ShapeKind::Square
    } else if fill > 0.62 {
        ShapeKind::Circle
    } else {
        ShapeKind::Triangle
    };
    Some(ObservedReferent {
        color,
        kind,
        centroid: mask.centroid()?,
    })
}

/// Indices of the referents in `ep` that `phrase` describes under the
/// generation grammar.
pub fn resolve_phrase(phrase: &str, ep: &Episode) -> Result<Vec<usize>> {
    let tokens: Vec<&str> = phrase.split_whitespace().collect();
    let (position, color, kind) = match tokens.as_slice() {
        [c, k] => (None, *c, *k),
        [p, c, k] => (
            Some(Position::parse(p).ok_or_else(|| {
                Error::invalid("resolve_phrase", format!("unknown position {p:?}"))
            })?),
            *c,
            *k,
        ),
        _ => {
            return Err(Error::invalid(
                "resolve_phrase",
                format!("{phrase:?} is not `[position] color shape`"),
            ))
        }
    };
    let mut hits = Vec::new();
    for (i, r) in ep.referents.iter().enumerate() {
        let Some(obs) = observe(ep, &r.mask) else {
            continue;
        };
        let matches = obs.color == Some(color)
            && obs.kind.name() == kind
            && position.is_none_or(|p| p.holds(obs.centroid, ep.side));
        if matches {
            hits.push(i);
        }
    }
    Ok(hits)
}

/// Reorders referents; image and masks are untouched. `ByArea` sorts by
/// area, largest first, then by centroid row and column.
pub fn order_referents(ep: &Episode, policy: OrderPolicy) -> Episode {
    let mut out = ep.clone();
    match policy {
        OrderPolicy::ByArea => {
            let mut keyed: Vec<(usize, (f64, f64), Referent)> = out
                .referents
                .drain(..)
                .map(|r| {
                    let c = r.mask.centroid().unwrap_or((0.0, 0.0));
                    (r.mask.area(), c, r)
                })
                .collect();
            keyed.sort_by(|a, b| {
                b.0.cmp(&a.0)
                    .then(a.1 .0.partial_cmp(&b.1 .0).unwrap_or(Ordering::Equal))
                    .then(a.1 .1.partial_cmp(&b.1 .1).unwrap_or(Ordering::Equal))
            });
            out.referents = keyed.into_iter().map(|(_, _, r)| r).collect();
        }
        OrderPolicy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            out.referents.shuffle(&mut rng);
        }
    }
    out.policy = Some(policy);
    out
}

/// Dataset splits draw from disjoint seed intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

pub const SPLIT_STRIDE: u64 = 1 << 32;

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Seeds `[base, base + SPLIT_STRIDE)` belong to this split.
    pub fn seed_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => SPLIT_STRIDE,
            Split::Test => 2 * SPLIT_STRIDE,
        }
    }

    pub fn seed(self, index: u64) -> Result<u64> {
        if index >= SPLIT_STRIDE {
            return Err(Error::Config(format!(
                "seed index {index} outside split range"
            )));
        }
        Ok(self.seed_base() + index)
    }
}
