//! Synthetic shapes dataset with a class-correlated corner patch.
//!
//! Each image holds one bright gray shape near the centre on dark noise. The
//! shape determines the class and is the only region marked in the mask. A
//! small patch in the top-left corner, coloured by class, is painted onto a
//! configurable fraction of images: a shortcut a classifier can latch onto
//! instead of the shape.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, DatasetSplits, Sample, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
        ShapeKind::Ring,
        ShapeKind::Diamond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
            ShapeKind::Diamond => "diamond",
        }
    }

    /// Membership test for an offset `(dx, dy)` from the centre, radius `r`.
    fn contains(self, dx: f32, dy: f32, r: f32) -> bool {
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
            ShapeKind::Triangle => {
                // Apex up at -r, base at +0.8r with half-width r.
                (-r..=0.8 * r).contains(&dy) && dx.abs() <= r * (dy + r) / (1.8 * r)
            }
            ShapeKind::Cross => {
                (dx.abs() <= 0.3 * r && dy.abs() <= r) || (dy.abs() <= 0.3 * r && dx.abs() <= r)
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.3 * r * r
            }
            ShapeKind::Diamond => dx.abs() + dy.abs() <= r,
        }
    }
}

const PATCH_COLORS: [[u8; 3]; 6] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoySpec {
    pub image_size: usize,
    pub classes: usize,
    /// One shape per class; empty selects the first `classes` shapes in a fixed order.
    pub shapes: Vec<ShapeKind>,
    pub confounder_patch_size: usize,
    /// Fraction of train, val and confounded-test images carrying their class patch.
    pub confounder_correlation: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub rng_seed: u64,
}

impl Default for DecoySpec {
    fn default() -> Self {
        DecoySpec {
            image_size: 64,
            classes: 4,
            shapes: Vec::new(),
            confounder_patch_size: 8,
            confounder_correlation: 1.0,
            train_per_class: 200,
            val_per_class: 50,
            test_per_class: 50,
            rng_seed: 0,
        }
    }
}

impl DecoySpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::invalid("image_size", "must be at least 16 pixels"));
        }
        if self.classes < 2 || self.classes > ShapeKind::ALL.len() {
            return Err(Error::invalid(
                "classes",
                format!("must be between 2 and {}", ShapeKind::ALL.len()),
            ));
        }
        if !self.shapes.is_empty() {
            if self.shapes.len() != self.classes {
                return Err(Error::invalid(
                    "shapes",
                    format!("{} shapes given for {} classes", self.shapes.len(), self.classes),
                ));
            }
            for (i, s) in self.shapes.iter().enumerate() {
                if self.shapes[..i].contains(s) {
                    return Err(Error::invalid("shapes", format!("'{}' listed twice", s.name())));
                }
            }
        }
        if self.confounder_patch_size == 0 || self.patch_offset() + self.confounder_patch_size > self.image_size / 4 {
            return Err(Error::invalid(
                "confounder_patch_size",
                format!("patch must fit inside the {0}×{0} corner", self.image_size / 4),
            ));
        }
        if !(0.0..=1.0).contains(&self.confounder_correlation) {
            return Err(Error::invalid("confounder_correlation", "must lie in [0, 1]"));
        }
        for (field, n) in [
            ("train_per_class", self.train_per_class),
            ("val_per_class", self.val_per_class),
            ("test_per_class", self.test_per_class),
        ] {
            if n == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn shape_for(&self, class: usize) -> ShapeKind {
        self.shapes.get(class).copied().unwrap_or(ShapeKind::ALL[class])
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|k| self.shape_for(k).name().to_string()).collect()
    }

    fn patch_offset(&self) -> usize {
        (self.image_size / 32).max(1)
    }

    /// Pixel rectangle `(y0, x0, size)` covered by the confounder patch.
    pub fn patch_rect(&self) -> (usize, usize, usize) {
        let o = self.patch_offset();
        (o, o, self.confounder_patch_size)
    }
}

struct Drawn {
    base: Array3<u8>,
    mask: Array2<u8>,
    patched: bool,
}

fn draw(spec: &DecoySpec, class: usize, rng: &mut ChaCha8Rng) -> Drawn {
    let s = spec.image_size;
    let sf = s as f32;
    let kind = spec.shape_for(class);
    let jitter = sf / 10.0;
    let cx = sf / 2.0 + rng.random_range(-jitter..=jitter);
    let cy = sf / 2.0 + rng.random_range(-jitter..=jitter);
    let r = rng.random_range(0.2 * sf..=0.27 * sf);
    let fill = rng.random_range(0.6f32..=0.95);

    let (py, px, p) = spec.patch_rect();
    let in_patch = |y: usize, x: usize| y >= py && y < py + p && x >= px && x < px + p;

    let mut base = Array3::<u8>::zeros((s, s, 3));
    let mut mask = Array2::<u8>::zeros((s, s));
    for y in 0..s {
        for x in 0..s {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            let noise: f32 = rng.random_range(0.0..0.1);
            let v = if kind.contains(dx, dy, r) {
                if !in_patch(y, x) {
                    mask[[y, x]] = 1;
                }
                (fill + noise - 0.05).clamp(0.0, 1.0)
            } else {
                noise
            };
            let q = (v * 255.0).round() as u8;
            for c in 0..3 {
                base[[y, x, c]] = q;
            }
        }
    }
    let patched = rng.random::<f64>() < spec.confounder_correlation;
    Drawn { base, mask, patched }
}

fn with_patch(spec: &DecoySpec, class: usize, base: &Array3<u8>) -> Array3<u8> {
    let mut img = base.clone();
    let (py, px, p) = spec.patch_rect();
    let color = PATCH_COLORS[class % PATCH_COLORS.len()];
    for y in py..py + p {
        for x in px..px + p {
            for c in 0..3 {
                img[[y, x, c]] = color[c];
            }
        }
    }
    img
}

fn to_unit(img: &Array3<u8>) -> Array3<f32> {
    img.mapv(|v| f32::from(v) / 255.0)
}

/// Generates train, val, confounded test and clean test bundles.
///
/// Output is a pure function of `spec`. Every split draws from its own seeded
/// stream, so changing one split's count leaves the others untouched.
pub fn generate_decoy(spec: &DecoySpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let names = spec.class_names();
    let build = |split: Split, stream: u64, per_class: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(stream);
        let mut confounded = Vec::with_capacity(per_class * spec.classes);
        let mut clean = Vec::with_capacity(per_class * spec.classes);
        for class in 0..spec.classes {
            for i in 0..per_class {
                let d = draw(spec, class, &mut rng);
                let id = format!("{}_{}_{i:04}", split.as_str(), names[class]);
                let image = if d.patched {
                    to_unit(&with_patch(spec, class, &d.base))
                } else {
                    to_unit(&d.base)
                };
                clean.push(Sample {
                    id: id.clone(),
                    image: to_unit(&d.base),
                    mask: Some(d.mask.clone()),
                    label: class,
                });
                confounded.push(Sample {
                    id,
                    image,
                    mask: Some(d.mask),
                    label: class,
                });
            }
        }
        (confounded, clean)
    };

    let (train, _) = build(Split::Train, 0, spec.train_per_class);
    let (val, _) = build(Split::Val, 1, spec.val_per_class);
    let (test, test_clean) = build(Split::Test, 2, spec.test_per_class);
    Ok(DatasetSplits {
        train: DatasetBundle::new(train, names.clone(), Split::Train)?,
        val: DatasetBundle::new(val, names.clone(), Split::Val)?,
        test: DatasetBundle::new(test, names.clone(), Split::Test)?,
        test_clean: Some(DatasetBundle::new(test_clean, names, Split::Test)?),
    })
}
