//! Synthetic labelled corpora with a tunable link between background
//! texture and class, plus a corner-tag artefact injector.
//!
//! Class backgrounds are period-4 stripe patterns (axis-aligned `[+,−,−,+]`
//! or diagonal `cos(π(x±y)/2)`). Central differences see them clearly, yet
//! every aligned 2×2 block averages to the background mean, so a network fed
//! 2× box-downscaled images sees a flat background. Objects are bright
//! filled shapes carrying a grating whose orientation falls between the
//! descriptor's orientation bins.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{format_annotations, load_annotations, load_image, save_image, BitDepth, BoundingBox, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    /// Period-4 stripes summing to zero over every aligned 2×2 block.
    Stripes { axis: StripeAxis, contrast: f64 },
    /// Sinusoid with random phase.
    Grating { angle_deg: f64, period: f64, contrast: f64 },
    /// Bilinearly interpolated value noise on a `cell`-pixel lattice.
    Noise { cell: usize, contrast: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StripeAxis {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    /// `cos(π(x+y)/2)`
    #[serde(rename = "diag")]
    Diagonal,
    /// `cos(π(x−y+1)/2)`
    #[serde(rename = "antidiag")]
    AntiDiagonal,
    /// Product of the x and y stripes; a 2-pixel checkerboard.
    #[serde(rename = "xy")]
    Product,
    #[serde(rename = "x+y")]
    Sum,
}

const STRIPE: [f64; 4] = [1.0, -1.0, -1.0, 1.0];
const WAVE: [f64; 4] = [1.0, 0.0, -1.0, 0.0];

impl Texture {
    /// Zero-centred texture field of size `w`×`h`.
    fn render(&self, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            Texture::Stripes { axis, contrast } => {
                // even offsets keep the 2×2 block sums at zero
                let ox = 2 * rng.random_range(0..2usize);
                let oy = 2 * rng.random_range(0..2usize);
                let s = |v: usize| STRIPE[v % 4];
                (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|(x, y)| {
                        let (a, b) = (s(x + ox), s(y + oy));
                        contrast
                            * match axis {
                                StripeAxis::X => a,
                                StripeAxis::Y => b,
                                StripeAxis::Diagonal => WAVE[(x + ox + y + oy) % 4],
                                StripeAxis::AntiDiagonal => WAVE[(x + ox + 5 - (y + oy) % 4) % 4],
                                StripeAxis::Product => a * b,
                                StripeAxis::Sum => 0.5 * (a + b),
                            }
                    })
                    .collect()
            }
            Texture::Grating { angle_deg, period, contrast } => {
                let phase = rng.random_range(0.0..2.0 * PI);
                let (s, c) = angle_deg.to_radians().sin_cos();
                (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x as f64, y as f64)))
                    .map(|(x, y)| contrast * (2.0 * PI * (x * c + y * s) / period + phase).sin())
                    .collect()
            }
            Texture::Noise { cell, contrast } => {
                let cell = cell.max(1);
                let (gw, gh) = (w / cell + 2, h / cell + 2);
                let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
                (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|(x, y)| {
                        let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
                        let (ix, iy) = (fx as usize, fy as usize);
                        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                        let g = |i: usize, j: usize| lattice[j * gw + i];
                        let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
                        let bottom = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
                        contrast * (top * (1.0 - ty) + bottom * ty)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Disk,
    Diamond,
    Cross,
}

impl Shape {
    /// Whether offset `(dx, dy)` from the top-left of an `s`×`s` cell is
    /// part of the shape.
    fn covers(self, dx: usize, dy: usize, s: usize) -> bool {
        let c = (s as f64 - 1.0) / 2.0;
        let (u, v) = (dx as f64 - c, dy as f64 - c);
        let r = s as f64 / 2.0;
        match self {
            Shape::Square => true,
            Shape::Disk => u * u + v * v <= r * r,
            Shape::Diamond => u.abs() + v.abs() <= r,
            Shape::Cross => u.abs() <= s as f64 / 6.0 || v.abs() <= s as f64 / 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: Shape,
    pub object: Texture,
    pub background: Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub size: usize,
    pub classes: Vec<ClassSpec>,
    /// Backgrounds tied to no class; part of the uniform pool.
    pub extra_backgrounds: Vec<Texture>,
    /// Probability that an image shows its class background.
    pub rho: f64,
    pub background_mean: f64,
    pub object_mean: f64,
    pub object_min: usize,
    pub object_max: usize,
    /// Minimum distance between objects and the image border.
    pub margin: usize,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

const CLASS_TEMPLATES: [(&str, Shape, f64, StripeAxis); 4] = [
    ("square", Shape::Square, 22.5, StripeAxis::X),
    ("disk", Shape::Disk, 112.5, StripeAxis::Y),
    ("diamond", Shape::Diamond, 67.5, StripeAxis::Diagonal),
    ("cross", Shape::Cross, 157.5, StripeAxis::AntiDiagonal),
];

impl CorpusSpec {
    /// Built-in corpus with up to four classes on 64×64 grayscale images.
    pub fn standard(classes: usize, rho: f64, seed: u64) -> Result<Self> {
        if classes == 0 || classes > CLASS_TEMPLATES.len() {
            return Err(Error::Spec(format!("standard corpus supports 1..=4 classes, got {classes}")));
        }
        let classes: Vec<ClassSpec> = CLASS_TEMPLATES[..classes]
            .iter()
            .map(|&(name, shape, angle, axis)| ClassSpec {
                name: name.to_string(),
                shape,
                object: Texture::Grating { angle_deg: angle, period: 6.0, contrast: 0.15 },
                background: Texture::Stripes { axis, contrast: 0.25 },
            })
            .collect();
        let used: Vec<StripeAxis> = CLASS_TEMPLATES[..classes.len()].iter().map(|t| t.3).collect();
        let extra_backgrounds = CLASS_TEMPLATES
            .iter()
            .map(|t| t.3)
            .filter(|a| !used.contains(a))
            .map(|axis| Texture::Stripes { axis, contrast: 0.25 })
            .collect();
        let spec = CorpusSpec {
            size: 64,
            classes,
            extra_backgrounds,
            rho,
            background_mean: 0.5,
            object_mean: 0.8,
            object_min: 20,
            object_max: 28,
            margin: 8,
            train: 200,
            test: 40,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Class backgrounds followed by the extras.
    pub fn background_pool(&self) -> Vec<Texture> {
        self.classes.iter().map(|c| c.background).chain(self.extra_backgrounds.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must be in [0,1], got {}", self.rho));
        }
        if self.classes.is_empty() || self.train == 0 || self.test == 0 || self.size == 0 {
            return bad("classes, image size and split counts must be at least 1".into());
        }
        if self.object_min == 0 || self.object_min > self.object_max {
            return bad(format!("object size range {}..={} is empty", self.object_min, self.object_max));
        }
        if self.object_max + 2 * self.margin > self.size {
            return bad(format!("object of size {} with margin {} does not fit a {} image", self.object_max, self.margin, self.size));
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                if a.name == b.name || a.object == b.object || a.background == b.background {
                    return bad(format!("classes {} and {} share a name or texture", a.name, b.name));
                }
            }
        }
        for m in [self.background_mean, self.object_mean] {
            if !(0.0..=1.0).contains(&m) {
                return bad(format!("mean intensity {m} outside [0,1]"));
            }
        }
        Ok(())
    }
}

/// Where and whether a corner tag was stamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtefactInfo {
    /// True when the tag region intersects an object box.
    pub overlaps_object: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub labels: Vec<String>,
    pub boxes: Vec<BoundingBox>,
    /// Index into the background pool.
    pub background: usize,
    pub artefact: Option<ArtefactInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn generate_image(spec: &CorpusSpec, pool: &[Texture], class: usize, seed: u64) -> Result<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.size;
    let cls = &spec.classes[class];
    let background = if rng.random::<f64>() < spec.rho { class } else { rng.random_range(0..pool.len()) };
    let bg = pool[background].render(n, n, &mut rng);
    let s = rng.random_range(spec.object_min..=spec.object_max);
    let x0 = rng.random_range(spec.margin..=n - spec.margin - s);
    let y0 = rng.random_range(spec.margin..=n - spec.margin - s);
    let obj = cls.object.render(s, s, &mut rng);
    let mut pixels: Vec<f64> = bg.iter().map(|v| spec.background_mean + v).collect();
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (usize::MAX, usize::MAX, 0, 0);
    for dy in 0..s {
        for dx in 0..s {
            if cls.shape.covers(dx, dy, s) {
                let (x, y) = (x0 + dx, y0 + dy);
                pixels[y * n + x] = spec.object_mean + obj[dy * s + dx];
                xmin = xmin.min(x);
                ymin = ymin.min(y);
                xmax = xmax.max(x);
                ymax = ymax.max(y);
            }
        }
    }
    let pixels = pixels.into_iter().map(quantize).collect();
    Ok(LabeledImage {
        image: Image::new(n, n, 1, pixels)?,
        labels: vec![cls.name.clone()],
        boxes: vec![BoundingBox::new(cls.name.clone(), xmin, ymin, xmax, ymax)?],
        background,
        artefact: None,
    })
}

/// Image `i` of each split shows class `i mod C`; every image draws from its
/// own generator seeded by (corpus seed, split, index).
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let pool = spec.background_pool();
    let split = |tag: u64, count: usize| -> Result<Vec<LabeledImage>> {
        (0..count)
            .into_par_iter()
            .map(|i| generate_image(spec, &pool, i % spec.classes.len(), mix(spec.seed, tag, i as u64)))
            .collect()
    };
    Ok(Corpus { spec: spec.clone(), train: split(1, spec.train)?, test: split(2, spec.test)? })
}

/// Checkerboard tag stamped into the bottom-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPatch {
    pub size: usize,
    pub cell: usize,
}

impl Default for TagPatch {
    fn default() -> Self {
        TagPatch { size: 8, cell: 2 }
    }
}

impl TagPatch {
    /// Pixel rectangle `(x, y, w, h)` of the tag in a `w`×`h` image.
    pub fn region(&self, _width: usize, height: usize) -> (usize, usize, usize, usize) {
        (0, height - self.size, self.size, self.size)
    }
}

/// Stamps `tag` on images labelled `class_filter`; others are returned as is.
pub fn inject_artefact(img: &LabeledImage, class_filter: &str, tag: &TagPatch) -> Result<LabeledImage> {
    if !img.labels.iter().any(|l| l == class_filter) {
        return Ok(img.clone());
    }
    let (w, h) = (img.image.width(), img.image.height());
    if tag.size == 0 || tag.cell == 0 || tag.size > w || tag.size > h {
        return Err(Error::Spec(format!("tag of size {} does not fit a {w}x{h} image", tag.size)));
    }
    let (x0, y0, tw, th) = tag.region(w, h);
    let corner = BoundingBox::new("tag", x0, y0, x0 + tw - 1, y0 + th - 1)?;
    let mut out = img.clone();
    for dy in 0..th {
        for dx in 0..tw {
            let v = if (dx / tag.cell + dy / tag.cell).is_multiple_of(2) { 1.0 } else { 0.0 };
            for c in 0..out.image.channels() {
                out.image.set(x0 + dx, y0 + dy, c, v);
            }
        }
    }
    out.artefact = Some(ArtefactInfo { overlaps_object: img.boxes.iter().any(|b| b.intersects(&corner)) });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image: String,
    pub annotations: String,
    pub labels: Vec<String>,
    pub background: usize,
    pub artefact: Option<ArtefactInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub train: Vec<CorpusEntry>,
    pub test: Vec<CorpusEntry>,
}

pub const CORPUS_MANIFEST: &str = "corpus.json";

/// Writes `train/NNNNNN.pgm`, `.txt` annotations and `corpus.json` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    let write_split = |name: &str, items: &[LabeledImage]| -> Result<Vec<CorpusEntry>> {
        fs::create_dir_all(dir.join(name))?;
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let image = format!("{name}/{i:06}.pgm");
                let annotations = format!("{name}/{i:06}.txt");
                save_image(&item.image, dir.join(&image), BitDepth::Eight)?;
                fs::write(dir.join(&annotations), format_annotations(&item.boxes))?;
                Ok(CorpusEntry { image, annotations, labels: item.labels.clone(), background: item.background, artefact: item.artefact })
            })
            .collect()
    };
    let manifest = CorpusManifest { spec: corpus.spec.clone(), train: write_split("train", &corpus.train)?, test: write_split("test", &corpus.test)? };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(CORPUS_MANIFEST), text)?;
    Ok(manifest)
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(CORPUS_MANIFEST))?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("corpus manifest: {e}")))?;
    let load = |entries: &[CorpusEntry]| -> Result<Vec<LabeledImage>> {
        entries
            .iter()
            .map(|e| {
                Ok(LabeledImage {
                    image: load_image(dir.join(&e.image))?,
                    labels: e.labels.clone(),
                    boxes: load_annotations(dir.join(&e.annotations))?,
                    background: e.background,
                    artefact: e.artefact,
                })
            })
            .collect()
    };
    Ok(Corpus { train: load(&manifest.train)?, test: load(&manifest.test)?, spec: manifest.spec })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64) -> CorpusSpec {
        let mut s = CorpusSpec::standard(2, rho, 11).unwrap();
        s.train = 12;
        s.test = 4;
        s
    }

    #[test]
    fn rho_one_ties_background_to_class() {
        let c = generate_corpus(&small(1.0)).unwrap();
        for (i, item) in c.train.iter().enumerate() {
            assert_eq!(item.background, i % 2);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate_corpus(&small(0.5)).unwrap(), generate_corpus(&small(0.5)).unwrap());
    }

    #[test]
    fn boxes_lie_inside_and_are_tight() {
        let c = generate_corpus(&small(0.0)).unwrap();
        for item in c.train.iter().chain(&c.test) {
            let b = &item.boxes[0];
            b.validate(64, 64).unwrap();
            assert!(b.xmax - b.xmin + 1 >= 20 && b.xmax - b.xmin < 28);
        }
    }

    #[test]
    fn stripes_vanish_under_block_averaging() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for axis in [StripeAxis::X, StripeAxis::Y, StripeAxis::Diagonal, StripeAxis::AntiDiagonal, StripeAxis::Product, StripeAxis::Sum] {
            let t = Texture::Stripes { axis, contrast: 0.25 }.render(8, 8, &mut rng);
            for by in 0..4 {
                for bx in 0..4 {
                    let s: f64 = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().map(|(dx, dy)| t[(2 * by + dy) * 8 + 2 * bx + dx]).sum();
                    assert_eq!(s, 0.0);
                }
            }
        }
    }

    #[test]
    fn oversized_object_rejected() {
        let mut s = small(0.0);
        s.object_max = 60;
        assert!(matches!(generate_corpus(&s), Err(Error::Spec(_))));
    }

    #[test]
    fn artefact_only_on_matching_class_and_idempotent() {
        let c = generate_corpus(&small(0.0)).unwrap();
        let tag = TagPatch::default();
        let a = &c.train[0];
        let once = inject_artefact(a, "square", &tag).unwrap();
        assert_eq!(once.image.get(0, 56, 0), 1.0);
        assert_eq!(once.image.get(2, 56, 0), 0.0);
        assert_eq!(once.artefact, Some(ArtefactInfo { overlaps_object: false }));
        assert_eq!(inject_artefact(&once, "square", &tag).unwrap(), once);
        assert_eq!(inject_artefact(a, "disk", &tag).unwrap(), *a);
    }
}
