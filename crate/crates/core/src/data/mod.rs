//! Deterministic synthetic shapes dataset with COCO-format I/O.

pub mod coco;
pub mod shapes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::coco_to_cxcywh;
use crate::error::{Error, Result};
use crate::raster::{Image, Mask};
use crate::scalar::Scalar;
use crate::train::{Annotations, TrainSample};

pub use coco::{read_coco, read_dataset, write_coco, write_dataset};
pub use shapes::{Segmentation, ShapeKind};

/// Smallest object area in pixels.
pub const MIN_OBJECT_AREA: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_images: usize,
    pub image_size: usize,
    pub classes: Vec<ShapeKind>,
    pub objects_per_image: (usize, usize),
    pub seed: u64,
    /// Object extent range as a fraction of the image side.
    #[serde(default = "default_scale")]
    pub object_scale: (f64, f64),
}

fn default_scale() -> (f64, f64) {
    (0.15, 0.35)
}

impl DatasetSpec {
    pub fn new(num_images: usize, image_size: usize, seed: u64) -> Self {
        Self {
            num_images,
            image_size,
            classes: vec![ShapeKind::Circle, ShapeKind::Rectangle, ShapeKind::Triangle],
            objects_per_image: (1, 3),
            seed,
            object_scale: default_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.objects_per_image;
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if lo > hi || hi == 0 {
            return Err(Error::InvalidArgument(format!("bad objects_per_image ({lo}, {hi})")));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidArgument(format!(
                "image size {} below 16",
                self.image_size
            )));
        }
        let (smin, smax) = self.object_scale;
        if !(smin > 0.0 && smin <= smax && smax <= 0.5) {
            return Err(Error::InvalidArgument(format!("bad object scale ({smin}, {smax})")));
        }
        Ok(())
    }
}

/// One annotated object. `bbox` is COCO `(x, y, w, h)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRecord {
    pub id: u64,
    pub class_id: usize,
    pub bbox: [f64; 4],
    pub area: f64,
    pub segmentation: Segmentation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, empty when only annotations were loaded.
    pub rgb: Vec<u8>,
    pub objects: Vec<ObjectRecord>,
}

impl ImageRecord {
    /// Channel-first image scaled to `[0, 1]`.
    pub fn image<T: Scalar>(&self) -> Result<Image<T>> {
        Image::from_rgb8(self.width, self.height, &self.rgb)
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.objects
            .iter()
            .map(|o| o.segmentation.to_mask(self.height, self.width))
            .collect()
    }

    pub fn annotations(&self, with_masks: bool) -> Annotations {
        let (w, h) = (self.width as f64, self.height as f64);
        Annotations {
            boxes: self.objects.iter().map(|o| coco_to_cxcywh(o.bbox, w, h)).collect(),
            class_ids: self.objects.iter().map(|o| o.class_id).collect(),
            masks: with_masks.then(|| self.masks()),
        }
    }

    pub fn train_sample<T: Scalar>(&self, with_masks: bool) -> Result<TrainSample<T>> {
        Ok(TrainSample {
            image: self.image()?,
            annotations: self.annotations(with_masks),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub categories: Vec<String>,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Splits off the last `n` images.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let tail = self.images.split_off(self.images.len().saturating_sub(n));
        let cats = self.categories.clone();
        (
            self,
            Dataset {
                categories: cats,
                images: tail,
            },
        )
    }

    pub fn train_samples<T: Scalar>(&self, with_masks: bool) -> Result<Vec<TrainSample<T>>> {
        self.images.iter().map(|r| r.train_sample(with_masks)).collect()
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: u8, amount: i32) -> u8 {
    (base as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8
}

struct Placed {
    bounds: (usize, usize, usize, usize),
}

fn overlaps(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    // One pixel of clearance between objects.
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}

/// Draws one candidate shape whose extent is `size` pixels.
fn draw_shape(rng: &mut ChaCha8Rng, kind: ShapeKind, n: usize, size: f64) -> (Mask, Segmentation) {
    let size = size.max(5.0).min(n as f64 / 2.0);
    match kind {
        ShapeKind::Circle => {
            let r = size / 2.0;
            let cx = rng.random_range(r + 0.5..n as f64 - r - 0.5);
            let cy = rng.random_range(r + 0.5..n as f64 - r - 0.5);
            let m = shapes::circle_mask(n, n, cx, cy, r);
            let counts = shapes::rle_encode(&m);
            (m, Segmentation::Rle { size: [n, n], counts })
        }
        ShapeKind::Rectangle => {
            let aspect = rng.random_range(0.6..1.0);
            let (mut w, mut h) = (size.round() as usize, (size * aspect).round() as usize);
            if rng.random::<bool>() {
                std::mem::swap(&mut w, &mut h);
            }
            let x0 = rng.random_range(1..n - w);
            let y0 = rng.random_range(1..n - h);
            let poly = vec![
                x0 as f64,
                y0 as f64,
                (x0 + w) as f64,
                y0 as f64,
                (x0 + w) as f64,
                (y0 + h) as f64,
                x0 as f64,
                (y0 + h) as f64,
            ];
            let seg = Segmentation::Polygons(vec![poly]);
            (seg.to_mask(n, n), seg)
        }
        ShapeKind::Triangle => {
            let x0 = rng.random_range(1.0..n as f64 - size - 1.0);
            let y0 = rng.random_range(1.0..n as f64 - size - 1.0);
            let apex = x0 + size * rng.random_range(0.3..0.7);
            let poly = vec![x0, y0 + size, x0 + size, y0 + size, apex, y0];
            let seg = Segmentation::Polygons(vec![poly]);
            (seg.to_mask(n, n), seg)
        }
    }
}

fn generate_image(spec: &DatasetSpec, index: usize, next_id: &mut u64) -> ImageRecord {
    let n = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let bg = [
        rng.random_range(10..70u8),
        rng.random_range(10..70u8),
        rng.random_range(10..70u8),
    ];
    let mut rgb = vec![0u8; n * n * 3];
    for px in rgb.chunks_mut(3) {
        for (ch, v) in px.iter_mut().enumerate() {
            *v = jitter(&mut rng, bg[ch], 8);
        }
    }

    let (lo, hi) = spec.objects_per_image;
    let count = rng.random_range(lo..=hi);
    let (smin, smax) = spec.object_scale;
    let mut placed: Vec<Placed> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..count {
        let class_id = rng.random_range(0..spec.classes.len());
        let kind = spec.classes[class_id];
        let mut shrink = 1.0;
        for attempt in 0.. {
            if attempt > 0 && attempt % 50 == 0 {
                shrink *= 0.8;
            }
            let size = rng.random_range(smin..=smax) * n as f64 * shrink;
            let (mask, seg) = draw_shape(&mut rng, kind, n, size);
            let area = mask.area();
            let Some(bounds) = mask.bounds() else { continue };
            if area < MIN_OBJECT_AREA && shrink > 0.3 {
                continue;
            }
            if placed.iter().any(|p| overlaps(p.bounds, bounds)) {
                if shrink < 0.05 {
                    break;
                }
                continue;
            }
            if area < MIN_OBJECT_AREA {
                break;
            }
            placed.push(Placed { bounds });
            let color = kind.color();
            let color = [
                jitter(&mut rng, color[0], 25),
                jitter(&mut rng, color[1], 25),
                jitter(&mut rng, color[2], 25),
            ];
            for y in 0..n {
                for x in 0..n {
                    if mask.get(y, x) {
                        rgb[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(&color);
                    }
                }
            }
            let (x0, y0, x1, y1) = bounds;
            objects.push(ObjectRecord {
                id: *next_id,
                class_id,
                bbox: [x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64],
                area: area as f64,
                segmentation: seg,
            });
            *next_id += 1;
            break;
        }
    }

    ImageRecord {
        id: index as u64 + 1,
        file_name: format!("{index:06}.png"),
        width: n,
        height: n,
        rgb,
        objects,
    }
}

/// Renders the dataset described by `spec`. Identical specs give identical
/// pixels and annotations.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut next_id = 1;
    let images = (0..spec.num_images)
        .map(|i| generate_image(spec, i, &mut next_id))
        .collect();
    Ok(Dataset {
        categories: spec.classes.iter().map(|k| k.name().to_string()).collect(),
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = DatasetSpec::new(6, 48, 7);
        assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
        let other = DatasetSpec::new(6, 48, 8);
        assert_ne!(generate_dataset(&spec).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn boxes_are_tight_mask_bounds() {
        let mut spec = DatasetSpec::new(20, 64, 3);
        spec.objects_per_image = (3, 3);
        let ds = generate_dataset(&spec).unwrap();
        for img in &ds.images {
            assert_eq!(img.objects.len(), 3);
            for (o, m) in img.objects.iter().zip(img.masks()) {
                let (x0, y0, x1, y1) = m.bounds().unwrap();
                assert_eq!(o.bbox, [x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64]);
                assert!(m.area() >= MIN_OBJECT_AREA);
                assert_eq!(o.area, m.area() as f64);
            }
        }
    }

    #[test]
    fn objects_do_not_overlap() {
        let ds = generate_dataset(&DatasetSpec::new(30, 64, 1)).unwrap();
        for img in &ds.images {
            let masks = img.masks();
            for i in 0..masks.len() {
                for j in i + 1..masks.len() {
                    assert_eq!(masks[i].intersection(&masks[j]), 0);
                }
            }
        }
    }
}
