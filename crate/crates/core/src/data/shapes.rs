//! Rasterization of the three shape kinds and COCO segmentation encodings.

use serde::{Deserialize, Serialize};

use crate::raster::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
        }
    }

    /// Base RGB colour of the class.
    pub fn color(self) -> [u8; 3] {
        match self {
            ShapeKind::Circle => [220, 40, 40],
            ShapeKind::Rectangle => [40, 200, 60],
            ShapeKind::Triangle => [50, 80, 230],
        }
    }
}

/// COCO segmentation: polygons of flat `x, y` lists, or uncompressed
/// column-major run lengths starting with a background run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [usize; 2], counts: Vec<u64> },
}

impl Segmentation {
    pub fn to_mask(&self, height: usize, width: usize) -> Mask {
        match self {
            Segmentation::Polygons(polys) => {
                let mut m = Mask::new(height, width);
                for poly in polys {
                    fill_polygon(&mut m, poly);
                }
                m
            }
            Segmentation::Rle { size, counts } => rle_decode(size[0], size[1], counts),
        }
    }
}

/// Even-odd test of the pixel centre `(x + 0.5, y + 0.5)` against a flat
/// `x, y` vertex list.
fn fill_polygon(m: &mut Mask, poly: &[f64]) {
    let n = poly.len() / 2;
    if n < 3 {
        return;
    }
    let vx = |i: usize| poly[2 * i];
    let vy = |i: usize| poly[2 * i + 1];
    for y in 0..m.height {
        let py = y as f64 + 0.5;
        for x in 0..m.width {
            let px = x as f64 + 0.5;
            let mut inside = false;
            let mut j = n - 1;
            for i in 0..n {
                let (xi, yi, xj, yj) = (vx(i), vy(i), vx(j), vy(j));
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
            if inside {
                m.set(y, x, true);
            }
        }
    }
}

pub fn circle_mask(height: usize, width: usize, cx: f64, cy: f64, r: f64) -> Mask {
    let mut m = Mask::new(height, width);
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                m.set(y, x, true);
            }
        }
    }
    m
}

/// Column-major run lengths, first run counting background pixels.
pub fn rle_encode(m: &Mask) -> Vec<u64> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..m.width {
        for y in 0..m.height {
            let v = m.get(y, x);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn rle_decode(height: usize, width: usize, counts: &[u64]) -> Mask {
    let mut m = Mask::new(height, width);
    let mut idx = 0usize;
    let mut value = false;
    for &n in counts {
        for _ in 0..n {
            if idx >= height * width {
                return m;
            }
            if value {
                m.set(idx % height, idx / height, true);
            }
            idx += 1;
        }
        value = !value;
    }
    m
}
