//! COCO instances JSON and PNG image I/O.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageRecord, ObjectRecord, Segmentation};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: usize,
    bbox: [f64; 4],
    area: f64,
    #[serde(default)]
    iscrowd: u8,
    segmentation: Segmentation,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: usize,
    name: String,
    #[serde(default)]
    supercategory: String,
}

#[derive(Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

/// Serializes annotations as COCO instances JSON. Category ids start at 1.
pub fn write_coco(ds: &Dataset) -> String {
    let file = CocoFile {
        images: ds
            .images
            .iter()
            .map(|r| CocoImage {
                id: r.id,
                file_name: r.file_name.clone(),
                width: r.width,
                height: r.height,
            })
            .collect(),
        annotations: ds
            .images
            .iter()
            .flat_map(|r| {
                r.objects.iter().map(move |o| CocoAnnotation {
                    id: o.id,
                    image_id: r.id,
                    category_id: o.class_id + 1,
                    bbox: o.bbox,
                    area: o.area,
                    iscrowd: 0,
                    segmentation: o.segmentation.clone(),
                })
            })
            .collect(),
        categories: ds
            .categories
            .iter()
            .enumerate()
            .map(|(i, name)| CocoCategory {
                id: i + 1,
                name: name.clone(),
                supercategory: "shape".into(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("coco file serializes")
}

/// Parses COCO instances JSON into an annotation-only dataset (no pixels).
/// `origin` names the source in error messages.
pub fn read_coco(text: &str, origin: &str) -> Result<Dataset> {
    let file: CocoFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    let mut cats: Vec<&CocoCategory> = file.categories.iter().collect();
    cats.sort_by_key(|c| c.id);
    let cat_index: HashMap<usize, usize> = cats.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let mut images: Vec<ImageRecord> = file
        .images
        .iter()
        .map(|im| ImageRecord {
            id: im.id,
            file_name: im.file_name.clone(),
            width: im.width,
            height: im.height,
            rgb: Vec::new(),
            objects: Vec::new(),
        })
        .collect();
    let image_index: HashMap<u64, usize> = images.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
    for a in file.annotations {
        let record = format!("annotation {}", a.id);
        let &img = image_index.get(&a.image_id).ok_or_else(|| Error::MalformedAnnotation {
            record: record.clone(),
            reason: format!("unknown image id {}", a.image_id),
        })?;
        let &class_id = cat_index
            .get(&a.category_id)
            .ok_or_else(|| Error::MalformedAnnotation {
                record: record.clone(),
                reason: format!("unknown category id {}", a.category_id),
            })?;
        if a.bbox.iter().any(|v| !v.is_finite()) || a.bbox[2] < 0.0 || a.bbox[3] < 0.0 {
            return Err(Error::MalformedAnnotation {
                record,
                reason: format!("invalid bbox {:?}", a.bbox),
            });
        }
        images[img].objects.push(ObjectRecord {
            id: a.id,
            class_id,
            bbox: a.bbox,
            area: a.area,
            segmentation: a.segmentation,
        });
    }
    Ok(Dataset {
        categories: cats.iter().map(|c| c.name.clone()).collect(),
        images,
    })
}

/// Writes `annotations.json` and `images/*.png` under `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for r in &ds.images {
        let buf = image::RgbImage::from_raw(r.width as u32, r.height as u32, r.rgb.clone())
            .ok_or_else(|| Error::InvalidArgument(format!("image {} has no pixel data", r.file_name)))?;
        buf.save_with_format(img_dir.join(&r.file_name), image::ImageFormat::Png)?;
    }
    let path = dir.join("annotations.json");
    std::fs::write(&path, write_coco(ds)).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`], pixels included.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("annotations.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut ds = read_coco(&text, &path.display().to_string())?;
    for r in &mut ds.images {
        let img = image::open(dir.join("images").join(&r.file_name))?.to_rgb8();
        if (img.width() as usize, img.height() as usize) != (r.width, r.height) {
            return Err(Error::MalformedAnnotation {
                record: format!("image {}", r.id),
                reason: format!(
                    "file is {}x{}, annotation says {}x{}",
                    img.width(),
                    img.height(),
                    r.width,
                    r.height
                ),
            });
        }
        r.rgb = img.into_raw();
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetSpec};

    #[test]
    fn annotation_round_trip() {
        let ds = generate_dataset(&DatasetSpec::new(5, 48, 2)).unwrap();
        let back = read_coco(&write_coco(&ds), "mem").unwrap();
        assert_eq!(back.categories, ds.categories);
        for (a, b) in ds.images.iter().zip(&back.images) {
            for (x, y) in a.objects.iter().zip(&b.objects) {
                assert_eq!(x, y);
            }
            assert_eq!(a.objects.len(), b.objects.len());
        }
    }

    #[test]
    fn parse_error_has_location() {
        let err = read_coco("{\"images\": [\n  {\"id\": }", "bad.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.json") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn unknown_category_is_named() {
        let text = r#"{"images":[{"id":1,"file_name":"a.png","width":4,"height":4}],
            "annotations":[{"id":9,"image_id":1,"category_id":5,"bbox":[0,0,1,1],"area":1,"segmentation":[[0,0,1,0,1,1]]}],
            "categories":[{"id":1,"name":"circle"}]}"#;
        let err = read_coco(text, "x").unwrap_err();
        assert!(err.to_string().contains("annotation 9"));
    }
}
