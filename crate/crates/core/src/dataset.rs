//! Labeled datasets and the manifest CSV format (`id,path,label[,label2]`).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_png, read_tensor, write_tensor, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::param(format!("unknown split {s:?} (train|test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub label: usize,
    /// Second labeling (e.g. texture for shape/texture cue-conflict sets).
    pub secondary_label: Option<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: ImageTensor, label: usize) -> Self {
        Sample {
            id: id.into(),
            image,
            label,
            secondary_label: None,
        }
    }

    pub fn with_secondary(mut self, label: usize) -> Self {
        self.secondary_label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    items: Vec<Sample>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    /// Validates ids, label ranges, image shapes and secondary-label coverage.
    pub fn new(items: Vec<Sample>, num_classes: usize, split: Split) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::param("num_classes must be positive"));
        }
        let mut seen = HashSet::with_capacity(items.len());
        let shape = items.first().map(|s| s.image.shape());
        let dual = items.first().map(|s| s.secondary_label.is_some());
        for (row, s) in items.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            let bad_label = |l: usize| l >= num_classes;
            if bad_label(s.label) || s.secondary_label.is_some_and(bad_label) {
                return Err(Error::param(format!(
                    "item {row} ({}): label out of range 0..{num_classes}",
                    s.id
                )));
            }
            if Some(s.image.shape()) != shape {
                return Err(Error::shape(format!(
                    "item {row} ({}) has shape {:?}, expected {:?}",
                    s.id,
                    s.image.shape(),
                    shape.unwrap()
                )));
            }
            if Some(s.secondary_label.is_some()) != dual {
                return Err(Error::param(format!(
                    "item {row} ({}): secondary labels must be present for all items or none",
                    s.id
                )));
            }
        }
        Ok(LabeledDataset {
            items,
            num_classes,
            split,
        })
    }

    /// Reads a manifest CSV; `path` entries are relative to the manifest's directory.
    /// Files ending in `.png` are decoded as PNG, everything else as `TEN1`.
    pub fn load(manifest: impl AsRef<Path>, num_classes: usize, split: Split) -> Result<Self> {
        let manifest = manifest.as_ref();
        let base = manifest.parent().unwrap_or(Path::new("."));
        let row_err = |row: usize, message: String| Error::Manifest {
            path: manifest.to_path_buf(),
            row,
            message,
        };
        let mut reader = csv::Reader::from_path(manifest).map_err(|e| row_err(0, e.to_string()))?;
        let headers = reader.headers().map_err(|e| row_err(0, e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().map(str::trim).collect();
        let dual = match cols.as_slice() {
            ["id", "path", "label"] => false,
            ["id", "path", "label", "label2"] => true,
            _ => {
                return Err(row_err(
                    0,
                    format!("header must be `id,path,label[,label2]`, got `{}`", cols.join(",")),
                ))
            }
        };

        let mut items = Vec::new();
        let mut seen = HashSet::new();
        let mut shape = None;
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| row_err(row, e.to_string()))?;
            let field = |j: usize| rec.get(j).map(str::trim).unwrap_or("");
            let id = field(0).to_string();
            if id.is_empty() {
                return Err(row_err(row, "empty id".into()));
            }
            if !seen.insert(id.clone()) {
                return Err(row_err(row, format!("duplicate id {id:?}")));
            }
            let parse_label = |j: usize| -> Result<usize> {
                let v: usize = field(j)
                    .parse()
                    .map_err(|_| row_err(row, format!("label {:?} is not a class index", field(j))))?;
                if v >= num_classes {
                    return Err(row_err(row, format!("label {v} out of range 0..{num_classes}")));
                }
                Ok(v)
            };
            let label = parse_label(2)?;
            let secondary_label = if dual { Some(parse_label(3)?) } else { None };
            let file = base.join(field(1));
            if !file.is_file() {
                return Err(row_err(row, format!("missing file {}", file.display())));
            }
            let image = load_image(&file).map_err(|e| row_err(row, e.to_string()))?;
            match shape {
                None => shape = Some(image.shape()),
                Some(s) if s != image.shape() => {
                    return Err(row_err(
                        row,
                        format!("shape {:?} differs from first item {:?}", image.shape(), s),
                    ))
                }
                _ => {}
            }
            items.push(Sample {
                id,
                image,
                label,
                secondary_label,
            });
        }
        Self::new(items, num_classes, split)
    }

    /// Writes `manifest.csv` plus one `TEN1` file per item under `tensors/`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let tdir = dir.join("tensors");
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        let mut csv = String::from(if self.is_dual_label() {
            "id,path,label,label2\n"
        } else {
            "id,path,label\n"
        });
        for (i, s) in self.items.iter().enumerate() {
            let rel = format!("tensors/{i:06}.ten");
            write_tensor(dir.join(&rel), &s.image)?;
            let id = csv_escape(&s.id);
            match s.secondary_label {
                Some(l2) => csv.push_str(&format!("{id},{rel},{},{l2}\n", s.label)),
                None => csv.push_str(&format!("{id},{rel},{}\n", s.label)),
            }
        }
        let manifest = dir.join("manifest.csv");
        fs::write(&manifest, csv).map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }
    pub fn len(&self) -> usize {
        self.items.len()
    }
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn split(&self) -> Split {
        self.split
    }
    pub fn is_dual_label(&self) -> bool {
        self.items.first().is_some_and(|s| s.secondary_label.is_some())
    }
    /// `(C, H, W)` of every item, `None` for an empty dataset.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.items.first().map(|s| s.image.shape())
    }

    /// Same ids and labels with replacement images, in the same order.
    pub fn with_images(&self, images: Vec<ImageTensor>) -> Result<Self> {
        if images.len() != self.items.len() {
            return Err(Error::shape(format!(
                "{} images for {} items",
                images.len(),
                self.items.len()
            )));
        }
        let items = self
            .items
            .iter()
            .zip(images)
            .map(|(s, image)| Sample {
                id: s.id.clone(),
                image,
                label: s.label,
                secondary_label: s.secondary_label,
            })
            .collect();
        Self::new(items, self.num_classes, self.split)
    }

    /// Same samples with `prefix` prepended to every id.
    pub fn with_id_prefix(&self, prefix: &str) -> Self {
        let mut out = self.clone();
        for s in &mut out.items {
            s.id.insert_str(0, prefix);
        }
        out
    }

    /// Concatenates two datasets with the same classes and shapes.
    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        if self.num_classes != other.num_classes {
            return Err(Error::param("datasets disagree on num_classes"));
        }
        let mut items = self.items.clone();
        items.extend(other.items.iter().cloned());
        Self::new(items, self.num_classes, self.split)
    }
}

fn load_image(path: &Path) -> Result<ImageTensor> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        read_png(path)
    } else {
        read_tensor(path)
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
