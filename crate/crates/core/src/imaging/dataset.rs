use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pnm, GeometricTransform, Image};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub(crate) fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Pose(GeometricTransform),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledItem {
    pub image: Image,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<LabeledItem>,
    pub split: Split,
    pub seed: u64,
    /// Present for classification sets.
    pub num_classes: Option<usize>,
}

/// One line of `index.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pose: Option<[[f64; 3]; 2]>,
    split: Split,
    seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.items.iter().map(|it| &it.image)
    }

    /// Class labels; errors if any item carries a pose instead.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.items
            .iter()
            .map(|it| match it.label {
                Label::Class(c) => Ok(c),
                Label::Pose(_) => Err(Error::InvalidInput("expected a classification dataset".into())),
            })
            .collect()
    }

    pub fn poses(&self) -> Result<Vec<GeometricTransform>> {
        self.items
            .iter()
            .map(|it| match it.label {
                Label::Pose(g) => Ok(g),
                Label::Class(_) => Err(Error::InvalidInput("expected a pose dataset".into())),
            })
            .collect()
    }

    /// Writes one PGM/PPM per item plus `index.json`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut index = Vec::with_capacity(self.items.len());
        for (i, item) in self.items.iter().enumerate() {
            let ext = if item.image.channels() == 1 { "pgm" } else { "ppm" };
            let file = format!("{i:06}.{ext}");
            pnm::write(dir.join(&file), &item.image)?;
            let (label, pose) = match item.label {
                Label::Class(c) => (Some(c), None),
                Label::Pose(g) => (None, Some(g.matrix)),
            };
            index.push(IndexEntry {
                file,
                label,
                pose,
                split: self.split,
                seed: self.seed,
            });
        }
        fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index: Vec<IndexEntry> = serde_json::from_slice(&fs::read(dir.join("index.json"))?)?;
        let first = index
            .first()
            .ok_or_else(|| Error::Format("empty dataset index".into()))?;
        let (split, seed) = (first.split, first.seed);
        let mut items = Vec::with_capacity(index.len());
        let mut max_class = None;
        for e in &index {
            let image = pnm::read_any(dir.join(&e.file))?;
            let label = match (e.label, e.pose) {
                (Some(c), None) => {
                    max_class = Some(max_class.map_or(c, |m: usize| m.max(c)));
                    Label::Class(c)
                }
                (None, Some(m)) => Label::Pose(GeometricTransform::new(m)?),
                _ => {
                    return Err(Error::Format(format!(
                        "entry {} needs exactly one of label/pose",
                        e.file
                    )))
                }
            };
            items.push(LabeledItem { image, label });
        }
        Ok(Self {
            items,
            split,
            seed,
            num_classes: max_class.map(|m| m + 1),
        })
    }
}
