//! Image datasets: PPM loading from class directories, the fine-to-coarse
//! class remap, synthetic textures, batching and train/held-out splitting.

mod classes;
mod ppm;
mod resize;
mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use classes::{remap_to_simple, ClassMap, SIMPLE_CLASSES};
pub use ppm::{decode_ppm, encode_ppm};
pub use resize::resize_bilinear;
pub use synth::{class_grating, synth_class_name, synth_generate, MAX_SYNTH_CLASSES};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("decode error: {0}")]
    Decode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown class directories: {}", .0.join(", "))]
    UnknownClasses(Vec<String>),
    #[error("remap error: {0}")]
    Remap(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One `3 x R x R` image with pixels in `[0, 1]`.
#[derive(Clone)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
    pub source_id: String,
}

/// Per-channel `(x - mean) / std`, applied when batches are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

pub struct Dataset {
    pub images: Vec<LabeledImage>,
    /// Files that failed to decode.
    pub skipped: usize,
    /// Class subdirectory names found, sorted.
    pub class_dirs: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?;
    paths.sort();
    Ok(paths)
}

/// Names of the class subdirectories of `root`, sorted.
pub fn class_dirs(root: &Path) -> Result<Vec<String>> {
    Ok(sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

/// Loads `root/<class>/<file>` with labels from `class_map.resolve`.
pub fn load_dataset(root: &Path, class_map: &ClassMap, resolution: usize) -> Result<Dataset> {
    load_dataset_with(root, resolution, |name| class_map.resolve(name))
}

/// As [`load_dataset`] with a caller-supplied directory-to-label rule. Any
/// directory the rule rejects is an error; undecodable files are skipped.
pub fn load_dataset_with(root: &Path, resolution: usize, label_of: impl Fn(&str) -> Option<usize>) -> Result<Dataset> {
    let dirs = class_dirs(root)?;
    let unknown: Vec<String> = dirs.iter().filter(|d| label_of(d).is_none()).cloned().collect();
    if !unknown.is_empty() {
        return Err(DataError::UnknownClasses(unknown));
    }
    let mut images = Vec::new();
    let mut skipped = 0;
    for dir in &dirs {
        let label = label_of(dir).expect("checked above");
        for path in sorted_entries(&root.join(dir))?.into_iter().filter(|p| p.is_file()) {
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            match decode_ppm(&bytes) {
                Ok(img) => images.push(LabeledImage {
                    pixels: resize_bilinear(&img, resolution)?,
                    label,
                    source_id: path.strip_prefix(root).unwrap_or(&path).to_string_lossy().into_owned(),
                }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped += 1;
                }
            }
        }
    }
    Ok(Dataset {
        images,
        skipped,
        class_dirs: dirs,
    })
}

/// Writes `images` as `root/<class name>/<index>.ppm` plus `classes.json`.
pub fn write_dataset(root: &Path, images: &[LabeledImage], class_map: &ClassMap) -> Result<()> {
    for name in &class_map.classes {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut counters = vec![0usize; class_map.len()];
    for img in images {
        let name = class_map
            .classes
            .get(img.label)
            .ok_or_else(|| DataError::Contract(format!("label {} outside class map", img.label)))?;
        let path = root.join(name).join(format!("{:05}.ppm", counters[img.label]));
        counters[img.label] += 1;
        std::fs::write(&path, encode_ppm(&img.pixels)?).map_err(io_err(&path))?;
    }
    let path = root.join("classes.json");
    std::fs::write(&path, class_map.to_json()).map_err(io_err(&path))
}

/// Shuffled index batches for one epoch. The last batch may be short.
pub fn batch_indices(len: usize, batch: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(DataError::Contract("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(order.chunks(batch).map(<[usize]>::to_vec).collect())
}

/// Iterator over one shuffled epoch of `data`.
pub fn batch_iterator(
    data: &[LabeledImage],
    batch: usize,
    shuffle_seed: u64,
) -> Result<impl Iterator<Item = Vec<&LabeledImage>>> {
    Ok(batch_indices(data.len(), batch, shuffle_seed)?
        .into_iter()
        .map(move |idx| idx.into_iter().map(|i| &data[i]).collect()))
}

/// Seed for epoch `epoch` of a run seeded with `seed`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Stacks images into a normalized `B x 3 x R x R` tensor plus labels.
pub fn collate(items: &[&LabeledImage], norm: &Normalization) -> Result<(Tensor, Vec<usize>)> {
    let first = items
        .first()
        .ok_or_else(|| DataError::Contract("empty batch".into()))?;
    let shape = first.pixels.shape().to_vec();
    let &[3, h, w] = shape.as_slice() else {
        return Err(DataError::Contract(format!("expected 3 x H x W images, got {shape:?}")));
    };
    let plane = h * w;
    let mut data = Vec::with_capacity(items.len() * 3 * plane);
    for item in items {
        if item.pixels.shape() != shape.as_slice() {
            return Err(DataError::Contract(format!(
                "mixed image shapes {:?} and {shape:?}",
                item.pixels.shape()
            )));
        }
        let px = item.pixels.data();
        for c in 0..3 {
            data.extend(px[c * plane..(c + 1) * plane].iter().map(|v| (v - norm.mean[c]) / norm.std[c]));
        }
    }
    let labels = items.iter().map(|i| i.label).collect();
    Ok((Tensor::new(data, &[items.len(), 3, h, w])?, labels))
}

/// Per-class seeded split into `(train, held_out)` index lists, each sorted.
/// Every class keeps `round(train_frac * n_c)` samples for training.
pub fn stratified_split(labels: &[usize], train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(DataError::Contract(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let k = (train_frac * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..k]);
        held.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok((train, held))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(v: f64, label: usize) -> LabeledImage {
        LabeledImage {
            pixels: Tensor::new(vec![v; 12], &[3, 2, 2]).unwrap(),
            label,
            source_id: String::new(),
        }
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let sizes: Vec<usize> = batch_indices(7, 3, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 1]);
        assert_eq!(batch_indices(7, 3, 5).unwrap(), batch_indices(7, 3, 5).unwrap());
        let one = batch_indices(7, 7, 5).unwrap();
        assert_eq!(one.len(), 1);
        let mut all = one[0].clone();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert!(batch_indices(7, 0, 5).is_err());
        assert_ne!(epoch_seed(3, 0), epoch_seed(3, 1));
    }

    #[test]
    fn iterator_yields_references() {
        let data: Vec<LabeledImage> = (0..5).map(|i| solid(0.1, i)).collect();
        let batches: Vec<Vec<&LabeledImage>> = batch_iterator(&data, 2, 0).unwrap().collect();
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut labels: Vec<usize> = batches.iter().flatten().map(|i| i.label).collect();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn collate_normalizes() {
        let (a, b) = (solid(1.0, 0), solid(0.25, 1));
        let (x, y) = collate(&[&a, &b], &Normalization::default()).unwrap();
        assert_eq!(x.shape(), &[2, 3, 2, 2]);
        assert_eq!(y, vec![0, 1]);
        let v = x.to_vec();
        assert!(v[..12].iter().all(|&p| p == 1.0));
        assert!(v[12..].iter().all(|&p| p == -0.5));
        assert!(collate(&[], &Normalization::default()).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let (tr, te) = stratified_split(&labels, 0.8, 4).unwrap();
        assert_eq!((tr.len(), te.len()), (40, 10));
        for c in 0..5 {
            assert_eq!(te.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert_eq!(stratified_split(&labels, 0.8, 4).unwrap(), (tr, te));
    }

    proptest! {
        #[test]
        fn batches_partition_indices(len in 0usize..60, batch in 1usize..20, seed in 0u64..100) {
            let b = batch_indices(len, batch, seed).unwrap();
            prop_assert!(b.iter().all(|x| !x.is_empty() && x.len() <= batch));
            prop_assert_eq!(b.len(), len.div_ceil(batch));
            let mut all: Vec<usize> = b.into_iter().flatten().collect();
            all.sort();
            prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        }
    }
}
