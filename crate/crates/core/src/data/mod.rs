//! Dataset ingestion, the synthetic generator and mini-batch planning.
//!
//! Ground-truth labels travel in [`EvalLabels`], separate from the images.
//! The training path only ever receives [`ImageBatch`]es, which carry no labels.

mod builtin;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aug::Image;
use crate::rng::derive_seed;

pub use self::builtin::CIFAR100_FINE_TO_COARSE;
pub use self::synthetic::{make_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file or directory: {0}")]
    Missing(PathBuf),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("corrupt dataset file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("dataset has {found} classes, configuration says {expected}")]
    ClassCount { expected: usize, found: usize },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
}

/// Ground-truth labels. Only evaluation code reads them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalLabels(Vec<usize>);

impl EvalLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// An indexed image collection with optional evaluation-only labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Option<EvalLabels>,
    num_classes: usize,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        images: Vec<Image>,
        labels: Option<EvalLabels>,
        num_classes: usize,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if let Some(l) = &labels {
            if l.len() != images.len() {
                return Err(DataError::CountMismatch {
                    images: images.len(),
                    labels: l.len(),
                });
            }
            if let Some(bad) = l.as_slice().iter().find(|&&y| y >= num_classes) {
                return Err(DataError::InvalidSpec(format!("label {bad} >= num_classes {num_classes}")));
            }
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            class_names,
        })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> Option<&EvalLabels> {
        self.labels.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The same images with every label dropped.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            images: self.images.iter().map(|i| i.resize(width, height)).collect(),
            ..self.clone()
        }
    }

    /// FNV-1a over image sizes, pixel bits and labels.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::default();
        for img in &self.images {
            h.write(&(img.width() as u64).to_le_bytes());
            h.write(&(img.height() as u64).to_le_bytes());
            for v in img.as_slice() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        if let Some(l) = &self.labels {
            for y in l.as_slice() {
                h.write(&(*y as u64).to_le_bytes());
            }
        }
        h.0
    }

    /// Label-free mini-batches for one pass over the data.
    pub fn batches(&self, batch_size: usize, mode: BatchMode, seed: u64, epoch: u64) -> Result<Vec<ImageBatch<'_>>, DataError> {
        Ok(batch_indices(self.len(), batch_size, mode, seed, epoch)?
            .into_iter()
            .map(|indices| ImageBatch {
                images: indices.iter().map(|&i| &self.images[i]).collect(),
                indices,
            })
            .collect())
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// A mini-batch of images and their dataset indices. No labels.
#[derive(Clone, Debug)]
pub struct ImageBatch<'a> {
    pub indices: Vec<usize>,
    pub images: Vec<&'a Image>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Shuffled per epoch; the ragged final batch is dropped.
    Train,
    /// Dataset order; every item appears exactly once.
    Eval,
}

/// Index lists for one epoch. Training order depends only on `(seed, epoch)`.
pub fn batch_indices(n: usize, batch_size: usize, mode: BatchMode, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchSize(batch_size));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        BatchMode::Train => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5348_5546, epoch]));
            order.shuffle(&mut rng);
            Ok(order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
        }
        BatchMode::Eval => Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// `root/<class_name>/<image>`.
    Folder,
    Synthetic,
    Cifar10,
    /// CIFAR-100 evaluated on its 20 super-classes.
    Cifar100Super,
    Stl10,
    /// Folder layout restricted to a synset list.
    Imagenet10,
    ImagenetDogs,
}

impl SourceKind {
    /// Class count of the builtin benchmarks.
    pub fn builtin_classes(self) -> Option<usize> {
        match self {
            SourceKind::Cifar10 | SourceKind::Stl10 | SourceKind::Imagenet10 => Some(10),
            SourceKind::Cifar100Super => Some(20),
            SourceKind::ImagenetDogs => Some(15),
            SourceKind::Folder | SourceKind::Synthetic => None,
        }
    }

    fn needs_root(self) -> bool {
        !matches!(self, SourceKind::Synthetic)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    #[default]
    TrainPlusTestMerged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: SourceKind,
    pub root_path: Option<PathBuf>,
    /// Required to match the data when set; builtins fill it in.
    pub num_classes: Option<usize>,
    /// `(height, width)` every image is resized to at load time.
    pub resize_to: (usize, usize),
    pub split_policy: SplitPolicy,
    /// Class directories to keep, in order (ImageNet subsets).
    pub synsets: Option<Vec<String>>,
    /// JSON index of a folder dataset; read if present, written otherwise.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            root_path: None,
            num_classes: None,
            resize_to: (224, 224),
            split_policy: SplitPolicy::default(),
            synsets: None,
            manifest: None,
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn folder(root: impl Into<PathBuf>) -> Self {
        Self {
            source: SourceKind::Folder,
            root_path: Some(root.into()),
            ..Self::default()
        }
    }

    pub fn synthetic(spec: SyntheticSpec) -> Self {
        Self {
            source: SourceKind::Synthetic,
            resize_to: spec.image_size,
            num_classes: Some(spec.num_classes),
            synthetic: spec,
            ..Self::default()
        }
    }

    /// Expected class count, if known before loading.
    pub fn expected_classes(&self) -> Option<usize> {
        match self.source {
            SourceKind::Synthetic => Some(self.synthetic.num_classes),
            s => s.builtin_classes().or(self.num_classes),
        }
    }

    /// Checks the spec without touching the data. Error messages name the
    /// offending key.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.resize_to.0 == 0 || self.resize_to.1 == 0 {
            return Err(DataError::InvalidSpec("dataset.resize_to must be positive".into()));
        }
        if self.source.needs_root() {
            match &self.root_path {
                None => return Err(DataError::InvalidSpec("dataset.root_path is required for this source".into())),
                Some(p) if !p.exists() => {
                    return Err(DataError::InvalidSpec(format!("dataset.root_path {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if let (Some(builtin), Some(given)) = (self.source.builtin_classes(), self.num_classes) {
            if builtin != given {
                return Err(DataError::InvalidSpec(format!(
                    "dataset.num_classes is {given} but {:?} has {builtin} classes",
                    self.source
                )));
            }
        }
        if self.source == SourceKind::Synthetic {
            self.synthetic.validate()?;
        }
        Ok(())
    }
}

/// Relative image paths and class indices of a folder dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class: usize,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let io = |e: std::io::Error| DataError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    let mut out = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()).map_err(io))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    Ok(out)
}

impl DatasetManifest {
    /// Scans `root/<class>/<image>`. Classes and files are sorted by name.
    pub fn scan(root: &Path, synsets: Option<&[String]>) -> Result<Self, DataError> {
        if !root.is_dir() {
            return Err(DataError::Missing(root.to_path_buf()));
        }
        let classes: Vec<String> = match synsets {
            Some(list) => {
                for s in list {
                    if !root.join(s).is_dir() {
                        return Err(DataError::Missing(root.join(s)));
                    }
                }
                list.to_vec()
            }
            None => sorted_entries(root)?
                .into_iter()
                .filter(|p| p.is_dir())
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect(),
        };
        let mut entries = Vec::new();
        for (class, name) in classes.iter().enumerate() {
            for path in sorted_entries(&root.join(name))? {
                let is_image = path
                    .extension()
                    .map(|e| IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_ascii_lowercase().as_str()))
                    .unwrap_or(false);
                if path.is_file() && is_image {
                    entries.push(ManifestEntry {
                        path: Path::new(name).join(path.file_name().unwrap()),
                        class,
                    });
                }
            }
        }
        Ok(Self { classes, entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| DataError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Decodes one PNG/JPEG file into an RGB image (grayscale is promoted).
pub fn read_image(path: &Path) -> Result<Image, DataError> {
    let decoded = image::open(path).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    Image::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw()).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_folder(spec: &DatasetSpec, root: &Path) -> Result<(Vec<Image>, Vec<usize>, Vec<String>), DataError> {
    let manifest = match &spec.manifest {
        Some(p) if p.is_file() => DatasetManifest::load(p)?,
        other => {
            let m = DatasetManifest::scan(root, spec.synsets.as_deref())?;
            if let Some(p) = other {
                m.save(p)?;
            }
            m
        }
    };
    let mut images = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        images.push(read_image(&root.join(&e.path))?);
        labels.push(e.class);
    }
    Ok((images, labels, manifest.classes))
}

/// Loads the dataset described by `spec`, resized to `spec.resize_to`.
/// Item order is deterministic.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let (h, w) = spec.resize_to;
    if spec.source == SourceKind::Synthetic {
        let ds = make_synthetic(&spec.synthetic)?;
        return Ok(if ds.images()[0].width() == w && ds.images()[0].height() == h {
            ds
        } else {
            ds.resized(h, w)
        });
    }
    let root = spec.root_path.as_deref().expect("validated root");
    let (images, labels, names) = match spec.source {
        SourceKind::Folder | SourceKind::Imagenet10 | SourceKind::ImagenetDogs => load_folder(spec, root)?,
        SourceKind::Cifar10 => with_numbered_names(builtin::load_cifar10(root)?, 10),
        SourceKind::Cifar100Super => with_numbered_names(builtin::load_cifar100_super(root)?, 20),
        SourceKind::Stl10 => with_numbered_names(builtin::load_stl10(root)?, 10),
        SourceKind::Synthetic => unreachable!(),
    };
    let found = names.len();
    if let Some(expected) = spec.expected_classes() {
        if expected != found {
            return Err(DataError::ClassCount { expected, found });
        }
    }
    if images.is_empty() {
        return Err(DataError::InvalidSpec(format!("no images found under {}", root.display())));
    }
    let images = images.into_iter().map(|i| i.resize(w, h)).collect();
    Dataset::new(images, Some(EvalLabels::new(labels)), found, names)
}

fn with_numbered_names((images, labels): builtin::Labeled, k: usize) -> (Vec<Image>, Vec<usize>, Vec<String>) {
    (images, labels, (0..k).map(|i| i.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, rgb: [u8; 3]) {
        let img = image::RgbImage::from_pixel(5, 4, image::Rgb(rgb));
        img.save(path).unwrap();
    }

    fn folder_fixture() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (k, name) in ["cat", "dog", "eel"].iter().enumerate() {
            let sub = dir.path().join(name);
            fs::create_dir(&sub).unwrap();
            for i in 0..2 {
                write_png(&sub.join(format!("{i}.png")), [k as u8 * 100, i as u8 * 50, 7]);
            }
        }
        fs::write(dir.path().join("cat").join("notes.txt"), "skip me").unwrap();
        dir
    }

    #[test]
    fn folder_layout_gives_classes_and_items() {
        let dir = folder_fixture();
        let mut spec = DatasetSpec::folder(dir.path());
        spec.resize_to = (8, 8);
        let ds = load_dataset(&spec).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.labels().unwrap().as_slice(), &[0, 0, 1, 1, 2, 2]);
        assert!(ds.images().iter().all(|i| i.width() == 8 && i.height() == 8));
        let again = load_dataset(&spec).unwrap();
        assert_eq!(ds.checksum(), again.checksum());
    }

    #[test]
    fn folder_manifest_is_cached() {
        let dir = folder_fixture();
        let cache = tempfile::tempdir().unwrap();
        let mut spec = DatasetSpec::folder(dir.path());
        spec.resize_to = (4, 4);
        spec.manifest = Some(cache.path().join("manifest.json"));
        let first = load_dataset(&spec).unwrap();
        let manifest = DatasetManifest::load(spec.manifest.as_ref().unwrap()).unwrap();
        assert_eq!(manifest.entries.len(), 6);
        assert_eq!(load_dataset(&spec).unwrap().checksum(), first.checksum());
    }

    #[test]
    fn class_count_mismatch_is_an_error() {
        let dir = folder_fixture();
        let mut spec = DatasetSpec::folder(dir.path());
        spec.num_classes = Some(4);
        assert!(matches!(load_dataset(&spec), Err(DataError::ClassCount { expected: 4, found: 3 })));
    }

    #[test]
    fn synset_list_restricts_classes() {
        let dir = folder_fixture();
        let mut spec = DatasetSpec::folder(dir.path());
        spec.synsets = Some(vec!["eel".into(), "cat".into()]);
        spec.resize_to = (4, 4);
        let ds = load_dataset(&spec).unwrap();
        assert_eq!(ds.class_names(), &["eel".to_string(), "cat".to_string()]);
        assert_eq!(ds.len(), 4);
    }

    #[test]
    fn corrupt_image_is_reported() {
        let dir = folder_fixture();
        fs::write(dir.path().join("dog").join("broken.png"), b"not a png").unwrap();
        let err = load_dataset(&DatasetSpec::folder(dir.path())).unwrap_err();
        assert!(matches!(err, DataError::Decode { .. }), "{err}");
    }

    #[test]
    fn missing_root_names_the_key() {
        let spec = DatasetSpec::folder("/definitely/not/here");
        let err = load_dataset(&spec).unwrap_err();
        assert!(err.to_string().contains("dataset.root_path"), "{err}");
    }

    #[test]
    fn train_batches_drop_last() {
        let b = batch_indices(10, 4, BatchMode::Train, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4]);
        let e = batch_indices(10, 4, BatchMode::Eval, 1, 0).unwrap();
        assert_eq!(e.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let flat: Vec<usize> = e.into_iter().flatten().collect();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn train_order_depends_on_seed_and_epoch() {
        let a = batch_indices(50, 5, BatchMode::Train, 3, 2).unwrap();
        assert_eq!(a, batch_indices(50, 5, BatchMode::Train, 3, 2).unwrap());
        assert_ne!(a, batch_indices(50, 5, BatchMode::Train, 3, 3).unwrap());
        assert_ne!(a, batch_indices(50, 5, BatchMode::Train, 4, 2).unwrap());
    }

    #[test]
    fn batch_size_below_two_is_rejected() {
        assert!(matches!(batch_indices(10, 1, BatchMode::Train, 0, 0), Err(DataError::BatchSize(1))));
    }

    #[test]
    fn builtin_class_counts() {
        assert_eq!(SourceKind::Cifar100Super.builtin_classes(), Some(20));
        assert_eq!(SourceKind::ImagenetDogs.builtin_classes(), Some(15));
        let spec = DatasetSpec {
            source: SourceKind::Cifar10,
            root_path: Some(std::env::temp_dir()),
            num_classes: Some(20),
            ..DatasetSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
