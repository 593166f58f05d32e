//! Dataset loading, generation, and train-time augmentation.
//!
//! All images are `f32` in `[0, 1]`, stored flat in `[count, C, H, W]`
//! order. A dataset carries one primary label vector and optionally an
//! alternate labeling of the same images (translated MNIST: shift primary,
//! digit alternate; the three-superclass CIFAR-100 subset: coarse primary,
//! fine alternate). Loaders are deterministic given files; generators are
//! deterministic given their seed.

mod augment;
mod cache;
mod cifar;
mod idx;

pub use augment::{augment_batch, AugmentationPolicy};
pub use cache::{load_dataset, save_dataset};
pub use cifar::{load_cifar, CifarVariant};
pub use idx::load_mnist;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::util::derive_seed;
use crate::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What the integer labels of a dataset mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScheme {
    /// MNIST digit, 10 classes.
    Digit,
    /// Cyclic horizontal translation offset, 28 classes.
    Shift,
    /// CIFAR-10 object class, 10 classes.
    Cifar10Class,
    /// CIFAR-100 superclass (20 classes, or 3 after subsetting).
    Coarse,
    /// CIFAR-100 fine class (100 classes, or 15 after subsetting).
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Where a dataset came from: files read and generation parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub seed: Option<u64>,
    pub note: String,
}

/// One labeling of a dataset: scheme, class count, and per-image labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub scheme: LabelScheme,
    pub classes: usize,
    pub values: Vec<u32>,
}

impl Labels {
    fn validate(&self, count: usize) -> Result<()> {
        if self.values.len() != count {
            return Err(Error::contract(format!(
                "{} labels for {count} images",
                self.values.len()
            )));
        }
        if let Some(&bad) = self.values.iter().find(|&&l| l as usize >= self.classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Labeled image collection, immutable after construction.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Vec<f32>,
    channels: usize,
    height: usize,
    width: usize,
    labels: Labels,
    alt_labels: Option<Labels>,
    split: Split,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<f32>,
        (channels, height, width): (usize, usize, usize),
        labels: Labels,
        alt_labels: Option<Labels>,
        split: Split,
        provenance: Provenance,
    ) -> Result<Self> {
        let pixel = channels * height * width;
        if pixel == 0 || images.len() % pixel != 0 {
            return Err(Error::contract(format!(
                "image buffer of {} values does not tile into {channels}x{height}x{width}",
                images.len()
            )));
        }
        let count = images.len() / pixel;
        if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pixel value {bad} outside [0, 1]")));
        }
        labels.validate(count)?;
        if let Some(alt) = &alt_labels {
            alt.validate(count)?;
        }
        Ok(LabeledDataset {
            images,
            channels,
            height,
            width,
            labels,
            alt_labels,
            split,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len() / (self.channels * self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Flattened per-image dimension `C*H*W`.
    pub fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn alt_labels(&self) -> Option<&Labels> {
        self.alt_labels.as_ref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    /// Pixels of one image.
    pub fn image(&self, index: usize) -> &[f32] {
        let pixel = self.input_dim();
        &self.images[index * pixel..(index + 1) * pixel]
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels.values[index]
    }

    /// Swap primary and alternate labels (e.g. to train on digits instead
    /// of shifts). Errors if no alternate labeling exists.
    pub fn with_alt_primary(&self) -> Result<LabeledDataset> {
        let alt = self
            .alt_labels
            .clone()
            .ok_or_else(|| Error::contract("dataset has no alternate labeling"))?;
        Ok(LabeledDataset {
            labels: alt,
            alt_labels: Some(self.labels.clone()),
            ..self.clone()
        })
    }

    /// Gather a batch `[len(indices), C, H, W]` plus its primary labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<u32>)> {
        let pixel = self.input_dim();
        let mut images = Vec::with_capacity(indices.len() * pixel);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(format!(
                    "batch index {i} out of range for {} images",
                    self.len()
                )));
            }
            images.extend_from_slice(self.image(i));
            labels.push(self.labels.values[i]);
        }
        let tensor = Tensor::from_vec(
            images,
            &[indices.len(), self.channels, self.height, self.width],
        )
        .map_err(Error::from)?;
        Ok((tensor, labels))
    }

    /// The whole dataset as one `[count, C, H, W]` tensor.
    pub fn all_images(&self) -> Result<Tensor<f32>> {
        Tensor::from_vec(
            self.images.clone(),
            &[self.len(), self.channels, self.height, self.width],
        )
        .map_err(Error::from)
    }

    /// Keep only the listed images, in the given order. Both labelings
    /// follow; the provenance note records the reduction.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let count = self.len();
        if indices.is_empty() {
            return Err(Error::contract("subset needs at least one index"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= count) {
            return Err(Error::contract(format!(
                "subset index {bad} out of range for {count} images"
            )));
        }
        let pixel = self.input_dim();
        let mut images = Vec::with_capacity(indices.len() * pixel);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        let pick = |labels: &Labels| Labels {
            scheme: labels.scheme,
            classes: labels.classes,
            values: indices.iter().map(|&i| labels.values[i]).collect(),
        };
        let mut provenance = self.provenance.clone();
        provenance.note = format!("{}; subset {} of {count}", provenance.note, indices.len());
        Ok(LabeledDataset {
            images,
            channels: self.channels,
            height: self.height,
            width: self.width,
            labels: pick(&self.labels),
            alt_labels: self.alt_labels.as_ref().map(pick),
            split: self.split,
            provenance,
        })
    }
}

/// Number of base images the translated-MNIST generator samples.
pub const TRANSLATED_BASE_COUNT: usize = 50_000 / 28;

/// Build translated MNIST: sample `⌊50000/28⌋ = 1785` base images uniformly
/// at random, then emit every cyclic horizontal shift of each. Primary
/// labels are the shift offsets (28 classes); digit labels ride along as
/// the alternate labeling. The split tag follows the source.
pub fn make_translated_mnist(source: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let (c, h, w) = source.dims();
    if c != 1 || source.labels.scheme != LabelScheme::Digit {
        return Err(Error::contract(
            "translated MNIST needs single-channel digit-labeled input",
        ));
    }
    if source.len() < TRANSLATED_BASE_COUNT {
        return Err(Error::contract(format!(
            "need at least {TRANSLATED_BASE_COUNT} source images, got {}",
            source.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "translated-mnist", 0));
    let base = sample_without_replacement(source.len(), TRANSLATED_BASE_COUNT, &mut rng);

    let shifts = w;
    let pixel = h * w;
    let mut images = Vec::with_capacity(base.len() * shifts * pixel);
    let mut shift_labels = Vec::with_capacity(base.len() * shifts);
    let mut digit_labels = Vec::with_capacity(base.len() * shifts);
    for &b in &base {
        let src = source.image(b);
        let digit = source.label(b);
        for s in 0..shifts {
            // Content moves right by `s` columns, wrapping around.
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                for x in 0..w {
                    images.push(row[(x + w - s) % w]);
                }
            }
            shift_labels.push(s as u32);
            digit_labels.push(digit);
        }
    }
    LabeledDataset::new(
        images,
        (1, h, w),
        Labels {
            scheme: LabelScheme::Shift,
            classes: shifts,
            values: shift_labels,
        },
        Some(Labels {
            scheme: LabelScheme::Digit,
            classes: source.labels.classes,
            values: digit_labels,
        }),
        source.split,
        Provenance {
            sources: source.provenance.sources.clone(),
            seed: Some(seed),
            note: format!("translated-mnist: {} base images x {shifts} cyclic shifts", base.len()),
        },
    )
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Original CIFAR-100 coarse indices kept by the three-superclass subset,
/// in remap order: aquatic mammals, fish, flowers.
pub const COARSE_SUBSET: [u32; 3] = [0, 1, 2];

/// Restrict a CIFAR-100 split to the aquatic-mammals / fish / flowers
/// superclasses. Coarse labels remap to {0, 1, 2}; the 15 surviving fine
/// labels remap to {0..14} grouped five-per-superclass, so
/// `fine / 5 == coarse` afterwards.
pub fn cifar100_coarse_subset(data: &LabeledDataset) -> Result<LabeledDataset> {
    if data.labels.scheme != LabelScheme::Coarse {
        return Err(Error::contract("subset needs coarse primary labels"));
    }
    let fine = data
        .alt_labels
        .as_ref()
        .filter(|l| l.scheme == LabelScheme::Fine)
        .ok_or_else(|| Error::contract("subset needs fine alternate labels"))?;

    // Discover which fine classes live under each kept superclass.
    let mut fine_sets: [Vec<u32>; 3] = Default::default();
    for (&coarse, &f) in data.labels.values.iter().zip(&fine.values) {
        if let Some(slot) = COARSE_SUBSET.iter().position(|&c| c == coarse) {
            if !fine_sets[slot].contains(&f) {
                fine_sets[slot].push(f);
            }
        }
    }
    for (slot, set) in fine_sets.iter_mut().enumerate() {
        set.sort_unstable();
        if set.len() != 5 {
            return Err(Error::contract(format!(
                "superclass {} covers {} fine classes, expected 5",
                COARSE_SUBSET[slot],
                set.len()
            )));
        }
    }

    let mut images = Vec::new();
    let mut coarse_labels = Vec::new();
    let mut fine_labels = Vec::new();
    for i in 0..data.len() {
        let coarse = data.labels.values[i];
        let Some(slot) = COARSE_SUBSET.iter().position(|&c| c == coarse) else {
            continue;
        };
        let f = fine.values[i];
        let fine_idx = fine_sets[slot]
            .iter()
            .position(|&x| x == f)
            .ok_or_else(|| {
                Error::contract(format!("fine label {f} not under superclass {coarse}"))
            })?;
        images.extend_from_slice(data.image(i));
        coarse_labels.push(slot as u32);
        fine_labels.push((slot * 5 + fine_idx) as u32);
    }
    LabeledDataset::new(
        images,
        data.dims(),
        Labels {
            scheme: LabelScheme::Coarse,
            classes: 3,
            values: coarse_labels,
        },
        Some(Labels {
            scheme: LabelScheme::Fine,
            classes: 15,
            values: fine_labels,
        }),
        data.split,
        Provenance {
            sources: data.provenance.sources.clone(),
            seed: data.provenance.seed,
            note: "cifar100 subset: superclasses 0,1,2 (aquatic mammals, fish, flowers)".into(),
        },
    )
}
