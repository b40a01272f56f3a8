use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_photo, render_sketch, Latent};
use super::shapes::{recipe, Shape};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::semantics::{ClassMap, Taxonomy};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub class_id: u32,
    pub modality: Modality,
    pub sample_id: u32,
    pub pixels: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub original_photos: usize,
    pub source_photos: usize,
    pub source_sketches: usize,
    pub gallery_photos: usize,
    pub query_sketches: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts {
            original_photos: 60,
            source_photos: 60,
            source_sketches: 30,
            gallery_photos: 50,
            query_sketches: 20,
        }
    }
}

/// Which classes go where, and how many samples each gets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub original: Vec<u32>,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    pub counts: SampleCounts,
    pub side: usize,
    pub seed: u64,
}

/// Proof that a split is usable for zero-shot evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub source_target_disjoint: bool,
    pub original_target_disjoint: bool,
    /// Allowed, as a pretraining set may share classes with the source set.
    pub original_source_shared: Vec<u32>,
}

/// Every shape family has original classes, and every target class has
/// siblings among both the original and the source classes.
pub const DEFAULT_ORIGINAL: [u32; 20] = [
    0, 1, 2, 5, 6, 10, 11, 15, 16, 20, 21, 25, 26, 27, 30, 31, 33, 35, 36, 38,
];
pub const DEFAULT_SOURCE: [u32; 10] = [3, 7, 8, 13, 14, 17, 18, 19, 23, 24];
pub const DEFAULT_TARGET: [u32; 6] = [4, 9, 28, 29, 32, 37];

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            original: DEFAULT_ORIGINAL.to_vec(),
            source: DEFAULT_SOURCE.to_vec(),
            target: DEFAULT_TARGET.to_vec(),
            counts: SampleCounts::default(),
            side: 32,
            seed: 0,
        }
    }
}

fn first_overlap(a: &[u32], b: &[u32]) -> Option<u32> {
    let b: BTreeSet<u32> = b.iter().copied().collect();
    a.iter().copied().filter(|c| b.contains(c)).min()
}

/// Checks the two zero-shot disjointness rules on raw class lists.
/// `name` resolves a class id for the error message.
pub fn certify_classes(
    original: &[u32],
    source: &[u32],
    target: &[u32],
    name: impl Fn(u32) -> String,
) -> Result<Certificate> {
    if let Some(class) = first_overlap(source, target) {
        return Err(Error::SplitViolation {
            class,
            name: name(class),
            first: "source",
            second: "target",
        });
    }
    if let Some(class) = first_overlap(original, target) {
        return Err(Error::SplitViolation {
            class,
            name: name(class),
            first: "original",
            second: "target",
        });
    }
    let src: BTreeSet<u32> = source.iter().copied().collect();
    Ok(Certificate {
        source_target_disjoint: true,
        original_target_disjoint: true,
        original_source_shared: original.iter().copied().filter(|c| src.contains(c)).collect(),
    })
}

impl SplitSpec {
    /// Validates the spec against a taxonomy and returns its certificate.
    pub fn certify(&self, tax: &Taxonomy, classes: &ClassMap) -> Result<Certificate> {
        if self.side < 8 {
            return Err(Error::contract("split_spec", format!("image side {} < 8", self.side)));
        }
        for (label, set) in [("original", &self.original), ("source", &self.source), ("target", &self.target)] {
            if set.is_empty() {
                return Err(Error::contract("split_spec", format!("{label} class set is empty")));
            }
            let unique: BTreeSet<_> = set.iter().collect();
            if unique.len() != set.len() {
                return Err(Error::contract("split_spec", format!("{label} class set repeats a class")));
            }
            for &c in set.iter() {
                classes.node(c)?;
            }
        }
        let c = &self.counts;
        if c.original_photos == 0
            || c.source_photos + c.source_sketches == 0
            || c.gallery_photos == 0
            || c.query_sketches == 0
        {
            return Err(Error::contract("split_spec", "every split needs samples"));
        }
        certify_classes(&self.original, &self.source, &self.target, |id| {
            classes
                .node(id)
                .map(|n| tax.name(n).to_string())
                .unwrap_or_default()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    OriginalTrain,
    SourceTrain,
    TargetQuery,
    TargetGallery,
}

impl SplitKind {
    pub const ALL: [SplitKind; 4] = [
        SplitKind::OriginalTrain,
        SplitKind::SourceTrain,
        SplitKind::TargetQuery,
        SplitKind::TargetGallery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::OriginalTrain => "original-train",
            SplitKind::SourceTrain => "source-train",
            SplitKind::TargetQuery => "target-query",
            SplitKind::TargetGallery => "target-gallery",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.bin", self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SplitSpec,
    pub certificate: Certificate,
    pub original_train: Vec<Sample>,
    pub source_train: Vec<Sample>,
    pub target_query: Vec<Sample>,
    pub target_gallery: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> &[Sample] {
        match kind {
            SplitKind::OriginalTrain => &self.original_train,
            SplitKind::SourceTrain => &self.source_train,
            SplitKind::TargetQuery => &self.target_query,
            SplitKind::TargetGallery => &self.target_gallery,
        }
    }

    pub fn side(&self) -> usize {
        self.spec.side
    }
}

const LATENT_STREAM: u64 = 0;
const PHOTO_STREAM: u64 = 1;
const SKETCH_STREAM: u64 = 2;

/// Independent generator for one (purpose, class, sample) triple. Photo and
/// sketch of a sample share the latent stream, so they show the same pose.
fn stream(seed: u64, purpose: u64, class: u32, sample: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) | ((class as u64) << 28) | sample as u64);
    rng
}

/// Renders one sample. Deterministic in `(seed, class, sample_id, modality)`.
pub fn render_sample(shape: &Shape, class: u32, sample_id: u32, modality: Modality, side: usize, seed: u64) -> Sample {
    let latent = Latent::draw(side, &mut stream(seed, LATENT_STREAM, class, sample_id));
    let pixels = match modality {
        Modality::Photo => render_photo(shape, &latent, side, &mut stream(seed, PHOTO_STREAM, class, sample_id)),
        Modality::Sketch => render_sketch(shape, &latent, side, &mut stream(seed, SKETCH_STREAM, class, sample_id)),
    };
    Sample {
        class_id: class,
        modality,
        sample_id,
        pixels,
    }
}

fn render_range(
    shapes: &[(u32, Shape)],
    ids: std::ops::Range<u32>,
    modality: Modality,
    spec: &SplitSpec,
    out: &mut Vec<Sample>,
) {
    for (class, shape) in shapes {
        for id in ids.clone() {
            out.push(render_sample(shape, *class, id, modality, spec.side, spec.seed));
        }
    }
}

pub fn generate_dataset(spec: &SplitSpec, tax: &Taxonomy, classes: &ClassMap) -> Result<Dataset> {
    let certificate = spec.certify(tax, classes)?;
    let shapes = |set: &[u32]| -> Result<Vec<(u32, Shape)>> {
        set.iter()
            .map(|&c| Ok((c, recipe(tax.name(classes.node(c)?))?)))
            .collect()
    };
    let (original, source, target) = (shapes(&spec.original)?, shapes(&spec.source)?, shapes(&spec.target)?);
    let c = &spec.counts;
    let n = |k: usize| k as u32;

    let mut original_train = Vec::new();
    render_range(&original, 0..n(c.original_photos), Modality::Photo, spec, &mut original_train);
    let mut source_train = Vec::new();
    render_range(&source, 0..n(c.source_photos), Modality::Photo, spec, &mut source_train);
    render_range(&source, 0..n(c.source_sketches), Modality::Sketch, spec, &mut source_train);
    let mut target_gallery = Vec::new();
    render_range(&target, 0..n(c.gallery_photos), Modality::Photo, spec, &mut target_gallery);
    // Query sketches are distinct instances from the gallery photos.
    let q0 = n(c.gallery_photos);
    let mut target_query = Vec::new();
    render_range(&target, q0..q0 + n(c.query_sketches), Modality::Sketch, spec, &mut target_query);

    Ok(Dataset {
        spec: spec.clone(),
        certificate,
        original_train,
        source_train,
        target_query,
        target_gallery,
    })
}

/// Deterministic 80/20 partition of the original split by sample id.
pub fn is_held_out(sample_id: u32) -> bool {
    sample_id % 5 == 4
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Taxonomy, ClassMap) {
        let tax = Taxonomy::toy();
        let classes = ClassMap::toy(&tax);
        (tax, classes)
    }

    fn small_spec() -> SplitSpec {
        SplitSpec {
            counts: SampleCounts {
                original_photos: 3,
                source_photos: 2,
                source_sketches: 2,
                gallery_photos: 2,
                query_sketches: 1,
            },
            ..SplitSpec::default()
        }
    }

    #[test]
    fn overlapping_source_and_target_names_the_class() {
        let (tax, classes) = toy();
        let mut spec = SplitSpec::default();
        spec.target.push(14);
        match spec.certify(&tax, &classes) {
            Err(Error::SplitViolation { class, name, first, second }) => {
                assert_eq!((class, name.as_str(), first, second), (14, "inverted_triangle", "source", "target"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_original_and_target_is_rejected() {
        let (tax, classes) = toy();
        let mut spec = SplitSpec::default();
        spec.original.push(4);
        assert!(matches!(
            generate_dataset(&spec, &tax, &classes),
            Err(Error::SplitViolation { class: 4, first: "original", .. })
        ));
    }

    #[test]
    fn original_may_share_with_source() {
        let (tax, classes) = toy();
        let mut spec = SplitSpec::default();
        spec.original.push(3);
        let cert = spec.certify(&tax, &classes).unwrap();
        assert_eq!(cert.original_source_shared, vec![3]);
    }

    #[test]
    fn unknown_class_is_rejected() {
        let (tax, classes) = toy();
        let mut spec = SplitSpec::default();
        spec.source.push(99);
        assert!(matches!(spec.certify(&tax, &classes), Err(Error::Lookup { .. })));
    }

    #[test]
    fn counts_and_modalities_follow_the_spec() {
        let (tax, classes) = toy();
        let d = generate_dataset(&small_spec(), &tax, &classes).unwrap();
        assert_eq!(d.original_train.len(), 20 * 3);
        assert_eq!(d.source_train.len(), 10 * 4);
        assert_eq!(d.target_gallery.len(), 6 * 2);
        assert_eq!(d.target_query.len(), 6);
        assert!(d.original_train.iter().all(|s| s.modality == Modality::Photo));
        assert!(d.target_gallery.iter().all(|s| s.modality == Modality::Photo));
        assert!(d.target_query.iter().all(|s| s.modality == Modality::Sketch));
        assert!(d.target_query.iter().all(|s| s.sample_id >= 2));
    }

    #[test]
    fn generation_is_deterministic_and_seeded() {
        let (tax, classes) = toy();
        let a = generate_dataset(&small_spec(), &tax, &classes).unwrap();
        let b = generate_dataset(&small_spec(), &tax, &classes).unwrap();
        assert_eq!(a, b);
        let mut other = small_spec();
        other.seed = 1;
        let c = generate_dataset(&other, &tax, &classes).unwrap();
        assert_ne!(a.source_train[0].pixels, c.source_train[0].pixels);
    }

    #[test]
    fn photo_and_sketch_share_a_pose() {
        let shape = recipe("wide_rectangle").unwrap();
        let photo = render_sample(&shape, 16, 7, Modality::Photo, 32, 11);
        let sketch = render_sample(&shape, 16, 7, Modality::Sketch, 32, 11);
        let other = render_sample(&shape, 16, 8, Modality::Sketch, 32, 11);
        // Ink should sit on the photo's strongest edges.
        let edge_energy = |img: &[f32]| -> f32 {
            let mut e = 0.0;
            for y in 1..31 {
                for x in 1..31 {
                    let gx = photo.pixels[y * 32 + x + 1] - photo.pixels[y * 32 + x - 1];
                    let gy = photo.pixels[(y + 1) * 32 + x] - photo.pixels[(y - 1) * 32 + x];
                    e += img[y * 32 + x] * (gx * gx + gy * gy).sqrt();
                }
            }
            e / img.iter().sum::<f32>()
        };
        assert!(edge_energy(&sketch.pixels) > edge_energy(&other.pixels));
    }

    #[test]
    fn held_out_partition_is_one_fifth() {
        assert_eq!((0..60).filter(|&i| is_held_out(i)).count(), 12);
    }
}
