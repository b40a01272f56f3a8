//! On-disk dataset: one binary archive per split plus a JSON manifest.
//!
//! Archive layout, integers little-endian:
//!
//! ```text
//! magic "SAKEDAT1" | count u32 | height u32 | width u32
//! | count x (class_id u32, modality u8, sample_id u32, pixels f32 x height*width)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{certify_classes, Certificate, Dataset, Sample, SampleCounts, SplitKind, SplitSpec};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::semantics::{ClassMap, Taxonomy};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"SAKEDAT1";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn encode_archive(samples: &[Sample], side: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + samples.len() * (9 + 4 * side * side));
    buf.extend_from_slice(ARCHIVE_MAGIC);
    for v in [samples.len(), side, side] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in samples {
        buf.extend_from_slice(&s.class_id.to_le_bytes());
        buf.push(s.modality.bit());
        buf.extend_from_slice(&s.sample_id.to_le_bytes());
        for p in &s.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    buf
}

fn u32_at(bytes: &[u8], pos: usize) -> u32 {
    u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"))
}

/// Decodes an archive, returning its samples and image side.
pub fn decode_archive(bytes: &[u8], origin: &Path) -> Result<(Vec<Sample>, usize)> {
    let bad = |d: String| Error::format(origin, d);
    if bytes.len() < 20 || &bytes[..8] != ARCHIVE_MAGIC {
        return Err(bad("missing SAKEDAT1 header".into()));
    }
    let count = u32_at(bytes, 8) as usize;
    let (h, w) = (u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize);
    if h != w || h == 0 {
        return Err(bad(format!("expected square images, got {h}x{w}")));
    }
    let record = 9 + 4 * h * w;
    let expected = count
        .checked_mul(record)
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| bad("sample count overflows".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("{} bytes, header implies {expected}", bytes.len())));
    }
    let mut samples = Vec::with_capacity(count);
    for rec in bytes[20..].chunks_exact(record) {
        let modality = Modality::from_bit(rec[4]).ok_or_else(|| bad(format!("modality byte {}", rec[4])))?;
        let pixels: Vec<f32> = rec[9..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(bad("pixel outside [0, 1]".into()));
        }
        samples.push(Sample {
            class_id: u32_at(rec, 0),
            modality,
            sample_id: u32_at(rec, 5),
            pixels,
        });
    }
    Ok((samples, h))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestClass {
    pub class_id: u32,
    pub node: String,
    pub photos: usize,
    pub sketches: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSplit {
    pub name: SplitKind,
    pub file: String,
    pub count: usize,
    pub classes: Vec<ManifestClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub side: usize,
    pub original_classes: Vec<u32>,
    pub source_classes: Vec<u32>,
    pub target_classes: Vec<u32>,
    pub counts: SampleCounts,
    pub certificate: Certificate,
    pub splits: Vec<ManifestSplit>,
}

impl Manifest {
    pub fn build(dataset: &Dataset, tax: &Taxonomy, classes: &ClassMap) -> Result<Self> {
        let splits = SplitKind::ALL
            .iter()
            .map(|&kind| {
                let samples = dataset.split(kind);
                let mut per: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
                for s in samples {
                    let e = per.entry(s.class_id).or_default();
                    match s.modality {
                        Modality::Photo => e.0 += 1,
                        Modality::Sketch => e.1 += 1,
                    }
                }
                let classes = per
                    .into_iter()
                    .map(|(class_id, (photos, sketches))| {
                        Ok(ManifestClass {
                            class_id,
                            node: tax.name(classes.node(class_id)?).to_string(),
                            photos,
                            sketches,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ManifestSplit {
                    name: kind,
                    file: kind.file_name(),
                    count: samples.len(),
                    classes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = &dataset.spec;
        Ok(Manifest {
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: spec.seed,
            side: spec.side,
            original_classes: spec.original.clone(),
            source_classes: spec.source.clone(),
            target_classes: spec.target.clone(),
            counts: spec.counts,
            certificate: dataset.certificate.clone(),
            splits,
        })
    }

    pub fn split(&self, kind: SplitKind) -> Option<&ManifestSplit> {
        self.splits.iter().find(|s| s.name == kind)
    }

    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            original: self.original_classes.clone(),
            source: self.source_classes.clone(),
            target: self.target_classes.clone(),
            counts: self.counts,
            side: self.side,
            seed: self.seed,
        }
    }

    pub fn node_name(&self, class: u32) -> String {
        self.splits
            .iter()
            .flat_map(|s| &s.classes)
            .find(|c| c.class_id == class)
            .map(|c| c.node.clone())
            .unwrap_or_else(|| format!("class {class}"))
    }
}

/// Re-derives the disjointness certificate from the classes each split
/// actually lists, ignoring the declared sets and the stored certificate, and
/// checks per-class counts and modalities.
pub fn validate_manifest(m: &Manifest) -> Result<Certificate> {
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::contract("manifest", format!("format version {}", m.format_version)));
    }
    let listed = |kind: SplitKind| -> Result<&ManifestSplit> {
        m.split(kind)
            .ok_or_else(|| Error::contract("manifest", format!("missing split {}", kind.name())))
    };
    let ids = |s: &ManifestSplit| -> Vec<u32> { s.classes.iter().map(|c| c.class_id).collect() };
    let (orig, src, query, gallery) = (
        listed(SplitKind::OriginalTrain)?,
        listed(SplitKind::SourceTrain)?,
        listed(SplitKind::TargetQuery)?,
        listed(SplitKind::TargetGallery)?,
    );
    let target: Vec<u32> = ids(query)
        .into_iter()
        .chain(ids(gallery))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cert = certify_classes(&ids(orig), &ids(src), &target, |c| m.node_name(c))?;

    let c = &m.counts;
    let expect = [
        (orig, c.original_photos, 0),
        (src, c.source_photos, c.source_sketches),
        (query, 0, c.query_sketches),
        (gallery, c.gallery_photos, 0),
    ];
    for (split, photos, sketches) in expect {
        let total: usize = split.classes.iter().map(|k| k.photos + k.sketches).sum();
        if total != split.count {
            return Err(Error::contract(
                "manifest",
                format!("{} lists {} samples but counts {total}", split.name.name(), split.count),
            ));
        }
        for k in &split.classes {
            if (k.photos, k.sketches) != (photos, sketches) {
                return Err(Error::contract(
                    "manifest",
                    format!(
                        "{} class {} has {}/{} photos/sketches, expected {photos}/{sketches}",
                        split.name.name(),
                        k.class_id,
                        k.photos,
                        k.sketches
                    ),
                ));
            }
        }
    }
    Ok(cert)
}

pub fn write_dataset(dataset: &Dataset, tax: &Taxonomy, classes: &ClassMap, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest::build(dataset, tax, classes)?;
    for kind in SplitKind::ALL {
        let path = dir.join(kind.file_name());
        std::fs::write(&path, encode_archive(dataset.split(kind), dataset.side())).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads and validates a dataset directory. The archives must agree with the
/// manifest sample for sample.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let certificate = validate_manifest(&manifest)?;
    let mut parts = BTreeMap::new();
    for kind in SplitKind::ALL {
        let entry = manifest.split(kind).expect("validated");
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (samples, side) = decode_archive(&bytes, &path)?;
        if side != manifest.side {
            return Err(Error::format(&path, format!("side {side}, manifest says {}", manifest.side)));
        }
        let mut per: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for s in &samples {
            let e = per.entry(s.class_id).or_default();
            match s.modality {
                Modality::Photo => e.0 += 1,
                Modality::Sketch => e.1 += 1,
            }
        }
        let listed: BTreeMap<u32, (usize, usize)> =
            entry.classes.iter().map(|c| (c.class_id, (c.photos, c.sketches))).collect();
        if per != listed {
            return Err(Error::format(&path, "archive contents disagree with manifest"));
        }
        parts.insert(kind, samples);
    }
    let mut take = |k| parts.remove(&k).expect("all splits read");
    Ok(Dataset {
        spec: manifest.spec(),
        certificate,
        original_train: take(SplitKind::OriginalTrain),
        source_train: take(SplitKind::SourceTrain),
        target_query: take(SplitKind::TargetQuery),
        target_gallery: take(SplitKind::TargetGallery),
    })
}

#[cfg(test)]
mod tests {
    use super::super::dataset::generate_dataset;
    use super::*;

    fn small() -> (Dataset, Taxonomy, ClassMap) {
        let tax = Taxonomy::toy();
        let classes = ClassMap::toy(&tax);
        let spec = SplitSpec {
            counts: SampleCounts {
                original_photos: 2,
                source_photos: 2,
                source_sketches: 1,
                gallery_photos: 2,
                query_sketches: 1,
            },
            side: 12,
            ..SplitSpec::default()
        };
        let d = generate_dataset(&spec, &tax, &classes).unwrap();
        (d, tax, classes)
    }

    #[test]
    fn archive_round_trip() {
        let (d, _, _) = small();
        let bytes = encode_archive(&d.source_train, 12);
        let (back, side) = decode_archive(&bytes, Path::new("mem")).unwrap();
        assert_eq!(side, 12);
        assert_eq!(back, d.source_train);
        assert!(decode_archive(&bytes[..bytes.len() - 2], Path::new("mem")).is_err());
        let mut bad = bytes.clone();
        bad[20 + 4] = 7;
        assert!(decode_archive(&bad, Path::new("mem")).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let (d, tax, classes) = small();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(&d, &tax, &classes, dir.path()).unwrap();
        assert_eq!(validate_manifest(&m).unwrap(), d.certificate);
        assert_eq!(read_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn validator_catches_a_leaked_target_class() {
        let (d, tax, classes) = small();
        let mut m = Manifest::build(&d, &tax, &classes).unwrap();
        let leak = m.split(SplitKind::TargetQuery).unwrap().classes[0].clone();
        let src = m.splits.iter_mut().find(|s| s.name == SplitKind::SourceTrain).unwrap();
        src.count += leak.sketches;
        src.classes.push(leak.clone());
        // The stored certificate still claims disjointness; the validator must not trust it.
        assert!(m.certificate.source_target_disjoint);
        match validate_manifest(&m) {
            Err(Error::SplitViolation { class, .. }) => assert_eq!(class, leak.class_id),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validator_checks_counts() {
        let (d, tax, classes) = small();
        let mut m = Manifest::build(&d, &tax, &classes).unwrap();
        m.splits[0].classes[0].photos += 1;
        m.splits[0].count += 1;
        assert!(validate_manifest(&m).is_err());
    }
}
