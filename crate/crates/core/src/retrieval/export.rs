use std::path::Path;

use super::rank::Collection;
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::hashing::ItqCodec;
use crate::model::{Modality, ModelParams};
use crate::numerics::Tensor;
use crate::training::extract_features;

/// Embeds `samples` with `params`; with a codec the embeddings are hashed.
pub fn embed_collection(params: &ModelParams<f32>, samples: &[Sample], codec: Option<&ItqCodec>) -> Result<Collection> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let features = extract_features(params, &refs)?;
    let labels = samples.iter().map(|s| s.class_id).collect();
    match codec {
        None => Collection::real(features, labels),
        Some(c) => Collection::binary(c.encode_rows(&features)?, labels),
    }
}

/// One row per sample: `id, class, modality, x0 .. x{M-1}`, where `id` is the
/// sample's position.
pub fn write_embeddings_csv(path: &Path, samples: &[Sample], features: &Tensor<f32>) -> Result<()> {
    let shape = features.shape();
    if shape.len() != 2 || shape[0] != samples.len() {
        return Err(Error::contract(
            "write_embeddings_csv",
            format!("{} samples for features {shape:?}", samples.len()),
        ));
    }
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["id".to_string(), "class".to_string(), "modality".to_string()];
    header.extend((0..shape[1]).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, s) in samples.iter().enumerate() {
        let modality = match s.modality {
            Modality::Photo => "photo",
            Modality::Sketch => "sketch",
        };
        let mut row = vec![i.to_string(), s.class_id.to_string(), modality.to_string()];
        row.extend(features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let samples: Vec<Sample> = (0..3)
            .map(|i| Sample {
                class_id: 7 + i,
                modality: if i == 1 { Modality::Sketch } else { Modality::Photo },
                sample_id: i,
                pixels: vec![],
            })
            .collect();
        let features = Tensor::new(&[3, 2], vec![0.5, -1.0, 0.0, 2.0, 1.5, 0.25]).unwrap();
        write_embeddings_csv(&path, &samples, &features).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,class,modality,x0,x1");
        assert_eq!(lines[2], "1,8,sketch,0,2");
        assert_eq!(lines.len(), 4);
        assert!(write_embeddings_csv(&path, &samples[..2], &features).is_err());
    }
}
