//! Browser bindings for the demo page in `www/`: render synthetic samples,
//! look up taxonomy similarities, and blend a teacher's logits with them.

use sake_core::datagen::{recipe, render_sample, DEFAULT_ORIGINAL, RECIPE_NAMES};
use sake_core::losses::blend_teacher_signal;
use sake_core::model::Modality;
use sake_core::semantics::{ClassMap, SimilarityMatrix, Taxonomy};
use wasm_bindgen::prelude::*;

fn js(e: sake_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Names of all shape classes, indexed by class id.
#[wasm_bindgen]
pub fn class_names() -> Vec<String> {
    RECIPE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Class ids the teacher is trained on, in head order.
#[wasm_bindgen]
pub fn original_classes() -> Vec<u32> {
    DEFAULT_ORIGINAL.to_vec()
}

/// RGBA pixels (side x side) of one generated photo or sketch.
#[wasm_bindgen]
pub fn render(class_id: u32, sketch: bool, sample_id: u32, side: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    let name = RECIPE_NAMES
        .get(class_id as usize)
        .ok_or_else(|| JsError::new(&format!("no class {class_id}")))?;
    let shape = recipe(name).map_err(js)?;
    let modality = if sketch { Modality::Sketch } else { Modality::Photo };
    let s = render_sample(&shape, class_id, sample_id, modality, side, seed);
    Ok(s.pixels
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect())
}

/// Taxonomy path similarity of `class_id` to each original class.
#[wasm_bindgen]
pub fn similarity_row(class_id: u32) -> Result<Vec<f64>, JsError> {
    let tax = Taxonomy::toy();
    let classes = ClassMap::toy(&tax);
    let m = SimilarityMatrix::build(&tax, &classes, &[class_id], &DEFAULT_ORIGINAL).map_err(js)?;
    Ok(m.row_at(0).to_vec())
}

/// softmax(λ₁·t + λ₂·a) over the original classes.
#[wasm_bindgen]
pub fn teacher_signal(class_id: u32, teacher_logits: Vec<f64>, lambda1: f64, lambda2: f64) -> Result<Vec<f64>, JsError> {
    let a = similarity_row(class_id)?;
    blend_teacher_signal(&teacher_logits, &a, lambda1, lambda2).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_rgba_and_deterministic() {
        let a = render(9, true, 3, 32, 0).unwrap();
        assert_eq!(a.len(), 32 * 32 * 4);
        assert_eq!(a, render(9, true, 3, 32, 0).unwrap());
        assert_ne!(a, render(9, false, 3, 32, 0).unwrap());
    }

    #[test]
    fn similarity_row_peaks_at_siblings() {
        let row = similarity_row(3).unwrap();
        assert_eq!(row.len(), 20);
        let names = class_names();
        let best = original_classes()[row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        // slim_ellipse sits next to the other ellipses.
        assert!(["circle", "oval", "wide_ellipse"].contains(&names[best as usize].as_str()));
    }

    #[test]
    fn teacher_signal_is_a_distribution() {
        let mut t = vec![0.0; 20];
        t[4] = 5.0;
        let q = teacher_signal(3, t.clone(), 1.0, 0.3).unwrap();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(q.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0, 4);
        let flat = teacher_signal(3, t, 0.0, 0.0).unwrap();
        assert!(flat.iter().all(|&p| (p - 0.05).abs() < 1e-12));
    }
}
