//! Groups target classes into terciles by how much fine-tuning improved their
//! retrieval, and compares the teacher's confidence and the taxonomy
//! similarity of each group.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub class_id: u32,
    /// Student mAP minus baseline mAP for this class.
    pub delta: f64,
    /// Teacher's mean top-1 softmax probability on the class's samples.
    pub teacher_confidence: f64,
    /// Leacock-Chodorow similarity to the nearest original class.
    pub lch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub classes: Vec<u32>,
    pub mean_delta: f64,
    pub mean_teacher_confidence: f64,
    pub mean_lch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementAnalysis {
    /// Low, medium and high improvement, in that order.
    pub groups: Vec<Group>,
    /// Classes left out so the rest split evenly (largest class ids go first).
    pub dropped: Vec<u32>,
    /// Equal deltas straddle a group boundary, so membership there was
    /// decided by class id.
    pub degenerate: bool,
    pub confidence_non_decreasing: bool,
    pub lch_non_decreasing: bool,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Sorts classes by improvement (ties by class id) and splits them into three
/// equal groups.
pub fn analyze_improvement_groups(stats: &[ClassStat]) -> Result<ImprovementAnalysis> {
    if stats.len() < 3 {
        return Err(Error::contract("analyze", format!("need at least 3 classes, got {}", stats.len())));
    }
    if stats.iter().any(|s| !(s.delta.is_finite() && s.teacher_confidence.is_finite() && s.lch.is_finite())) {
        return Err(Error::contract("analyze", "non-finite class statistics"));
    }
    let mut by_id: Vec<&ClassStat> = stats.iter().collect();
    by_id.sort_by_key(|s| s.class_id);
    if by_id.windows(2).any(|w| w[0].class_id == w[1].class_id) {
        return Err(Error::contract("analyze", "duplicate class ids"));
    }
    let size = stats.len() / 3;
    let dropped: Vec<u32> = by_id.split_off(3 * size).iter().map(|s| s.class_id).collect();

    let mut sorted = by_id;
    sorted.sort_by(|a, b| a.delta.total_cmp(&b.delta).then(a.class_id.cmp(&b.class_id)));
    let degenerate = [size, 2 * size].iter().any(|&b| sorted[b - 1].delta == sorted[b].delta);

    let groups: Vec<Group> = ["low", "medium", "high"]
        .iter()
        .zip(sorted.chunks(size))
        .map(|(name, members)| Group {
            name: name.to_string(),
            classes: members.iter().map(|s| s.class_id).collect(),
            mean_delta: mean(members.iter().map(|s| s.delta)),
            mean_teacher_confidence: mean(members.iter().map(|s| s.teacher_confidence)),
            mean_lch: mean(members.iter().map(|s| s.lch)),
        })
        .collect();
    let non_decreasing = |f: fn(&Group) -> f64| groups.windows(2).all(|w| f(&w[0]) <= f(&w[1]));
    Ok(ImprovementAnalysis {
        confidence_non_decreasing: non_decreasing(|g| g.mean_teacher_confidence),
        lch_non_decreasing: non_decreasing(|g| g.mean_lch),
        groups,
        dropped,
        degenerate,
    })
}

impl ImprovementAnalysis {
    pub fn high_confidence_at_least_low(&self) -> bool {
        self.groups[2].mean_teacher_confidence >= self.groups[0].mean_teacher_confidence
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<7} {:<16} {:>10} {:>11} {:>8}",
            "group", "classes", "mean dmAP", "teacher conf", "LCh"
        );
        for g in &self.groups {
            let ids = g.classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
            let _ = writeln!(
                out,
                "{:<7} {:<16} {:>10.4} {:>11.4} {:>8.4}",
                g.name, ids, g.mean_delta, g.mean_teacher_confidence, g.mean_lch
            );
        }
        if !self.dropped.is_empty() {
            let _ = writeln!(out, "dropped classes: {:?}", self.dropped);
        }
        if self.degenerate {
            let _ = writeln!(out, "note: tied improvements at a group boundary; split by class id");
        }
        out
    }
}
