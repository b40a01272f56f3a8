use serde::{Deserialize, Serialize};

use super::metrics::{cosine_with_norms, norm};
use crate::error::{Error, Result};
use crate::hashing::{hamming_distance, BinaryCode};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Hamming,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Hamming => "hamming",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "hamming" => Ok(Metric::Hamming),
            _ => Err(Error::Lookup {
                kind: "metric",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Items {
    Real { features: Tensor<f32>, norms: Vec<f64> },
    Binary(Vec<BinaryCode>),
}

/// Labelled retrieval items, either real embeddings or binary codes. An
/// item's id is its position.
#[derive(Clone, Debug, PartialEq)]
pub struct Collection {
    items: Items,
    labels: Vec<u32>,
}

impl Collection {
    pub fn real(features: Tensor<f32>, labels: Vec<u32>) -> Result<Self> {
        if features.shape().len() != 2 || features.shape()[0] != labels.len() {
            return Err(Error::contract(
                "collection",
                format!("features {:?} for {} labels", features.shape(), labels.len()),
            ));
        }
        let norms = (0..labels.len()).map(|i| norm(features.row(i))).collect();
        Ok(Collection {
            items: Items::Real { features, norms },
            labels,
        })
    }

    pub fn binary(codes: Vec<BinaryCode>, labels: Vec<u32>) -> Result<Self> {
        if codes.len() != labels.len() {
            return Err(Error::contract("collection", format!("{} codes for {} labels", codes.len(), labels.len())));
        }
        if codes.iter().any(|c| c.len() != codes[0].len()) {
            return Err(Error::contract("collection", "codes have different lengths"));
        }
        Ok(Collection {
            items: Items::Binary(codes),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// The metric this representation supports.
    pub fn metric(&self) -> Metric {
        match self.items {
            Items::Real { .. } => Metric::Cosine,
            Items::Binary(_) => Metric::Hamming,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: usize,
    pub gallery_ids: Vec<usize>,
    pub distances: Vec<f64>,
    pub relevance: Vec<bool>,
}

impl RankedList {
    pub fn total_relevant(&self) -> usize {
        self.relevance.iter().filter(|&&r| r).count()
    }
}

/// Ranks the whole gallery for query `q`, nearest first, ties broken by
/// ascending gallery id. With `skip`, that gallery item is left out (the
/// query itself in photo-to-photo retrieval).
pub fn rank_excluding(
    queries: &Collection,
    q: usize,
    gallery: &Collection,
    metric: Metric,
    skip: Option<usize>,
) -> Result<RankedList> {
    if q >= queries.len() {
        return Err(Error::contract("rank", format!("query {q} out of range")));
    }
    if queries.metric() != metric || gallery.metric() != metric {
        return Err(Error::contract(
            "rank",
            format!(
                "metric {} needs {} queries and gallery, got {} and {}",
                metric.name(),
                metric.name(),
                queries.metric().name(),
                gallery.metric().name()
            ),
        ));
    }
    let ids = (0..gallery.len()).filter(|&g| Some(g) != skip);
    let mut scored: Vec<(f64, usize)> = match (&queries.items, &gallery.items) {
        (Items::Real { features: qf, norms: qn }, Items::Real { features: gf, norms: gn }) => {
            if qf.shape()[1] != gf.shape()[1] {
                return Err(Error::contract("rank", "query and gallery dimensions differ"));
            }
            if qn[q] == 0.0 {
                return Err(Error::contract("rank", format!("query {q} has a zero embedding")));
            }
            ids.map(|g| {
                if gn[g] == 0.0 {
                    return Err(Error::contract("rank", format!("gallery item {g} has a zero embedding")));
                }
                Ok((cosine_with_norms(qf.row(q), gf.row(g), qn[q], gn[g]), g))
            })
            .collect::<Result<_>>()?
        }
        (Items::Binary(qc), Items::Binary(gc)) => ids
            .map(|g| Ok((hamming_distance(&qc[q], &gc[g])? as f64, g)))
            .collect::<Result<_>>()?,
        _ => unreachable!("metric kinds checked above"),
    };
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let label = queries.labels[q];
    Ok(RankedList {
        query: q,
        relevance: scored.iter().map(|&(_, g)| gallery.labels[g] == label).collect(),
        gallery_ids: scored.iter().map(|&(_, g)| g).collect(),
        distances: scored.into_iter().map(|(d, _)| d).collect(),
    })
}

pub fn rank(queries: &Collection, q: usize, gallery: &Collection, metric: Metric) -> Result<RankedList> {
    rank_excluding(queries, q, gallery, metric, None)
}
