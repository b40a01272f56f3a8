use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::metrics::{average_precision_at_exact, average_precision_exact, precision_at_k_exact, to_f64};
use super::rank::{rank_excluding, Collection, Metric};
use crate::error::{Error, Result};

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "SAKE_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub metric: Metric,
    pub ks: Vec<usize>,
    /// Leave query `i` out of the gallery when queries and gallery are the
    /// same items (photo-to-photo retrieval).
    pub exclude_self: bool,
    pub threads: usize,
}

impl EvalOptions {
    pub fn new(metric: Metric, ks: Vec<usize>) -> Self {
        EvalOptions {
            metric,
            ks,
            exclude_self: false,
            threads: default_threads(),
        }
    }
}

/// Available cores, capped by `SAKE_THREADS` when it parses as a positive
/// integer.
pub fn default_threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cores.min(cap),
        _ => cores,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: u32,
    pub queries: usize,
    /// Mean AP@all of this class's queries; `None` without queries.
    pub map_all: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub queries: usize,
    /// Queries without any relevant gallery item, left out of every mean.
    pub excluded_queries: usize,
    pub map_all: f64,
    pub map_at_k: Vec<AtK>,
    pub prec_at_k: Vec<AtK>,
    pub per_class: Vec<ClassAp>,
}

/// Scores of one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub query: usize,
    pub class_id: u32,
    pub ap_all: f64,
    pub ap_at_k: Vec<f64>,
    pub prec_at_k: Vec<f64>,
}

fn check_zero_shot(what: &str, labels: &[u32], allowed: &[u32]) -> Result<()> {
    match labels.iter().position(|l| !allowed.contains(l)) {
        Some(i) => Err(Error::ZeroShot(format!(
            "{what} {i} has class {}, which is not a target class",
            labels[i]
        ))),
        None => Ok(()),
    }
}

struct Exact {
    query: usize,
    class_id: u32,
    ap_all: BigRational,
    ap_at_k: Vec<BigRational>,
    prec_at_k: Vec<BigRational>,
}

impl Exact {
    fn rounded(&self) -> QueryScores {
        QueryScores {
            query: self.query,
            class_id: self.class_id,
            ap_all: to_f64(&self.ap_all),
            ap_at_k: self.ap_at_k.iter().map(to_f64).collect(),
            prec_at_k: self.prec_at_k.iter().map(to_f64).collect(),
        }
    }
}

fn score_query(queries: &Collection, q: usize, gallery: &Collection, opts: &EvalOptions) -> Result<Option<Exact>> {
    let skip = opts.exclude_self.then_some(q);
    let ranked = rank_excluding(queries, q, gallery, opts.metric, skip)?;
    let r = ranked.total_relevant();
    let Some(ap_all) = average_precision_exact(&ranked.relevance, r) else {
        return Ok(None);
    };
    Ok(Some(Exact {
        query: q,
        class_id: queries.labels()[q],
        ap_all,
        ap_at_k: opts
            .ks
            .iter()
            .map(|&k| average_precision_at_exact(&ranked.relevance, r, k).unwrap_or_else(BigRational::zero))
            .collect(),
        prec_at_k: opts.ks.iter().map(|&k| precision_at_k_exact(&ranked.relevance, k)).collect(),
    }))
}

fn score_exact(queries: &Collection, gallery: &Collection, opts: &EvalOptions) -> Result<Vec<Option<Exact>>> {
    if opts.ks.contains(&0) {
        return Err(Error::contract("evaluate", "K must be at least 1"));
    }
    if opts.exclude_self && queries != gallery {
        return Err(Error::contract("evaluate", "exclude_self needs the gallery to be the query set"));
    }
    let threads = opts.threads.clamp(1, queries.len().max(1));
    let chunk = queries.len().div_ceil(threads).max(1);
    let indices: Vec<usize> = (0..queries.len()).collect();
    let parts: Vec<Result<Vec<Option<Exact>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|ids| s.spawn(move || ids.iter().map(|&q| score_query(queries, q, gallery, opts)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(queries.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Per-query scores in query order; `None` for queries with nothing
/// relevant. Work is split over `opts.threads` threads and the result does
/// not depend on the split.
pub fn score_queries(queries: &Collection, gallery: &Collection, opts: &EvalOptions) -> Result<Vec<Option<QueryScores>>> {
    Ok(score_exact(queries, gallery, opts)?
        .iter()
        .map(|s| s.as_ref().map(Exact::rounded))
        .collect())
}

/// Exact mean, rounded once.
fn mean<'a>(values: impl Iterator<Item = &'a BigRational>) -> f64 {
    let (sum, n) = values.fold((BigRational::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        to_f64(&(sum / BigInt::from(n)))
    }
}

/// Retrieval metrics for `queries` against `gallery`. Every item must belong
/// to `target_classes`.
pub fn evaluate(queries: &Collection, gallery: &Collection, target_classes: &[u32], opts: &EvalOptions) -> Result<MetricReport> {
    check_zero_shot("query", queries.labels(), target_classes)?;
    check_zero_shot("gallery item", gallery.labels(), target_classes)?;
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::contract("evaluate", "queries and gallery must be non-empty"));
    }
    let scores = score_exact(queries, gallery, opts)?;
    let kept: Vec<&Exact> = scores.iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::contract("evaluate", "no query has a relevant gallery item"));
    }
    let mut classes = target_classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let per_class = classes
        .iter()
        .map(|&c| {
            let aps: Vec<&BigRational> = kept.iter().filter(|s| s.class_id == c).map(|s| &s.ap_all).collect();
            ClassAp {
                class_id: c,
                queries: aps.len(),
                map_all: (!aps.is_empty()).then(|| mean(aps.into_iter())),
            }
        })
        .collect();
    Ok(MetricReport {
        metric: opts.metric,
        queries: queries.len(),
        excluded_queries: queries.len() - kept.len(),
        map_all: mean(kept.iter().map(|s| &s.ap_all)),
        map_at_k: opts
            .ks
            .iter()
            .enumerate()
            .map(|(i, &k)| AtK {
                k,
                value: mean(kept.iter().map(|s| &s.ap_at_k[i])),
            })
            .collect(),
        prec_at_k: opts
            .ks
            .iter()
            .enumerate()
            .map(|(i, &k)| AtK {
                k,
                value: mean(kept.iter().map(|s| &s.prec_at_k[i])),
            })
            .collect(),
        per_class,
    })
}

impl MetricReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {}", "metric", self.metric.name());
        let _ = writeln!(out, "{:<10} {} ({} excluded)", "queries", self.queries, self.excluded_queries);
        let _ = writeln!(out, "{:<10} {:.4}", "mAP@all", self.map_all);
        for (m, p) in self.map_at_k.iter().zip(&self.prec_at_k) {
            let _ = writeln!(out, "{:<10} {:.4}", format!("mAP@{}", m.k), m.value);
            let _ = writeln!(out, "{:<10} {:.4}", format!("Prec@{}", p.k), p.value);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>6} {:>8} {:>8}", "class", "queries", "mAP@all");
        for c in &self.per_class {
            let v = c.map_all.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{:>6} {:>8} {:>8}", c.class_id, c.queries, v);
        }
        out
    }
}
