use super::taxonomy::{ClassMap, NodeId, Taxonomy};
use crate::error::{Error, Result};

/// `1 / (1 + d)` where `d` is the edge count of the tree path.
pub fn path_similarity(tax: &Taxonomy, u: NodeId, v: NodeId) -> Result<f64> {
    Ok(1.0 / (1.0 + tax.distance(u, v)? as f64))
}

/// Leacock–Chodorow similarity `-ln((d + 1) / (2 D))`, with `d` in edges and
/// the taxonomy depth `D` in nodes.
pub fn lch_similarity(tax: &Taxonomy, u: NodeId, v: NodeId) -> Result<f64> {
    let d = tax.distance(u, v)? as f64;
    let depth = tax.depth() as f64;
    Ok(-((d + 1.0) / (2.0 * depth)).ln())
}

/// Class-level path similarity between source classes (rows) and original
/// classes (columns). Built once before training and never mutated.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    source_classes: Vec<u32>,
    original_classes: Vec<u32>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn build(tax: &Taxonomy, classes: &ClassMap, source: &[u32], original: &[u32]) -> Result<Self> {
        let src_nodes = source.iter().map(|&c| classes.node(c)).collect::<Result<Vec<_>>>()?;
        let orig_nodes = original.iter().map(|&c| classes.node(c)).collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(source.len() * original.len());
        for &s in &src_nodes {
            for &o in &orig_nodes {
                values.push(path_similarity(tax, s, o)?);
            }
        }
        Ok(SimilarityMatrix {
            source_classes: source.to_vec(),
            original_classes: original.to_vec(),
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.source_classes.len()
    }

    pub fn cols(&self) -> usize {
        self.original_classes.len()
    }

    pub fn source_classes(&self) -> &[u32] {
        &self.source_classes
    }

    pub fn original_classes(&self) -> &[u32] {
        &self.original_classes
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row_at(&self, row: usize) -> &[f64] {
        let w = self.cols();
        &self.values[row * w..(row + 1) * w]
    }

    /// The row `a_k` for source class id `class`.
    pub fn row(&self, class: u32) -> Result<&[f64]> {
        let idx = self
            .source_classes
            .iter()
            .position(|&c| c == class)
            .ok_or_else(|| Error::Lookup {
                kind: "source class",
                name: class.to_string(),
            })?;
        Ok(self.row_at(idx))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;

    /// Breadth-first search over the undirected tree, independent of the
    /// ancestor walk in `Taxonomy::distance`.
    fn bfs_distance(tax: &Taxonomy, u: NodeId, v: NodeId) -> usize {
        let mut dist = vec![usize::MAX; tax.len()];
        let mut queue = VecDeque::from([u]);
        dist[u.0] = 0;
        while let Some(n) = queue.pop_front() {
            let mut nbrs: Vec<NodeId> = tax.children(n).to_vec();
            nbrs.extend(tax.parent(n));
            for m in nbrs {
                if dist[m.0] == usize::MAX {
                    dist[m.0] = dist[n.0] + 1;
                    queue.push_back(m);
                }
            }
        }
        dist[v.0]
    }

    #[test]
    fn path_similarity_fixtures() {
        let t = Taxonomy::toy();
        let circle = t.node("circle").unwrap();
        let oval = t.node("oval").unwrap();
        let ellipse = t.node("ellipse").unwrap();
        assert_eq!(path_similarity(&t, circle, circle).unwrap(), 1.0);
        assert_eq!(bfs_distance(&t, ellipse, circle), 1);
        assert_eq!(path_similarity(&t, ellipse, circle).unwrap(), 0.5);
        assert_eq!(bfs_distance(&t, circle, oval), 2);
        assert!((path_similarity(&t, circle, oval).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lch_fixtures() {
        let t = Taxonomy::toy();
        assert_eq!(t.depth(), 4);
        let circle = t.node("circle").unwrap();
        let ellipse = t.node("ellipse").unwrap();
        let same = lch_similarity(&t, circle, circle).unwrap();
        assert!((same - 2.0794415416798357).abs() < 1e-12);
        assert!((same - (8.0f64).ln()).abs() < 1e-15);
        let pc = lch_similarity(&t, ellipse, circle).unwrap();
        assert!((pc - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn distances_match_bfs_on_all_pairs() {
        let t = Taxonomy::toy();
        for u in t.nodes() {
            for v in t.nodes() {
                assert_eq!(t.distance(u, v).unwrap(), bfs_distance(&t, u, v));
            }
        }
    }

    #[test]
    fn similarities_are_symmetric_and_monotone() {
        let t = Taxonomy::toy();
        let nodes: Vec<NodeId> = t.nodes().collect();
        for &u in &nodes {
            for &v in &nodes {
                let p = path_similarity(&t, u, v).unwrap();
                assert_eq!(p, path_similarity(&t, v, u).unwrap());
                assert_eq!(lch_similarity(&t, u, v).unwrap(), lch_similarity(&t, v, u).unwrap());
                assert_eq!(p == 1.0, u == v);
                assert!(p > 0.0 && p <= 1.0);
            }
        }
        let root = t.root();
        let mut by_distance: Vec<(usize, f64, f64)> = nodes
            .iter()
            .map(|&n| {
                (
                    t.distance(root, n).unwrap(),
                    path_similarity(&t, root, n).unwrap(),
                    lch_similarity(&t, root, n).unwrap(),
                )
            })
            .collect();
        by_distance.sort_by_key(|x| x.0);
        for w in by_distance.windows(2) {
            if w[1].0 > w[0].0 {
                assert!(w[1].1 < w[0].1);
                assert!(w[1].2 < w[0].2);
            }
        }
    }

    #[test]
    fn small_matrix_matches_bfs_oracle() {
        let t = Taxonomy::toy();
        let cm = ClassMap::toy(&t);
        let source = [3, 14, 30];
        let original = [0, 1, 10, 20];
        let a = SimilarityMatrix::build(&t, &cm, &source, &original).unwrap();
        assert_eq!((a.rows(), a.cols()), (3, 4));
        for (r, &s) in source.iter().enumerate() {
            for (c, &o) in original.iter().enumerate() {
                let d = bfs_distance(&t, cm.node(s).unwrap(), cm.node(o).unwrap());
                assert_eq!(a.get(r, c), 1.0 / (1.0 + d as f64));
            }
        }
        assert_eq!(a.row(14).unwrap(), a.row_at(1));
        assert!(a.row(99).is_err());
    }

    #[test]
    fn co_located_classes_have_unit_similarity() {
        let t = Taxonomy::toy();
        let circle = t.node("circle").unwrap();
        let oval = t.node("oval").unwrap();
        let cm = ClassMap::from_pairs([(100, circle), (0, circle), (1, oval)]);
        let a = SimilarityMatrix::build(&t, &cm, &[100], &[0, 1]).unwrap();
        assert_eq!(a.row(100).unwrap(), &[1.0, 1.0 / 3.0]);
        assert!(SimilarityMatrix::build(&t, &cm, &[7], &[0]).is_err());
    }
}
