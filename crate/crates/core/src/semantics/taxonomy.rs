use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// The shipped toy taxonomy: 40 leaf shapes under 8 families under 4
/// categories.
pub const TOY_TAXONOMY: &str = include_str!("../../data/taxonomy.tsv");
/// Class id to leaf-name mapping for [`TOY_TAXONOMY`].
pub const TOY_CLASSES: &str = include_str!("../../data/classes.tsv");

/// Index of a concept in a [`Taxonomy`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// A rooted tree of named concepts.
#[derive(Clone, Debug)]
pub struct Taxonomy {
    names: Vec<String>,
    index: HashMap<String, NodeId>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    /// Depth of each node in nodes; the root has depth 1.
    depth: Vec<usize>,
    root: NodeId,
    max_depth: usize,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
}

fn two_fields(line_no: usize, line: &str) -> Result<(&str, &str)> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    match fields.as_slice() {
        [a, b] if !a.is_empty() && !b.is_empty() => Ok((a, b)),
        _ => Err(Error::Parse {
            line: line_no,
            detail: format!("expected two tab-separated fields, got `{line}`"),
        }),
    }
}

impl Taxonomy {
    /// Parses `parent<TAB>child` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, NodeId> = HashMap::new();
        let mut parent: Vec<Option<NodeId>> = Vec::new();
        let mut parent_line: Vec<usize> = Vec::new();
        let mut first_line: Vec<usize> = Vec::new();

        let mut saw_edge = false;
        for (line_no, line) in content_lines(text) {
            let (p, c) = two_fields(line_no, line)?;
            if p == c {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("cycle: `{c}` is its own parent"),
                });
            }
            let mut intern = |name: &str| {
                *index.entry(name.to_string()).or_insert_with(|| {
                    names.push(name.to_string());
                    parent.push(None);
                    parent_line.push(0);
                    first_line.push(line_no);
                    NodeId(names.len() - 1)
                })
            };
            let pid = intern(p);
            let cid = intern(c);

            if let Some(existing) = parent[cid.0] {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!(
                        "duplicate child `{c}` (already under `{}` from line {})",
                        names[existing.0], parent_line[cid.0]
                    ),
                });
            }
            parent[cid.0] = Some(pid);
            parent_line[cid.0] = line_no;
            saw_edge = true;
        }
        if !saw_edge {
            return Err(Error::Parse {
                line: 0,
                detail: "taxonomy has no edges".into(),
            });
        }

        // Any parent chain that revisits a node is a cycle.
        for start in 0..names.len() {
            let mut seen = vec![false; names.len()];
            let mut cur = start;
            while let Some(p) = parent[cur] {
                if seen[cur] {
                    return Err(Error::Parse {
                        line: parent_line[cur],
                        detail: format!("cycle through `{}`", names[cur]),
                    });
                }
                seen[cur] = true;
                cur = p.0;
            }
        }

        let roots: Vec<usize> = (0..names.len()).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            let listed: Vec<&str> = roots.iter().map(|&i| names[i].as_str()).collect();
            return Err(Error::Parse {
                line: roots.get(1).map_or(0, |&r| first_line[r]),
                detail: format!("expected exactly one root, found {}: {listed:?}", roots.len()),
            });
        }
        let root = NodeId(roots[0]);

        let mut children = vec![Vec::new(); names.len()];
        for (c, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[p.0].push(NodeId(c));
            }
        }
        let mut depth = vec![0usize; names.len()];
        let mut stack = vec![(root, 1usize)];
        while let Some((n, d)) = stack.pop() {
            depth[n.0] = d;
            stack.extend(children[n.0].iter().map(|&c| (c, d + 1)));
        }
        let max_depth = depth.iter().copied().max().unwrap_or(1);

        Ok(Taxonomy {
            names,
            index,
            parent,
            children,
            depth,
            root,
            max_depth,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn toy() -> Self {
        Self::parse(TOY_TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Maximum node depth, counted in nodes (a lone root has depth 1).
    pub fn depth(&self) -> usize {
        self.max_depth
    }

    pub fn node_depth(&self, n: NodeId) -> usize {
        self.depth[n.0]
    }

    pub fn name(&self, n: NodeId) -> &str {
        &self.names[n.0]
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent[n.0]
    }

    pub fn children(&self, n: NodeId) -> &[NodeId] {
        &self.children[n.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.names.len()).map(NodeId)
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|n| self.children[n.0].is_empty())
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.index.get(name).copied().ok_or_else(|| Error::Lookup {
            kind: "taxonomy node",
            name: name.to_string(),
        })
    }

    fn check(&self, n: NodeId) -> Result<()> {
        if n.0 < self.names.len() {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "taxonomy node",
                name: format!("#{}", n.0),
            })
        }
    }

    /// Number of edges on the (unique) tree path between `u` and `v`.
    pub fn distance(&self, u: NodeId, v: NodeId) -> Result<usize> {
        self.check(u)?;
        self.check(v)?;
        let (mut a, mut b) = (u, v);
        let mut d = 0;
        while self.depth[a.0] > self.depth[b.0] {
            a = self.parent[a.0].expect("non-root");
            d += 1;
        }
        while self.depth[b.0] > self.depth[a.0] {
            b = self.parent[b.0].expect("non-root");
            d += 1;
        }
        while a != b {
            a = self.parent[a.0].expect("non-root");
            b = self.parent[b.0].expect("non-root");
            d += 2;
        }
        Ok(d)
    }
}

/// Mapping from dataset class ids to taxonomy nodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassMap {
    nodes: BTreeMap<u32, NodeId>,
}

impl ClassMap {
    /// Parses `class_id<TAB>node_name` lines against `tax`.
    pub fn parse(text: &str, tax: &Taxonomy) -> Result<Self> {
        let mut nodes = BTreeMap::new();
        for (line_no, line) in content_lines(text) {
            let (id, name) = two_fields(line_no, line)?;
            let id: u32 = id.parse().map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("class id `{id}` is not a non-negative integer"),
            })?;
            let node = tax.node(name).map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("dangling reference to unknown node `{name}`"),
            })?;
            if nodes.insert(id, node).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("class id {id} mapped twice"),
                });
            }
        }
        Ok(ClassMap { nodes })
    }

    pub fn load(path: &Path, tax: &Taxonomy) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, tax)
    }

    pub fn toy(tax: &Taxonomy) -> Self {
        Self::parse(TOY_CLASSES, tax).expect("shipped class map is valid")
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, NodeId)>) -> Self {
        ClassMap {
            nodes: pairs.into_iter().collect(),
        }
    }

    pub fn node(&self, class: u32) -> Result<NodeId> {
        self.nodes.get(&class).copied().ok_or_else(|| Error::Lookup {
            kind: "class",
            name: class.to_string(),
        })
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_err_line(text: &str) -> (usize, String) {
        match Taxonomy::parse(text) {
            Err(Error::Parse { line, detail }) => (line, detail),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_tree() {
        let t = Taxonomy::parse("entity\tanimal\nentity\tvehicle\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.name(t.root()), "entity");
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn two_node_cycle() {
        let (_, detail) = parse_err_line("a\tb\nb\ta\n");
        assert!(detail.contains("cycle"), "{detail}");
    }

    #[test]
    fn cycle_hanging_off_a_rooted_tree() {
        let (line, detail) = parse_err_line("r\tx\na\tb\nb\tc\nc\ta\n");
        assert!(detail.contains("cycle"), "{detail}");
        assert!((2..=4).contains(&line));
    }

    #[test]
    fn multiple_roots() {
        let (_, detail) = parse_err_line("a\tb\nc\td\n");
        assert!(detail.contains("one root"), "{detail}");
    }

    #[test]
    fn duplicate_child_reports_line() {
        let (line, detail) = parse_err_line("# header\nr\ta\nr\tb\nb\ta\n");
        assert_eq!(line, 4);
        assert!(detail.contains("duplicate child"));
    }

    #[test]
    fn malformed_line() {
        let (line, _) = parse_err_line("r\ta\nonly-one-field\n");
        assert_eq!(line, 2);
    }

    #[test]
    fn toy_taxonomy_shape() {
        let t = Taxonomy::toy();
        assert_eq!(t.depth(), 4);
        assert_eq!(t.leaves().count(), 40);
        let families = t.nodes().filter(|&n| t.node_depth(n) == 3).count();
        assert_eq!(families, 8);
        assert!(t.leaves().all(|l| t.node_depth(l) == 4));
        let classes = ClassMap::toy(&t);
        assert_eq!(classes.len(), 40);
    }

    #[test]
    fn class_map_rejects_dangling_node() {
        let t = Taxonomy::parse("r\ta\n").unwrap();
        match ClassMap::parse("0\ta\n1\tzzz\n", &t) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_node_lookup() {
        let t = Taxonomy::toy();
        assert!(matches!(t.node("unicorn"), Err(Error::Lookup { .. })));
        assert!(t.distance(NodeId(0), NodeId(999)).is_err());
    }
}
