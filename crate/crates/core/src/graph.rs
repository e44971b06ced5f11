//! Component–character knowledge graph.
//!
//! Nodes are components, characters and modern characters. Edges are
//! `CONTAINS` (character → component), `VARIANT_OF` (character ↔ character,
//! stored in both directions) and `MAPS_TO` (character → modern character).
//! The graph is immutable once built; adjacency indexes are derived from the
//! node and edge sets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{manifest_bytes, Corpus};
use crate::io::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("inconsistent corpus: {0}")]
    InconsistentCorpus(String),
    #[error("corrupt graph file: {0}")]
    CorruptFile(String),
    #[error("invalid graph: {0}")]
    Integrity(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Component,
    Character,
    ModernCharacter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: String,
    pub kind: NodeKind,
    pub label: String,
    #[serde(default)]
    pub explanation: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    Contains,
    VariantOf,
    MapsTo,
}

impl Relation {
    fn endpoint_kinds(self) -> (NodeKind, NodeKind) {
        match self {
            Relation::Contains => (NodeKind::Character, NodeKind::Component),
            Relation::VariantOf => (NodeKind::Character, NodeKind::Character),
            Relation::MapsTo => (NodeKind::Character, NodeKind::ModernCharacter),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub relation: Relation,
}

pub fn component_node_id(label: &str) -> String {
    format!("component:{label}")
}

pub fn character_node_id(character_id: &str) -> String {
    format!("character:{character_id}")
}

pub fn modern_node_id(form: &str) -> String {
    format!("modern:{form}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentExplanation {
    pub explanation: String,
    pub node_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainingCharacter {
    pub character_id: String,
    pub interpretation: String,
    pub co_components: Vec<String>,
}

#[derive(Debug, Clone, Default)]
struct Indexes {
    component_by_label: BTreeMap<String, String>,
    // component node id -> character ids
    containing: BTreeMap<String, BTreeSet<String>>,
    // character id -> component labels
    components_of: BTreeMap<String, BTreeSet<String>>,
    variants: BTreeMap<String, BTreeSet<String>>,
    modern: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, Node>,
    edges: BTreeSet<Edge>,
    source_split: String,
    idx: Indexes,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.edges == other.edges
            && self.source_split == other.source_split
    }
}

impl KnowledgeGraph {
    /// Assembles a graph from explicit parts, checking referential integrity
    /// and `VARIANT_OF` symmetry.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = Node>,
        edges: impl IntoIterator<Item = Edge>,
        source_split: impl Into<String>,
    ) -> Result<Self> {
        let mut node_map = BTreeMap::new();
        for n in nodes {
            let expected = match n.kind {
                NodeKind::Component => component_node_id(&n.label),
                NodeKind::Character => character_node_id(&n.label),
                NodeKind::ModernCharacter => modern_node_id(&n.label),
            };
            if n.node_id != expected {
                return Err(GraphError::Integrity(format!(
                    "node id {} does not match its kind and label (expected {expected})",
                    n.node_id
                )));
            }
            if let Some(prev) = node_map.insert(n.node_id.clone(), n) {
                return Err(GraphError::Integrity(format!(
                    "duplicate node id {}",
                    prev.node_id
                )));
            }
        }
        let mut edge_set = BTreeSet::new();
        for e in edges {
            let (fk, tk) = e.relation.endpoint_kinds();
            let ok = |id: &str, kind| node_map.get(id).is_some_and(|n: &Node| n.kind == kind);
            if !ok(&e.from, fk) || !ok(&e.to, tk) {
                return Err(GraphError::Integrity(format!(
                    "edge {} -[{:?}]-> {} has missing or mistyped endpoints",
                    e.from, e.relation, e.to
                )));
            }
            if !edge_set.insert(e.clone()) {
                return Err(GraphError::Integrity(format!(
                    "duplicate edge {} -[{:?}]-> {}",
                    e.from, e.relation, e.to
                )));
            }
        }
        for e in edge_set.iter().filter(|e| e.relation == Relation::VariantOf) {
            let rev = Edge {
                from: e.to.clone(),
                to: e.from.clone(),
                relation: Relation::VariantOf,
            };
            if !edge_set.contains(&rev) {
                return Err(GraphError::Integrity(format!(
                    "VARIANT_OF {} -> {} lacks its reverse",
                    e.from, e.to
                )));
            }
        }
        let mut g = KnowledgeGraph {
            nodes: node_map,
            edges: edge_set,
            source_split: source_split.into(),
            idx: Indexes::default(),
        };
        g.reindex();
        Ok(g)
    }

    fn reindex(&mut self) {
        let mut idx = Indexes::default();
        for n in self.nodes.values() {
            if n.kind == NodeKind::Component {
                idx.component_by_label.insert(n.label.clone(), n.node_id.clone());
                idx.containing.entry(n.node_id.clone()).or_default();
            }
        }
        for e in &self.edges {
            let from = &self.nodes[&e.from];
            let to = &self.nodes[&e.to];
            match e.relation {
                Relation::Contains => {
                    idx.containing
                        .entry(to.node_id.clone())
                        .or_default()
                        .insert(from.label.clone());
                    idx.components_of
                        .entry(from.label.clone())
                        .or_default()
                        .insert(to.label.clone());
                }
                Relation::VariantOf => {
                    idx.variants
                        .entry(from.label.clone())
                        .or_default()
                        .insert(to.label.clone());
                }
                Relation::MapsTo => {
                    idx.modern.insert(from.label.clone(), to.label.clone());
                }
            }
        }
        self.idx = idx;
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn node(&self, node_id: &str) -> Option<&Node> {
        self.nodes.get(node_id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn source_split(&self) -> &str {
        &self.source_split
    }

    pub fn has_character(&self, character_id: &str) -> bool {
        self.nodes.contains_key(&character_node_id(character_id))
    }

    fn character(&self, character_id: &str) -> Result<&Node> {
        self.nodes
            .get(&character_node_id(character_id))
            .ok_or_else(|| GraphError::NotFound(format!("character {character_id}")))
    }

    pub fn component_explanation(&self, label: &str) -> Result<ComponentExplanation> {
        let id = self
            .idx
            .component_by_label
            .get(label)
            .ok_or_else(|| GraphError::NotFound(format!("component {label}")))?;
        Ok(ComponentExplanation {
            explanation: self.nodes[id].explanation.clone(),
            node_id: id.clone(),
        })
    }

    /// Characters containing `label`, sorted by id. A known label with no
    /// containing characters yields an empty list.
    pub fn characters_by_component(&self, label: &str) -> Result<Vec<ContainingCharacter>> {
        let id = self
            .idx
            .component_by_label
            .get(label)
            .ok_or_else(|| GraphError::NotFound(format!("component {label}")))?;
        Ok(self.idx.containing[id]
            .iter()
            .map(|cid| {
                let node = &self.nodes[&character_node_id(cid)];
                ContainingCharacter {
                    character_id: cid.clone(),
                    interpretation: node.explanation.clone(),
                    co_components: self
                        .idx
                        .components_of
                        .get(cid)
                        .map(|s| s.iter().filter(|l| *l != label).cloned().collect())
                        .unwrap_or_default(),
                }
            })
            .collect())
    }

    /// Component labels of a character, sorted.
    pub fn components_of(&self, character_id: &str) -> Result<Vec<String>> {
        self.character(character_id)?;
        Ok(self
            .idx
            .components_of
            .get(character_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default())
    }

    pub fn variant_lookup(&self, character_id: &str) -> Result<Vec<String>> {
        self.character(character_id)?;
        Ok(self
            .idx
            .variants
            .get(character_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default())
    }

    pub fn modern_mapping(&self, character_id: &str) -> Result<Option<String>> {
        self.character(character_id)?;
        Ok(self.idx.modern.get(character_id).cloned())
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let mut line = |v: serde_json::Value| {
            serde_json::to_writer(&mut body, &v).expect("json values serialise");
            body.push(b'\n');
        };
        line(serde_json::json!({"t": "meta", "version": 1, "source_split": self.source_split}));
        for n in self.nodes.values() {
            let mut v = serde_json::to_value(n).expect("node serialises");
            v["t"] = "node".into();
            line(v);
        }
        for e in &self.edges {
            let mut v = serde_json::to_value(e).expect("edge serialises");
            v["t"] = "edge".into();
            line(v);
        }
        body
    }

    /// Serialises to line-delimited JSON ending in a SHA-256 checksum line.
    pub fn to_ldjson(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        let digest = sha256_hex(&out);
        serde_json::to_writer(&mut out, &serde_json::json!({"t": "checksum", "sha256": digest}))
            .expect("json values serialise");
        out.push(b'\n');
        out
    }

    pub fn from_ldjson(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: String| GraphError::CorruptFile(m);
        let trimmed = bytes.strip_suffix(b"\n").unwrap_or(bytes);
        let split = trimmed
            .iter()
            .rposition(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing checksum line".into()))?;
        let (body, last) = (&bytes[..=split], &trimmed[split + 1..]);
        let checksum: serde_json::Value =
            serde_json::from_slice(last).map_err(|_| corrupt("missing checksum line".into()))?;
        if checksum["t"] != "checksum" {
            return Err(corrupt("missing checksum line".into()));
        }
        if checksum["sha256"].as_str() != Some(sha256_hex(body).as_str()) {
            return Err(corrupt("checksum mismatch".into()));
        }

        let text = std::str::from_utf8(body).map_err(|_| corrupt("not UTF-8".into()))?;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut source_split = None;
        for (i, line) in text.lines().enumerate() {
            let mut v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
            let tag = v
                .as_object_mut()
                .and_then(|o| o.remove("t"))
                .and_then(|t| t.as_str().map(str::to_string));
            match tag.as_deref() {
                Some("meta") => {
                    source_split = v["source_split"].as_str().map(str::to_string);
                }
                Some("node") => nodes.push(
                    serde_json::from_value(v)
                        .map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?,
                ),
                Some("edge") => edges.push(
                    serde_json::from_value(v)
                        .map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?,
                ),
                _ => return Err(corrupt(format!("line {}: unknown record", i + 1))),
            }
        }
        let source_split = source_split.ok_or_else(|| corrupt("missing meta record".into()))?;
        KnowledgeGraph::from_parts(nodes, edges, source_split).map_err(|e| match e {
            GraphError::Integrity(m) => corrupt(m),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_ldjson())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        KnowledgeGraph::from_ldjson(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialised body (the value on the checksum line).
    pub fn checksum(&self) -> String {
        sha256_hex(&self.body_bytes())
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&self.to_ldjson())
    }
}

/// Builds the graph from the training side of a split.
///
/// Component nodes are created for every vocabulary label; an explanation
/// comes from `explanations`, else from the first non-empty component record
/// explanation, else stays empty.
pub fn build_graph(train: &Corpus, explanations: &BTreeMap<String, String>) -> Result<KnowledgeGraph> {
    let mut nodes = Vec::new();
    let mut edges = BTreeSet::new();

    for label in train.vocabulary.iter() {
        let explanation = explanations
            .get(label)
            .cloned()
            .or_else(|| {
                train
                    .components
                    .iter()
                    .find(|c| c.label == label && !c.explanation.is_empty())
                    .map(|c| c.explanation.clone())
            })
            .unwrap_or_default();
        nodes.push(Node {
            node_id: component_node_id(label),
            kind: NodeKind::Component,
            label: label.to_string(),
            explanation,
            attributes: BTreeMap::new(),
        });
    }

    let mut modern_forms = BTreeSet::new();
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for ch in &train.characters {
        let cid = character_node_id(&ch.character_id);
        let mut attributes = BTreeMap::new();
        attributes.insert("image_ref".to_string(), ch.image_ref.clone());
        if let Some(t) = ch.inscription_type {
            attributes.insert("inscription_type".to_string(), t.as_str().to_string());
        }
        nodes.push(Node {
            node_id: cid.clone(),
            kind: NodeKind::Character,
            label: ch.character_id.clone(),
            explanation: ch.interpretation.clone(),
            attributes,
        });
        for label in &ch.component_labels {
            if !train.vocabulary.contains(label) {
                return Err(GraphError::InconsistentCorpus(format!(
                    "character {} contains {label:?}, which is not in the vocabulary",
                    ch.character_id
                )));
            }
            edges.insert(Edge {
                from: cid.clone(),
                to: component_node_id(label),
                relation: Relation::Contains,
            });
        }
        if let Some(form) = &ch.modern_form {
            modern_forms.insert(form.as_str());
            edges.insert(Edge {
                from: cid.clone(),
                to: modern_node_id(form),
                relation: Relation::MapsTo,
            });
        }
        if let Some(g) = &ch.variant_group {
            groups.entry(g).or_default().push(&ch.character_id);
        }
    }
    for form in modern_forms {
        nodes.push(Node {
            node_id: modern_node_id(form),
            kind: NodeKind::ModernCharacter,
            label: form.to_string(),
            explanation: String::new(),
            attributes: BTreeMap::new(),
        });
    }
    for members in groups.values() {
        for a in members {
            for b in members {
                if a != b {
                    edges.insert(Edge {
                        from: character_node_id(a),
                        to: character_node_id(b),
                        relation: Relation::VariantOf,
                    });
                }
            }
        }
    }
    let source_split = format!("train-manifest-sha256:{}", sha256_hex(&manifest_bytes(train)));
    KnowledgeGraph::from_parts(nodes, edges, source_split)
}

/// Reads an explanations file: a JSON object mapping label to text.
pub fn load_explanations(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| GraphError::CorruptFile(format!("{}: {e}", path.display())))
}

/// The four lookups the retrieval cascade needs.
pub trait GraphTools {
    fn component_explanation(&self, label: &str) -> Result<ComponentExplanation>;
    fn characters_by_component(&self, label: &str) -> Result<Vec<ContainingCharacter>>;
    fn variant_lookup(&self, character_id: &str) -> Result<Vec<String>>;
    fn modern_mapping(&self, character_id: &str) -> Result<Option<String>>;
}

impl GraphTools for KnowledgeGraph {
    fn component_explanation(&self, label: &str) -> Result<ComponentExplanation> {
        KnowledgeGraph::component_explanation(self, label)
    }

    fn characters_by_component(&self, label: &str) -> Result<Vec<ContainingCharacter>> {
        KnowledgeGraph::characters_by_component(self, label)
    }

    fn variant_lookup(&self, character_id: &str) -> Result<Vec<String>> {
        KnowledgeGraph::variant_lookup(self, character_id)
    }

    fn modern_mapping(&self, character_id: &str) -> Result<Option<String>> {
        KnowledgeGraph::modern_mapping(self, character_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CharacterRecord, Vocabulary};

    fn ch(id: &str, labels: &[&str], group: Option<&str>, modern: Option<&str>) -> CharacterRecord {
        CharacterRecord {
            character_id: id.into(),
            image_ref: format!("{id}.png"),
            component_labels: labels.iter().map(|s| s.to_string()).collect(),
            interpretation: format!("meaning of {id}"),
            inscription_type: None,
            modern_form: modern.map(Into::into),
            variant_group: group.map(Into::into),
        }
    }

    fn corpus(chars: Vec<CharacterRecord>, vocab: &[&str]) -> Corpus {
        Corpus {
            characters: chars,
            components: vec![],
            vocabulary: Vocabulary::new(vocab.iter().copied()),
        }
    }

    #[test]
    fn one_character_two_components() {
        let g = build_graph(&corpus(vec![ch("c1", &["hand", "roof"], None, None)], &["hand", "roof"]), &BTreeMap::new()).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges().filter(|e| e.relation == Relation::Contains).count(), 2);
    }

    #[test]
    fn variant_groups_are_symmetric() {
        let g = build_graph(
            &corpus(vec![ch("a", &["x"], Some("g"), None), ch("b", &["x"], Some("g"), None), ch("c", &["x"], None, None)], &["x"]),
            &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(g.variant_lookup("a").unwrap(), ["b"]);
        assert_eq!(g.variant_lookup("b").unwrap(), ["a"]);
        assert!(g.variant_lookup("c").unwrap().is_empty());
        assert!(matches!(g.variant_lookup("zz"), Err(GraphError::NotFound(_))));
    }

    #[test]
    fn tools_and_mapping() {
        let mut ex = BTreeMap::new();
        ex.insert("tree".to_string(), "a standing tree".to_string());
        let g = build_graph(
            &corpus(
                vec![ch("xiu", &["person", "tree"], None, Some("休")), ch("lin", &["tree"], None, None)],
                &["person", "tree", "sun"],
            ),
            &ex,
        )
        .unwrap();
        assert_eq!(g.component_explanation("tree").unwrap().explanation, "a standing tree");
        assert_eq!(g.component_explanation("person").unwrap().explanation, "");
        assert!(matches!(g.component_explanation("moon"), Err(GraphError::NotFound(_))));
        let hits = g.characters_by_component("tree").unwrap();
        assert_eq!(hits.iter().map(|h| h.character_id.as_str()).collect::<Vec<_>>(), ["lin", "xiu"]);
        assert_eq!(hits[1].co_components, ["person"]);
        assert!(g.characters_by_component("sun").unwrap().is_empty());
        assert_eq!(g.modern_mapping("xiu").unwrap().as_deref(), Some("休"));
        assert_eq!(g.modern_mapping("lin").unwrap(), None);
    }

    #[test]
    fn label_outside_vocabulary_is_inconsistent() {
        let r = build_graph(&corpus(vec![ch("a", &["ghost"], None, None)], &["x"]), &BTreeMap::new());
        assert!(matches!(r, Err(GraphError::InconsistentCorpus(_))));
    }

    #[test]
    fn persistence_roundtrip_and_corruption() {
        let empty = KnowledgeGraph::from_parts([], [], "none").unwrap();
        assert_eq!(KnowledgeGraph::from_ldjson(&empty.to_ldjson()).unwrap(), empty);

        let g = build_graph(
            &corpus(vec![ch("a", &["x"], Some("g"), Some("木")), ch("b", &["x", "y"], Some("g"), None)], &["x", "y"]),
            &BTreeMap::new(),
        )
        .unwrap();
        let bytes = g.to_ldjson();
        assert_eq!(KnowledgeGraph::from_ldjson(&bytes).unwrap(), g);
        assert!(matches!(
            KnowledgeGraph::from_ldjson(&bytes[..bytes.len() / 2]),
            Err(GraphError::CorruptFile(_))
        ));
        let tampered = String::from_utf8(bytes).unwrap().replacen("木", "林", 1);
        assert!(matches!(
            KnowledgeGraph::from_ldjson(tampered.as_bytes()),
            Err(GraphError::CorruptFile(_))
        ));
    }

    #[test]
    fn from_parts_rejects_bad_edges() {
        let n = |label: &str, kind| Node {
            node_id: match kind {
                NodeKind::Character => character_node_id(label),
                _ => component_node_id(label),
            },
            kind,
            label: label.into(),
            explanation: String::new(),
            attributes: BTreeMap::new(),
        };
        let nodes = vec![n("c", NodeKind::Character), n("d", NodeKind::Character), n("k", NodeKind::Component)];
        let edge = |from: String, to: String, relation| Edge { from, to, relation };
        let ok = edge(character_node_id("c"), component_node_id("k"), Relation::Contains);
        assert!(KnowledgeGraph::from_parts(nodes.clone(), [ok], "s").is_ok());
        let wrong_kind = edge(component_node_id("k"), character_node_id("c"), Relation::Contains);
        assert!(matches!(
            KnowledgeGraph::from_parts(nodes.clone(), [wrong_kind], "s"),
            Err(GraphError::Integrity(_))
        ));
        let one_way = edge(character_node_id("c"), character_node_id("d"), Relation::VariantOf);
        assert!(matches!(
            KnowledgeGraph::from_parts(nodes.clone(), [one_way], "s"),
            Err(GraphError::Integrity(_))
        ));
        let mut bad_id = nodes[0].clone();
        bad_id.node_id = "c".into();
        assert!(KnowledgeGraph::from_parts([bad_id], [], "s").is_err());
    }
}
