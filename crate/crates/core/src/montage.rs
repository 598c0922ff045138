//! Electrode graph and the aunt relation that couples channel transitions.
//!
//! A montage is an ordered channel list plus a set of undirected edges. Two
//! channels sharing an edge are each other's *aunts*: a seizure in one at
//! frame `t - 1` raises the onset probability of the other at frame `t`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How two electrodes are related on the scalp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Neighbor,
    Contralateral,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Neighbor => "neighbor",
            EdgeKind::Contralateral => "contralateral",
        })
    }
}

impl FromStr for EdgeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "neighbor" => Ok(EdgeKind::Neighbor),
            "contralateral" => Ok(EdgeKind::Contralateral),
            other => Err(format!("unknown edge kind `{other}`")),
        }
    }
}

/// An undirected edge between two channel indices, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

/// Channel set plus symmetric coupling graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct MontageGraph {
    channels: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
}

/// The 19 electrodes of the 10/20 placement, in the default montage order.
pub const STANDARD_CHANNELS: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz",
    "P4", "T6", "O1", "O2",
];

const STANDARD_CONTRALATERAL: [(&str, &str); 8] = [
    ("Fp1", "Fp2"),
    ("F7", "F8"),
    ("F3", "F4"),
    ("T3", "T4"),
    ("C3", "C4"),
    ("T5", "T6"),
    ("P3", "P4"),
    ("O1", "O2"),
];

// Left hemisphere; the right side is the mirror image.
const STANDARD_LEFT_NEIGHBORS: [(&str, &str); 11] = [
    ("Fp1", "F7"),
    ("Fp1", "F3"),
    ("F7", "T3"),
    ("F3", "C3"),
    ("F3", "Fz"),
    ("T3", "T5"),
    ("C3", "P3"),
    ("C3", "Cz"),
    ("T5", "O1"),
    ("P3", "O1"),
    ("P3", "Pz"),
];

const STANDARD_MIDLINE: [(&str, &str); 2] = [("Fz", "Cz"), ("Cz", "Pz")];

fn mirror(name: &str) -> &str {
    match name {
        "Fp1" => "Fp2",
        "F7" => "F8",
        "F3" => "F4",
        "T3" => "T4",
        "C3" => "C4",
        "T5" => "T6",
        "P3" => "P4",
        "O1" => "O2",
        midline => midline,
    }
}

impl MontageGraph {
    /// Builds a graph, validating the channel and edge invariants.
    pub fn new<S: AsRef<str>>(
        channels: &[S],
        edges: &[(S, S, EdgeKind)],
    ) -> Result<Self> {
        let mut graph = Self::with_channels(channels.iter().map(|c| c.as_ref().to_string()))?;
        for (a, b, kind) in edges {
            graph.add_edge(a.as_ref(), b.as_ref(), *kind)?;
        }
        Ok(graph)
    }

    fn with_channels(channels: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut graph = MontageGraph {
            channels: Vec::new(),
            index: HashMap::new(),
            edges: Vec::new(),
            adjacency: Vec::new(),
        };
        for name in channels {
            if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == ',') {
                return Err(Error::InvalidInput(format!("invalid channel identifier `{name}`")));
            }
            if graph.index.contains_key(&name) {
                return Err(Error::InvalidInput(format!("duplicate channel `{name}`")));
            }
            graph.index.insert(name.clone(), graph.channels.len());
            graph.channels.push(name);
            graph.adjacency.push(Vec::new());
        }
        Ok(graph)
    }

    fn add_edge(&mut self, a: &str, b: &str, kind: EdgeKind) -> Result<()> {
        let ia = self.channel_index(a)?;
        let ib = self.channel_index(b)?;
        if ia == ib {
            return Err(Error::InvalidInput(format!("self-edge on `{a}`")));
        }
        if self.adjacency[ia].contains(&ib) {
            return Err(Error::InvalidInput(format!("duplicate edge `{a}` - `{b}`")));
        }
        self.edges.push(Edge {
            a: ia.min(ib),
            b: ia.max(ib),
            kind,
        });
        self.adjacency[ia].push(ib);
        self.adjacency[ib].push(ia);
        Ok(())
    }

    /// Graph without edges over the given channels.
    pub fn isolated<S: AsRef<str>>(channels: &[S]) -> Result<Self> {
        Self::with_channels(channels.iter().map(|c| c.as_ref().to_string()))
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Aunt indices of channel `i`, in edge insertion order.
    pub fn aunt_indices(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Names of every channel sharing an edge with `channel`.
    pub fn aunts(&self, channel: &str) -> Result<BTreeSet<String>> {
        let i = self.channel_index(channel)?;
        Ok(self.adjacency[i]
            .iter()
            .map(|&j| self.channels[j].clone())
            .collect())
    }

    /// Kind of the edge between two channels, if any.
    pub fn edge_kind(&self, a: &str, b: &str) -> Option<EdgeKind> {
        let ia = self.index.get(a)?;
        let ib = self.index.get(b)?;
        let (lo, hi) = ((*ia).min(*ib), (*ia).max(*ib));
        self.edges
            .iter()
            .find(|e| e.a == lo && e.b == hi)
            .map(|e| e.kind)
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Montage file text; `load_montage` of the result reproduces `self`.
    pub fn serialize(&self) -> String {
        let mut out = format!("channels: {}\n", self.channels.join(","));
        for e in &self.edges {
            out.push_str(&format!(
                "edge: {} {} {}\n",
                self.channels[e.a], self.channels[e.b], e.kind
            ));
        }
        out
    }

    fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges.iter().copied().collect()
    }
}

impl PartialEq for MontageGraph {
    fn eq(&self, other: &Self) -> bool {
        self.channels == other.channels && self.edge_set() == other.edge_set()
    }
}

impl Eq for MontageGraph {}

/// The built-in 19-channel 10/20 montage with contralateral pairs and
/// within-hemisphere and midline neighbor links.
pub fn build_standard_montage() -> MontageGraph {
    let mut edges: Vec<(&str, &str, EdgeKind)> = STANDARD_CONTRALATERAL
        .iter()
        .map(|&(a, b)| (a, b, EdgeKind::Contralateral))
        .collect();
    for &(a, b) in &STANDARD_LEFT_NEIGHBORS {
        edges.push((a, b, EdgeKind::Neighbor));
        edges.push((mirror(a), mirror(b), EdgeKind::Neighbor));
    }
    edges.extend(
        STANDARD_MIDLINE
            .iter()
            .map(|&(a, b)| (a, b, EdgeKind::Neighbor)),
    );
    MontageGraph::new(&STANDARD_CHANNELS, &edges).expect("standard montage is valid")
}

/// Parses montage file text.
///
/// The first non-comment line is `channels: a,b,c`; every further line is
/// `edge: <id> <id> <neighbor|contralateral>`. Lines starting with `#` and
/// blank lines are ignored. Errors carry the 1-based line number.
pub fn load_montage(text: &str) -> Result<MontageGraph> {
    let mut graph: Option<MontageGraph> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(line_no, format!("expected `key: value`, got `{line}`")))?;
        match (key.trim(), graph.as_mut()) {
            ("channels", None) => {
                let names = value.split(',').map(|s| s.trim().to_string());
                graph = Some(
                    MontageGraph::with_channels(names)
                        .map_err(|e| Error::parse(line_no, e.to_string()))?,
                );
            }
            ("channels", Some(_)) => {
                return Err(Error::parse(line_no, "duplicate `channels:` line"));
            }
            ("edge", Some(g)) => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [a, b, kind] = parts[..] else {
                    return Err(Error::parse(
                        line_no,
                        "edge line needs `<id> <id> <neighbor|contralateral>`",
                    ));
                };
                let kind: EdgeKind = kind.parse().map_err(|e: String| Error::parse(line_no, e))?;
                g.add_edge(a, b, kind)
                    .map_err(|e| Error::parse(line_no, e.to_string()))?;
            }
            ("edge", None) => {
                return Err(Error::parse(line_no, "`edge:` before `channels:`"));
            }
            (other, _) => {
                return Err(Error::parse(line_no, format!("unknown key `{other}`")));
            }
        }
    }
    graph.ok_or_else(|| Error::parse(1, "missing `channels:` line"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_montage_shape() {
        let g = build_standard_montage();
        assert_eq!(g.len(), 19);
        assert_eq!(g.edges().len(), 32);
        assert_eq!(g.edge_kind("Fp1", "Fp2"), Some(EdgeKind::Contralateral));
        assert_eq!(g.edge_kind("Cz", "Cz"), None);
        assert!(g.max_degree() <= 6);
    }

    #[test]
    fn midline_has_no_contralateral_partner() {
        let g = build_standard_montage();
        for mid in ["Fz", "Cz", "Pz"] {
            for aunt in g.aunts(mid).unwrap() {
                assert_eq!(g.edge_kind(mid, &aunt), Some(EdgeKind::Neighbor));
            }
        }
    }

    #[test]
    fn aunts_of_fp1() {
        let g = build_standard_montage();
        let au = g.aunts("Fp1").unwrap();
        assert!(au.contains("Fp2"));
        assert_eq!(
            au,
            ["F3", "F7", "Fp2"].iter().map(|s| s.to_string()).collect()
        );
    }

    #[test]
    fn aunts_never_contain_self() {
        let g = build_standard_montage();
        for c in g.channels() {
            assert!(!g.aunts(c).unwrap().contains(c));
        }
    }

    #[test]
    fn aunts_unknown_channel() {
        let g = build_standard_montage();
        match g.aunts("Xx9") {
            Err(Error::UnknownChannel(name)) => assert_eq!(name, "Xx9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edgeless_graph_has_no_aunts() {
        let g = MontageGraph::isolated(&["Cz", "Pz"]).unwrap();
        assert!(g.aunts("Cz").unwrap().is_empty());
    }

    #[test]
    fn load_small_file() {
        let g = load_montage("channels: A,B\nedge: A B neighbor").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edge_kind("B", "A"), Some(EdgeKind::Neighbor));
    }

    #[test]
    fn load_rejects_self_edge() {
        let err = load_montage("channels: A\nedge: A A neighbor").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("self-edge"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_inputs() {
        let cases = [
            ("channels: A,A", 1),
            ("channels: A,B\nedge: A C neighbor", 2),
            ("# header\nchannels: A,B\nedge: A B sideways", 3),
            ("channels: A,B\nedge: A", 2),
            ("edge: A B neighbor", 1),
            ("channels: A,B\nwat", 2),
            ("channels: A,B\nedge: A B neighbor\nedge: B A contralateral", 3),
        ];
        for (text, expected_line) in cases {
            match load_montage(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, expected_line, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let g = load_montage("# montage\n\nchannels: A, B ,C\n# edges\nedge: A C contralateral\n")
            .unwrap();
        assert_eq!(g.channels(), &["A", "B", "C"]);
        assert_eq!(g.edge_kind("A", "C"), Some(EdgeKind::Contralateral));
    }

    #[test]
    fn standard_round_trip() {
        let g = build_standard_montage();
        assert_eq!(load_montage(&g.serialize()).unwrap(), g);
    }
}
