use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mn_autodiff::Matrix;
use serde::{Deserialize, Serialize};

use super::embeddings::{read_matrix_bin, write_matrix_bin};
use super::{io_err, IoError};
use crate::graph::{EdgeType, GraphSpec, HeteroGraph, NodeType};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaNode {
    name: String,
    count: usize,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaEdge {
    name: String,
    src: String,
    dst: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Schema {
    node_types: Vec<SchemaNode>,
    edge_types: Vec<SchemaEdge>,
}

/// Class ids for every node of one type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    pub node_type: usize,
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

impl Labels {
    /// Checks that ids are contiguous from 0 and returns the labels.
    pub fn new(node_type: usize, classes: Vec<usize>) -> Result<Self, String> {
        let num_classes = classes.iter().max().map_or(0, |m| m + 1);
        let mut present = vec![false; num_classes];
        for &c in &classes {
            present[c] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(format!("class ids are not contiguous, {missing} is unused"));
        }
        Ok(Self {
            node_type,
            classes,
            num_classes,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: HeteroGraph,
    pub labels: Option<Labels>,
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_features(path: &Path, text: &str, t: &NodeType) -> Result<Matrix, IoError> {
    let mut data = Vec::with_capacity(t.count * t.feature_dim);
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| IoError::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg,
        };
        let before = data.len();
        for field in line.split('\t') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(format!("non-numeric feature `{field}`")))?;
            data.push(v);
        }
        if data.len() - before != t.feature_dim {
            return Err(err(format!(
                "expected {} columns, found {}",
                t.feature_dim,
                data.len() - before
            )));
        }
        rows += 1;
        if rows > t.count {
            return Err(err(format!("more than the declared {} rows", t.count)));
        }
    }
    if rows != t.count {
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            msg: format!("schema declares {} rows, file has {rows}", t.count),
        });
    }
    Ok(Matrix::from_vec(rows, t.feature_dim, data).expect("sized"))
}

fn parse_pairs(path: &Path, text: &str, limits: (usize, usize), names: (&str, &str)) -> Result<Vec<(usize, usize)>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| IoError::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected 2 columns, found {}", fields.len())));
        }
        let mut pair = [0usize; 2];
        for (k, f) in fields.iter().enumerate() {
            pair[k] = f.parse().map_err(|_| err(format!("bad integer `{f}`")))?;
        }
        if pair[0] >= limits.0 {
            return Err(err(format!(
                "{} {} out of range, only {} exist",
                names.0, pair[0], limits.0
            )));
        }
        if pair[1] >= limits.1 {
            return Err(err(format!(
                "{} {} out of range, only {} exist",
                names.1, pair[1], limits.1
            )));
        }
        out.push((pair[0], pair[1]));
    }
    Ok(out)
}

/// Reads a `node<TAB>class` file for `node_type`. Each of its `count` nodes
/// must be labelled exactly once.
pub fn read_labels(path: &Path, node_type: usize, count: usize) -> Result<Labels, IoError> {
    let pairs = parse_pairs(path, &read_text(path)?, (count, usize::MAX), ("node", "class"))?;
    let mut classes = vec![usize::MAX; count];
    for (node, class) in pairs {
        if classes[node] != usize::MAX {
            return Err(IoError::Invalid {
                path: path.to_path_buf(),
                msg: format!("node {node} labelled twice"),
            });
        }
        classes[node] = class;
    }
    if let Some(node) = classes.iter().position(|&c| c == usize::MAX) {
        return Err(IoError::Invalid {
            path: path.to_path_buf(),
            msg: format!("node {node} has no label"),
        });
    }
    Labels::new(node_type, classes).map_err(|msg| IoError::Invalid {
        path: path.to_path_buf(),
        msg,
    })
}

/// Reads a graph directory: `schema.json`, `features_<type>.tsv` (or
/// `.bin`), `edges_<edge>.tsv` and at most one `labels_<type>.tsv`.
pub fn load_graph(dir: &Path) -> Result<Dataset, IoError> {
    let schema_path = dir.join("schema.json");
    let schema: Schema = serde_json::from_str(&read_text(&schema_path)?).map_err(|e| IoError::Parse {
        path: schema_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let node_types: Vec<NodeType> = schema
        .node_types
        .iter()
        .map(|n| NodeType {
            name: n.name.clone(),
            count: n.count,
            feature_dim: n.feature_dim,
        })
        .collect();
    let type_index = |name: &str| {
        node_types.iter().position(|t| t.name == name).ok_or_else(|| IoError::Invalid {
            path: schema_path.clone(),
            msg: format!("unknown node type `{name}`"),
        })
    };
    let edge_types = schema
        .edge_types
        .iter()
        .map(|e| {
            Ok(EdgeType {
                name: e.name.clone(),
                src: type_index(&e.src)?,
                dst: type_index(&e.dst)?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;

    let mut features = Vec::with_capacity(node_types.len());
    for t in &node_types {
        let bin = dir.join(format!("features_{}.bin", t.name));
        let m = if bin.exists() {
            let m = read_matrix_bin(&fs::read(&bin).map_err(io_err(&bin))?, &bin)?;
            if m.shape() != (t.count, t.feature_dim) {
                return Err(IoError::Invalid {
                    path: bin,
                    msg: format!(
                        "schema declares {}x{}, file holds {}x{}",
                        t.count,
                        t.feature_dim,
                        m.rows(),
                        m.cols()
                    ),
                });
            }
            m
        } else {
            let tsv = dir.join(format!("features_{}.tsv", t.name));
            parse_features(&tsv, &read_text(&tsv)?, t)?
        };
        features.push(m);
    }

    let mut edges = Vec::with_capacity(edge_types.len());
    for e in &edge_types {
        let path = dir.join(format!("edges_{}.tsv", e.name));
        let (s, d) = (&node_types[e.src], &node_types[e.dst]);
        edges.push(parse_pairs(
            &path,
            &read_text(&path)?,
            (s.count, d.count),
            (&format!("src node of type `{}`", s.name), &format!("dst node of type `{}`", d.name)),
        )?);
    }

    let mut labels = None;
    for (ty, t) in node_types.iter().enumerate() {
        let path = dir.join(format!("labels_{}.tsv", t.name));
        if !path.exists() {
            continue;
        }
        if labels.is_some() {
            return Err(IoError::Invalid {
                path,
                msg: "only one node type may carry labels".into(),
            });
        }
        labels = Some(read_labels(&path, ty, t.count)?);
    }

    let graph = HeteroGraph::build(GraphSpec {
        node_types,
        features,
        edge_types,
        edges,
    })?;
    Ok(Dataset { graph, labels })
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `data` as a graph directory, creating `dir` if needed. Features are
/// written as TSV in shortest round-trip notation, or as binary when
/// `binary_features` is set.
pub fn save_graph(data: &Dataset, dir: &Path, binary_features: bool) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let g = &data.graph;
    let schema = Schema {
        node_types: g
            .node_types()
            .iter()
            .map(|t| SchemaNode {
                name: t.name.clone(),
                count: t.count,
                feature_dim: t.feature_dim,
            })
            .collect(),
        edge_types: g
            .edge_types()
            .iter()
            .map(|e| SchemaEdge {
                name: e.name.clone(),
                src: g.node_types()[e.src].name.clone(),
                dst: g.node_types()[e.dst].name.clone(),
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&schema).expect("schema serializes");
    json.push('\n');
    write_text(&dir.join("schema.json"), &json)?;

    for (ty, t) in g.node_types().iter().enumerate() {
        let f = g.features(ty);
        if binary_features {
            let path = dir.join(format!("features_{}.bin", t.name));
            fs::write(&path, write_matrix_bin(f)).map_err(io_err(&path))?;
        } else {
            let mut text = String::new();
            for i in 0..f.rows() {
                for (c, v) in f.row(i).iter().enumerate() {
                    if c > 0 {
                        text.push('\t');
                    }
                    let _ = write!(text, "{v}");
                }
                text.push('\n');
            }
            write_text(&dir.join(format!("features_{}.tsv", t.name)), &text)?;
        }
    }
    for (et, e) in g.edge_types().iter().enumerate() {
        let mut text = String::new();
        for (s, d) in g.adjacency(et).edges() {
            let _ = writeln!(text, "{s}\t{d}");
        }
        write_text(&dir.join(format!("edges_{}.tsv", e.name)), &text)?;
    }
    if let Some(l) = &data.labels {
        let mut text = String::new();
        for (i, c) in l.classes.iter().enumerate() {
            let _ = writeln!(text, "{i}\t{c}");
        }
        let name = &g.node_types()[l.node_type].name;
        write_text(&dir.join(format!("labels_{name}.tsv")), &text)?;
    }
    Ok(())
}
