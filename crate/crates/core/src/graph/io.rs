//! Dataset readers and writers.
//!
//! Three layouts are supported:
//! * citation networks as a `.content` file (`id feat... class`) plus a
//!   `.cites` file (`id id`), whitespace separated;
//! * the graph-benchmark directory layout (`<name>_A.txt`,
//!   `<name>_graph_indicator.txt`, `<name>_graph_labels.txt`, optional
//!   `<name>_node_labels.txt` / `<name>_node_attributes.txt`), comma separated
//!   and 1-indexed;
//! * a native JSON node dataset.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, GraphDataset, GraphError, LoadMeta, NodeDataset, Result, SplitMasks};
use crate::matrix::Matrix;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| GraphError::Io { path: path.display().to_string(), source })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Loads a citation network from `.content` / `.cites` files.
///
/// Nodes are indexed in first-seen order of the content file and class
/// strings are mapped to ids in sorted order. Cites lines naming unknown
/// ids are skipped and counted in [`LoadMeta::skipped_edge_lines`].
pub fn load_content_cites(content_path: &Path, cites_path: &Path) -> Result<NodeDataset> {
    let content = read(content_path)?;
    let mut node_ids = Vec::new();
    let mut index_of = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut class_strs = Vec::new();
    let mut width = None;
    for (ln, line) in content.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 2 {
            return Err(parse_err(content_path, ln + 1, "expected id and class"));
        }
        let d = toks.len() - 2;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(parse_err(content_path, ln + 1, format!("expected {w} features, found {d}")));
            }
            _ => {}
        }
        let feats = toks[1..toks.len() - 1]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(content_path, ln + 1, format!("bad feature `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let id = toks[0].to_string();
        if index_of.insert(id.clone(), node_ids.len()).is_some() {
            return Err(parse_err(content_path, ln + 1, format!("duplicate node id `{id}`")));
        }
        node_ids.push(id);
        rows.push(feats);
        class_strs.push(toks[toks.len() - 1].to_string());
    }

    let class_names: Vec<String> = class_strs.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels = class_strs.iter().map(|c| class_names.binary_search(c).expect("class present")).collect();

    let cites = read(cites_path)?;
    let mut edges = Vec::new();
    let mut raw = 0;
    let mut skipped = 0;
    for (ln, line) in cites.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(parse_err(cites_path, ln + 1, "expected two ids"));
        }
        raw += 1;
        match (index_of.get(toks[0]), index_of.get(toks[1])) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} edge lines with unknown ids", cites_path.display());
    }

    let n = node_ids.len();
    let graph = Graph::from_edges(n, &edges, true)?;
    let name = content_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut ds = NodeDataset::new(name, graph, Matrix::from_rows(&rows), labels, class_names.len())?;
    ds.meta = LoadMeta { node_ids, class_names, raw_edge_lines: raw, unique_edges: ds.graph.num_undirected_edges(), skipped_edge_lines: skipped };
    Ok(ds)
}

/// Writes the two citation-network files. Inverse of [`load_content_cites`]
/// when class names and node ids are present in the metadata.
pub fn write_content_cites(ds: &NodeDataset, content_path: &Path, cites_path: &Path) -> Result<()> {
    let id = |v: usize| ds.meta.node_ids.get(v).cloned().unwrap_or_else(|| v.to_string());
    let class = |c: usize| ds.meta.class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
    let mut content = String::new();
    for v in 0..ds.num_nodes() {
        content.push_str(&id(v));
        for x in ds.features.row(v) {
            content.push('\t');
            content.push_str(&x.to_string());
        }
        content.push('\t');
        content.push_str(&class(ds.labels[v]));
        content.push('\n');
    }
    let mut cites = String::new();
    for (u, v) in ds.graph.edges() {
        cites.push_str(&format!("{}\t{}\n", id(u), id(v)));
    }
    let write = |p: &Path, s: &str| fs::write(p, s).map_err(|source| GraphError::Io { path: p.display().to_string(), source });
    write(content_path, &content)?;
    write(cites_path, &cites)
}

fn read_ints(path: &Path) -> Result<Vec<Vec<i64>>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<i64>().map_err(|_| parse_err(path, ln + 1, format!("bad integer `{}`", t.trim()))))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

fn read_floats(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| parse_err(path, ln + 1, format!("bad number `{}`", t.trim()))))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

fn single_column(path: &Path, rows: Vec<Vec<i64>>) -> Result<Vec<i64>> {
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| if r.len() == 1 { Ok(r[0]) } else { Err(parse_err(path, i + 1, "expected one value")) })
        .collect()
}

/// Loads `<dir>/<name>_*.txt` in the graph-benchmark layout.
///
/// Node labels, when present, become one-hot node features; otherwise node
/// attributes are used; otherwise features are left for later synthesis.
pub fn load_tu_dataset(dir: &Path, name: &str) -> Result<GraphDataset> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let ind_path = file("graph_indicator");
    let indicator = single_column(&ind_path, read_ints(&ind_path)?)?;
    let label_path = file("graph_labels");
    let raw_labels = single_column(&label_path, read_ints(&label_path)?)?;
    let num_graphs = raw_labels.len();

    // node -> (graph, local index)
    let mut graph_sizes = vec![0usize; num_graphs];
    let mut local = Vec::with_capacity(indicator.len());
    for (i, &g) in indicator.iter().enumerate() {
        if g < 1 || g as usize > num_graphs {
            return Err(parse_err(&ind_path, i + 1, format!("graph id {g} outside 1..={num_graphs}")));
        }
        let g = g as usize - 1;
        local.push((g, graph_sizes[g]));
        graph_sizes[g] += 1;
    }
    let total_nodes = indicator.len();

    let a_path = file("A");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (i, row) in read_ints(&a_path)?.into_iter().enumerate() {
        if row.len() != 2 {
            return Err(parse_err(&a_path, i + 1, "expected `i, j`"));
        }
        let (a, b) = (row[0], row[1]);
        if a < 1 || b < 1 || a as usize > total_nodes || b as usize > total_nodes {
            return Err(parse_err(&a_path, i + 1, format!("node id outside 1..={total_nodes}")));
        }
        let (ga, la) = local[a as usize - 1];
        let (gb, lb) = local[b as usize - 1];
        if ga != gb {
            return Err(GraphError::CrossGraphEdge {
                path: a_path.display().to_string(),
                line: i + 1,
                a: a as usize,
                b: b as usize,
                ga: ga + 1,
                gb: gb + 1,
            });
        }
        edges[ga].push((la, lb));
    }
    let graphs = edges
        .iter()
        .zip(&graph_sizes)
        .map(|(e, &n)| Graph::from_edges(n, e, true))
        .collect::<Result<Vec<_>>>()?;

    let label_values: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let graph_labels = raw_labels.iter().map(|l| label_values.binary_search(l).expect("present")).collect();

    let node_label_path = file("node_labels");
    let attr_path = file("node_attributes");
    let node_features: Option<Matrix> = if node_label_path.exists() {
        let nl = single_column(&node_label_path, read_ints(&node_label_path)?)?;
        if nl.len() != total_nodes {
            return Err(parse_err(&node_label_path, nl.len(), format!("expected {total_nodes} node labels")));
        }
        let values: Vec<i64> = nl.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let mut m = Matrix::zeros(total_nodes, values.len());
        for (v, l) in nl.iter().enumerate() {
            m.set(v, values.binary_search(l).expect("present"), 1.0);
        }
        Some(m)
    } else if attr_path.exists() {
        let rows = read_floats(&attr_path)?;
        if rows.len() != total_nodes {
            return Err(parse_err(&attr_path, rows.len(), format!("expected {total_nodes} attribute rows")));
        }
        let w = rows[0].len();
        if let Some(i) = rows.iter().position(|r| r.len() != w) {
            return Err(parse_err(&attr_path, i + 1, format!("expected {w} attributes")));
        }
        Some(Matrix::from_rows(&rows))
    } else {
        None
    };

    let features = match node_features {
        None => vec![None; num_graphs],
        Some(m) => {
            let mut per_graph: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
            for (v, &(g, _)) in local.iter().enumerate() {
                per_graph[g].push(v);
            }
            per_graph.iter().map(|rows| Some(m.select_rows(rows))).collect()
        }
    };

    let ds = GraphDataset { name: name.to_string(), graphs, features, graph_labels, num_classes: label_values.len() };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonMasks {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonNodeDataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<JsonMasks>,
}

pub fn node_dataset_from_json(text: &str) -> Result<NodeDataset> {
    let j: JsonNodeDataset = serde_json::from_str(text)?;
    let edges: Vec<(usize, usize)> = j.edges.iter().map(|e| (e[0], e[1])).collect();
    let graph = Graph::from_edges(j.num_nodes, &edges, true)?;
    let width = j.features.first().map_or(0, Vec::len);
    if let Some(i) = j.features.iter().position(|r| r.len() != width) {
        return Err(GraphError::Invalid(format!("feature row {i} has {} entries, expected {width}", j.features[i].len())));
    }
    let features = if j.features.is_empty() { Matrix::zeros(j.num_nodes, 0) } else { Matrix::from_rows(&j.features) };
    let mut ds = NodeDataset::new(j.name.unwrap_or_default(), graph, features, j.labels, j.num_classes)?;
    if let Some(m) = j.masks {
        ds.masks = Some(SplitMasks::from_indices(j.num_nodes, &m.train, &m.val, &m.test)?);
    }
    ds.meta.unique_edges = ds.graph.num_undirected_edges();
    ds.meta.raw_edge_lines = edges.len();
    Ok(ds)
}

pub fn node_dataset_to_json(ds: &NodeDataset) -> Result<String> {
    let j = JsonNodeDataset {
        name: (!ds.name.is_empty()).then(|| ds.name.clone()),
        num_nodes: ds.num_nodes(),
        edges: ds.graph.edges().into_iter().map(|(u, v)| [u, v]).collect(),
        features: (0..ds.features.rows).map(|r| ds.features.row(r).to_vec()).collect(),
        labels: ds.labels.clone(),
        num_classes: ds.num_classes,
        masks: ds.masks.as_ref().map(|m| JsonMasks {
            train: SplitMasks::indices(&m.train),
            val: SplitMasks::indices(&m.val),
            test: SplitMasks::indices(&m.test),
        }),
    };
    Ok(serde_json::to_string(&j)?)
}

pub fn load_json(path: &Path) -> Result<NodeDataset> {
    let mut ds = node_dataset_from_json(&read(path)?)?;
    if ds.name.is_empty() {
        ds.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(ds)
}

pub fn save_json(ds: &NodeDataset, path: &Path) -> Result<()> {
    fs::write(path, node_dataset_to_json(ds)?).map_err(|source| GraphError::Io { path: path.display().to_string(), source })
}
