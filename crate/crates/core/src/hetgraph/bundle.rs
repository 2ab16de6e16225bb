//! On-disk graph bundle: a directory holding `schema.json`,
//! `attrs/<type>.csv`, `edges/<relation>.csv` and an optional `labels.csv`.
//!
//! Attribute values are written with 17 significant digits, which is enough
//! for every `f64` to parse back to the identical bit pattern.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validate_graph, AnomalyKind, HetGraph, Labels, Matrix, NodeLabel, NodeTypeSpec};
use crate::error::{AheadError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    node_types: Vec<SchemaNodeType>,
    relations: Vec<SchemaRelation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaNodeType {
    name: String,
    num_nodes: usize,
    view_dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    view_columns: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaRelation {
    name: String,
    src_type: String,
    dst_type: String,
}

fn schema_of(g: &HetGraph) -> SchemaFile {
    SchemaFile {
        node_types: g
            .node_types
            .iter()
            .map(|t| SchemaNodeType {
                name: t.name.clone(),
                num_nodes: t.num_nodes,
                view_dims: t.view_dims.clone(),
                view_columns: Some(t.view_columns.clone()),
            })
            .collect(),
        relations: g
            .declared_relations()
            .map(|r| {
                let r = &g.relations[r];
                SchemaRelation {
                    name: r.name.clone(),
                    src_type: r.src_type.clone(),
                    dst_type: r.dst_type.clone(),
                }
            })
            .collect(),
    }
}

/// SHA-256 (hex) of the canonical schema JSON: node types, view layout and
/// declared relations. Attributes and edges do not contribute.
pub fn schema_hash(g: &HetGraph) -> String {
    let json = serde_json::to_vec(&schema_of(g)).expect("schema serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| AheadError::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| AheadError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| AheadError::io(path, e))
}

pub fn save_bundle(g: &HetGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let violations = validate_graph(g);
    if !violations.is_empty() {
        return Err(AheadError::InvalidGraph(violations));
    }
    create_dir(&dir.join("attrs"))?;
    create_dir(&dir.join("edges"))?;

    let schema = serde_json::to_string_pretty(&schema_of(g)).expect("schema serializes");
    write_file(&dir.join("schema.json"), &schema)?;

    for (t, x) in g.node_types.iter().zip(&g.attrs) {
        let mut s = String::with_capacity(x.len() * 24);
        for row in x.rows() {
            let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        write_file(&dir.join("attrs").join(format!("{}.csv", t.name)), &s)?;
    }
    for r in g.declared_relations() {
        let mut s = String::new();
        for &(i, j) in &g.edges[r] {
            s.push_str(&format!("{i},{j}\n"));
        }
        write_file(
            &dir.join("edges").join(format!("{}.csv", g.relations[r].name)),
            &s,
        )?;
    }
    let labels_path = dir.join("labels.csv");
    match &g.labels {
        Some(labels) => write_labels(g, labels, &labels_path)?,
        None => {
            if labels_path.exists() {
                fs::remove_file(&labels_path).map_err(|e| AheadError::io(&labels_path, e))?;
            }
        }
    }
    Ok(())
}

pub fn write_labels(g: &HetGraph, labels: &Labels, path: &Path) -> Result<()> {
    let mut s = String::new();
    for (t, ls) in g.node_types.iter().zip(labels) {
        for (i, l) in ls.iter().enumerate() {
            s.push_str(&format!(
                "{},{i},{},{}\n",
                t.name,
                u8::from(l.is_anomaly),
                l.kind.as_str()
            ));
        }
    }
    write_file(path, &s)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| AheadError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(f))
}

fn read_records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            AheadError::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| AheadError::parse(path, line, format!("invalid {what} '{field}'")))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<HetGraph> {
    let dir = dir.as_ref();
    let schema_path = dir.join("schema.json");
    let text = fs::read_to_string(&schema_path).map_err(|e| AheadError::io(&schema_path, e))?;
    let schema: SchemaFile = serde_json::from_str(&text).map_err(|e| {
        AheadError::parse(&schema_path, e.line(), format!("schema.json: {e}"))
    })?;

    let mut node_types = Vec::with_capacity(schema.node_types.len());
    for t in &schema.node_types {
        let mut spec = NodeTypeSpec::new(t.name.clone(), t.num_nodes, t.view_dims.clone());
        if let Some(cols) = &t.view_columns {
            spec.view_columns = cols.clone();
        }
        node_types.push(spec);
    }

    let mut attrs = Vec::with_capacity(node_types.len());
    for t in &node_types {
        let path = dir.join("attrs").join(format!("{}.csv", t.name));
        attrs.push(read_attrs(&path, t.num_nodes, t.attr_dim)?);
    }

    let declared: Vec<(&str, &str, &str)> = schema
        .relations
        .iter()
        .map(|r| (r.name.as_str(), r.src_type.as_str(), r.dst_type.as_str()))
        .collect();
    let mut g = HetGraph::new(node_types, &declared, attrs)?;

    for r in g.declared_relations().collect::<Vec<_>>() {
        let path = dir.join("edges").join(format!("{}.csv", g.relations[r].name));
        let (s, d) = g.endpoints(r);
        let (ns, nd) = (g.node_types[s].num_nodes, g.node_types[d].num_nodes);
        let mut edges = Vec::new();
        for (line, rec) in read_records(&path)? {
            if rec.len() != 2 {
                return Err(AheadError::parse(
                    &path,
                    line,
                    format!("expected 2 columns 'src,dst', found {}", rec.len()),
                ));
            }
            let i: usize = parse_field(&path, line, &rec[0], "src index")?;
            let j: usize = parse_field(&path, line, &rec[1], "dst index")?;
            if i >= ns || j >= nd {
                return Err(AheadError::parse(
                    &path,
                    line,
                    format!("edge ({i}, {j}) out of range for {ns} x {nd}"),
                ));
            }
            edges.push((i, j));
        }
        g.set_edges(r, edges)?;
    }

    let labels_path = dir.join("labels.csv");
    if labels_path.exists() {
        g.labels = Some(load_labels(&g, &labels_path)?);
    }

    let violations = validate_graph(&g);
    if !violations.is_empty() {
        return Err(AheadError::InvalidGraph(violations));
    }
    Ok(g)
}

fn read_attrs(path: &Path, rows: usize, cols: usize) -> Result<Matrix> {
    let records = read_records(path)?;
    if records.len() != rows {
        return Err(AheadError::parse(
            path,
            records.last().map_or(0, |r| r.0),
            format!("shape mismatch: expected {rows} rows, found {}", records.len()),
        ));
    }
    let mut x = Matrix::zeros((rows, cols));
    for (i, (line, rec)) in records.iter().enumerate() {
        if rec.len() != cols {
            return Err(AheadError::parse(
                path,
                *line,
                format!("shape mismatch: expected {cols} columns, found {}", rec.len()),
            ));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = parse_field(path, *line, field, "attribute value")?;
            if !v.is_finite() {
                return Err(AheadError::parse(path, *line, "non-finite attribute value"));
            }
            x[[i, j]] = v;
        }
    }
    Ok(x)
}

/// One parsed row of a labels file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub line: usize,
    pub node_type: String,
    pub local_index: usize,
    pub label: NodeLabel,
}

/// Parses `type,local_index,is_anomaly,kind` rows without a graph to check
/// them against.
pub fn read_label_rows(path: &Path) -> Result<Vec<LabelRow>> {
    let mut out = Vec::new();
    for (line, rec) in read_records(path)? {
        if rec.len() != 4 {
            return Err(AheadError::parse(
                path,
                line,
                format!("expected 4 columns 'type,local_index,is_anomaly,kind', found {}", rec.len()),
            ));
        }
        let local_index: usize = parse_field(path, line, &rec[1], "local index")?;
        let is_anomaly = match &rec[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(AheadError::parse(path, line, format!("invalid is_anomaly '{other}'")))
            }
        };
        let kind = AnomalyKind::parse(&rec[3])
            .ok_or_else(|| AheadError::parse(path, line, format!("invalid kind '{}'", &rec[3])))?;
        if !is_anomaly && kind != AnomalyKind::None {
            return Err(AheadError::parse(path, line, "normal node with an anomaly kind"));
        }
        out.push(LabelRow {
            line,
            node_type: rec[0].to_string(),
            local_index,
            label: NodeLabel { is_anomaly, kind },
        });
    }
    Ok(out)
}

/// Reads a labels file for `g`. Nodes without a row are normal.
pub fn load_labels(g: &HetGraph, path: &Path) -> Result<Labels> {
    let mut labels = g
        .node_types
        .iter()
        .map(|t| vec![None; t.num_nodes])
        .collect::<Vec<Vec<Option<NodeLabel>>>>();
    for row in read_label_rows(path)? {
        let line = row.line;
        let ty = g
            .type_index(&row.node_type)
            .ok_or_else(|| AheadError::parse(path, line, format!("unknown node type '{}'", row.node_type)))?;
        let idx = row.local_index;
        if idx >= g.node_types[ty].num_nodes {
            return Err(AheadError::parse(path, line, format!("local index {idx} out of range")));
        }
        if labels[ty][idx].replace(row.label).is_some() {
            return Err(AheadError::parse(path, line, "duplicate label row"));
        }
    }
    Ok(labels
        .into_iter()
        .map(|ls| ls.into_iter().map(|l| l.unwrap_or(NodeLabel::NORMAL)).collect())
        .collect())
}
