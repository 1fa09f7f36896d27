//! Mesh file I/O. UTF-8 JSON text; floats are written with 17 significant
//! digits so that a write/read cycle reproduces every f64 bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::{validate_conditions, validate_mesh, MeshGraph, NodeConditions, ValidationReport};
use crate::vec2::Vec2;

pub const MESH_FORMAT_VERSION: u32 = 1;

/// Per-node solver output stored under the "response" key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeResponse {
    pub displacement: Vec2,
    pub von_mises: f64,
}

/// Everything a mesh file can hold.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshFileContents {
    pub graph: MeshGraph,
    pub conditions: NodeConditions,
    pub response: Option<Vec<NodeResponse>>,
}

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),
    #[error("mesh invariants violated:\n{0}")]
    InvalidMesh(ValidationReport),
    #[error("condition invariants violated:\n{0}")]
    InvalidConditions(ValidationReport),
    #[error("non-finite number in field {0}")]
    NonFinite(&'static str),
    #[error("response has {got} entries, mesh has {expected} nodes")]
    ResponseLengthMismatch { expected: usize, got: usize },
}

/// Format one float with 17 significant digits; round-trips any f64 exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_f64_array2(out: &mut String, values: &[Vec2]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{},{}]", format_f64(v.x), format_f64(v.y));
    }
    out.push(']');
}

fn push_flags(out: &mut String, flags: &[u8]) {
    out.push('[');
    for (i, f) in flags.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{f}");
    }
    out.push(']');
}

/// Serialize mesh + conditions (+ optional response) to the mesh file text.
pub fn mesh_to_string(contents: &MeshFileContents) -> Result<String, MeshIoError> {
    let graph = &contents.graph;
    for v in &graph.nodes {
        if !v.is_finite() {
            return Err(MeshIoError::NonFinite("nodes"));
        }
    }
    for f in &contents.conditions.force {
        if !f.is_finite() {
            return Err(MeshIoError::NonFinite("conditions.force"));
        }
    }

    let mut out = String::new();
    out.push_str("{\n");
    let _ = write!(out, "\"format_version\": {MESH_FORMAT_VERSION},\n");
    let _ = write!(out, "\"level_id\": {},\n", graph.level_id);
    out.push_str("\"nodes\": ");
    push_f64_array2(&mut out, &graph.nodes);
    out.push_str(",\n\"edges\": [");
    for (idx, &(i, j)) in graph.edges.iter().enumerate() {
        if idx > 0 {
            out.push(',');
        }
        let (a, b) = (i.min(j), i.max(j));
        let _ = write!(out, "[{a},{b}]");
    }
    out.push_str("],\n\"elements\": [");
    for (idx, e) in graph.elements.iter().enumerate() {
        if idx > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{},{},{}]", e[0], e[1], e[2]);
    }
    out.push_str("],\n\"conditions\": {\"boundary\": ");
    push_flags(&mut out, &contents.conditions.boundary);
    out.push_str(", \"fixed\": ");
    push_flags(&mut out, &contents.conditions.fixed);
    out.push_str(", \"force\": ");
    push_f64_array2(&mut out, &contents.conditions.force);
    out.push('}');
    if let Some(response) = &contents.response {
        if response.len() != graph.node_count() {
            return Err(MeshIoError::ResponseLengthMismatch {
                expected: graph.node_count(),
                got: response.len(),
            });
        }
        for r in response {
            if !r.displacement.is_finite() || !r.von_mises.is_finite() {
                return Err(MeshIoError::NonFinite("response"));
            }
        }
        out.push_str(",\n\"response\": [");
        for (i, r) in response.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(
                out,
                "[{},{},{}]",
                format_f64(r.displacement.x),
                format_f64(r.displacement.y),
                format_f64(r.von_mises)
            );
        }
        out.push(']');
    }
    out.push_str("\n}\n");
    Ok(out)
}

#[derive(Deserialize)]
struct CondFile {
    boundary: Vec<u8>,
    fixed: Vec<u8>,
    force: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct MeshFile {
    format_version: u32,
    #[serde(default)]
    level_id: usize,
    nodes: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
    elements: Vec<[usize; 3]>,
    conditions: CondFile,
    #[serde(default)]
    response: Option<Vec<[f64; 3]>>,
}

/// Parse mesh file text; rejects files whose mesh or condition invariants fail.
pub fn mesh_from_str(text: &str) -> Result<MeshFileContents, MeshIoError> {
    let file: MeshFile = serde_json::from_str(text)?;
    if file.format_version != MESH_FORMAT_VERSION {
        return Err(MeshIoError::UnsupportedVersion(file.format_version));
    }
    let graph = MeshGraph {
        nodes: file.nodes.into_iter().map(Vec2::from).collect(),
        edges: file.edges.into_iter().map(|[i, j]| (i, j)).collect(),
        elements: file.elements,
        level_id: file.level_id,
    };
    let conditions = NodeConditions {
        boundary: file.conditions.boundary,
        fixed: file.conditions.fixed,
        force: file.conditions.force.into_iter().map(Vec2::from).collect(),
    };
    let report = validate_mesh(&graph);
    if !report.ok() {
        return Err(MeshIoError::InvalidMesh(report));
    }
    let report = validate_conditions(&conditions, &graph);
    if !report.ok() {
        return Err(MeshIoError::InvalidConditions(report));
    }
    let response = match file.response {
        None => None,
        Some(rows) => {
            if rows.len() != graph.node_count() {
                return Err(MeshIoError::ResponseLengthMismatch {
                    expected: graph.node_count(),
                    got: rows.len(),
                });
            }
            Some(
                rows.into_iter()
                    .map(|[ux, uy, vm]| NodeResponse {
                        displacement: Vec2::new(ux, uy),
                        von_mises: vm,
                    })
                    .collect(),
            )
        }
    };
    Ok(MeshFileContents {
        graph,
        conditions,
        response,
    })
}

pub fn write_mesh_file(path: &Path, contents: &MeshFileContents) -> Result<(), MeshIoError> {
    let text = mesh_to_string(contents)?;
    fs::write(path, text).map_err(|source| MeshIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_mesh_file(path: &Path) -> Result<MeshFileContents, MeshIoError> {
    let text = fs::read_to_string(path).map_err(|source| MeshIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    mesh_from_str(&text)
}

/// Spec-level convenience: mesh + conditions without response.
pub fn write_mesh(
    graph: &MeshGraph,
    conditions: &NodeConditions,
    path: &Path,
) -> Result<(), MeshIoError> {
    write_mesh_file(
        path,
        &MeshFileContents {
            graph: graph.clone(),
            conditions: conditions.clone(),
            response: None,
        },
    )
}

pub fn read_mesh(path: &Path) -> Result<(MeshGraph, NodeConditions), MeshIoError> {
    let contents = read_mesh_file(path)?;
    Ok((contents.graph, contents.conditions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec2::Vec2;

    fn sample_contents() -> MeshFileContents {
        let graph = MeshGraph {
            nodes: vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(0.1 + 0.2, 1.0 / 3.0),
            ],
            edges: vec![(0, 1), (1, 2), (0, 2)],
            elements: vec![[0, 1, 2]],
            level_id: 2,
        };
        let mut conditions = NodeConditions::unloaded(3);
        conditions.boundary[0] = 1;
        conditions.force[0] = Vec2::new(-17.25, 1.0e-13);
        MeshFileContents {
            graph,
            conditions,
            response: Some(vec![
                NodeResponse {
                    displacement: Vec2::new(1e-7, -2e-9),
                    von_mises: 3.141592653589793,
                };
                3
            ]),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let contents = sample_contents();
        let text = mesh_to_string(&contents).unwrap();
        let back = mesh_from_str(&text).unwrap();
        assert_eq!(back, contents);
        // Re-serialization is byte-identical: the writer is deterministic.
        assert_eq!(mesh_to_string(&back).unwrap(), text);
    }

    #[test]
    fn seventeen_digit_floats_round_trip() {
        for &x in &[
            0.1,
            -1.0 / 3.0,
            1.2345678901234567e-200,
            8.98846567431158e307,
            5.0,
            -0.0,
        ] {
            let s = format_f64(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{s}");
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = mesh_to_string(&sample_contents()).unwrap();
        let err = mesh_from_str(&text[..text.len() / 2]).unwrap_err();
        assert!(matches!(err, MeshIoError::Parse(_)));
    }

    #[test]
    fn missing_section_is_named() {
        let err = mesh_from_str(r#"{"format_version": 1, "nodes": []}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("edges"), "unhelpful error: {msg}");
    }

    #[test]
    fn invalid_mesh_is_rejected_with_report() {
        let mut contents = sample_contents();
        contents.graph.elements[0] = [0, 2, 1]; // clockwise
        contents.response = None;
        let text = mesh_to_string(&contents).unwrap();
        match mesh_from_str(&text) {
            Err(MeshIoError::InvalidMesh(report)) => {
                assert!(!report.ok());
            }
            other => panic!("expected invalid mesh, got {other:?}"),
        }
    }

    #[test]
    fn write_then_read_file(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let contents = sample_contents();
        write_mesh_file(&path, &contents).unwrap();
        assert_eq!(read_mesh_file(&path).unwrap(), contents);
    }
}
