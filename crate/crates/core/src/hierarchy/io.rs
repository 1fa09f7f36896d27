//! On-disk layout of a multi-level mesh: one mesh file per level plus a
//! `hierarchy.json` manifest naming the levels, the auxiliary graph, and the
//! cross-level edge arrays.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::{CrossEdge, MultiLevelMesh};
use crate::mesh::io::{
    format_f64, read_mesh_file, write_mesh_file, MeshFileContents, MeshIoError, NodeResponse,
};
use crate::vec2::Vec2;

pub const HIERARCHY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HierarchyIoError {
    #[error(transparent)]
    Mesh(#[from] MeshIoError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported hierarchy format_version {0}")]
    UnsupportedVersion(u32),
    #[error("cross edge references level {0} out of range")]
    BadCrossEdgeLevel(usize),
}

fn level_file_name(level: usize) -> String {
    format!("level{level}.json")
}

/// Write all level meshes, the auxiliary mesh and the manifest into `dir`.
/// An optional per-node solver response is stored with the finest level.
pub fn write_multilevel(
    dir: &Path,
    mesh: &MultiLevelMesh,
    finest_response: Option<&[NodeResponse]>,
) -> Result<(), HierarchyIoError> {
    fs::create_dir_all(dir).map_err(|source| HierarchyIoError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let r_count = mesh.level_count();
    for (i, graph) in mesh.levels.iter().enumerate() {
        let response = if i + 1 == r_count {
            finest_response.map(|r| r.to_vec())
        } else {
            None
        };
        write_mesh_file(
            &dir.join(level_file_name(i + 1)),
            &MeshFileContents {
                graph: graph.clone(),
                conditions: mesh.conditions[i].clone(),
                response,
            },
        )?;
    }
    write_mesh_file(
        &dir.join("aux0.json"),
        &MeshFileContents {
            graph: mesh.auxiliary.clone(),
            conditions: crate::mesh::NodeConditions::unloaded(mesh.auxiliary.node_count()),
            response: None,
        },
    )?;

    let mut out = String::new();
    out.push_str("{\n");
    let _ = write!(out, "\"format_version\": {HIERARCHY_FORMAT_VERSION},\n");
    let _ = write!(out, "\"levels\": [");
    for i in 0..r_count {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "\"{}\"", level_file_name(i + 1));
    }
    out.push_str("],\n\"auxiliary\": \"aux0.json\",\n");
    let _ = write!(out, "\"finest_target\": {},\n", format_f64(mesh.finest_target));
    let _ = write!(
        out,
        "\"coarsening_factor\": {},\n",
        format_f64(mesh.coarsening_factor)
    );
    let _ = write!(out, "\"seed\": {},\n", mesh.seed);
    out.push_str("\"cross_edges\": [");
    let mut first = true;
    for (i, edges) in mesh.cross_edges.iter().enumerate() {
        for e in edges {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(
                out,
                "\n[{},{},{},{},{},{}]",
                i + 1,
                e.src,
                e.dst,
                format_f64(e.displacement.x),
                format_f64(e.displacement.y),
                format_f64(e.length)
            );
        }
    }
    out.push_str("\n]\n}\n");
    let path = dir.join("hierarchy.json");
    fs::write(&path, out).map_err(|source| HierarchyIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[derive(Deserialize)]
struct ManifestFile {
    format_version: u32,
    levels: Vec<String>,
    auxiliary: String,
    finest_target: f64,
    coarsening_factor: f64,
    seed: u64,
    cross_edges: Vec<(usize, usize, usize, f64, f64, f64)>,
}

/// Read a multi-level mesh written by [`write_multilevel`]. Returns the mesh
/// and the finest level's stored response, if any.
pub fn read_multilevel(
    dir: &Path,
) -> Result<(MultiLevelMesh, Option<Vec<NodeResponse>>), HierarchyIoError> {
    let path = dir.join("hierarchy.json");
    let text = fs::read_to_string(&path).map_err(|source| HierarchyIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: ManifestFile = serde_json::from_str(&text)?;
    if manifest.format_version != HIERARCHY_FORMAT_VERSION {
        return Err(HierarchyIoError::UnsupportedVersion(manifest.format_version));
    }
    let mut levels = Vec::with_capacity(manifest.levels.len());
    let mut conditions = Vec::with_capacity(manifest.levels.len());
    let mut response = None;
    for (i, name) in manifest.levels.iter().enumerate() {
        let contents = read_mesh_file(&dir.join(name))?;
        levels.push(contents.graph);
        conditions.push(contents.conditions);
        if i + 1 == manifest.levels.len() {
            response = contents.response;
        }
    }
    let auxiliary = read_mesh_file(&dir.join(&manifest.auxiliary))?.graph;

    let mut cross_edges: Vec<Vec<CrossEdge>> = vec![Vec::new(); levels.len().saturating_sub(1)];
    for (src_level, src, dst, dx, dy, len) in manifest.cross_edges {
        if src_level == 0 || src_level >= levels.len() {
            return Err(HierarchyIoError::BadCrossEdgeLevel(src_level));
        }
        cross_edges[src_level - 1].push(CrossEdge {
            src,
            dst,
            displacement: Vec2::new(dx, dy),
            length: len,
        });
    }

    Ok((
        MultiLevelMesh {
            levels,
            auxiliary,
            cross_edges,
            conditions,
            finest_target: manifest.finest_target,
            coarsening_factor: manifest.coarsening_factor,
            seed: manifest.seed,
        },
        response,
    ))
}
