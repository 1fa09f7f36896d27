//! Dataset generation: a grid of hole positions crossed with force angles,
//! each sample meshed, coarsened, partitioned, schedule-tuned and solved for
//! its ground-truth stress field.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adaptive::{divide_mesh_graph, tune_mp_steps, MPSchedule, SubgraphPartition};
use crate::fem::{solve, Material};
use crate::hierarchy::{
    build_multilevel, io as hio, triangulate, GeometrySpec, Hole, HoleShape, MultiLevelMesh,
};
use crate::mesh::io::NodeResponse;
use crate::mesh::NodeConditions;
use crate::model::Normalization;
use crate::seed::mix;
use crate::vec2::Vec2;

pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Node distance to a contour below which the node counts as boundary.
const CONTOUR_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    pub width: f64,
    pub height: f64,
}

/// Grid of hole placements crossed with shapes and diameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleGridSpec {
    pub start: [f64; 2],
    pub step: [f64; 2],
    pub counts: [usize; 2],
    pub shapes: Vec<HoleShape>,
    pub diameters: Vec<f64>,
}

/// Optional second hole, centered at a seeded random non-overlapping spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondHoleSpec {
    pub shape: HoleShape,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceSpec {
    /// Total force magnitude (N), split evenly across the loaded nodes.
    pub magnitude: f64,
    /// Angle between the force and the horizontal axis, degrees.
    pub angles_deg: Vec<f64>,
    /// Horizontal line the force is applied along; None loads the top edge.
    #[serde(default)]
    pub line_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub format_version: u32,
    pub plate: PlateSpec,
    pub holes: HoleGridSpec,
    #[serde(default)]
    pub second_hole: Option<SecondHoleSpec>,
    pub force: ForceSpec,
    pub target_edge_length: f64,
    pub levels: usize,
    pub coarsening_factor: f64,
    pub groups: usize,
    pub step_cap: u32,
    pub seed: u64,
    pub split: [f64; 3],
}

impl DatasetSpec {
    /// 60-sample desk-scale beam recipe: 4x5 hole positions, 3 force angles.
    pub fn desk_default() -> DatasetSpec {
        DatasetSpec {
            format_version: DATASET_FORMAT_VERSION,
            plate: PlateSpec {
                width: 15.0,
                height: 100.0,
            },
            holes: HoleGridSpec {
                start: [4.0, 5.0],
                step: [2.0, 10.0],
                counts: [4, 5],
                shapes: vec![HoleShape::Circle],
                diameters: vec![5.0],
            },
            second_hole: None,
            force: ForceSpec {
                magnitude: 300.0,
                angles_deg: vec![-30.0, 0.0, 30.0],
                line_y: None,
            },
            target_edge_length: 2.0,
            levels: 3,
            coarsening_factor: 2.0,
            groups: 4,
            step_cap: 16,
            seed: 7,
            split: [0.8, 0.1, 0.1],
        }
    }

    /// Full 555-sample recipe: 3x37 hole positions, 5 force angles.
    pub fn paper_scale() -> DatasetSpec {
        DatasetSpec {
            holes: HoleGridSpec {
                start: [5.0, 5.0],
                step: [2.5, 2.5],
                counts: [3, 37],
                shapes: vec![HoleShape::Circle],
                diameters: vec![5.0],
            },
            force: ForceSpec {
                magnitude: 300.0,
                angles_deg: vec![-60.0, -30.0, 0.0, 30.0, 60.0],
                line_y: None,
            },
            ..DatasetSpec::desk_default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.format_version != DATASET_FORMAT_VERSION {
            return Err(HarnessError::Spec(format!(
                "unsupported dataset format_version {}",
                self.format_version
            )));
        }
        let split_sum: f64 = self.split.iter().sum();
        if (split_sum - 1.0).abs() > 1e-12 || self.split.iter().any(|&f| f < 0.0) {
            return Err(HarnessError::Spec(format!(
                "split fractions {:?} must be nonnegative and sum to 1",
                self.split
            )));
        }
        if self.holes.counts[0] == 0
            || self.holes.counts[1] == 0
            || self.holes.shapes.is_empty()
            || self.holes.diameters.is_empty()
            || self.force.angles_deg.is_empty()
        {
            return Err(HarnessError::Spec("empty sample grid".into()));
        }
        for d in self.descriptors() {
            d.geometry
                .validate()
                .map_err(|e| HarnessError::Spec(format!("sample {}: {e}", d.index)))?;
        }
        Ok(())
    }

    /// Cartesian product of shapes x diameters x grid positions x angles.
    pub fn descriptors(&self) -> Vec<SampleDescriptor> {
        let mut out = Vec::new();
        let mut index = 0usize;
        for &shape in &self.holes.shapes {
            for &diameter in &self.holes.diameters {
                for iy in 0..self.holes.counts[1] {
                    for ix in 0..self.holes.counts[0] {
                        let center = Vec2::new(
                            self.holes.start[0] + self.holes.step[0] * ix as f64,
                            self.holes.start[1] + self.holes.step[1] * iy as f64,
                        );
                        for &angle in &self.force.angles_deg {
                            let mut holes = vec![Hole {
                                shape,
                                center,
                                diameter,
                            }];
                            if let Some(second) = &self.second_hole {
                                holes.push(self.place_second_hole(index, &holes[0], second));
                            }
                            out.push(SampleDescriptor {
                                index,
                                geometry: GeometrySpec {
                                    width: self.plate.width,
                                    height: self.plate.height,
                                    holes,
                                },
                                angle_deg: angle,
                            });
                            index += 1;
                        }
                    }
                }
            }
        }
        out
    }

    fn place_second_hole(&self, index: usize, first: &Hole, spec: &SecondHoleSpec) -> Hole {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 7_000_000 + index as u64));
        let r = spec.diameter; // generous clearance bound
        for _ in 0..1000 {
            let center = Vec2::new(
                rng.gen_range(r..self.plate.width - r),
                rng.gen_range(r..self.plate.height - r),
            );
            let candidate = Hole {
                shape: spec.shape,
                center,
                diameter: spec.diameter,
            };
            let gap = (center - first.center).norm();
            if gap > (first.diameter + spec.diameter) * 0.75 + self.target_edge_length {
                return candidate;
            }
        }
        // Give up on clearance; validation will reject overlaps.
        Hole {
            shape: spec.shape,
            center: Vec2::new(self.plate.width / 2.0, self.plate.height / 2.0),
            diameter: spec.diameter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDescriptor {
    pub index: usize,
    pub geometry: GeometrySpec,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub descriptor: SampleDescriptor,
    pub multilevel: MultiLevelMesh,
    pub partitions: Vec<SubgraphPartition>,
    pub schedule: MPSchedule,
    pub response: Vec<NodeResponse>,
    /// Training target: per-node von Mises stress (MPa).
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
    pub splits: Splits,
    pub normalization: Normalization,
}

/// Build the per-node conditions for one sample geometry and force angle.
pub fn build_conditions(
    spec: &DatasetSpec,
    geometry: &GeometrySpec,
    graph: &crate::mesh::MeshGraph,
    angle_deg: f64,
) -> Result<NodeConditions, HarnessError> {
    let mut conditions = NodeConditions::unloaded(graph.node_count());
    let w = geometry.width;
    let h = geometry.height;
    for (i, p) in graph.nodes.iter().enumerate() {
        let on_outer = p.x.abs() < CONTOUR_TOLERANCE
            || (p.x - w).abs() < CONTOUR_TOLERANCE
            || p.y.abs() < CONTOUR_TOLERANCE
            || (p.y - h).abs() < CONTOUR_TOLERANCE;
        // Hole contours count as boundary too; the flag covers both.
        let on_hole = geometry
            .holes
            .iter()
            .any(|hole| hole.signed_distance(*p).abs() < CONTOUR_TOLERANCE);
        if on_outer || on_hole {
            conditions.boundary[i] = 1;
        }
        if p.y.abs() < CONTOUR_TOLERANCE {
            conditions.fixed[i] = 1;
        }
    }
    let loaded: Vec<usize> = match spec.force.line_y {
        None => (0..graph.node_count())
            .filter(|&i| (graph.nodes[i].y - h).abs() < CONTOUR_TOLERANCE)
            .collect(),
        Some(line_y) => (0..graph.node_count())
            .filter(|&i| {
                (graph.nodes[i].y - line_y).abs() <= spec.target_edge_length / 2.0
                    && conditions.fixed[i] == 0
            })
            .collect(),
    };
    if loaded.is_empty() {
        return Err(HarnessError::Spec("no nodes to load".into()));
    }
    let angle = angle_deg.to_radians();
    let per_node =
        Vec2::new(angle.cos(), angle.sin()) * (spec.force.magnitude / loaded.len() as f64);
    for &i in &loaded {
        conditions.boundary[i] = 1;
        conditions.force[i] = per_node;
    }
    Ok(conditions)
}

fn build_sample(spec: &DatasetSpec, descriptor: SampleDescriptor) -> Result<Sample, HarnessError> {
    let echo = || format!("sample {} ({:?})", descriptor.index, descriptor);
    let sample_seed = mix(spec.seed, descriptor.index as u64);
    let finest = triangulate(&descriptor.geometry, spec.target_edge_length, sample_seed)
        .map_err(|e| HarnessError::Sample(echo(), e.to_string()))?;
    let conditions = build_conditions(spec, &descriptor.geometry, &finest, descriptor.angle_deg)?;
    let solution = solve(&finest, &conditions, &Material::structural_steel())
        .map_err(|e| HarnessError::Sample(echo(), e.to_string()))?;
    let multilevel = build_multilevel(
        &descriptor.geometry,
        finest,
        conditions,
        spec.target_edge_length,
        spec.levels,
        spec.coarsening_factor,
        sample_seed,
    )
    .map_err(|e| HarnessError::Sample(echo(), e.to_string()))?;
    let partitions: Vec<SubgraphPartition> = multilevel
        .levels
        .iter()
        .enumerate()
        .map(|(r, g)| divide_mesh_graph(g, spec.groups, mix(sample_seed, 100 + r as u64)))
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Sample(echo(), e.to_string()))?;
    let schedule = tune_mp_steps(&multilevel, &partitions, spec.step_cap)
        .map_err(|e| HarnessError::Sample(echo(), e.to_string()))?;
    let response: Vec<NodeResponse> = solution
        .displacement
        .iter()
        .zip(&solution.von_mises)
        .map(|(&displacement, &von_mises)| NodeResponse {
            displacement,
            von_mises,
        })
        .collect();
    let target = solution.von_mises;
    Ok(Sample {
        descriptor,
        multilevel,
        partitions,
        schedule,
        response,
        target,
    })
}

pub(crate) fn make_splits(spec: &DatasetSpec, n: usize) -> Splits {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0x511731));
    order.shuffle(&mut rng);
    let n_train = (spec.split[0] * n as f64).floor() as usize;
    let n_val = (spec.split[1] * n as f64).floor() as usize;
    Splits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    }
}

fn compute_normalization(samples: &[Sample], train: &[usize]) -> Normalization {
    let mut force_sum = Vec2::ZERO;
    let mut force_sq = Vec2::ZERO;
    let mut target_sum = 0.0;
    let mut target_sq = 0.0;
    let mut n_nodes = 0usize;
    for &i in train {
        let conditions = samples[i].multilevel.finest_conditions();
        for f in &conditions.force {
            force_sum += *f;
            force_sq += Vec2::new(f.x * f.x, f.y * f.y);
        }
        for &t in &samples[i].target {
            target_sum += t;
            target_sq += t * t;
        }
        n_nodes += conditions.len();
    }
    let n = (n_nodes as f64).max(1.0);
    let mean = force_sum / n;
    let var = Vec2::new(
        (force_sq.x / n - mean.x * mean.x).max(0.0),
        (force_sq.y / n - mean.y * mean.y).max(0.0),
    );
    let t_mean = target_sum / n;
    let t_var = (target_sq / n - t_mean * t_mean).max(0.0);
    let floor = 1e-12;
    Normalization {
        force_mean: mean,
        force_std: Vec2::new(var.x.sqrt().max(floor), var.y.sqrt().max(floor)),
        target_mean: vec![t_mean],
        target_std: vec![t_var.sqrt().max(floor)],
    }
}

/// Generate the full dataset in memory: every sample meshed, coarsened,
/// partitioned, tuned and solved; splits and normalization computed.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset, HarnessError> {
    spec.validate()?;
    let descriptors = spec.descriptors();
    let samples: Vec<Sample> = descriptors
        .into_par_iter()
        .map(|d| build_sample(spec, d))
        .collect::<Result<_, _>>()?;
    let splits = make_splits(spec, samples.len());
    let normalization = compute_normalization(&samples, &splits.train);
    Ok(Dataset {
        spec: spec.clone(),
        samples,
        splits,
        normalization,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    spec: DatasetSpec,
    splits: Splits,
    normalization: Normalization,
    sample_count: usize,
    /// Recorded modeling choices that the files themselves cannot show.
    metadata: DatasetMetadata,
}

#[derive(Serialize, Deserialize)]
struct DatasetMetadata {
    boundary_flag_covers_hole_contours: bool,
    target_field: String,
    force_split: String,
    material: String,
    /// Total interpolated force per sample and level (coarse levels do not
    /// conserve the applied total under barycentric interpolation).
    per_level_force_totals: Vec<Vec<[f64; 2]>>,
}

fn level_force_totals(dataset: &Dataset) -> Vec<Vec<[f64; 2]>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            s.multilevel
                .conditions
                .iter()
                .map(|c| {
                    let total = c.force.iter().fold(Vec2::ZERO, |acc, &f| acc + f);
                    [total.x, total.y]
                })
                .collect()
        })
        .collect()
}

/// Write the dataset directory: a manifest plus one hierarchy directory per
/// sample (level meshes with conditions, finest response, partition and
/// schedule files).
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        spec: dataset.spec.clone(),
        splits: dataset.splits.clone(),
        normalization: dataset.normalization.clone(),
        sample_count: dataset.samples.len(),
        metadata: DatasetMetadata {
            boundary_flag_covers_hole_contours: true,
            target_field: "von_mises".into(),
            force_split: "even_over_loaded_nodes".into(),
            material: "E=210000MPa nu=0.3 t=1mm".into(),
            per_level_force_totals: level_force_totals(dataset),
        },
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Format(e.to_string()))?;
    fs::write(dir.join("dataset.json"), text)
        .map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    for sample in &dataset.samples {
        let sdir = dir.join(format!("sample{:04}", sample.descriptor.index));
        hio::write_multilevel(&sdir, &sample.multilevel, Some(&sample.response))?;
        let partitions = serde_json::to_string(&sample.partitions)
            .map_err(|e| HarnessError::Format(e.to_string()))?;
        fs::write(sdir.join("partition.json"), partitions)
            .map_err(|e| HarnessError::Io(sdir.display().to_string(), e))?;
        let schedule = serde_json::to_string(&sample.schedule)
            .map_err(|e| HarnessError::Format(e.to_string()))?;
        fs::write(sdir.join("schedule.json"), schedule)
            .map_err(|e| HarnessError::Io(sdir.display().to_string(), e))?;
        let descriptor = serde_json::to_string(&sample.descriptor)
            .map_err(|e| HarnessError::Format(e.to_string()))?;
        fs::write(sdir.join("descriptor.json"), descriptor)
            .map_err(|e| HarnessError::Io(sdir.display().to_string(), e))?;
    }
    Ok(())
}

/// Read a dataset directory back; meshes are re-validated on load.
pub fn load_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    let text = fs::read_to_string(dir.join("dataset.json"))
        .map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| HarnessError::Format(e.to_string()))?;
    let mut samples = Vec::with_capacity(manifest.sample_count);
    for index in 0..manifest.sample_count {
        let sdir = dir.join(format!("sample{index:04}"));
        let (multilevel, response) = hio::read_multilevel(&sdir)?;
        let response = response.ok_or_else(|| {
            HarnessError::Format(format!("sample {index} has no stored response"))
        })?;
        let partitions: Vec<SubgraphPartition> = serde_json::from_str(
            &fs::read_to_string(sdir.join("partition.json"))
                .map_err(|e| HarnessError::Io(sdir.display().to_string(), e))?,
        )
        .map_err(|e| HarnessError::Format(e.to_string()))?;
        let schedule: MPSchedule = serde_json::from_str(
            &fs::read_to_string(sdir.join("schedule.json"))
                .map_err(|e| HarnessError::Io(sdir.display().to_string(), e))?,
        )
        .map_err(|e| HarnessError::Format(e.to_string()))?;
        let descriptor: SampleDescriptor = serde_json::from_str(
            &fs::read_to_string(sdir.join("descriptor.json"))
                .map_err(|e| HarnessError::Io(sdir.display().to_string(), e))?,
        )
        .map_err(|e| HarnessError::Format(e.to_string()))?;
        let target = response.iter().map(|r| r.von_mises).collect();
        samples.push(Sample {
            descriptor,
            multilevel,
            partitions,
            schedule,
            response,
            target,
        });
    }
    Ok(Dataset {
        spec: manifest.spec,
        samples,
        splits: manifest.splits,
        normalization: manifest.normalization,
    })
}
