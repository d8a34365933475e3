use serde::{Deserialize, Serialize};

use crate::cohort::CohortTree;
use crate::condition::{extract_cubes, resample_volume, Volume};
use crate::error::{Error, Result};
use crate::geometry::{graph_features, prepare_tree, Centerline, GeometryParams, SegmentGraph, Vec3};
use crate::model::TreeInput;
use crate::tensor::Tensor;

/// Settings that turn a centerline tree and its volume into network input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub geometry: GeometryParams,
    /// Isotropic voxel spacing the volume is resampled to, in mm.
    pub target_spacing: f64,
    /// Intensity used for cube voxels outside the volume, in raw units.
    pub background: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryParams::default(),
            target_spacing: 0.5,
            background: 0.0,
        }
    }
}

/// Graph, features and cubes for one tree. Labels are filled when every
/// branch carries one.
pub fn prepare_input(
    branches: &[Centerline],
    volume: &Volume,
    pipeline: &PipelineConfig,
    gamma: usize,
) -> Result<(TreeInput, SegmentGraph)> {
    let graph = prepare_tree(branches, &pipeline.geometry)?;
    let n = graph.len();
    let features = Tensor::new(vec![n, crate::geometry::FEATURE_DIM], graph_features(&graph))?;
    let adjacency = Tensor::new(
        vec![n, n],
        graph.adjacency().iter().map(|&a| f64::from(a)).collect(),
    )?;

    let resampled = resample_volume(volume, pipeline.target_spacing)?;
    let (standard, mean, scale) = resampled.standardized();
    let fill = (pipeline.background - mean) / scale;
    let sp = volume.spacing();
    let factor = Vec3::new(
        sp[0] / pipeline.target_spacing,
        sp[1] / pipeline.target_spacing,
        sp[2] / pipeline.target_spacing,
    );
    let cubes = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let pts: Vec<Vec3> = seg
                .points
                .iter()
                .map(|p| Vec3::new(p.x * factor.x, p.y * factor.y, p.z * factor.z))
                .collect();
            extract_cubes(&standard, &pts, gamma, fill, i)
        })
        .collect();
    let labels = graph
        .labels()
        .into_iter()
        .map(|l| l.map(|l| l.index()))
        .collect::<Option<Vec<_>>>()
        .unwrap_or_default();
    Ok((
        TreeInput {
            adjacency,
            features,
            cubes,
            labels,
        },
        graph,
    ))
}

/// Network inputs for every tree of a cohort; all trees must be labeled.
pub fn prepare_cohort(
    trees: &[CohortTree],
    pipeline: &PipelineConfig,
    gamma: usize,
) -> Result<Vec<TreeInput>> {
    trees
        .iter()
        .map(|t| {
            let (input, _) = prepare_input(&t.tree.centerlines.branches, &t.volume, pipeline, gamma)?;
            if input.labels.len() != input.len() {
                return Err(Error::Contract(format!("tree {} has unlabeled branches", t.id)));
            }
            Ok(input)
        })
        .collect()
}
