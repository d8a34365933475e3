//! Centerline processing: smoothing, resampling, bifurcation splitting,
//! graph construction, local frames and position features.

mod centerline;
mod features;
mod frame;
mod resample;
mod segments;
mod spline;
mod vec3;

pub use centerline::{Centerline, CenterlineTree, CENTERLINE_FORMAT_VERSION};
pub use features::{
    center_point, graph_features, position_features, PositionFeatures, TreeNormalization,
    BLOCK_DIM, FEATURE_DIM,
};
pub use frame::{local_frame, sct_s2, segment_frame, LocalFrame, S2Coords};
pub use resample::{cumulative_lengths, point_at, resample_uniform};
pub use segments::{
    build_graph, prepare_tree, split_into_segments, GeometryParams, Segment, SegmentGraph,
};
pub use spline::{catmull_rom_smooth, spans as catmull_rom_spans, CatmullRomSpan};
pub use vec3::Vec3;
