//! Image-domain conditions: volume resampling, moving cubes along each
//! segment, and the CNN + BiLSTM encoder.

mod cubes;
mod encoder;
mod volume;

pub use cubes::{extract_cubes, CubeSequence};
pub use encoder::{ConditionConfig, ConditionEncoder};
pub use volume::{
    resample_volume, ByteOrder, ScalarType, Volume, VolumeHeader, VOLUME_FORMAT_VERSION,
};
