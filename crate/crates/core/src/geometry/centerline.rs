use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vec3::Vec3;
use crate::error::{Error, Result};
use crate::labels::AnatomicalLabel;

pub const CENTERLINE_FORMAT_VERSION: u32 = 1;

/// Ordered medial-axis points of one branch, in voxel units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<AnatomicalLabel>,
    pub points: Vec<Vec3>,
}

impl Centerline {
    pub fn new(points: Vec<Vec3>, label: Option<AnatomicalLabel>) -> Self {
        Self { label, points }
    }

    /// Checks the stored-centerline invariants: at least three points and
    /// no repeated consecutive point.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 3 {
            return Err(Error::Degenerate(format!(
                "centerline has {} points, need at least 3",
                self.points.len()
            )));
        }
        if let Some(i) = self
            .points
            .windows(2)
            .position(|w| w[0].distance(w[1]) == 0.0)
        {
            return Err(Error::Degenerate(format!(
                "centerline repeats point {i} consecutively"
            )));
        }
        Ok(())
    }

    pub fn first(&self) -> Vec3 {
        self.points[0]
    }

    pub fn last(&self) -> Vec3 {
        *self.points.last().expect("non-empty centerline")
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self {
            label: self.label,
            points: self.points.iter().map(|&p| p + offset).collect(),
        }
    }
}

/// One tree per file: every traced branch of a subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterlineTree {
    pub version: u32,
    pub branches: Vec<Centerline>,
}

impl CenterlineTree {
    pub fn new(branches: Vec<Centerline>) -> Self {
        Self {
            version: CENTERLINE_FORMAT_VERSION,
            branches,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CENTERLINE_FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::format(
                    path,
                    format!("unsupported centerline format version {v}"),
                ))
            }
            None => return Err(Error::format(path, "missing version field")),
        }
        let tree: CenterlineTree = serde_json::from_value(value)?;
        for (i, b) in tree.branches.iter().enumerate() {
            b.validate()
                .map_err(|e| Error::format(path, format!("branch {i}: {e}")))?;
        }
        Ok(tree)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
