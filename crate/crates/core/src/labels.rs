use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Coronary branch classes, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnatomicalLabel {
    #[serde(rename = "RCA")]
    Rca,
    #[serde(rename = "R-PDA")]
    RPda,
    #[serde(rename = "R-PLB")]
    RPlb,
    #[serde(rename = "AM")]
    Am,
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "LAD")]
    Lad,
    #[serde(rename = "LCX")]
    Lcx,
    #[serde(rename = "RI")]
    Ri,
    #[serde(rename = "D")]
    D,
    #[serde(rename = "OM")]
    Om,
    #[serde(rename = "S")]
    S,
}

pub const NUM_CLASSES: usize = 11;

impl AnatomicalLabel {
    pub const ALL: [AnatomicalLabel; NUM_CLASSES] = [
        Self::Rca,
        Self::RPda,
        Self::RPlb,
        Self::Am,
        Self::Lm,
        Self::Lad,
        Self::Lcx,
        Self::Ri,
        Self::D,
        Self::Om,
        Self::S,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rca => "RCA",
            Self::RPda => "R-PDA",
            Self::RPlb => "R-PLB",
            Self::Am => "AM",
            Self::Lm => "LM",
            Self::Lad => "LAD",
            Self::Lcx => "LCX",
            Self::Ri => "RI",
            Self::D => "D",
            Self::Om => "OM",
            Self::S => "S",
        }
    }

    /// Branch that this branch normally leaves from; `None` for the two
    /// ostial main branches.
    pub fn anatomical_parent(self) -> Option<Self> {
        match self {
            Self::Lm | Self::Rca => None,
            Self::Lad | Self::Lcx | Self::Ri => Some(Self::Lm),
            Self::D | Self::S => Some(Self::Lad),
            Self::Om => Some(Self::Lcx),
            Self::RPda | Self::RPlb | Self::Am => Some(Self::Rca),
        }
    }

    pub fn is_left(self) -> bool {
        matches!(
            self,
            Self::Lm | Self::Lad | Self::Lcx | Self::Ri | Self::D | Self::Om | Self::S
        )
    }
}

impl fmt::Display for AnatomicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnatomicalLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown anatomical label {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_classes_in_table_order() {
        let names: Vec<&str> = AnatomicalLabel::ALL.iter().map(|l| l.as_str()).collect();
        assert_eq!(
            names,
            ["RCA", "R-PDA", "R-PLB", "AM", "LM", "LAD", "LCX", "RI", "D", "OM", "S"]
        );
        for (i, l) in AnatomicalLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(AnatomicalLabel::from_index(i), Some(*l));
        }
    }

    #[test]
    fn parse_and_serde_agree() {
        for l in AnatomicalLabel::ALL {
            assert_eq!(l.as_str().parse::<AnatomicalLabel>().unwrap(), l);
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(json, format!("\"{}\"", l.as_str()));
        }
        assert!("XYZ".parse::<AnatomicalLabel>().is_err());
    }
}
