use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary gender label. The detectors under test only support two classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLabel {
    Male,
    Female,
}

impl GenderLabel {
    pub fn opposite(self) -> GenderLabel {
        match self {
            GenderLabel::Male => GenderLabel::Female,
            GenderLabel::Female => GenderLabel::Male,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Male => "male",
            GenderLabel::Female => "female",
        }
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenderLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(GenderLabel::Male),
            "f" | "female" => Ok(GenderLabel::Female),
            other => Err(format!("unknown gender `{other}`")),
        }
    }
}
