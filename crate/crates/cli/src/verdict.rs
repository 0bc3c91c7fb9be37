use std::fmt;
use std::str::FromStr;

use malscan_core::classifiers::ModelFlags;
use malscan_core::{ContentDigest, Label, Provenance, ReproduceStatus, UpdateType};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalStatus {
    Flagged,
    AutoCleared,
    Clean,
    Error,
}

impl FinalStatus {
    pub fn name(self) -> &'static str {
        match self {
            FinalStatus::Flagged => "flagged",
            FinalStatus::AutoCleared => "auto-cleared",
            FinalStatus::Clean => "clean",
            FinalStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Triage {
    TruePositive,
    FalsePositive,
}

impl Triage {
    pub fn label(self) -> Label {
        match self {
            Triage::TruePositive => Label::Malicious,
            Triage::FalsePositive => Label::Benign,
        }
    }
}

impl fmt::Display for Triage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Triage::TruePositive => "true-positive",
            Triage::FalsePositive => "false-positive",
        })
    }
}

impl FromStr for Triage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tp" | "true-positive" | "malicious" => Ok(Triage::TruePositive),
            "fp" | "false-positive" | "benign" => Ok(Triage::FalsePositive),
            other => Err(format!("unknown triage label {other:?} (expected tp or fp)")),
        }
    }
}

/// Outcome of every pipeline stage for one package version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub package: String,
    pub version: String,
    #[serde(default)]
    pub update_type: Option<UpdateType>,
    #[serde(default)]
    pub flags: ModelFlags,
    #[serde(default)]
    pub clone_match: Option<Provenance>,
    #[serde(default)]
    pub reproduce: Option<ReproduceStatus>,
    pub status: FinalStatus,
    #[serde(default)]
    pub triage: Option<Triage>,
    #[serde(default)]
    pub digest: Option<ContentDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Clone matches are always flagged. Otherwise a model flag stands unless
/// the version was reproduced from source.
pub fn derive_status(
    flags: &ModelFlags,
    clone_match: Option<&Provenance>,
    reproduce: Option<ReproduceStatus>,
    error: bool,
) -> FinalStatus {
    if error {
        return FinalStatus::Error;
    }
    let model_flag = flags.values().any(|l| l.is_malicious());
    if clone_match.is_some() {
        FinalStatus::Flagged
    } else if !model_flag {
        FinalStatus::Clean
    } else if reproduce == Some(ReproduceStatus::Reproduced) {
        FinalStatus::AutoCleared
    } else {
        FinalStatus::Flagged
    }
}

impl Verdict {
    pub fn error(package: &str, version: &str, message: String) -> Self {
        Self {
            package: package.to_owned(),
            version: version.to_owned(),
            update_type: None,
            flags: ModelFlags::new(),
            clone_match: None,
            reproduce: None,
            status: FinalStatus::Error,
            triage: None,
            digest: None,
            error: Some(message),
        }
    }

    pub fn model_flagged(&self) -> bool {
        self.flags.values().any(|l| l.is_malicious())
    }

    /// The status implied by the recorded stage fields.
    pub fn rederive(&self) -> FinalStatus {
        derive_status(&self.flags, self.clone_match.as_ref(), self.reproduce, self.error.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use malscan_core::ModelKind;

    fn flags(any: bool) -> ModelFlags {
        let mut f = ModelFlags::new();
        f.insert(ModelKind::DecisionTree, if any { Label::Malicious } else { Label::Benign });
        f.insert(ModelKind::NaiveBayes, Label::Benign);
        f
    }

    fn prov() -> Provenance {
        Provenance {
            package: "evil".into(),
            version: "1.0.0".into(),
            added: "2026-01-01".into(),
        }
    }

    #[test]
    fn status_rules() {
        use FinalStatus::*;
        assert_eq!(derive_status(&flags(false), None, None, false), Clean);
        assert_eq!(derive_status(&flags(true), None, None, false), Flagged);
        assert_eq!(derive_status(&flags(true), None, Some(ReproduceStatus::Mismatch), false), Flagged);
        assert_eq!(derive_status(&flags(true), None, Some(ReproduceStatus::Reproduced), false), AutoCleared);
        assert_eq!(derive_status(&flags(false), Some(&prov()), None, false), Flagged);
        assert_eq!(
            derive_status(&flags(true), Some(&prov()), Some(ReproduceStatus::Reproduced), false),
            Flagged
        );
        assert_eq!(derive_status(&flags(true), None, None, true), Error);
    }

    #[test]
    fn triage_parsing() {
        assert_eq!("TP".parse::<Triage>().unwrap(), Triage::TruePositive);
        assert_eq!("false-positive".parse::<Triage>().unwrap(), Triage::FalsePositive);
        assert!("maybe".parse::<Triage>().is_err());
        assert_eq!(Triage::TruePositive.to_string(), "true-positive");
    }
}
