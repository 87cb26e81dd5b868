//! Binary annotation labels shared across the pipeline.

use serde::{Deserialize, Serialize};

/// Binary label assigned to a record by an annotation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Antisocial,
}

impl Label {
    pub fn is_antisocial(self) -> bool {
        matches!(self, Label::Antisocial)
    }
}

/// Outcome of the toxicity method for one record.
///
/// `Unscored` is a first-class outcome: scorer failures never silently become
/// `Normal` scores, they are carried forward so annotation gaps stay auditable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToxicityLabel {
    Normal,
    Antisocial,
    Unscored,
}

impl From<Label> for ToxicityLabel {
    fn from(label: Label) -> Self {
        match label {
            Label::Normal => ToxicityLabel::Normal,
            Label::Antisocial => ToxicityLabel::Antisocial,
        }
    }
}

impl ToxicityLabel {
    pub fn is_antisocial(self) -> bool {
        matches!(self, ToxicityLabel::Antisocial)
    }
}
