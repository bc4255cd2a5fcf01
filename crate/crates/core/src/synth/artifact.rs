use std::fmt;
use std::str::FromStr;

use crate::error::EpvtError;

/// Imaging artifact that defines a source domain.
///
/// The ordinal is the domain index used to address domain prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArtifactKind {
    DarkCorner,
    Hair,
    GelBubble,
    Ruler,
    Clean,
}

impl ArtifactKind {
    pub const COUNT: usize = 5;

    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::DarkCorner,
        ArtifactKind::Hair,
        ArtifactKind::GelBubble,
        ArtifactKind::Ruler,
        ArtifactKind::Clean,
    ];

    /// The four kinds that actually draw something.
    pub const OVERLAYS: [ArtifactKind; 4] = [
        ArtifactKind::DarkCorner,
        ArtifactKind::Hair,
        ArtifactKind::GelBubble,
        ArtifactKind::Ruler,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn is_artifact(self) -> bool {
        self != ArtifactKind::Clean
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::DarkCorner => "dark_corner",
            ArtifactKind::Hair => "hair",
            ArtifactKind::GelBubble => "gel_bubble",
            ArtifactKind::Ruler => "ruler",
            ArtifactKind::Clean => "clean",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = EpvtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EpvtError::InvalidConfig(format!("unknown artifact kind `{s}`")))
    }
}
