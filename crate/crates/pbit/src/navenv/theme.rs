//! Visual styling of a scene. Two themes applied to the same geometry give
//! pixel-wise different renders with identical depth.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Source => write!(f, "source"),
            Domain::Target => write!(f, "target"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainStyleTheme {
    pub domain: Domain,
    /// RGB in [0,1] per wall texture id.
    pub wall_palette: Vec<[f64; 3]>,
    /// RGB in [0,1] per floor texture id.
    pub floor_palette: Vec<[f64; 3]>,
    pub ceiling: [f64; 3],
    /// Global brightness multiplier.
    pub lighting: f64,
    /// Amplitude of deterministic per-pixel noise.
    pub noise_amp: f64,
}

impl DomainStyleTheme {
    pub fn source_default() -> Self {
        DomainStyleTheme {
            domain: Domain::Source,
            wall_palette: vec![[0.85, 0.25, 0.20], [0.20, 0.65, 0.25], [0.25, 0.35, 0.85]],
            floor_palette: vec![[0.35, 0.32, 0.30], [0.28, 0.30, 0.36]],
            ceiling: [0.80, 0.80, 0.78],
            lighting: 1.0,
            noise_amp: 0.0,
        }
    }

    pub fn target_default() -> Self {
        DomainStyleTheme {
            domain: Domain::Target,
            wall_palette: vec![[0.15, 0.75, 0.80], [0.80, 0.20, 0.75], [0.85, 0.75, 0.15]],
            floor_palette: vec![[0.78, 0.80, 0.74], [0.85, 0.72, 0.62]],
            ceiling: [0.12, 0.12, 0.18],
            lighting: 0.75,
            noise_amp: 0.06,
        }
    }

    pub fn for_domain(d: Domain) -> Self {
        match d {
            Domain::Source => Self::source_default(),
            Domain::Target => Self::target_default(),
        }
    }

    pub fn wall_color(&self, tex: u8) -> [f64; 3] {
        self.wall_palette[tex as usize % self.wall_palette.len()]
    }

    pub fn floor_color(&self, tex: u8) -> [f64; 3] {
        self.floor_palette[tex as usize % self.floor_palette.len()]
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("theme serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }
}
