use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];

/// Minimum number of semantic components per category.
pub const MIN_COMPONENTS: usize = 3;

/// Per-channel tolerance when snapping anti-aliased pixels to a known color.
pub const COLOR_TOLERANCE: u8 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub rgb: Rgb,
}

/// A category and its ordered components. The position of a component in
/// the list is its label id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct CategorySpec {
    category: String,
    components: Vec<Component>,
}

#[derive(Deserialize)]
struct RawSpec {
    category: String,
    components: Vec<Component>,
}

impl TryFrom<RawSpec> for CategorySpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        CategorySpec::new(raw.category, raw.components)
    }
}

impl CategorySpec {
    pub fn new(category: impl Into<String>, components: Vec<Component>) -> Result<Self> {
        let category = category.into();
        if components.len() < MIN_COMPONENTS {
            return Err(Error::InvalidSpec(format!(
                "{category}: {} components, need at least {MIN_COMPONENTS}",
                components.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &components {
            if c.rgb == WHITE {
                return Err(Error::InvalidSpec(format!(
                    "{category}: component {} is white",
                    c.name
                )));
            }
            if !seen.insert(c.rgb) {
                return Err(Error::InvalidSpec(format!(
                    "{category}: color {:?} used twice",
                    c.rgb
                )));
            }
        }
        Ok(Self {
            category,
            components,
        })
    }

    /// Convenience constructor from `(name, color)` pairs.
    pub fn from_pairs(category: &str, pairs: &[(&str, Rgb)]) -> Result<Self> {
        Self::new(
            category,
            pairs
                .iter()
                .map(|(n, rgb)| Component {
                    name: n.to_string(),
                    rgb: *rgb,
                })
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("spec serializes");
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn num_classes(&self) -> usize {
        self.components.len()
    }

    pub fn color_of(&self, id: usize) -> Option<Rgb> {
        self.components.get(id).map(|c| c.rgb)
    }

    /// Exact color lookup.
    pub fn component_of(&self, rgb: Rgb) -> Option<usize> {
        self.components.iter().position(|c| c.rgb == rgb)
    }

    /// Component id by name, or by decimal id.
    pub fn resolve(&self, name_or_id: &str) -> Result<usize> {
        if let Some(i) = self.components.iter().position(|c| c.name == name_or_id) {
            return Ok(i);
        }
        match name_or_id.parse::<usize>() {
            Ok(i) if i < self.components.len() => Ok(i),
            _ => Err(Error::UnknownComponent(name_or_id.to_string())),
        }
    }

    /// Snaps a color to white or the nearest component color within
    /// [`COLOR_TOLERANCE`] per channel. Ties go to the lower id.
    pub fn snap(&self, rgb: Rgb) -> Option<Rgb> {
        let dist = |a: Rgb, b: Rgb| {
            a.iter()
                .zip(&b)
                .map(|(x, y)| x.abs_diff(*y))
                .max()
                .unwrap_or(0)
        };
        std::iter::once(WHITE)
            .chain(self.components.iter().map(|c| c.rgb))
            .map(|c| (dist(rgb, c), c))
            .filter(|(d, _)| *d <= COLOR_TOLERANCE)
            .min_by_key(|(d, _)| *d)
            .map(|(_, c)| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn lamp() -> CategorySpec {
        CategorySpec::from_pairs(
            "lamp",
            &[
                ("tube", [255, 0, 0]),
                ("base", [0, 255, 0]),
                ("shade", [0, 0, 255]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn color_round_trip() {
        let spec = lamp();
        for id in 0..spec.num_classes() {
            assert_eq!(spec.component_of(spec.color_of(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(CategorySpec::from_pairs("x", &[("a", [1, 2, 3]), ("b", [4, 5, 6])]).is_err());
        assert!(CategorySpec::from_pairs(
            "x",
            &[("a", [1, 2, 3]), ("b", [1, 2, 3]), ("c", [0, 0, 0])]
        )
        .is_err());
        assert!(
            CategorySpec::from_pairs("x", &[("a", WHITE), ("b", [1, 2, 3]), ("c", [0, 0, 0])])
                .is_err()
        );
    }

    #[test]
    fn json_format() {
        let text = r#"{"category":"lamp","components":[{"name":"tube","rgb":[255,0,0]},{"name":"base","rgb":[0,255,0]},{"name":"shade","rgb":[0,0,255]}]}"#;
        let spec: CategorySpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec, lamp());
        assert_eq!(serde_json::to_string(&spec).unwrap(), text);
        let dup = r#"{"category":"x","components":[{"name":"a","rgb":[1,1,1]},{"name":"b","rgb":[1,1,1]},{"name":"c","rgb":[2,2,2]}]}"#;
        assert!(serde_json::from_str::<CategorySpec>(dup).is_err());
    }

    #[test]
    fn snapping_tolerance() {
        let spec = lamp();
        assert_eq!(spec.snap([250, 6, 3]), Some([255, 0, 0]));
        assert_eq!(spec.snap([247, 0, 0]), Some([255, 0, 0]));
        assert_eq!(spec.snap([246, 0, 0]), None);
        assert_eq!(spec.snap([250, 251, 255]), Some(WHITE));
        assert_eq!(spec.snap([128, 128, 128]), None);
    }

    #[test]
    fn resolve_by_name_or_id() {
        let spec = lamp();
        assert_eq!(spec.resolve("base").unwrap(), 1);
        assert_eq!(spec.resolve("2").unwrap(), 2);
        assert!(matches!(spec.resolve("3"), Err(Error::UnknownComponent(_))));
        assert!(spec.resolve("bulb").is_err());
    }
}
