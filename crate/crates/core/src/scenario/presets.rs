//! Scenarios shipped with the library.

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "ou-halfline",
        description: "Ornstein–Uhlenbeck on the half-line: every audit family",
        text: include_str!("../../presets/ou-halfline.json"),
    },
    Preset {
        name: "heat-halfline",
        description: "heat equation on the half-line: short-time smoothing and contraction",
        text: include_str!("../../presets/heat-halfline.json"),
    },
    Preset {
        name: "polynomial-general",
        description: "polynomially growing diffusion and drift: gradient estimates",
        text: include_str!("../../presets/polynomial-general.json"),
    },
    Preset {
        name: "polynomial-xindep",
        description: "constant diffusion, polynomial drift, periodic in time: gradient estimates",
        text: include_str!("../../presets/polynomial-xindep.json"),
    },
];

/// Looks a preset up by name, with or without the `.json` suffix.
pub fn find(name: &str) -> Option<&'static Preset> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    PRESETS.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn presets_parse() {
        for p in PRESETS {
            let s = Scenario::from_str(p.text).unwrap_or_else(|e| panic!("{}: {e}", p.name));
            assert_eq!(s.name, p.name);
        }
        assert!(find("ou-halfline.json").is_some());
        assert!(find("nope").is_none());
    }
}
