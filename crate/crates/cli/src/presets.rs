//! Experiment files shipped with the binary.

use crate::config::ExperimentFile;
use crate::UsageError;

pub const PRESETS: [(&str, &str); 9] = [
    ("fig-unimodal-basic", include_str!("../presets/fig-unimodal-basic.toml")),
    ("fig-plateaus", include_str!("../presets/fig-plateaus.toml")),
    ("fig-adaptive", include_str!("../presets/fig-adaptive.toml")),
    ("fig-homotopy-linear", include_str!("../presets/fig-homotopy-linear.toml")),
    ("fig-homotopy-convex", include_str!("../presets/fig-homotopy-convex.toml")),
    ("fig-homotopy-concave", include_str!("../presets/fig-homotopy-concave.toml")),
    ("fig-homotopy-enrich-linear", include_str!("../presets/fig-homotopy-enrich-linear.toml")),
    ("fig-homotopy-enrich-concave", include_str!("../presets/fig-homotopy-enrich-concave.toml")),
    ("fig-darcy", include_str!("../presets/fig-darcy.toml")),
];

pub fn preset_text(name: &str) -> anyhow::Result<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        UsageError(format!("unknown preset {name:?}; known presets: {}", known.join(", "))).into()
    })
}

pub fn preset(name: &str) -> anyhow::Result<ExperimentFile> {
    ExperimentFile::parse(preset_text(name)?)
}
