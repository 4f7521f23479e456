//! Experiment configurations bundled with the library.

const PRESETS: &[(&str, &str)] = &[
    ("exp-10comp-avar", include_str!("../../presets/exp-10comp-avar.toml")),
    ("exp-10comp-mean", include_str!("../../presets/exp-10comp-mean.toml")),
    ("exp-10comp-var", include_str!("../../presets/exp-10comp-var.toml")),
    ("exp-2asset-c0659", include_str!("../../presets/exp-2asset-c0659.toml")),
    ("exp-2asset-c1659", include_str!("../../presets/exp-2asset-c1659.toml")),
    ("exp-3comp-avar-anal-07", include_str!("../../presets/exp-3comp-avar-anal-07.toml")),
    ("exp-3comp-avar-anal", include_str!("../../presets/exp-3comp-avar-anal.toml")),
    ("exp-3comp-avar-disc", include_str!("../../presets/exp-3comp-avar-disc.toml")),
    ("exp-3comp-mean-anal-07", include_str!("../../presets/exp-3comp-mean-anal-07.toml")),
    ("exp-3comp-mean-anal", include_str!("../../presets/exp-3comp-mean-anal.toml")),
    ("exp-3comp-mean-disc", include_str!("../../presets/exp-3comp-mean-disc.toml")),
    ("exp-3comp-var-anal-07", include_str!("../../presets/exp-3comp-var-anal-07.toml")),
    ("exp-3comp-var-anal", include_str!("../../presets/exp-3comp-var-anal.toml")),
    ("exp-3comp-var-disc", include_str!("../../presets/exp-3comp-var-disc.toml")),
    ("exp-4-9", include_str!("../../presets/exp-4-9.toml")),
    ("exp-9asset", include_str!("../../presets/exp-9asset.toml")),
    ("scan-2asset", include_str!("../../presets/scan-2asset.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
