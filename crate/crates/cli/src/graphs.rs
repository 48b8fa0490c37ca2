//! Built-in graphs and graph loading.

use std::path::Path;

use anyhow::{Context, Result};
use loopsoup_core::MetricGraph;

const BUILT_IN: &[(&str, &str)] = &[
    ("single", include_str!("../graphs/single.json")),
    ("path", include_str!("../graphs/path.json")),
    ("triangle", include_str!("../graphs/triangle.json")),
    ("triangle-sinks", include_str!("../graphs/triangle-sinks.json")),
    ("theta", include_str!("../graphs/theta.json")),
    ("two-edge", include_str!("../graphs/two-edge.json")),
    ("square", include_str!("../graphs/square.json")),
];

pub fn built_in_names() -> Vec<&'static str> {
    BUILT_IN.iter().map(|(n, _)| *n).collect()
}

/// Resolves a built-in name or reads a JSON graph file.
pub fn load(spec: &str) -> Result<MetricGraph> {
    if let Some((_, text)) = BUILT_IN.iter().find(|(n, _)| *n == spec) {
        return Ok(MetricGraph::from_json(text)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        anyhow::bail!("no graph file `{spec}` and no built-in graph of that name (built-ins: {})", built_in_names().join(", "));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
    MetricGraph::from_json(&text).with_context(|| format!("parsing {spec}"))
}
