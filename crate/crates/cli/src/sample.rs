//! Sampling commands: loop configurations, occupation fields and free fields.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use loopsoup_core::gff::GffSampler;
use loopsoup_core::loops::{sample_vertex_local_times, SoupSampler};
use loopsoup_core::occupation::sample_occupation;
use loopsoup_core::rng::stream;
use loopsoup_core::MetricGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampleKind {
    Loops,
    Field,
    Gff,
}

/// Loop configurations, one block per sample: a `# sample i` header and one
/// line per distinct loop.
pub fn loops_text(g: &MetricGraph, reps: u64, seed: u64) -> Result<String> {
    let sampler = SoupSampler::new(g)?;
    let mut out = String::new();
    for i in 0..reps {
        let config = sampler.sample(&mut stream(seed, "sample-loops", i));
        let _ = writeln!(out, "# sample {i}");
        out.push_str(&config.dump(g));
    }
    Ok(out)
}

/// Occupation field rows `sample,edge,position,value`.
pub fn field_csv(g: &MetricGraph, reps: u64, grid: usize, seed: u64) -> Result<String> {
    let sampler = SoupSampler::new(g)?;
    let mut out = String::from("sample,edge,position,value\n");
    for i in 0..reps {
        let mut rng = stream(seed, "sample-field", i);
        let config = sampler.sample(&mut rng);
        let times = sample_vertex_local_times(g, &config.visits(g), &mut rng);
        let field = sample_occupation(g, &config.crossings(g), &times, grid, &mut rng)?;
        for line in field.to_csv().lines().skip(1) {
            let _ = writeln!(out, "{i},{line}");
        }
    }
    Ok(out)
}

/// Free field rows `sample,vertex,value`.
pub fn gff_csv(g: &MetricGraph, reps: u64, seed: u64) -> Result<String> {
    let sampler = GffSampler::new(g)?;
    let mut out = String::from("sample,vertex,value\n");
    for i in 0..reps {
        let phi = sampler.sample(&mut stream(seed, "sample-gff", i)).phi;
        for v in g.vertices() {
            let _ = writeln!(out, "{i},{},{:.9}", g.name(v), phi[v.0]);
        }
    }
    Ok(out)
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
