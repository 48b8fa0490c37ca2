//! Experiment dispatch: turns a configuration into a report and plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use loopsoup_core::conditioning::{
    check_caps, verify_bridge_counts, verify_direct_sampler, verify_domain_markov, verify_star_correspondence,
    BridgeCheck, CapCheck, DomainCheck, StarCheck, StarSets,
};
use loopsoup_core::currents::verify_cluster_uniformity;
use loopsoup_core::gff::{lejan_check, sde_drift_check, SdeCheck};
use loopsoup_core::graph::{star_extend, subgraph_boundary};
use loopsoup_core::loops::{oracle_check, tail_loop_mass, visit_law_check};
use loopsoup_core::occupation::zero_hit_check;
use loopsoup_core::one_dim::{crossing_law_check, KingmanCheck};
use loopsoup_core::rebuild::{roundtrip_check, RoundTrip};
use loopsoup_core::report::{merge, StatReport};
use loopsoup_core::{MetricGraph, VertexId};

use crate::graphs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Local times against half the squared free field.
    Lejan,
    /// Crossing parities on a single full cluster.
    ClusterUniformity,
    /// Bridge counts outside a subgraph given its boundary local times.
    Markov,
    /// Soup with windowed local times against the conditioned star graph.
    Star,
    /// Shrinking caps, Poisson bridge counts and the direct sampler.
    NMeasure,
    /// Crossings of one-edge soups against the killed coalescent.
    Kingman,
    /// Loops rebuilt from the occupation data against sampled loops.
    Roundtrip,
    /// Drift and quadratic variation of the cluster exploration.
    Sde,
    /// Number of visits to one vertex against its exact law.
    VisitLaw,
    /// Vertex-by-vertex sampler against enumerated loops.
    Oracle,
    /// Zero events along single edges.
    ZeroHit,
}

impl Experiment {
    pub fn name(self) -> String {
        self.to_possible_value().expect("named variant").get_name().to_string()
    }

    fn default_graph(self) -> &'static str {
        match self {
            Experiment::Lejan | Experiment::VisitLaw => "path",
            Experiment::ClusterUniformity => "theta",
            Experiment::Sde => "two-edge",
            Experiment::Oracle => "triangle-sinks",
            _ => "triangle",
        }
    }

    fn default_reps(self) -> u64 {
        match self {
            Experiment::Markov => 20_000,
            Experiment::NMeasure | Experiment::Sde => 10_000,
            Experiment::Kingman => 20_000,
            _ => 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub graph: Option<String>,
    pub reps: Option<u64>,
    pub seed: u64,
    pub eps: f64,
    pub grid: Option<usize>,
    pub caps: Vec<f64>,
    pub star: Vec<String>,
    pub centres: Vec<f64>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            graph: None,
            reps: None,
            seed,
            eps: 0.05,
            grid: None,
            caps: vec![0.4, 0.2, 0.1],
            star: Vec::new(),
            centres: Vec::new(),
            out: PathBuf::from("loopsoup-out"),
        }
    }

    pub fn reps(&self) -> u64 {
        self.reps.unwrap_or_else(|| self.experiment.default_reps())
    }

    pub fn graph_name(&self) -> &str {
        self.graph.as_deref().unwrap_or_else(|| self.experiment.default_graph())
    }

    fn validate(&self) -> Result<()> {
        if self.reps() == 0 {
            bail!("--reps must be at least 1");
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            bail!("--eps must be positive");
        }
        if self.grid.is_some_and(|n| n < 2) {
            bail!("--grid needs at least 2 points");
        }
        Ok(())
    }
}

/// Star vertices from the names given, or the last interior vertex away from
/// the sink.
fn star_set(g: &MetricGraph, names: &[String]) -> Result<BTreeSet<VertexId>> {
    if !names.is_empty() {
        return names.iter().map(|n| Ok(g.vertex(n)?)).collect();
    }
    let near_sink = g.outer_boundary(&BTreeSet::from([g.sink()]));
    match g.interior().filter(|v| !near_sink.contains(v)).last() {
        Some(v) => Ok(BTreeSet::from([v])),
        None => bail!("every vertex touches the sink; choose star vertices with --star"),
    }
}

/// One centre per vertex: a single value is repeated, otherwise the values
/// are matched to the vertices in order.
fn centres_for(vertices: &BTreeSet<VertexId>, values: &[f64], default: f64) -> Result<BTreeMap<VertexId, f64>> {
    let values = if values.is_empty() { vec![default] } else { values.to_vec() };
    if values.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        bail!("--centre values must be positive");
    }
    if values.len() == 1 {
        return Ok(vertices.iter().map(|v| (*v, values[0])).collect());
    }
    if values.len() != vertices.len() {
        bail!("expected 1 or {} --centre values, got {}", vertices.len(), values.len());
    }
    Ok(vertices.iter().copied().zip(values).collect())
}

fn n_measure(g: &MetricGraph, cfg: &ExperimentConfig) -> Result<StatReport> {
    let star = star_set(g, &cfg.star)?;
    let reps = cfg.reps();
    let sg = star_extend(g, &star, 1.0)?;
    let caps = check_caps(&sg.graph, &star, &CapCheck { caps: cfg.caps.clone(), reps, ..CapCheck::default() }, cfg.seed)?;
    let sets = StarSets::new(g, &star)?;
    let levels = if cfg.centres.is_empty() { vec![0.5, 1.0, 2.0] } else { cfg.centres.clone() };
    let bridges = verify_bridge_counts(g, &star, &BridgeCheck::diagonal(&sets, &levels, cfg.eps, reps), cfg.seed)?;
    let centre: BTreeMap<VertexId, f64> = sets.boundary.iter().map(|v| (*v, levels[levels.len() / 2])).collect();
    let direct = verify_direct_sampler(g, &star, &centre, cfg.eps, reps, cfg.seed)?;
    let mut report = merge(&[caps, bridges, direct]);
    report.experiment = cfg.experiment.name();
    report.seed = cfg.seed;
    Ok(report)
}

fn oracle_cap(g: &MetricGraph) -> Result<usize> {
    (1..=40).find(|&c| tail_loop_mass(g, c) < 1e-3).context("loops are too long for an enumeration below 1e-3 truncated mass")
}

/// Runs one verification experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<StatReport> {
    cfg.validate()?;
    let g = graphs::load(cfg.graph_name())?;
    let reps = cfg.reps();
    let seed = cfg.seed;
    let mut report = match cfg.experiment {
        Experiment::Lejan => lejan_check(&g, reps, seed)?,
        Experiment::ClusterUniformity => verify_cluster_uniformity(&g, reps, seed)?,
        Experiment::Markov => {
            let star = star_set(&g, &cfg.star)?;
            let edges = g.edges_adjacent(&star);
            let mut vertices = star.clone();
            for e in &edges {
                vertices.insert(g.edge(*e).a);
                vertices.insert(g.edge(*e).b);
            }
            let sub = subgraph_boundary(&g, &vertices, &edges)?;
            let centres = centres_for(&sub.boundary, &cfg.centres, 1.0)?;
            verify_domain_markov(&g, &sub, &centres, &DomainCheck { eps: cfg.eps, reps, ..DomainCheck::default() }, seed)?
        }
        Experiment::Star => {
            let star = star_set(&g, &cfg.star)?;
            let centres = centres_for(&star, &cfg.centres, 1.0)?;
            verify_star_correspondence(&g, &centres, &StarCheck { eps: cfg.eps, reps, ..StarCheck::default() }, seed)?
        }
        Experiment::NMeasure => n_measure(&g, cfg)?,
        Experiment::Kingman => {
            let mut opts = KingmanCheck { reps, ..KingmanCheck::default() };
            if let Some(n) = cfg.grid {
                opts.grid_points = n;
            }
            crossing_law_check(&opts, seed)?
        }
        Experiment::Roundtrip => roundtrip_check(&g, &RoundTrip { reps, ..RoundTrip::default() }, seed)?,
        Experiment::Sde => sde_drift_check(&g, &SdeCheck { reps, ..SdeCheck::default() }, seed)?,
        Experiment::VisitLaw => {
            let v = match cfg.star.first() {
                Some(name) => g.vertex(name)?,
                None => g.interior().next().context("graph has no interior vertex")?,
            };
            visit_law_check(&g, v, reps, seed)?
        }
        Experiment::Oracle => oracle_check(&g, oracle_cap(&g)?, reps, seed)?,
        Experiment::ZeroHit => {
            zero_hit_check(&[(1.0, 1.0, 1.0), (0.5, 2.0, 1.0), (1.0, 1.0, 2.0)], reps, cfg.grid.unwrap_or(33), seed)?
        }
    };
    report.param("graph", cfg.graph_name());
    report.finalize();
    Ok(report)
}

/// Runs an experiment and writes `report.json` and `rows.csv` into the
/// output directory.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<StatReport> {
    let start = Instant::now();
    let report = run(cfg)?;
    write_report(&cfg.out, &report, start.elapsed().as_secs_f64())?;
    Ok(report)
}

pub fn write_report(dir: &Path, report: &StatReport, seconds: f64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.json"), report.to_file_json(seconds))?;
    std::fs::write(dir.join("rows.csv"), report.rows_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_star_avoids_the_sink() {
        let g = graphs::load("triangle").unwrap();
        let star = star_set(&g, &[]).unwrap();
        assert_eq!(star, BTreeSet::from([g.vertex("3").unwrap()]));
        assert!(star_set(&graphs::load("triangle-sinks").unwrap(), &[]).is_err());
        assert!(star_set(&g, &["9".to_string()]).is_err());
    }

    #[test]
    fn centres_repeat_or_match() {
        let vs: BTreeSet<VertexId> = [VertexId(0), VertexId(2)].into();
        assert_eq!(centres_for(&vs, &[], 1.0).unwrap().values().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(centres_for(&vs, &[0.5, 2.0], 1.0).unwrap()[&VertexId(2)], 2.0);
        assert!(centres_for(&vs, &[0.5, 2.0, 3.0], 1.0).is_err());
        assert!(centres_for(&vs, &[-1.0], 1.0).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::new(Experiment::Lejan, 1);
        cfg.reps = Some(0);
        assert!(run(&cfg).is_err());
        let mut cfg = ExperimentConfig::new(Experiment::Lejan, 1);
        cfg.graph = Some("nowhere.json".into());
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn experiment_names_match_the_command_line() {
        assert_eq!(Experiment::ClusterUniformity.name(), "cluster-uniformity");
        assert_eq!(Experiment::NMeasure.name(), "n-measure");
    }

    #[test]
    fn oracle_cap_on_built_ins() {
        let g = graphs::load("triangle-sinks").unwrap();
        assert_eq!(oracle_cap(&g).unwrap(), 11);
        assert!(tail_loop_mass(&g, 10) >= 1e-3 && tail_loop_mass(&g, 11) < 1e-3);
    }
}
