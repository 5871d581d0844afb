//! Differential checks of the optimized pipeline against the brute-force
//! oracle on generated worlds.

use serde::Serialize;

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::feasibility::WeightMode;
use crate::oracle::{compare, rerank_naive, worst_of, DiffReport};
use crate::pipeline::{prepare_bundle, rerank, RerankConfig};
use crate::routes::Mode;
use crate::synth::{generate_world, WorldConfig};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Matrices compared in every case.
pub const STAGES: [&str; 10] = [
    "d_A", "d_B", "d_C", "d_direct", "d_o", "s_A", "s_B", "s_C", "lambda_o", "d_star",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckConfig {
    pub seeds: Vec<u64>,
    /// Sample counts; each must be a positive multiple of 10.
    pub sizes: Vec<usize>,
    pub ks: Vec<usize>,
    pub modes: Vec<Mode>,
    pub m_intermediaries: usize,
    pub dim: usize,
    pub tolerance: f64,
    /// Adds 1e-3 to one cell of the optimized `d_star` of the first case.
    pub inject_fault: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            sizes: vec![60, 200],
            ks: vec![5, 20],
            modes: vec![Mode::Kr, Mode::Gnn],
            m_intermediaries: crate::feasibility::DEFAULT_M,
            dim: 32,
            tolerance: DEFAULT_TOLERANCE,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub mode: Mode,
    pub report: DiffReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub cases: Vec<CaseResult>,
    pub worst: DiffReport,
    pub pass: bool,
}

/// World with `n` samples: `n / 10` identities, two outfits of five samples.
pub fn check_world(n: usize, dim: usize, seed: u64) -> Result<WorldConfig> {
    if n == 0 || !n.is_multiple_of(10) {
        return Err(Error::config("n", format!("must be a positive multiple of 10, got {n}")));
    }
    Ok(WorldConfig {
        n_identities: n / 10,
        clothes_per_identity: 2,
        samples_per_clothes: 5,
        d_o: dim,
        d_ir: dim,
        d_re: dim,
        degrade_fraction: 0.3,
        query_fraction: 0.4,
        seed,
        ..WorldConfig::default()
    })
}

/// One optimized-versus-oracle comparison over all stages.
pub fn check_case(
    seed: u64,
    n: usize,
    k: usize,
    mode: Mode,
    cfg: &CheckConfig,
    fault: bool,
) -> Result<CaseResult> {
    let world = check_world(n, cfg.dim, seed)?;
    let bundle = prepare_bundle(&generate_world(&world)?.0)?;
    let rc = RerankConfig {
        mode,
        k,
        m_intermediaries: cfg.m_intermediaries,
        ..RerankConfig::default()
    };
    let fast = rerank(&bundle, &rc)?;
    let naive = rerank_naive(&bundle, k, mode, rc.m_intermediaries, WeightMode::Dynamic, rc.use_reliability, rc.rescale_direct)?;
    let mut fast_named = fast.named();
    let faulty;
    if fault {
        let d = &fast.fused;
        let mut v = d.values().to_vec();
        let p = v.len() / 2;
        v[p] += 1e-3;
        faulty = DistanceMatrix::new(d.row_ids().to_vec(), d.col_ids().to_vec(), v)?;
        for entry in fast_named.iter_mut() {
            if entry.0 == "d_star" {
                entry.1 = &faulty;
            }
        }
    }
    let naive_named = naive.named();
    let mut reports = Vec::new();
    for stage in STAGES {
        reports.push(compare(stage, find(&naive_named, stage), find(&fast_named, stage), cfg.tolerance)?);
    }
    Ok(CaseResult {
        seed,
        n,
        k,
        mode,
        report: worst_of(&reports, cfg.tolerance),
    })
}

fn find<'a>(list: &[(&'static str, &'a DistanceMatrix)], stage: &str) -> &'a DistanceMatrix {
    list.iter().find(|(name, _)| *name == stage).map(|(_, m)| *m).expect("stage present")
}

/// Every (seed, size, k, mode) combination.
pub fn run_checks(cfg: &CheckConfig) -> Result<CheckSummary> {
    let mut cases = Vec::new();
    for &seed in &cfg.seeds {
        for &n in &cfg.sizes {
            for &k in &cfg.ks {
                for &mode in &cfg.modes {
                    let fault = cfg.inject_fault && cases.is_empty();
                    cases.push(check_case(seed, n, k, mode, cfg, fault)?);
                }
            }
        }
    }
    let reports: Vec<DiffReport> = cases.iter().map(|c| c.report.clone()).collect();
    let worst = worst_of(&reports, cfg.tolerance);
    Ok(CheckSummary {
        pass: worst.pass,
        worst,
        cases,
    })
}
