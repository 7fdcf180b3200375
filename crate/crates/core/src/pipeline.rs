//! One entry point for every test method.

use serde::Serialize;

use crate::error::Result;
use crate::estimators::{pooled_moments, GroupSample, PooledMoments};
use crate::hypotheses::HypothesisSpec;
use crate::quadform::{mc_test, Engine, Method, TestReport};
use crate::resampling::{resampling_test, ResamplingConfig, WildWeight};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_MC_REPS: usize = 10_000;
pub const DEFAULT_BOOT_REPS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestOptions {
    pub alpha: f64,
    /// Monte-Carlo draws for `ats-mc`, `atsfz-mc` and `ats-tay`.
    pub mc_reps: usize,
    /// Bootstrap replicates for `ats-par` and `ats-wild`.
    pub boot_reps: usize,
    pub seed: u64,
    pub wild_weight: WildWeight,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mc_reps: DEFAULT_MC_REPS,
            boot_reps: DEFAULT_BOOT_REPS,
            seed: 0,
            wild_weight: WildWeight::Rademacher,
        }
    }
}

impl TestOptions {
    /// Replicate count used by `method`.
    pub fn reps_for(&self, method: Method) -> usize {
        match method.engine {
            Engine::Par | Engine::Wild => self.boot_reps,
            Engine::Mc | Engine::FzMc | Engine::Tay => self.mc_reps,
        }
    }
}

/// Runs `method` on precomputed moments.
pub fn run_test(pm: &PooledMoments, h: &HypothesisSpec, method: Method, opts: &TestOptions) -> Result<TestReport> {
    let reps = opts.reps_for(method);
    match method.engine {
        Engine::Mc | Engine::FzMc => mc_test(pm, h, method, opts.alpha, reps, opts.seed),
        Engine::Par | Engine::Wild | Engine::Tay => {
            let cfg = ResamplingConfig { wild_weight: opts.wild_weight, ..ResamplingConfig::new(reps, opts.seed) };
            resampling_test(pm, h, method, opts.alpha, &cfg)
        }
    }
}

/// Estimates the moments of `groups` and runs `method`.
pub fn test_groups(
    groups: &[GroupSample],
    h: &HypothesisSpec,
    method: Method,
    opts: &TestOptions,
) -> Result<TestReport> {
    run_test(&pooled_moments(groups)?, h, method, opts)
}
