use std::collections::HashSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates compared in total across all blocks.
    pub samples: usize,
    pub seed: u64,
    /// Worst pairs kept per block.
    pub worst: usize,
    /// Candidate draws allowed before giving up on reaching `samples`.
    pub max_draws: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-2,
            samples: 200,
            seed: 0,
            worst: 5,
            max_draws: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradPair {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    /// Candidates rejected because a ±step perturbation changed the discrete structure.
    pub screened_out: usize,
    pub within_tolerance: usize,
    pub max_rel_error: f64,
    pub fraction_within: f64,
    pub worst: Vec<GradPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub step: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradientReport {
    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn within_tolerance(&self) -> usize {
        self.blocks.iter().map(|b| b.within_tolerance).sum()
    }

    pub fn fraction_within(&self) -> f64 {
        match self.checked() {
            0 => 1.0,
            n => self.within_tolerance() as f64 / n as f64,
        }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: GradientReport) {
        self.blocks.extend(other.blocks);
    }

    /// Plain-text table, one row per block.
    pub fn summary_table(&self) -> String {
        use std::fmt::Write;
        let mut s = format!(
            "{:<24} {:>8} {:>9} {:>12} {:>10}\n",
            "block", "checked", "screened", "max_rel_err", "within"
        );
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "{:<24} {:>8} {:>9} {:>12.3e} {:>9.1}%",
                b.name,
                b.checked,
                b.screened_out,
                b.max_rel_error,
                100.0 * b.fraction_within
            );
        }
        let _ = writeln!(
            s,
            "{:<24} {:>8} {:>9} {:>12.3e} {:>9.1}%",
            "total",
            self.checked(),
            self.blocks.iter().map(|b| b.screened_out).sum::<usize>(),
            self.max_rel_error(),
            100.0 * self.fraction_within()
        );
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Discrete-structure fingerprint used to skip coordinates sitting on a kink.
pub type Screen<'a, T> = &'a mut dyn FnMut(&[T]) -> Result<Vec<u64>>;

/// Compares `analytic` with central differences of `f` on seeded random
/// coordinates drawn from `blocks` (named index ranges; all of `params` when empty).
pub fn finite_difference_check<T: Real>(
    mut f: impl FnMut(&[T]) -> Result<T>,
    params: &[T],
    analytic: &[T],
    blocks: &[(&str, Range<usize>)],
    options: &GradCheckOptions,
    mut screen: Option<Screen<'_, T>>,
) -> Result<GradientReport> {
    if params.len() != analytic.len() {
        return Err(Error::shape(params.len(), analytic.len()));
    }
    if !(options.step > 0.0) {
        return Err(Error::Configuration("finite-difference step must be positive".into()));
    }
    let whole = [("params", 0..params.len())];
    let blocks: Vec<(&str, Range<usize>)> = if blocks.is_empty() { whole.to_vec() } else { blocks.to_vec() };
    if let Some((name, r)) = blocks.iter().find(|(_, r)| r.end > params.len() || r.is_empty()) {
        return Err(Error::Configuration(format!("block {name} range {r:?} is empty or out of bounds")));
    }
    let total: usize = blocks.iter().map(|(_, r)| r.len()).sum();
    let target = options.samples.min(total);

    let base_sig = match screen.as_deref_mut() {
        Some(s) => Some(s(params)?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut tried = HashSet::new();
    let mut per_block: Vec<(Vec<GradPair>, usize)> = vec![(Vec::new(), 0); blocks.len()];
    let mut checked = 0;
    let h = T::lit(options.step);
    let mut draws = 0;
    while checked < target && draws < options.max_draws && tried.len() < total {
        draws += 1;
        let mut pick = rng.random_range(0..total);
        let mut bi = 0;
        while pick >= blocks[bi].1.len() {
            pick -= blocks[bi].1.len();
            bi += 1;
        }
        let idx = blocks[bi].1.start + pick;
        if !tried.insert(idx) {
            continue;
        }
        let mut p = params.to_vec();
        p[idx] = params[idx] + h;
        let plus_params = p.clone();
        p[idx] = params[idx] - h;
        let minus_params = p;
        if let (Some(s), Some(base)) = (screen.as_deref_mut(), &base_sig) {
            if s(&plus_params)? != *base || s(&minus_params)? != *base {
                per_block[bi].1 += 1;
                continue;
            }
        }
        let numeric = (f(&plus_params)? - f(&minus_params)?).as_f64() / (2.0 * options.step);
        let a = analytic[idx].as_f64();
        per_block[bi].0.push(GradPair {
            index: idx,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
        checked += 1;
    }

    let reports = blocks
        .iter()
        .zip(per_block)
        .map(|((name, _), (mut pairs, screened_out))| {
            let within = pairs.iter().filter(|p| p.rel_error < options.tolerance).count();
            let n = pairs.len();
            pairs.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
            BlockReport {
                name: name.to_string(),
                checked: n,
                screened_out,
                within_tolerance: within,
                max_rel_error: pairs.first().map_or(0.0, |p| p.rel_error),
                fraction_within: if n == 0 { 1.0 } else { within as f64 / n as f64 },
                worst: pairs.into_iter().take(options.worst).collect(),
            }
        })
        .collect();
    Ok(GradientReport {
        step: options.step,
        tolerance: options.tolerance,
        blocks: reports,
    })
}
