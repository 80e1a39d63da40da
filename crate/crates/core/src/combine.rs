//! Joint multi-area posterior by reweighting independent per-area draws.
//!
//! Candidates take one stored draw from each area. Each candidate is
//! weighted by the prior ratio `g/f0` of the mixture prior against the
//! independent prior and the weighted set is resampled.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::imis::{resample, WeightedSamples};
use crate::numeric::normalize_log_weights;
use crate::params::Theta;
use crate::priors::{Hyper, MixturePrior};

/// How one draw per area is picked for a candidate joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateMode {
    /// Proportional to the area weight; the joint weight is the prior ratio alone.
    #[default]
    Weighted,
    /// Uniform over stored draws; area weights are folded into the joint weight.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombineConfig {
    pub n_candidates: usize,
    pub n_resample: usize,
    pub mode: CandidateMode,
    pub execution: Execution,
}

impl Default for CombineConfig {
    fn default() -> Self {
        CombineConfig {
            n_candidates: 1_000_000,
            n_resample: 1_000,
            mode: CandidateMode::Weighted,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointPosterior {
    pub area_ids: Vec<String>,
    /// Resampled joints, one `Theta` per area each.
    pub joints: Vec<Vec<Theta>>,
    /// Normalized weights of `joints` (equal after resampling).
    pub weights: Vec<f64>,
    pub unique_count: usize,
    pub n_candidates: usize,
    /// Effective sample size of the weighted candidate set.
    pub candidate_ess: f64,
}

impl JointPosterior {
    pub fn k(&self) -> usize {
        self.area_ids.len()
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Draws for one area across all joints.
    pub fn area_thetas(&self, area: usize) -> Vec<Theta> {
        self.joints.iter().map(|j| j[area]).collect()
    }

    pub fn area_index(&self, area_id: &str) -> Option<usize> {
        self.area_ids.iter().position(|a| a == area_id)
    }
}

pub fn unique_efficiency(jp: &JointPosterior) -> f64 {
    jp.unique_count as f64 / jp.joints.len() as f64
}

pub fn combine_areas(
    per_area: &[WeightedSamples],
    hyper: &Hyper,
    config: &CombineConfig,
    rng: &mut dyn RngCore,
) -> Result<JointPosterior> {
    if per_area.is_empty() {
        return Err(Error::InvalidParameter("no areas to combine".into()));
    }
    if config.n_candidates == 0 || config.n_resample == 0 {
        return Err(Error::InvalidParameter("candidate and resample counts must be positive".into()));
    }
    for ws in per_area {
        ws.validate()?;
        if ws.is_empty() {
            return Err(Error::Data(format!("area {} has no stored samples", ws.area_id)));
        }
    }
    let k = per_area.len();
    let area_ids: Vec<String> = per_area.iter().map(|w| w.area_id.clone()).collect();

    if hyper.is_independent() {
        // The ratio is identically 1, so joints factorize: resample each area directly.
        hyper.validate()?;
        let per: Vec<Vec<usize>> = per_area
            .iter()
            .map(|ws| resample(ws, config.n_resample, rng).map(|r| r.indices))
            .collect::<Result<_>>()?;
        return Ok(assemble(per_area, area_ids, &per, config.n_candidates, config.n_resample as f64));
    }

    let prior = MixturePrior::new(hyper, k)?;
    let n = config.n_candidates;
    let per: Vec<Vec<usize>> = per_area
        .iter()
        .map(|ws| -> Result<Vec<usize>> {
            Ok(match config.mode {
                CandidateMode::Weighted => {
                    let dist = WeightedIndex::new(&ws.weight)
                        .map_err(|e| Error::InvalidParameter(format!("area {}: {e}", ws.area_id)))?;
                    (0..n).map(|_| dist.sample(rng)).collect()
                }
                CandidateMode::Uniform => {
                    let m = ws.len();
                    (0..n).map(|_| rand::Rng::random_range(&mut *rng, 0..m)).collect()
                }
            })
        })
        .collect::<Result<_>>()?;

    let log_w = config.execution.map_range(n, |c| {
        let joint: Vec<Theta> = (0..k).map(|a| per_area[a].thetas[per[a][c]]).collect();
        let mut lw = prior.log_ratio(&joint);
        if config.mode == CandidateMode::Uniform {
            lw += (0..k).map(|a| per_area[a].weight[per[a][c]].ln()).sum::<f64>();
        }
        lw
    });
    let (weights, _) = normalize_log_weights(&log_w).ok_or(Error::NoSupport)?;
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let picks: Vec<usize> = (0..config.n_resample).map(|_| dist.sample(rng)).collect();
    let chosen: Vec<Vec<usize>> = (0..k).map(|a| picks.iter().map(|&c| per[a][c]).collect()).collect();
    Ok(assemble(per_area, area_ids, &chosen, n, ess))
}

fn assemble(
    per_area: &[WeightedSamples],
    area_ids: Vec<String>,
    chosen: &[Vec<usize>],
    n_candidates: usize,
    candidate_ess: f64,
) -> JointPosterior {
    let count = chosen[0].len();
    let mut keys: Vec<Vec<usize>> = (0..count).map(|i| chosen.iter().map(|c| c[i]).collect()).collect();
    let joints = keys
        .iter()
        .map(|key| key.iter().enumerate().map(|(a, &idx)| per_area[a].thetas[idx]).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    JointPosterior {
        area_ids,
        joints,
        weights: vec![1.0 / count as f64; count],
        unique_count: keys.len(),
        n_candidates,
        candidate_ess,
    }
}
