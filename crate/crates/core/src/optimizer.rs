//! Portfolio evaluation and Monte Carlo efficient-frontier sampling.
//!
//! Candidate portfolios are long-only weight vectors drawn by normalizing
//! independent uniforms. Each candidate carries its annual return, annual
//! volatility, and Sharpe ratio; selection ops pick the minimum-risk and
//! maximum-Sharpe candidates and extract the Pareto-efficient frontier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::CovarianceMatrix;

/// Annual risk-free return used in the Sharpe ratio unless overridden.
pub const DEFAULT_RISK_FREE: f64 = 0.01;

/// Default number of Monte Carlo candidates.
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("dimension mismatch: weights n={weights}, inputs n={inputs}")]
    DimensionMismatch { weights: usize, inputs: usize },
    #[error("covariance matrix is not symmetric at ({0}, {1})")]
    AsymmetricMatrix(usize, usize),
    #[error("weight {0} is negative")]
    NegativeWeight(f64),
    #[error("weights sum to {0}, not 1")]
    WeightSumOff(f64),
    #[error("cannot build a portfolio over 0 assets")]
    EmptyUniverse,
    #[error("volatility must be positive, got {0}")]
    NonPositiveVolatility(f64),
    #[error("no candidates")]
    NoCandidates,
}

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Long-only portfolio weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, OptimizerError> {
        if weights.is_empty() {
            return Err(OptimizerError::EmptyUniverse);
        }
        for &w in &weights {
            if !(w >= 0.0) {
                return Err(OptimizerError::NegativeWeight(w));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(OptimizerError::WeightSumOff(sum));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One sampled portfolio with its evaluated statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioCandidate {
    pub weights: WeightVector,
    pub annual_return: f64,
    pub annual_vol: f64,
    pub sharpe: f64,
}

/// All candidates from one Monte Carlo run, with the inputs that pin it down.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierResult {
    pub candidates: Vec<PortfolioCandidate>,
    pub seed: u64,
    pub risk_free: f64,
}

/// Expected portfolio return: the weight-weighted sum of per-asset expected
/// annual returns.
pub fn portfolio_return(weights: &WeightVector, expected: &[f64]) -> Result<f64, OptimizerError> {
    if weights.len() != expected.len() {
        return Err(OptimizerError::DimensionMismatch {
            weights: weights.len(),
            inputs: expected.len(),
        });
    }
    Ok(weights
        .as_slice()
        .iter()
        .zip(expected)
        .map(|(w, r)| w * r)
        .sum())
}

/// Portfolio variance as the quadratic form `w' Sigma w`. The covariance
/// matrix must already be annualized (daily covariance times 250) and exactly
/// symmetric.
pub fn portfolio_variance(
    weights: &WeightVector,
    cov: &CovarianceMatrix,
) -> Result<f64, OptimizerError> {
    let n = weights.len();
    if cov.n() != n {
        return Err(OptimizerError::DimensionMismatch {
            weights: n,
            inputs: cov.n(),
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if cov.get(i, j) != cov.get(j, i) {
                return Err(OptimizerError::AsymmetricMatrix(i, j));
            }
        }
    }
    let w = weights.as_slice();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += cov.get(i, j) * w[j];
        }
        total += w[i] * row;
    }
    Ok(total)
}

/// Sharpe ratio: excess return over the risk-free return per unit of
/// volatility.
pub fn sharpe_ratio(
    annual_return: f64,
    annual_vol: f64,
    risk_free: f64,
) -> Result<f64, OptimizerError> {
    if annual_vol <= 0.0 {
        return Err(OptimizerError::NonPositiveVolatility(annual_vol));
    }
    Ok((annual_return - risk_free) / annual_vol)
}

/// The 1/n portfolio.
pub fn equal_weight(n: usize) -> Result<WeightVector, OptimizerError> {
    if n == 0 {
        return Err(OptimizerError::EmptyUniverse);
    }
    WeightVector::new(vec![1.0 / n as f64; n])
}

/// Draws a random weight vector: n independent uniforms on (0, 1), each
/// divided by their sum. Resamples in the measure-zero event of a zero sum.
pub fn sample_weights(n: usize, rng: &mut ChaCha8Rng) -> Result<WeightVector, OptimizerError> {
    if n == 0 {
        return Err(OptimizerError::EmptyUniverse);
    }
    loop {
        let draws: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 {
            return WeightVector::new(draws.into_iter().map(|u| u / sum).collect());
        }
    }
}

/// RNG substream for candidate `index` of a run seeded with `seed`.
/// Candidate i depends only on (seed, i), so any worker partitioning of the
/// sample range reproduces the same candidates.
fn candidate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Samples `samples` random portfolios and evaluates return, volatility, and
/// Sharpe ratio for each. `cov` must be annualized.
pub fn monte_carlo_frontier(
    expected: &[f64],
    cov: &CovarianceMatrix,
    samples: usize,
    risk_free: f64,
    seed: u64,
) -> Result<FrontierResult, OptimizerError> {
    let n = expected.len();
    if n == 0 {
        return Err(OptimizerError::EmptyUniverse);
    }
    if cov.n() != n {
        return Err(OptimizerError::DimensionMismatch {
            weights: n,
            inputs: cov.n(),
        });
    }
    if samples == 0 {
        return Err(OptimizerError::NoCandidates);
    }
    let mut candidates = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut rng = candidate_rng(seed, i as u64);
        let weights = sample_weights(n, &mut rng)?;
        let annual_return = portfolio_return(&weights, expected)?;
        let variance = portfolio_variance(&weights, cov)?;
        let annual_vol = variance.max(0.0).sqrt();
        let sharpe = sharpe_ratio(annual_return, annual_vol, risk_free)?;
        candidates.push(PortfolioCandidate {
            weights,
            annual_return,
            annual_vol,
            sharpe,
        });
    }
    Ok(FrontierResult {
        candidates,
        seed,
        risk_free,
    })
}

/// Candidate with the minimum annual volatility; ties go to the lower sample
/// index.
pub fn min_risk_portfolio(fr: &FrontierResult) -> Result<&PortfolioCandidate, OptimizerError> {
    fr.candidates
        .iter()
        .reduce(|best, c| if c.annual_vol < best.annual_vol { c } else { best })
        .ok_or(OptimizerError::NoCandidates)
}

/// Candidate with the maximum Sharpe ratio; ties go to the lower sample index.
pub fn max_sharpe_portfolio(fr: &FrontierResult) -> Result<&PortfolioCandidate, OptimizerError> {
    fr.candidates
        .iter()
        .reduce(|best, c| if c.sharpe > best.sharpe { c } else { best })
        .ok_or(OptimizerError::NoCandidates)
}

/// Pareto-non-dominated candidates under (minimize volatility, maximize
/// return), sorted by ascending volatility. A candidate is dominated if some
/// other has vol <= and return >= with at least one strict.
pub fn efficient_frontier(
    fr: &FrontierResult,
) -> Result<Vec<PortfolioCandidate>, OptimizerError> {
    if fr.candidates.is_empty() {
        return Err(OptimizerError::NoCandidates);
    }
    let mut sorted: Vec<&PortfolioCandidate> = fr.candidates.iter().collect();
    // Volatility ascending; on ties, return descending so the dominating
    // candidate comes first.
    sorted.sort_by(|a, b| {
        a.annual_vol
            .partial_cmp(&b.annual_vol)
            .unwrap()
            .then(b.annual_return.partial_cmp(&a.annual_return).unwrap())
    });

    let mut front: Vec<PortfolioCandidate> = Vec::new();
    for c in sorted {
        let dominated = front.last().is_some_and(|last| {
            last.annual_return > c.annual_return
                || (last.annual_return == c.annual_return && last.annual_vol < c.annual_vol)
        });
        if !dominated {
            front.push(c.clone());
        }
    }
    Ok(front)
}
