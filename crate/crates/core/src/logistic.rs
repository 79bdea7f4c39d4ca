//! Two-parameter logistic regression of triple closure on log10 representation,
//! fitted by Newton-Raphson with Wald inference.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::math;

/// Multiplier for the 95% Wald interval.
pub const WALD_Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence once the max-norm of the score falls below this.
    pub score_tol: f64,
    /// ...or once the max-norm of the Newton step falls below this.
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 100, score_tol: 1e-10, step_tol: 1e-12 }
    }
}

/// Grouped binomial observation: `successes` out of `trials` at covariate `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialGroup {
    pub x: f64,
    pub successes: f64,
    pub trials: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub max_abs_score: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("no observations")]
    Empty,
    #[error("need at least two distinct covariate values")]
    SingleCovariate,
    #[error("representation {0} outside (0, 1)")]
    InvalidWeight(f64),
    #[error("outcomes are separated by the covariate; the maximum likelihood estimate does not exist")]
    Separation,
    #[error("observed information is singular")]
    Singular,
    #[error("Newton-Raphson did not converge in {} iterations", .trace.len())]
    NonConvergence { trace: Vec<IterationRecord> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta0: f64,
    pub beta1: f64,
    pub se0: f64,
    pub se1: f64,
    pub ci1: (f64, f64),
    /// Two-sided Wald p-value for `beta1 = 0`.
    pub p_value: f64,
    pub n_obs: f64,
    /// Odds multiplier for a ten-fold increase in representation.
    pub odds_ratio_per_decade: f64,
    pub iterations: usize,
    pub max_abs_score: f64,
    /// Observed information (negated Hessian) at the optimum.
    pub information: [[f64; 2]; 2],
}

/// Fits `logit P(closed) = beta0 + beta1 * log10(w)` over `(closed, w)` pairs.
pub fn fit_logistic(observations: &[(bool, f64)], opts: &FitOptions) -> Result<LogisticFit, FitError> {
    if observations.is_empty() {
        return Err(FitError::Empty);
    }
    let mut groups: BTreeMap<u64, (f64, f64, f64)> = BTreeMap::new();
    for &(closed, w) in observations {
        if !(w > 0.0 && w < 1.0) {
            return Err(FitError::InvalidWeight(w));
        }
        let g = groups.entry(w.to_bits()).or_insert((math::log10(w), 0.0, 0.0));
        g.1 += closed as u8 as f64;
        g.2 += 1.0;
    }
    let grouped: Vec<BinomialGroup> =
        groups.into_values().map(|(x, successes, trials)| BinomialGroup { x, successes, trials }).collect();
    fit_grouped(&grouped, opts)
}

/// True when a threshold on `x` splits successes from failures (complete or
/// quasi-complete separation), in which case no finite MLE exists.
pub fn is_separated(groups: &[BinomialGroup]) -> bool {
    let succ = groups.iter().filter(|g| g.successes > 0.0).map(|g| g.x);
    let fail = groups.iter().filter(|g| g.successes < g.trials).map(|g| g.x);
    let (smin, smax) = succ.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (fmin, fmax) = fail.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if smin > smax || fmin > fmax {
        return true;
    }
    smax <= fmin || fmax <= smin
}

struct Evaluation {
    score: [f64; 2],
    info: [[f64; 2]; 2],
}

fn evaluate(groups: &[BinomialGroup], b0: f64, b1: f64) -> Evaluation {
    let mut score = [0.0; 2];
    let mut info = [[0.0; 2]; 2];
    for g in groups {
        let p = math::logistic(b0 + b1 * g.x);
        let resid = g.successes - g.trials * p;
        let w = g.trials * p * (1.0 - p);
        score[0] += resid;
        score[1] += resid * g.x;
        info[0][0] += w;
        info[0][1] += w * g.x;
        info[1][1] += w * g.x * g.x;
    }
    info[1][0] = info[0][1];
    Evaluation { score, info }
}

fn invert(m: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn max_abs(v: [f64; 2]) -> f64 {
    math::abs(v[0]).max(math::abs(v[1]))
}

/// Newton-Raphson on grouped binomial data.
pub fn fit_grouped(groups: &[BinomialGroup], opts: &FitOptions) -> Result<LogisticFit, FitError> {
    let n: f64 = groups.iter().map(|g| g.trials).sum();
    if groups.is_empty() || !(n > 0.0) {
        return Err(FitError::Empty);
    }
    let first = groups[0].x;
    if groups.iter().all(|g| g.x == first) {
        return Err(FitError::SingleCovariate);
    }
    if is_separated(groups) {
        return Err(FitError::Separation);
    }

    let ybar = groups.iter().map(|g| g.successes).sum::<f64>() / n;
    let (mut b0, mut b1) = (math::logit(ybar), 0.0);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut eval = evaluate(groups, b0, b1);
    loop {
        let score_norm = max_abs(eval.score);
        trace.push(IterationRecord { iteration: iterations, beta0: b0, beta1: b1, max_abs_score: score_norm });
        if score_norm < opts.score_tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(FitError::NonConvergence { trace });
        }
        let inv = invert(&eval.info).ok_or(FitError::Singular)?;
        let step = [
            inv[0][0] * eval.score[0] + inv[0][1] * eval.score[1],
            inv[1][0] * eval.score[0] + inv[1][1] * eval.score[1],
        ];
        b0 += step[0];
        b1 += step[1];
        iterations += 1;
        eval = evaluate(groups, b0, b1);
        if max_abs(step) < opts.step_tol {
            trace.push(IterationRecord {
                iteration: iterations,
                beta0: b0,
                beta1: b1,
                max_abs_score: max_abs(eval.score),
            });
            break;
        }
    }

    let cov = invert(&eval.info).ok_or(FitError::Singular)?;
    let se0 = math::sqrt(cov[0][0]);
    let se1 = math::sqrt(cov[1][1]);
    Ok(LogisticFit {
        beta0: b0,
        beta1: b1,
        se0,
        se1,
        ci1: (b1 - WALD_Z95 * se1, b1 + WALD_Z95 * se1),
        p_value: math::two_sided_normal_p(b1 / se1),
        n_obs: n,
        odds_ratio_per_decade: math::exp(b1),
        iterations,
        max_abs_score: max_abs(eval.score),
        information: eval.info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn group(x: f64, successes: f64, trials: f64) -> BinomialGroup {
        BinomialGroup { x, successes, trials }
    }

    #[test]
    fn no_effect() {
        let fit = fit_grouped(&[group(-2.0, 50.0, 100.0), group(-1.0, 50.0, 100.0)], &FitOptions::default()).unwrap();
        assert!(fit.beta0.abs() < 1e-12 && fit.beta1.abs() < 1e-12);
        assert_eq!(fit.odds_ratio_per_decade, math::exp(fit.beta1));
    }

    #[test]
    fn two_group_logit_difference() {
        let obs: Vec<(bool, f64)> =
            (0..1000).map(|i| (i < 500, 0.01)).chain((0..1000).map(|i| (i < 300, 0.1))).collect();
        let fit = fit_logistic(&obs, &FitOptions::default()).unwrap();
        let expected = math::logit(0.3) - math::logit(0.5);
        assert!((fit.beta1 - expected).abs() < 1e-9, "{}", fit.beta1);
        assert!((expected + 0.847).abs() < 1e-3);
        assert!(fit.max_abs_score < 1e-10);
        assert_eq!(fit.ci1, (fit.beta1 - 1.96 * fit.se1, fit.beta1 + 1.96 * fit.se1));
        let info = fit.information;
        assert!(info[0][0] > 0.0 && info[0][0] * info[1][1] - info[0][1] * info[1][0] > 0.0);
    }

    #[test]
    fn separation_is_flagged() {
        assert_eq!(
            fit_grouped(&[group(-2.0, 0.0, 10.0), group(-1.0, 10.0, 10.0)], &FitOptions::default()).unwrap_err(),
            FitError::Separation
        );
        // Quasi-complete: the middle group is mixed but sits on the boundary.
        let quasi = [group(0.0, 0.0, 1.0), group(1.0, 1.0, 2.0), group(2.0, 1.0, 1.0)];
        assert!(is_separated(&quasi));
        let overlap = [group(0.0, 1.0, 3.0), group(1.0, 1.0, 2.0), group(2.0, 2.0, 3.0)];
        assert!(!is_separated(&overlap));
        assert_eq!(
            fit_grouped(&[group(0.0, 0.0, 4.0), group(1.0, 0.0, 4.0)], &FitOptions::default()).unwrap_err(),
            FitError::Separation
        );
    }

    #[test]
    fn input_validation() {
        assert_eq!(fit_logistic(&[], &FitOptions::default()).unwrap_err(), FitError::Empty);
        assert_eq!(
            fit_logistic(&[(true, 0.1), (false, 0.1)], &FitOptions::default()).unwrap_err(),
            FitError::SingleCovariate
        );
        assert_eq!(fit_logistic(&[(true, 1.5)], &FitOptions::default()).unwrap_err(), FitError::InvalidWeight(1.5));
    }

    #[test]
    fn iteration_cap_reports_trace() {
        let opts = FitOptions { max_iter: 1, score_tol: 0.0, step_tol: 0.0 };
        let err = fit_grouped(&[group(-2.0, 30.0, 100.0), group(-1.0, 60.0, 100.0)], &opts).unwrap_err();
        match err {
            FitError::NonConvergence { trace } => assert_eq!(trace.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn simulate(rng: &mut ChaCha8Rng, n: usize, b0: f64, b1: f64) -> Vec<(bool, f64)> {
        (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-3.7..-1.1);
                let w = libm::pow(10.0, x);
                (rng.random_bool(math::logistic(b0 + b1 * math::log10(w))), w)
            })
            .collect()
    }

    #[test]
    fn consistent_as_n_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut last_se = f64::INFINITY;
        for n in [1_000, 10_000, 100_000] {
            let fit = fit_logistic(&simulate(&mut rng, n, -0.5, -0.208), &FitOptions::default()).unwrap();
            assert!((fit.beta1 + 0.208).abs() < 4.0 * fit.se1);
            assert!((fit.beta0 + 0.5).abs() < 4.0 * fit.se0);
            assert!(fit.se1 < last_se / 2.5);
            last_se = fit.se1;
        }
        assert!(last_se < 0.02);
    }
}
