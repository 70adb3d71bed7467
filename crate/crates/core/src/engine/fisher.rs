//! Diagnostic check of the Fisher-geometry improvement condition
//! `‖∇J‖²_F > ⟨∇J, ∇C_KL⟩_F` with `C_KL = J − J̃` and `⟨x, y⟩_F = xᵀ F⁺ y`.
//!
//! Gradients are taken with respect to per-state logits by central finite
//! differences on exact tabular returns. `F` is block diagonal with blocks
//! `d(s) (diag π_s − π_s π_sᵀ)`, where `d` is the discounted state occupancy.
//! Each block is singular along the all-ones direction (softmax shift
//! invariance), so the pseudo-inverse is applied; logit gradients are
//! orthogonal to that direction, which makes the pseudo-inverse exact on them.

use crate::error::{PspoError, Result};
use crate::linalg::pinv_apply_symmetric;
use crate::mdp::{discounted_occupancy, expected_return, regularized_return, SoftPolicy, Table, TabularMdp};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementCondition {
    /// `‖∇J‖²_F`
    pub lhs: f64,
    /// `⟨∇J, ∇C_KL⟩_F`
    pub rhs: f64,
    pub holds: bool,
    pub grad_j: Vec<f64>,
    pub grad_c: Vec<f64>,
    /// Largest ratio of non-null eigenvalues across the Fisher blocks.
    pub fisher_condition: f64,
    /// Total dimension treated as null space by the pseudo-inverse.
    pub null_dim: usize,
}

/// Central-difference gradient of `f` with respect to the logits of `policy`.
pub fn logit_gradient<F: Scalar>(
    policy: &SoftPolicy<F>,
    step: f64,
    f: impl Fn(&SoftPolicy<F>) -> Result<f64>,
) -> Result<Vec<f64>> {
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let logits = Table::from_fn(ns, na, |s, a| policy.prob(s, a).ln());
    let h = F::of(step);
    let mut grad = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let mut plus = logits.clone();
            plus.set(s, a, plus.get(s, a) + h);
            let mut minus = logits.clone();
            minus.set(s, a, minus.get(s, a) - h);
            let fp = f(&SoftPolicy::from_logits(&plus))?;
            let fm = f(&SoftPolicy::from_logits(&minus))?;
            grad.push((fp - fm) / (2.0 * step));
        }
    }
    Ok(grad)
}

/// Richardson-extrapolated central differences: `(4 D(h/2) − D(h)) / 3`.
pub fn logit_gradient_richardson<F: Scalar>(
    policy: &SoftPolicy<F>,
    step: f64,
    f: impl Fn(&SoftPolicy<F>) -> Result<f64>,
) -> Result<Vec<f64>> {
    let coarse = logit_gradient(policy, step, &f)?;
    let fine = logit_gradient(policy, step / 2.0, &f)?;
    Ok(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
}

pub fn improvement_condition_check<F: Scalar>(
    mdp: &TabularMdp<F>,
    policy: &SoftPolicy<F>,
    reference: &SoftPolicy<F>,
    alpha: F,
    fd_step: f64,
) -> Result<ImprovementCondition> {
    if !(1e-6..=1e-3).contains(&fd_step) {
        return Err(PspoError::InvalidInput("fd_step must lie in [1e-6, 1e-3]".into()));
    }
    if !policy.is_strictly_positive() {
        return Err(PspoError::InvalidInput("logit parameterization needs a positive policy".into()));
    }
    let j = |p: &SoftPolicy<F>| expected_return(mdp, p).map(|x| x.to_f64_lossy());
    let c = |p: &SoftPolicy<F>| -> Result<f64> {
        let full = expected_return(mdp, p)?.to_f64_lossy();
        let reg = regularized_return(mdp, p, reference, alpha)?.to_f64_lossy();
        Ok(full - reg)
    };
    let grad_j = logit_gradient(policy, fd_step, j)?;
    let grad_c = logit_gradient(policy, fd_step, c)?;
    let d = discounted_occupancy(mdp, policy)?;

    let na = policy.n_actions();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut fisher_condition = 1.0f64;
    let mut null_dim = 0;
    for s in 0..policy.n_states() {
        let w = d[s].to_f64_lossy().max(0.0);
        let pi: Vec<f64> = policy.row(s).iter().map(|p| p.to_f64_lossy()).collect();
        let mut block = vec![0.0; na * na];
        for a in 0..na {
            for b in 0..na {
                let diag = if a == b { pi[a] } else { 0.0 };
                block[a * na + b] = w * (diag - pi[a] * pi[b]);
            }
        }
        let gj = &grad_j[s * na..(s + 1) * na];
        let gc = &grad_c[s * na..(s + 1) * na];
        let solved = pinv_apply_symmetric(&block, gj, na, 1e-10);
        lhs += solved.x.iter().zip(gj).map(|(x, g)| x * g).sum::<f64>();
        rhs += solved.x.iter().zip(gc).map(|(x, g)| x * g).sum::<f64>();
        null_dim += solved.null_dim;
        if solved.condition.is_finite() {
            fisher_condition = fisher_condition.max(solved.condition);
        }
    }
    Ok(ImprovementCondition { lhs, rhs, holds: lhs > rhs, grad_j, grad_c, fisher_condition, null_dim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random::{random_mdp, random_policy};
    use crate::seed::rng_from_seed;

    #[test]
    fn reference_equal_to_policy_gives_zero_rhs() {
        let mdp: TabularMdp<f64> = random_mdp(3, 2, 0.9, 1.0, 4);
        let pi = random_policy(&mut rng_from_seed(1), 3, 2);
        let c = improvement_condition_check(&mdp, &pi, &pi, 0.7, 1e-4).unwrap();
        assert!(c.rhs.abs() < 1e-8);
        assert!(c.lhs > 0.0);
        assert!(c.holds);
    }

    #[test]
    fn zero_reward_never_holds() {
        let base: TabularMdp<f64> = random_mdp(3, 2, 0.9, 1.0, 4);
        let mdp = base.with_reward(Table::filled(3, 2, 0.0)).unwrap();
        let pi = random_policy(&mut rng_from_seed(2), 3, 2);
        let c = improvement_condition_check(&mdp, &pi, &pi, 0.5, 1e-4).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert!(!c.holds);
    }

    #[test]
    fn gradients_match_richardson_oracle() {
        let mdp: TabularMdp<f64> = random_mdp(3, 3, 0.9, 1.0, 9);
        let mut rng = rng_from_seed(9);
        let pi = random_policy(&mut rng, 3, 3);
        let j = |p: &SoftPolicy<f64>| expected_return(&mdp, p);
        let g = logit_gradient(&pi, 1e-4, j).unwrap();
        let oracle = logit_gradient_richardson(&pi, 1e-3, j).unwrap();
        let scale = oracle.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in g.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-5 * scale);
        }
        // Softmax shift invariance: each state's gradient sums to zero.
        for s in 0..3 {
            assert!(g[s * 3..s * 3 + 3].iter().sum::<f64>().abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_out_of_range_step() {
        let mdp: TabularMdp<f64> = random_mdp(2, 2, 0.9, 1.0, 1);
        let pi = SoftPolicy::uniform(2, 2);
        assert!(improvement_condition_check(&mdp, &pi, &pi, 1.0, 1e-2).is_err());
    }
}
