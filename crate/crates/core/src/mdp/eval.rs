//! Exact policy evaluation by direct linear solves.

use super::{kl_divergence, QFunction, SoftPolicy, Table, TabularMdp};
use crate::error::Result;
use crate::linalg;
use crate::scalar::Scalar;

/// State values `V^π` of `policy` under `mdp` for an arbitrary reward table,
/// from `(I − γ P_π) V = r_π`.
pub fn state_values<F: Scalar>(mdp: &TabularMdp<F>, policy: &SoftPolicy<F>, reward: &Table<F>) -> Result<Vec<F>> {
    mdp.check_policy(policy)?;
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut a = vec![F::zero(); ns * ns];
    let mut b = vec![F::zero(); ns];
    for s in 0..ns {
        a[s * ns + s] = F::one();
        for act in 0..na {
            let p = policy.prob(s, act);
            if p == F::zero() {
                continue;
            }
            b[s] += p * reward.get(s, act);
            for (s2, &t) in mdp.next_row(s, act).iter().enumerate() {
                a[s * ns + s2] -= gamma * p * t;
            }
        }
    }
    linalg::solve(&a, &b, ns)
}

/// `Q(s,a) = reward(s,a) + γ Σ_{s'} T(s'|s,a) V(s')`.
fn q_from_values<F: Scalar>(mdp: &TabularMdp<F>, reward: &Table<F>, v: &[F]) -> QFunction<F> {
    let gamma = mdp.gamma();
    let table = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        let next: F = mdp.next_row(s, a).iter().zip(v).map(|(&t, &vs)| t * vs).sum();
        reward.get(s, a) + gamma * next
    });
    QFunction::new(table).expect("finite values from a nonsingular solve")
}

/// Evaluates `policy` with a substitute reward table (same dynamics).
pub fn evaluate_with_reward<F: Scalar>(
    mdp: &TabularMdp<F>,
    policy: &SoftPolicy<F>,
    reward: &Table<F>,
) -> Result<QFunction<F>> {
    let v = state_values(mdp, policy, reward)?;
    Ok(q_from_values(mdp, reward, &v))
}

/// The unique `Q` with `Q = r + γ T π Q`.
pub fn exact_policy_eval<F: Scalar>(mdp: &TabularMdp<F>, policy: &SoftPolicy<F>) -> Result<QFunction<F>> {
    evaluate_with_reward(mdp, policy, mdp.reward())
}

fn rho0_weighted<F: Scalar>(mdp: &TabularMdp<F>, policy: &SoftPolicy<F>, q: &QFunction<F>) -> F {
    (0..mdp.n_states())
        .map(|s| {
            let vs: F = policy.row(s).iter().zip(q.row(s)).map(|(&p, &qv)| p * qv).sum();
            mdp.rho0()[s] * vs
        })
        .sum()
}

/// `J(π, T) = E_{ρ0, π}[Σ γ^t r]`.
pub fn expected_return<F: Scalar>(mdp: &TabularMdp<F>, policy: &SoftPolicy<F>) -> Result<F> {
    let q = exact_policy_eval(mdp, policy)?;
    Ok(rho0_weighted(mdp, policy, &q))
}

fn kl_penalized_reward<F: Scalar>(
    mdp: &TabularMdp<F>,
    policy: &SoftPolicy<F>,
    reference: &SoftPolicy<F>,
    alpha: F,
) -> Result<Table<F>> {
    mdp.check_policy(reference)?;
    let mut reward = mdp.reward().clone();
    if alpha == F::zero() {
        return Ok(reward);
    }
    for s in 0..mdp.n_states() {
        let kl = kl_divergence(policy, reference, s)?;
        for v in reward.row_mut(s) {
            *v -= alpha * kl;
        }
    }
    Ok(reward)
}

/// `J̃(π)`: expected return of the reward `r − α·KL(π(·|s) ‖ μ(·|s))`.
pub fn regularized_return<F: Scalar>(
    mdp: &TabularMdp<F>,
    policy: &SoftPolicy<F>,
    reference: &SoftPolicy<F>,
    alpha: F,
) -> Result<F> {
    let reward = kl_penalized_reward(mdp, policy, reference, alpha)?;
    let q = evaluate_with_reward(mdp, policy, &reward)?;
    Ok(rho0_weighted(mdp, policy, &q))
}

/// Soft action values of `policy` under the KL-penalized objective:
/// `Q(s,a) = r(s,a) + γ E_{s'}[V(s')]` with
/// `V(s) = E_π[Q(s,·)] − α KL(π(·|s) ‖ μ(·|s))`.
pub fn regularized_policy_eval<F: Scalar>(
    mdp: &TabularMdp<F>,
    policy: &SoftPolicy<F>,
    reference: &SoftPolicy<F>,
    alpha: F,
) -> Result<QFunction<F>> {
    let penalized = kl_penalized_reward(mdp, policy, reference, alpha)?;
    let v = state_values(mdp, policy, &penalized)?;
    Ok(q_from_values(mdp, mdp.reward(), &v))
}

/// Normalized discounted state occupancy
/// `d(s) = (1 − γ) Σ_t γ^t P(s_t = s)`, which sums to one.
pub fn discounted_occupancy<F: Scalar>(mdp: &TabularMdp<F>, policy: &SoftPolicy<F>) -> Result<Vec<F>> {
    mdp.check_policy(policy)?;
    let ns = mdp.n_states();
    let gamma = mdp.gamma();
    // (I − γ P_πᵀ) d = (1 − γ) ρ0
    let mut a = vec![F::zero(); ns * ns];
    for s in 0..ns {
        a[s * ns + s] += F::one();
        for act in 0..mdp.n_actions() {
            let p = policy.prob(s, act);
            for (s2, &t) in mdp.next_row(s, act).iter().enumerate() {
                a[s2 * ns + s] -= gamma * p * t;
            }
        }
    }
    let b: Vec<F> = mdp.rho0().iter().map(|&r| (F::one() - gamma) * r).collect();
    linalg::solve(&a, &b, ns)
}
