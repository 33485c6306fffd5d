//! V-trace off-policy corrections and the actor-critic loss.
//!
//! Targets are computed outside the tape in f64 by the standard backward
//! recursion; the loss consumes them as constants, so the baseline
//! regresses toward a fixed v_s and the policy gradient uses a fixed
//! advantage, matching the stop-gradient convention.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Scalar;

/// Discount and truncation clips. The standard requirement rho_bar >= c_bar
/// is validated, as is gamma in [0, 1).
#[derive(Debug, Clone, Copy)]
pub struct VTraceConfig {
    pub gamma: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
}

impl Default for VTraceConfig {
    fn default() -> Self {
        VTraceConfig {
            gamma: 0.99,
            rho_bar: 1.0,
            c_bar: 1.0,
        }
    }
}

impl VTraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::contract(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.rho_bar < 1.0 || self.c_bar < 1.0 {
            return Err(Error::contract(format!(
                "clips must be >= 1, got rho_bar={} c_bar={}",
                self.rho_bar, self.c_bar
            )));
        }
        if self.rho_bar < self.c_bar {
            return Err(Error::contract(format!(
                "rho_bar ({}) must be >= c_bar ({})",
                self.rho_bar, self.c_bar
            )));
        }
        Ok(())
    }
}

/// Targets v_s and policy advantages for one unroll.
#[derive(Debug, Clone)]
pub struct VTraceOutput {
    pub targets: Vec<f64>,
    pub advantages: Vec<f64>,
    pub rhos: Vec<f64>,
    pub cs: Vec<f64>,
}

pub fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Backward-recursion V-trace targets.
///
/// `values` must include the bootstrap V(x_T) as its final entry. Episode
/// boundaries (done flags) zero the discount across the boundary. Behavior
/// probabilities below 1e-20 abort with an error naming the step.
pub fn vtrace_targets(
    rewards: &[f64],
    dones: &[bool],
    actions: &[usize],
    behavior_logits: &[Vec<f64>],
    target_logits: &[Vec<f64>],
    values: &[f64],
    config: &VTraceConfig,
) -> Result<VTraceOutput> {
    config.validate()?;
    let t_len = rewards.len();
    if dones.len() != t_len
        || actions.len() != t_len
        || behavior_logits.len() != t_len
        || target_logits.len() != t_len
    {
        return Err(Error::contract("v-trace input lengths differ".to_string()));
    }
    if values.len() != t_len + 1 {
        return Err(Error::contract(format!(
            "v-trace needs T+1 values including the bootstrap, got {} for T={}",
            values.len(),
            t_len
        )));
    }

    let mut rhos = Vec::with_capacity(t_len);
    let mut cs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let a = actions[t];
        if a >= target_logits[t].len() || target_logits[t].len() != behavior_logits[t].len() {
            return Err(Error::contract(format!(
                "logit row misaligned with action at step {t}"
            )));
        }
        let mu = softmax_f64(&behavior_logits[t])[a];
        if mu < 1e-20 {
            return Err(Error::Numeric(format!(
                "behavior probability underflow ({mu:e}) at step {t}"
            )));
        }
        let pi = softmax_f64(&target_logits[t])[a];
        let ratio = pi / mu;
        rhos.push(ratio.min(config.rho_bar));
        cs.push(ratio.min(config.c_bar));
    }

    let mut targets = vec![0.0; t_len + 1];
    targets[t_len] = values[t_len];
    for s in (0..t_len).rev() {
        let disc = config.gamma * if dones[s] { 0.0 } else { 1.0 };
        let delta = rhos[s] * (rewards[s] + disc * values[s + 1] - values[s]);
        targets[s] = values[s] + delta + disc * cs[s] * (targets[s + 1] - values[s + 1]);
    }

    let advantages = (0..t_len)
        .map(|s| {
            let disc = config.gamma * if dones[s] { 0.0 } else { 1.0 };
            rhos[s] * (rewards[s] + disc * targets[s + 1] - values[s])
        })
        .collect();
    targets.truncate(t_len);
    Ok(VTraceOutput {
        targets,
        advantages,
        rhos,
        cs,
    })
}

/// The three actor-critic loss terms and their sum, all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct RlLossTerms {
    pub total: NodeId,
    pub policy: NodeId,
    pub baseline: NodeId,
    pub entropy: NodeId,
}

/// total = -sum_s log pi(a_s) * advantage_s
///         + baseline_cost * 0.5 * sum_s (v_s - V(x_s))^2
///         - entropy_cost * sum_s H(pi(.|x_s))
/// with v_s and advantage_s held constant.
pub fn rl_loss<S: Scalar>(
    tape: &mut Tape<S>,
    policy_logits: &[NodeId],
    values: &[NodeId],
    actions: &[usize],
    vt: &VTraceOutput,
    entropy_cost: f64,
    baseline_cost: f64,
) -> Result<RlLossTerms> {
    let t_len = policy_logits.len();
    if values.len() != t_len || actions.len() != t_len || vt.targets.len() != t_len {
        return Err(Error::contract("rl loss input lengths differ".to_string()));
    }
    let mut policy: Option<NodeId> = None;
    let mut baseline: Option<NodeId> = None;
    let mut entropy_sum: Option<NodeId> = None;
    for s in 0..t_len {
        let neg_logp = tape.softmax_xent(policy_logits[s], actions[s])?;
        let weighted = tape.mul_scalar(neg_logp, vt.advantages[s])?;
        policy = join(tape, policy, weighted)?;

        let diff = tape.add_scalar(values[s], -vt.targets[s])?;
        let sq = tape.square(diff)?;
        baseline = join(tape, baseline, sq)?;

        let ent = tape.entropy(policy_logits[s])?;
        entropy_sum = join(tape, entropy_sum, ent)?;
    }
    let policy = policy.expect("nonempty unroll");
    let baseline = tape.mul_scalar(baseline.expect("nonempty unroll"), 0.5 * baseline_cost)?;
    let entropy = tape.mul_scalar(entropy_sum.expect("nonempty unroll"), -entropy_cost)?;
    let pb = tape.add(policy, baseline)?;
    let total = tape.add(pb, entropy)?;
    Ok(RlLossTerms {
        total,
        policy,
        baseline,
        entropy,
    })
}

fn join<S: Scalar>(tape: &mut Tape<S>, acc: Option<NodeId>, term: NodeId) -> Result<Option<NodeId>> {
    Ok(Some(match acc {
        Some(a) => tape.add(a, term)?,
        None => term,
    }))
}

/// Term-by-term expansion of the V-trace definition, used as the oracle in
/// tests and kept independent of the recursion above.
pub fn vtrace_brute_force(
    rewards: &[f64],
    dones: &[bool],
    rhos: &[f64],
    cs: &[f64],
    values: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let t_len = rewards.len();
    let disc: Vec<f64> = dones
        .iter()
        .map(|&d| if d { 0.0 } else { gamma })
        .collect();
    (0..t_len)
        .map(|s| {
            let mut v = values[s];
            for t in s..t_len {
                let mut coeff = 1.0;
                for i in s..t {
                    coeff *= disc[i] * cs[i];
                }
                let delta = rhos[t] * (rewards[t] + disc[t] * values[t + 1] - values[t]);
                v += coeff * delta;
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_logits(t: usize, n: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; n]; t]
    }

    #[test]
    fn config_validation() {
        assert!(VTraceConfig::default().validate().is_ok());
        assert!(VTraceConfig {
            gamma: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(VTraceConfig {
            rho_bar: 1.0,
            c_bar: 2.0,
            gamma: 0.9
        }
        .validate()
        .is_err());
    }

    #[test]
    fn on_policy_gamma_zero_collapses_to_rewards() {
        let t = 4;
        let rewards = [1.0, -2.0, 0.5, 3.0];
        let out = vtrace_targets(
            &rewards,
            &[false; 4],
            &[0; 4],
            &uniform_logits(t, 3),
            &uniform_logits(t, 3),
            &[0.7, -0.3, 0.2, 0.9, 0.4],
            &VTraceConfig {
                gamma: 0.0,
                rho_bar: 1.0,
                c_bar: 1.0,
            },
        )
        .unwrap();
        for (v, r) in out.targets.iter().zip(&rewards) {
            assert!((v - r).abs() < 1e-12);
        }
    }

    #[test]
    fn on_policy_equals_n_step_return_on_chain() {
        // Deterministic 3-state chain with rewards [1, 2, 3] and bootstrap 4.
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.25, -0.5, 0.75, 4.0];
        let gamma = 0.9;
        let out = vtrace_targets(
            &rewards,
            &[false; 3],
            &[1; 3],
            &uniform_logits(3, 2),
            &uniform_logits(3, 2),
            &values,
            &VTraceConfig {
                gamma,
                rho_bar: 1.0,
                c_bar: 1.0,
            },
        )
        .unwrap();
        for s in 0..3 {
            let mut expect = 0.0;
            for t in s..3 {
                expect += gamma.powi((t - s) as i32) * rewards[t];
            }
            expect += gamma.powi((3 - s) as i32) * values[3];
            assert!(
                (out.targets[s] - expect).abs() < 1e-12,
                "s={s}: {} vs {expect}",
                out.targets[s]
            );
        }
    }

    #[test]
    fn off_policy_ratio_clipped() {
        // pi puts ~4x the behavior probability on the taken action.
        let behavior = vec![vec![0.0, 0.0]; 2];
        let target = vec![vec![2.0, 0.0]; 2];
        let ratio = {
            let pi = softmax_f64(&target[0])[0];
            let mu = softmax_f64(&behavior[0])[0];
            pi / mu
        };
        assert!(ratio > 1.5);
        let out = vtrace_targets(
            &[1.0, 1.0],
            &[false; 2],
            &[0; 2],
            &behavior,
            &target,
            &[0.0, 0.0, 0.0],
            &VTraceConfig {
                gamma: 0.9,
                rho_bar: 1.0,
                c_bar: 1.0,
            },
        )
        .unwrap();
        assert!(out.rhos.iter().all(|&r| r == 1.0));
        let brute = vtrace_brute_force(
            &[1.0, 1.0],
            &[false; 2],
            &out.rhos,
            &out.cs,
            &[0.0, 0.0, 0.0],
            0.9,
        );
        for (a, b) in out.targets.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recursion_matches_brute_force_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for t_len in 1..=5usize {
            for &gamma in &[0.0, 0.5, 0.9] {
                for &(rho_bar, c_bar) in &[(1.0, 1.0), (2.0, 1.0), (4.0, 2.0)] {
                    let rewards: Vec<f64> =
                        (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let dones: Vec<bool> = (0..t_len).map(|_| rng.random_bool(0.2)).collect();
                    let actions: Vec<usize> = (0..t_len).map(|_| rng.random_range(0..3)).collect();
                    let bl: Vec<Vec<f64>> = (0..t_len)
                        .map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect())
                        .collect();
                    let tl: Vec<Vec<f64>> = (0..t_len)
                        .map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect())
                        .collect();
                    let values: Vec<f64> =
                        (0..=t_len).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let cfg = VTraceConfig {
                        gamma,
                        rho_bar,
                        c_bar,
                    };
                    let out =
                        vtrace_targets(&rewards, &dones, &actions, &bl, &tl, &values, &cfg)
                            .unwrap();
                    let brute =
                        vtrace_brute_force(&rewards, &dones, &out.rhos, &out.cs, &values, gamma);
                    for (a, b) in out.targets.iter().zip(&brute) {
                        assert!((a - b).abs() < 1e-10, "T={t_len} gamma={gamma}");
                    }
                }
            }
        }
    }

    #[test]
    fn behavior_underflow_names_step() {
        let behavior = vec![vec![0.0, 100.0], vec![0.0, 0.0]];
        let err = vtrace_targets(
            &[0.0, 0.0],
            &[false; 2],
            &[0; 2],
            &behavior,
            &uniform_logits(2, 2),
            &[0.0; 3],
            &VTraceConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("step 0"), "{err}");
    }

    #[test]
    fn zero_advantages_zero_policy_term() {
        let mut tape = Tape::<f64>::new();
        let logits: Vec<NodeId> = (0..3)
            .map(|i| tape.leaf(Tensor::vector(vec![0.1 * i as f64, -0.2, 0.3])))
            .collect();
        let values: Vec<NodeId> = (0..3)
            .map(|_| tape.leaf(Tensor::scalar(0.5)))
            .collect();
        let vt = VTraceOutput {
            targets: vec![0.5; 3],
            advantages: vec![0.0; 3],
            rhos: vec![1.0; 3],
            cs: vec![1.0; 3],
        };
        let terms = rl_loss(&mut tape, &logits, &values, &[0, 1, 2], &vt, 0.0, 1.0).unwrap();
        assert_eq!(tape.value(terms.policy).item().unwrap(), 0.0);
        // targets equal the values, so the baseline term is zero as well.
        assert_eq!(tape.value(terms.baseline).item().unwrap(), 0.0);
    }

    #[test]
    fn entropy_term_for_uniform_five_actions() {
        let mut tape = Tape::<f64>::new();
        let logits = vec![tape.leaf(Tensor::vector(vec![0.0; 5]))];
        let values = vec![tape.leaf(Tensor::scalar(0.0))];
        let vt = VTraceOutput {
            targets: vec![0.0],
            advantages: vec![0.0],
            rhos: vec![1.0],
            cs: vec![1.0],
        };
        let terms = rl_loss(&mut tape, &logits, &values, &[0], &vt, 0.01, 0.5).unwrap();
        let expect = -0.01 * 5.0f64.ln();
        assert!((tape.value(terms.entropy).item().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn rl_loss_gradients_flow_to_logits_and_values() {
        let mut tape = Tape::<f64>::new();
        let logits: Vec<NodeId> = (0..2)
            .map(|_| tape.leaf(Tensor::vector(vec![0.4, -0.3, 0.1])))
            .collect();
        let values: Vec<NodeId> = (0..2)
            .map(|_| tape.leaf(Tensor::scalar(0.2)))
            .collect();
        let vt = VTraceOutput {
            targets: vec![1.0, -0.5],
            advantages: vec![0.7, -0.2],
            rhos: vec![1.0; 2],
            cs: vec![1.0; 2],
        };
        let terms = rl_loss(&mut tape, &logits, &values, &[0, 2], &vt, 0.01, 0.5).unwrap();
        tape.backward(terms.total).unwrap();
        for &l in &logits {
            assert!(tape.grad(l).unwrap().data().iter().any(|&v| v != 0.0));
        }
        for &v in &values {
            assert!(tape.grad(v).unwrap().data().iter().any(|&g| g != 0.0));
        }
    }
}
