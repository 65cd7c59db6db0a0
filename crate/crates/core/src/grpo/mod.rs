//! Group-relative policy optimization of cluster edits against a monitor.
//!
//! For each seed cluster the policy samples a group of `K` edit trajectories.
//! Each step earns `R_t = R_validity + λ·(S_pre − S_post)`, where `S` is the
//! monitor's composite score of the cluster in a fixed evaluation context and
//! invalid edits earn a fixed penalty. Returns are normalized within the group,
//! `A_i = (G_i − μ)/(σ + ε)`, and the policy takes one gradient step on
//! `L(θ) = −(1/K) Σ_i A_i Σ_t log π_θ(a_t | s_t)`. No value function is kept.

mod context;
mod policy;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{apply_action, EditAction, EditBudget, EditConfig, IllicitCluster};
use crate::monitor::{MonitorError, Scorer};
use crate::rng::StreamKey;

pub use context::{EvalContext, EVAL_BANK};
pub use policy::{cluster_digest, default_action_grid, ActionTemplate, Policy, DIGEST_DIM};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no seed clusters")]
    NoClusters,
    #[error("non-finite policy gradient")]
    NonFiniteGradient,
    #[error("{trajectories} trajectories but {advantages} advantages")]
    LengthMismatch {
        trajectories: usize,
        advantages: usize,
    },
    #[error("policy file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Trajectories per group (`K`).
    pub group_size: usize,
    /// Longest trajectory (`T_max`).
    pub max_steps: usize,
    pub lambda_mon: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub invalid_penalty: f64,
    /// A trajectory stops after this many consecutive invalid actions; 0 never stops early.
    pub invalid_termination_count: usize,
    pub temperature: f64,
    pub budget: EditBudget,
    pub edits: EditConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            max_steps: 12,
            lambda_mon: 1.0,
            epsilon: 1e-8,
            learning_rate: 0.5,
            iterations: 50,
            invalid_penalty: -1.0,
            invalid_termination_count: 3,
            temperature: 1.0,
            budget: EditBudget::default(),
            edits: EditConfig::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let fail = |m: &str| Err(GrpoError::Config(m.into()));
        if self.group_size < 2 {
            return fail("group_size must be at least 2");
        }
        if !(self.lambda_mon >= 0.0 && self.lambda_mon.is_finite()) {
            return fail("lambda_mon must be finite and non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive");
        }
        if !self.invalid_penalty.is_finite() {
            return fail("invalid_penalty must be finite");
        }
        if !(self.edits.max_delay > 0 && (0.0..1.0).contains(&self.edits.fee)) {
            return fail("edits need a positive max_delay and a fee in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub digest: Vec<f64>,
    /// Index into the policy's action grid.
    pub action: usize,
    /// The concrete edit, if the template found a target.
    pub edit: Option<EditAction>,
    pub reward: f64,
    pub applied: bool,
    /// Score of the cluster after this step.
    pub s_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Sum of the step rewards, accumulated left to right from 0.
    pub ret: f64,
    pub final_cluster: IllicitCluster,
    pub final_s: f64,
    /// Lowest-scoring edited variant reached, with its score.
    pub best: Option<(f64, IllicitCluster)>,
}

/// `λ·(S_pre − S_post)` for a valid edit, the invalid penalty otherwise.
pub fn step_reward(s_pre: f64, s_post: f64, valid: bool, cfg: &GrpoConfig) -> f64 {
    if valid {
        cfg.lambda_mon * (s_pre - s_post)
    } else {
        cfg.invalid_penalty
    }
}

/// `(G_i − μ)/(σ + ε)` with population mean and standard deviation.
pub fn group_advantages(returns: &[f64], epsilon: f64) -> Vec<f64> {
    let n = returns.len() as f64;
    let mu = returns.iter().sum::<f64>() / n;
    let sigma = (returns.iter().map(|g| (g - mu).powi(2)).sum::<f64>() / n).sqrt();
    returns
        .iter()
        .map(|g| (g - mu) / (sigma + epsilon))
        .collect()
}

/// Samples `K` trajectories from fresh copies of `cluster`. Trajectory `k`
/// draws from `key.child(k)`.
pub fn sample_trajectories<S: Scorer + ?Sized>(
    policy: &Policy,
    cluster: &IllicitCluster,
    ctx: &EvalContext<'_, S>,
    cfg: &GrpoConfig,
    key: StreamKey,
) -> Result<Vec<Trajectory>, GrpoError> {
    let s0 = ctx.score(cluster)?;
    let mut out = Vec::with_capacity(cfg.group_size);
    for k in 0..cfg.group_size {
        let mut rng = key.child(k as u64).rng();
        let mut cur = cluster.clone();
        let mut s_cur = s0;
        let mut invalid_run = 0;
        let mut steps = Vec::new();
        let mut best: Option<(f64, IllicitCluster)> = None;
        for _ in 0..cfg.max_steps {
            if cur.budget_used >= cfg.budget.max_edits {
                break;
            }
            let digest = cluster_digest(&cur, &cfg.budget);
            let action = policy.sample(&digest, &mut rng);
            let edit = policy.grid[action].instantiate(&cur, &mut rng);
            let (next, applied) = match &edit {
                Some(e) => apply_action(&cur, e, &cfg.budget, &cfg.edits, &mut rng),
                None => (cur.clone(), false),
            };
            let reward = if applied {
                let s_post = ctx.score(&next)?;
                let r = step_reward(s_cur, s_post, true, cfg);
                if best.as_ref().is_none_or(|b| s_post < b.0) {
                    best = Some((s_post, next.clone()));
                }
                cur = next;
                s_cur = s_post;
                invalid_run = 0;
                r
            } else {
                invalid_run += 1;
                step_reward(s_cur, s_cur, false, cfg)
            };
            steps.push(Step {
                digest,
                action,
                edit,
                reward,
                applied,
                s_after: s_cur,
            });
            if cfg.invalid_termination_count > 0 && invalid_run >= cfg.invalid_termination_count {
                break;
            }
        }
        let ret = steps.iter().fold(0.0, |acc, s| acc + s.reward);
        out.push(Trajectory {
            steps,
            ret,
            final_cluster: cur,
            final_s: s_cur,
            best,
        });
    }
    Ok(out)
}

fn check_lengths(trajs: &[Trajectory], adv: &[f64]) -> Result<(), GrpoError> {
    if trajs.len() != adv.len() {
        return Err(GrpoError::LengthMismatch {
            trajectories: trajs.len(),
            advantages: adv.len(),
        });
    }
    Ok(())
}

/// `L(θ) = −(1/K) Σ_i A_i Σ_t log π_θ(a_t | s_t)`.
pub fn policy_loss(policy: &Policy, trajs: &[Trajectory], adv: &[f64]) -> Result<f64, GrpoError> {
    check_lengths(trajs, adv)?;
    let mut total = 0.0;
    for (t, a) in trajs.iter().zip(adv) {
        let lp: f64 = t
            .steps
            .iter()
            .map(|s| policy.log_probs(&s.digest)[s.action])
            .sum();
        total += a * lp;
    }
    Ok(-total / trajs.len() as f64)
}

/// Analytic `∂L/∂θ`, laid out like `policy.theta`. For the softmax-linear policy
/// `∂ log π(a|d)/∂θ_b = (1[a = b] − π_b) · d / temperature`.
pub fn policy_gradient(
    policy: &Policy,
    trajs: &[Trajectory],
    adv: &[f64],
) -> Result<Vec<f64>, GrpoError> {
    check_lengths(trajs, adv)?;
    let mut g = vec![0.0; policy.theta.len()];
    let scale = -1.0 / (trajs.len() as f64 * policy.temperature);
    for (t, &a) in trajs.iter().zip(adv) {
        if a == 0.0 {
            continue;
        }
        for s in &t.steps {
            let p = policy.probs(&s.digest);
            for (b, pb) in p.iter().enumerate() {
                let coef = scale * a * (f64::from(u8::from(b == s.action)) - pb);
                for (k, d) in s.digest.iter().enumerate() {
                    g[b * DIGEST_DIM + k] += coef * d;
                }
            }
        }
    }
    Ok(g)
}

fn descend(policy: &Policy, grad: &[f64], lr: f64) -> Result<Policy, GrpoError> {
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(GrpoError::NonFiniteGradient);
    }
    let mut next = policy.clone();
    for (t, g) in next.theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
    Ok(next)
}

/// One gradient-descent step on [`policy_loss`].
pub fn policy_update(
    policy: &Policy,
    trajs: &[Trajectory],
    adv: &[f64],
    cfg: &GrpoConfig,
) -> Result<Policy, GrpoError> {
    descend(
        policy,
        &policy_gradient(policy, trajs, adv)?,
        cfg.learning_rate,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hardened {
    pub cluster: IllicitCluster,
    /// Score of the unedited seed.
    pub initial_s: f64,
    /// Score of `cluster`; never above `initial_s`.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_return: f64,
    /// Mean final score over the iteration's trajectories.
    pub mean_s: f64,
    /// Mean over clusters of the best score found so far.
    pub best_s: f64,
}

#[derive(Debug, Clone)]
pub struct GrpoOutcome {
    pub policy: Policy,
    pub hardened: Vec<Hardened>,
    pub log: Vec<IterationLog>,
}

/// Trains a policy from scratch on all clusters and returns, per cluster, the
/// lowest-scoring variant seen (the seed itself if no edit scored lower). Each
/// iteration averages the group gradients of all clusters into one step.
pub fn run_grpo<S: Scorer + ?Sized>(
    clusters: &[IllicitCluster],
    ctx: &EvalContext<'_, S>,
    cfg: &GrpoConfig,
    seed: u64,
) -> Result<GrpoOutcome, GrpoError> {
    cfg.validate()?;
    if clusters.is_empty() {
        return Err(GrpoError::NoClusters);
    }
    let mut policy = Policy::new(default_action_grid(), cfg.temperature);
    let mut hardened: Vec<Hardened> = clusters
        .iter()
        .map(|c| {
            ctx.score(c).map(|s| Hardened {
                cluster: c.clone(),
                initial_s: s,
                s,
            })
        })
        .collect::<Result<_, _>>()?;
    let root = StreamKey::root(seed).named("grpo");
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut grad = vec![0.0; policy.theta.len()];
        let (mut ret_sum, mut s_sum, mut n) = (0.0, 0.0, 0usize);
        for (ci, c) in clusters.iter().enumerate() {
            let trajs =
                sample_trajectories(&policy, c, ctx, cfg, root.child(it as u64).child(ci as u64))?;
            let returns: Vec<f64> = trajs.iter().map(|t| t.ret).collect();
            let adv = group_advantages(&returns, cfg.epsilon);
            for (g, x) in grad.iter_mut().zip(policy_gradient(&policy, &trajs, &adv)?) {
                *g += x / clusters.len() as f64;
            }
            for t in trajs {
                ret_sum += t.ret;
                s_sum += t.final_s;
                n += 1;
                if let Some((s, v)) = t.best {
                    if s < hardened[ci].s {
                        hardened[ci].s = s;
                        hardened[ci].cluster = v;
                    }
                }
            }
        }
        policy = descend(&policy, &grad, cfg.learning_rate)?;
        log.push(IterationLog {
            iteration: it + 1,
            mean_return: ret_sum / n as f64,
            mean_s: s_sum / n as f64,
            best_s: hardened.iter().map(|h| h.s).sum::<f64>() / hardened.len() as f64,
        });
    }
    Ok(GrpoOutcome {
        policy,
        hardened,
        log,
    })
}

/// Writes the training log as CSV with header `iteration,mean_return,mean_s,best_s`.
pub fn write_training_log<W: Write>(log: &[IterationLog], w: W) -> Result<(), GrpoError> {
    let mut csv = csv::Writer::from_writer(w);
    for row in log {
        csv.serialize(row).map_err(io::Error::other)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        let cfg = GrpoConfig::default();
        assert!((step_reward(0.8, 0.6, true, &cfg) - 0.2).abs() < 1e-15);
        assert_eq!(step_reward(0.5, 0.5, true, &cfg), 0.0);
        assert_eq!(step_reward(0.5, 0.1, false, &cfg), -1.0);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0, 1.0, 1.0], 1e-8), vec![0.0; 3]);
        let a = group_advantages(&[0.0, 2.0], 1e-8);
        assert!((a[0] + 1.0).abs() < 1e-7 && (a[1] - 1.0).abs() < 1e-7);
        let a = group_advantages(&[1.0, 2.0, 3.0], 1e-8);
        let expect = (1.5f64).sqrt();
        assert!((a[0] + expect).abs() < 1e-4 && a[1] == 0.0 && (a[2] - expect).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        assert!(GrpoConfig {
            group_size: 1,
            ..GrpoConfig::default()
        }
        .validate()
        .is_err());
        assert!(GrpoConfig {
            temperature: 0.0,
            ..GrpoConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn training_log_header() {
        let mut buf = Vec::new();
        let row = IterationLog {
            iteration: 1,
            mean_return: 0.5,
            mean_s: 0.25,
            best_s: 0.125,
        };
        write_training_log(&[row], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,mean_return,mean_s,best_s\n1,0.5,0.25,0.125\n"
        );
    }
}
