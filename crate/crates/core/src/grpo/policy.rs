//! Discrete action grid and the softmax-linear policy over cluster digests.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::GrpoError;
use crate::anomaly::{EditAction, EditBudget, IllicitCluster, RoleId};
use crate::rng::SimRng;

/// Length of [`cluster_digest`].
pub const DIGEST_DIM: usize = 9;

/// Policy input: a constant, size and shape statistics of the cluster, and the
/// remaining edit and node budget as fractions.
pub fn cluster_digest(c: &IllicitCluster, budget: &EditBudget) -> Vec<f64> {
    let frac = |used: u32, max: u32| {
        if max == 0 {
            0.0
        } else {
            f64::from(max.saturating_sub(used)) / f64::from(max)
        }
    };
    vec![
        1.0,
        c.nodes.len() as f64 / 10.0,
        c.edges.len() as f64 / 10.0,
        (1.0 + c.total_amount_cents() as f64 / 100.0).ln() / 10.0,
        c.depth() as f64 / 5.0,
        c.max_fan_in() as f64 / 5.0,
        c.max_fan_out() as f64 / 5.0,
        frac(c.budget_used, budget.max_edits),
        frac(c.nodes_added, budget.max_new_nodes),
    ]
}

/// One cell of the action grid. Targets (edge or role) are drawn uniformly at
/// execution time; merging takes the `rank`-th most similar role pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionTemplate {
    Inject {
        hops: u32,
    },
    Split {
        k: u32,
    },
    Merge {
        rank: usize,
    },
    /// Shift an edge amount by this many percent.
    Amount {
        percent: i64,
    },
    /// Shift an edge time by this many seconds.
    Time {
        secs: i64,
    },
}

impl fmt::Display for ActionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionTemplate::Inject { hops } => write!(f, "inject:{hops}"),
            ActionTemplate::Split { k } => write!(f, "split:{k}"),
            ActionTemplate::Merge { rank } => write!(f, "merge:{rank}"),
            ActionTemplate::Amount { percent } => write!(f, "amount:{percent}"),
            ActionTemplate::Time { secs } => write!(f, "time:{secs}"),
        }
    }
}

impl FromStr for ActionTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("bad action {s:?}"))?;
        let bad = || format!("bad action {s:?}");
        Ok(match kind {
            "inject" => ActionTemplate::Inject {
                hops: arg.parse().map_err(|_| bad())?,
            },
            "split" => ActionTemplate::Split {
                k: arg.parse().map_err(|_| bad())?,
            },
            "merge" => ActionTemplate::Merge {
                rank: arg.parse().map_err(|_| bad())?,
            },
            "amount" => ActionTemplate::Amount {
                percent: arg.parse().map_err(|_| bad())?,
            },
            "time" => ActionTemplate::Time {
                secs: arg.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        })
    }
}

impl ActionTemplate {
    /// Binds the template to a concrete edit on `c`, or `None` when the cluster
    /// has no eligible target.
    pub fn instantiate(&self, c: &IllicitCluster, rng: &mut SimRng) -> Option<EditAction> {
        let random_edge =
            |rng: &mut SimRng| (!c.edges.is_empty()).then(|| rng.random_range(0..c.edges.len()));
        match *self {
            ActionTemplate::Inject { hops } => Some(EditAction::IntermediaryInjection {
                edge: random_edge(rng)?,
                hops,
            }),
            ActionTemplate::Split { k } => {
                let senders: Vec<RoleId> = c
                    .nodes
                    .iter()
                    .map(|n| n.id)
                    .filter(|&id| c.out_edges(id).next().is_some())
                    .collect();
                Some(EditAction::AccountSplitting {
                    role: *senders.choose(rng)?,
                    k,
                })
            }
            ActionTemplate::Merge { rank } => {
                let (role_a, role_b) = *c.merge_candidates(rank + 1).get(rank)?;
                Some(EditAction::AccountMerging { role_a, role_b })
            }
            ActionTemplate::Amount { percent } => {
                let edge = random_edge(rng)?;
                let delta_cents =
                    (c.edges[edge].amount_cents as f64 * percent as f64 / 100.0).round() as i64;
                Some(EditAction::TransactionAdjustment {
                    edge,
                    delta_cents,
                    delta_time: 0,
                })
            }
            ActionTemplate::Time { secs } => Some(EditAction::TransactionAdjustment {
                edge: random_edge(rng)?,
                delta_cents: 0,
                delta_time: secs,
            }),
        }
    }
}

/// The default grid: hops 1..=3, split sizes 2..=4, the three most similar
/// merge pairs, amount shifts of ±1, ±5, ±20 percent and time shifts of ±1, ±6, ±24 hours.
pub fn default_action_grid() -> Vec<ActionTemplate> {
    let mut g = Vec::new();
    g.extend((1..=3).map(|hops| ActionTemplate::Inject { hops }));
    g.extend((2..=4).map(|k| ActionTemplate::Split { k }));
    g.extend((0..3).map(|rank| ActionTemplate::Merge { rank }));
    for p in [1, 5, 20] {
        g.extend([
            ActionTemplate::Amount { percent: -p },
            ActionTemplate::Amount { percent: p },
        ]);
    }
    for h in [1, 6, 24] {
        g.extend([
            ActionTemplate::Time { secs: -3_600 * h },
            ActionTemplate::Time { secs: 3_600 * h },
        ]);
    }
    g
}

/// Logits are `θ · digest / temperature`, one row of `θ` per grid action.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub grid: Vec<ActionTemplate>,
    /// Row-major, `grid.len() × DIGEST_DIM`.
    pub theta: Vec<f64>,
    pub temperature: f64,
}

impl Policy {
    /// The uniform policy.
    pub fn new(grid: Vec<ActionTemplate>, temperature: f64) -> Policy {
        let theta = vec![0.0; grid.len() * DIGEST_DIM];
        Policy {
            grid,
            theta,
            temperature,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.grid.len()
    }

    fn logits(&self, digest: &[f64]) -> Vec<f64> {
        self.theta
            .chunks_exact(DIGEST_DIM)
            .map(|row| row.iter().zip(digest).map(|(a, b)| a * b).sum::<f64>() / self.temperature)
            .collect()
    }

    pub fn log_probs(&self, digest: &[f64]) -> Vec<f64> {
        let z = self.logits(digest);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        z.iter().map(|x| x - lse).collect()
    }

    pub fn probs(&self, digest: &[f64]) -> Vec<f64> {
        self.log_probs(digest).into_iter().map(f64::exp).collect()
    }

    pub fn sample(&self, digest: &[f64], rng: &mut SimRng) -> usize {
        let p = self.probs(digest);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        // Rounding left `acc` just below 1; fall back to the last action with mass.
        p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "policy v1")?;
        writeln!(w, "temperature {}", self.temperature)?;
        writeln!(w, "actions {}", self.n_actions())?;
        writeln!(w, "digest {DIGEST_DIM}")?;
        for (a, row) in self.grid.iter().zip(self.theta.chunks_exact(DIGEST_DIM)) {
            let vals: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{a} {}", vals.join(" "))?;
        }
        Ok(())
    }

    /// Reads the format written by [`Policy::write`].
    pub fn read<R: BufRead>(r: R) -> Result<Policy, GrpoError> {
        let lines: Vec<(usize, String)> = r
            .lines()
            .enumerate()
            .map(|(i, l)| l.map(|l| (i + 1, l)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let bad = |line: usize, message: String| GrpoError::Format { line, message };
        let field = |idx: usize, key: &str| -> Result<(usize, String), GrpoError> {
            let (line, text) = lines
                .get(idx)
                .ok_or_else(|| bad(idx + 1, format!("missing {key:?} record")))?;
            match text.split_once(' ') {
                Some((k, v)) if k == key => Ok((*line, v.trim().to_string())),
                _ => Err(bad(*line, format!("expected {key:?}"))),
            }
        };
        let (line, v) = field(0, "policy")?;
        if v != "v1" {
            return Err(bad(line, format!("unsupported version {v:?}")));
        }
        let (line, v) = field(1, "temperature")?;
        let temperature: f64 = v
            .parse()
            .ok()
            .filter(|t: &f64| *t > 0.0 && t.is_finite())
            .ok_or_else(|| bad(line, "bad temperature".into()))?;
        let (line, v) = field(2, "actions")?;
        let n: usize = v
            .parse()
            .map_err(|_| bad(line, "bad action count".into()))?;
        let (line, v) = field(3, "digest")?;
        if v != DIGEST_DIM.to_string() {
            return Err(bad(
                line,
                format!("digest dimension {v}, expected {DIGEST_DIM}"),
            ));
        }
        if lines.len() != 4 + n {
            return Err(bad(
                lines.last().map_or(1, |l| l.0),
                format!("expected {n} action rows"),
            ));
        }
        let mut grid = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n * DIGEST_DIM);
        for (line, text) in &lines[4..] {
            let mut parts = text.split_whitespace();
            let a: ActionTemplate = parts
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e| bad(*line, e))?;
            let row: Vec<f64> = parts
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| bad(*line, format!("bad number {s:?}")))
                })
                .collect::<Result<_, _>>()?;
            if row.len() != DIGEST_DIM {
                return Err(bad(
                    *line,
                    format!("{} weights, expected {DIGEST_DIM}", row.len()),
                ));
            }
            grid.push(a);
            theta.extend(row);
        }
        Ok(Policy {
            grid,
            theta,
            temperature,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::builtin_seeds;
    use crate::rng::StreamKey;

    #[test]
    fn grid_has_all_cells() {
        let g = default_action_grid();
        assert_eq!(g.len(), 21);
        for a in &g {
            assert_eq!(a.to_string().parse::<ActionTemplate>().unwrap(), *a);
        }
    }

    #[test]
    fn uniform_policy_and_sampling() {
        let p = Policy::new(default_action_grid(), 1.0);
        let d = cluster_digest(&builtin_seeds()[0], &EditBudget::default());
        assert_eq!(d.len(), DIGEST_DIM);
        let probs = p.probs(&d);
        assert!(probs.iter().all(|x| (x - 1.0 / 21.0).abs() < 1e-12));
        let mut rng = StreamKey::root(1).rng();
        let mut seen = vec![false; 21];
        for _ in 0..2_000 {
            seen[p.sample(&d, &mut rng)] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn templates_bind_to_targets() {
        let c = &builtin_seeds()[0];
        let mut rng = StreamKey::root(2).rng();
        for a in default_action_grid() {
            let e = a.instantiate(c, &mut rng);
            assert_eq!(
                e.is_some(),
                !matches!(a, ActionTemplate::Merge { rank } if rank >= c.merge_candidates(3).len())
            );
        }
        let e = ActionTemplate::Amount { percent: -20 }
            .instantiate(c, &mut rng)
            .unwrap();
        let EditAction::TransactionAdjustment {
            edge, delta_cents, ..
        } = e
        else {
            panic!()
        };
        assert_eq!(delta_cents, -c.edges[edge].amount_cents / 5);
    }

    #[test]
    fn checkpoint_round_trips() {
        let mut p = Policy::new(default_action_grid(), 0.7);
        for (i, t) in p.theta.iter_mut().enumerate() {
            *t = (i as f64 * 0.37).sin() / 3.0;
        }
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        assert_eq!(Policy::read(buf.as_slice()).unwrap(), p);
        let broken = String::from_utf8(buf)
            .unwrap()
            .replace("split:3", "split:x");
        assert!(matches!(
            Policy::read(broken.as_bytes()),
            Err(GrpoError::Format { line: 9, .. })
        ));
    }
}
