//! Policy functions and the per-record privacy calculus.
//!
//! A [`PolicyFunction`] is a closed expression tree mapping a hypothetical
//! record to its privacy-loss bound (in zCDP ρ units). The tree itself is
//! meant to be published; its values at real records are confidential.
//!
//! Composition rules:
//! - sequential: policies add pointwise ([`sequential_compose`]);
//! - parallel over a partition by a conditional attribute: the policy is
//!   piecewise in that attribute ([`parallel_compose`]);
//! - a ρ-zCDP mechanism is the constant policy ρ ([`zcdp_as_policy`]);
//! - a ρ-zCDP mechanism run after unit splitting is ρ·m(r)² where m(r) is
//!   the record's split count ([`PolicyFunction::SplitCost`]).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::GoldenSection;
use crate::splitting::{ResolvedThresholds, ThresholdScheme};
use crate::table::{Row, Schema};

fn default_power() -> u32 {
    2
}

fn is_default_power(p: &u32) -> bool {
    *p == 2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyFunction {
    Constant {
        rho: f64,
    },
    /// `rho * m(r)^power`, with `m` the split count under `thresholds`.
    SplitCost {
        rho: f64,
        thresholds: ThresholdScheme,
        #[serde(default = "default_power", skip_serializing_if = "is_default_power")]
        power: u32,
    },
    Sum {
        terms: Vec<PolicyFunction>,
    },
    PiecewiseByGroup {
        key: String,
        branches: BTreeMap<String, PolicyFunction>,
        default: Box<PolicyFunction>,
    },
}

impl PolicyFunction {
    pub fn constant(rho: f64) -> Self {
        PolicyFunction::Constant { rho }
    }

    pub fn split_cost(rho: f64, thresholds: impl Into<ThresholdScheme>) -> Self {
        PolicyFunction::SplitCost {
            rho,
            thresholds: thresholds.into(),
            power: 2,
        }
    }

    pub fn zero() -> Self {
        PolicyFunction::Constant { rho: 0.0 }
    }

    /// Compiles the tree against `schema` for repeated evaluation.
    pub fn bind(&self, schema: &Schema) -> Result<BoundPolicy> {
        let node = match self {
            PolicyFunction::Constant { rho } => {
                check_rho(*rho)?;
                BoundNode::Constant(*rho)
            }
            PolicyFunction::SplitCost {
                rho,
                thresholds,
                power,
            } => {
                check_rho(*rho)?;
                for set in thresholds.all_sets() {
                    for name in set.0.keys() {
                        schema.require_measure(name)?;
                    }
                }
                BoundNode::SplitCost {
                    rho: *rho,
                    power: *power as i32,
                    thresholds: thresholds.resolve(schema)?,
                }
            }
            PolicyFunction::Sum { terms } => BoundNode::Sum(
                terms
                    .iter()
                    .map(|t| t.bind(schema).map(|b| b.node))
                    .collect::<Result<_>>()?,
            ),
            PolicyFunction::PiecewiseByGroup {
                key,
                branches,
                default,
            } => {
                let key = schema.require_conditional(key)?;
                BoundNode::Piecewise {
                    key,
                    branches: branches
                        .iter()
                        .map(|(k, p)| Ok((k.clone(), p.bind(schema)?.node)))
                        .collect::<Result<_>>()?,
                    default: Box::new(default.bind(schema)?.node),
                }
            }
        };
        Ok(BoundPolicy {
            node,
            measures: schema.num_measures(),
            labels: schema.num_conditionals(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl fmt::Display for PolicyFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyFunction::Constant { rho } => write!(f, "{rho}"),
            PolicyFunction::SplitCost { rho, power, .. } => write!(f, "{rho}*m(r)^{power}"),
            PolicyFunction::Sum { terms } => {
                write!(f, "(")?;
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            PolicyFunction::PiecewiseByGroup {
                key,
                branches,
                default,
            } => {
                write!(f, "case {key} {{ ")?;
                for (k, p) in branches {
                    write!(f, "{k} => {p}; ")?;
                }
                write!(f, "_ => {default} }}")
            }
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeLoss(rho))
    }
}

#[derive(Clone, Debug)]
enum BoundNode {
    Constant(f64),
    SplitCost {
        rho: f64,
        power: i32,
        thresholds: ResolvedThresholds,
    },
    Sum(Vec<BoundNode>),
    Piecewise {
        key: usize,
        branches: BTreeMap<String, BoundNode>,
        default: Box<BoundNode>,
    },
}

impl BoundNode {
    fn eval(&self, row: &Row) -> f64 {
        match self {
            BoundNode::Constant(rho) => *rho,
            BoundNode::SplitCost {
                rho,
                power,
                thresholds,
            } => rho * (thresholds.split_count(row) as f64).powi(*power),
            BoundNode::Sum(terms) => terms.iter().map(|t| t.eval(row)).sum(),
            BoundNode::Piecewise {
                key,
                branches,
                default,
            } => branches.get(&row.labels[*key]).unwrap_or(default).eval(row),
        }
    }
}

/// A policy compiled against a schema.
#[derive(Clone, Debug)]
pub struct BoundPolicy {
    node: BoundNode,
    measures: usize,
    labels: usize,
}

impl BoundPolicy {
    pub fn evaluate(&self, row: &Row) -> Result<f64> {
        if row.measures.len() != self.measures || row.labels.len() != self.labels {
            return Err(Error::SchemaMismatch(format!(
                "row {} does not match the policy's schema",
                row.id
            )));
        }
        Ok(self.node.eval(row))
    }
}

/// `P(r)` for one record.
pub fn evaluate(policy: &PolicyFunction, schema: &Schema, row: &Row) -> Result<f64> {
    policy.bind(schema)?.evaluate(row)
}

/// `P1 + P2`, flattening nested sums.
pub fn sequential_compose(
    p1: &PolicyFunction,
    p2: &PolicyFunction,
    schema: &Schema,
) -> Result<PolicyFunction> {
    p1.bind(schema)?;
    p2.bind(schema)?;
    Ok(sum_of([p1.clone(), p2.clone()]))
}

pub(crate) fn sum_of(parts: impl IntoIterator<Item = PolicyFunction>) -> PolicyFunction {
    let mut terms = Vec::new();
    for p in parts {
        match p {
            PolicyFunction::Sum { terms: inner } => terms.extend(inner),
            other => terms.push(other),
        }
    }
    match terms.len() {
        0 => PolicyFunction::zero(),
        1 => terms.pop().expect("one term"),
        _ => PolicyFunction::Sum { terms },
    }
}

/// Policy for mechanisms run on the disjoint parts of a partition keyed by
/// the conditional attribute `key`.
pub fn parallel_compose(
    key: &str,
    branches: BTreeMap<String, PolicyFunction>,
    default: PolicyFunction,
    schema: &Schema,
) -> Result<PolicyFunction> {
    schema.require_conditional(key)?;
    for p in branches.values().chain([&default]) {
        p.bind(schema)?;
    }
    Ok(PolicyFunction::PiecewiseByGroup {
        key: key.to_string(),
        branches,
        default: Box::new(default),
    })
}

/// The constant policy satisfied by any ρ-zCDP mechanism.
pub fn zcdp_as_policy(rho: f64) -> PolicyFunction {
    PolicyFunction::constant(rho)
}

/// Group bound `J * sum_j P(r_j)` for a group of `J` records.
pub fn simple_group_bound(policy: &PolicyFunction, schema: &Schema, rows: &[Row]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let bound = policy.bind(schema)?;
    let total = rows
        .iter()
        .map(|r| bound.evaluate(r))
        .sum::<Result<f64>>()?;
    Ok(rows.len() as f64 * total)
}

/// Same as [`simple_group_bound`] from precomputed losses.
pub fn simple_group_bound_from_losses(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyGroup);
    }
    check_losses(losses)?;
    Ok(losses.len() as f64 * losses.iter().sum::<f64>())
}

fn check_losses(losses: &[f64]) -> Result<()> {
    match losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        Some(&bad) => Err(Error::NegativeLoss(bad)),
        None => Ok(()),
    }
}

const K_MIN: f64 = 1.0 + 1e-9;
const K_MAX: f64 = 1e9;

/// Chained group bound for `k > 1`, losses sorted in descending order:
/// `sum_{j<J} k^j/(k-1) * P_(j) + k^(J-1) * P_(J)`.
///
/// Each step peels one record off with the Rényi triangle inequality; the
/// last step needs no further split so its coefficient is `k^(J-1)`.
pub fn advanced_group_objective(sorted_desc: &[f64], k: f64) -> f64 {
    let j_max = sorted_desc.len();
    let mut total = 0.0;
    let mut kj = 1.0;
    for (j, &p) in sorted_desc.iter().enumerate() {
        if j + 1 == j_max {
            total += kj * p;
        } else {
            kj *= k;
            total += kj / (k - 1.0) * p;
        }
    }
    total
}

/// Closed form of the two-record advanced bound: `P1 + P2 + 2 sqrt(P1 P2)`.
pub fn advanced_group_bound_pair(p1: f64, p2: f64) -> f64 {
    p1 + p2 + 2.0 * (p1 * p2).sqrt()
}

/// Advanced group bound: the infimum over `k > 1` of the chained objective,
/// found numerically. Not always below [`simple_group_bound`]; callers take
/// the smaller of the two.
pub fn advanced_group_bound(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyGroup);
    }
    check_losses(losses)?;
    if losses.len() == 1 {
        return Ok(losses[0]);
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[0] == 0.0 {
        return Ok(0.0);
    }

    let objective = |u: f64| advanced_group_objective(&sorted, 1.0 + u.exp());
    let (mut lo, mut hi) = ((K_MIN - 1.0).ln(), (K_MAX - 1.0).ln());
    if sorted.len() == 2 && sorted[1] > 0.0 {
        // warm start: the two-record optimum is k* = 1 + sqrt(P1/P2)
        let center = (sorted[0] / sorted[1]).sqrt().ln();
        lo = (center - 1.0).max(lo);
        hi = (center + 1.0).min(hi);
    }
    let found = GoldenSection::new(1e-10).minimize(objective, lo, hi);
    Ok(found.value)
}

/// Loss bound for the pair of one-sided zCDP parameters implied by a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneSidedBound {
    /// `P*(r) = 1{r not in R}`, in words.
    pub indicator: String,
    pub rho: f64,
}

/// Given a caller-certified `sup_{r in R} P(r)`, the mechanism is also
/// one-sided zCDP with parameter `2 * sup` for the indicator of `R`'s
/// complement.
pub fn oszcdp_bound(policy: &PolicyFunction, sensitive_set_sup: f64) -> Result<OneSidedBound> {
    if !(sensitive_set_sup.is_finite() && sensitive_set_sup >= 0.0) {
        return Err(Error::NegativeSup(sensitive_set_sup));
    }
    Ok(OneSidedBound {
        indicator: format!(
            "P*(r) = 1 if P(r) > {sensitive_set_sup} is possible for r (r outside the certified set R), else 0; P(r) = {policy}"
        ),
        rho: 2.0 * sensitive_set_sup,
    })
}

/// Supremum of the policy over records that split at most `max_splits`
/// times under every threshold scheme in the tree.
pub fn policy_sup_with_max_splits(policy: &PolicyFunction, max_splits: usize) -> f64 {
    match policy {
        PolicyFunction::Constant { rho } => *rho,
        PolicyFunction::SplitCost { rho, power, .. } => {
            rho * (max_splits as f64).powi(*power as i32)
        }
        PolicyFunction::Sum { terms } => terms
            .iter()
            .map(|t| policy_sup_with_max_splits(t, max_splits))
            .sum(),
        PolicyFunction::PiecewiseByGroup {
            branches, default, ..
        } => branches
            .values()
            .chain([default.as_ref()])
            .map(|t| policy_sup_with_max_splits(t, max_splits))
            .fold(0.0, f64::max),
    }
}

/// Smallest loss the policy assigns: the loss of a record no split touches.
pub fn policy_min(policy: &PolicyFunction) -> f64 {
    match policy {
        PolicyFunction::Constant { rho } => *rho,
        PolicyFunction::SplitCost { rho, .. } => *rho,
        PolicyFunction::Sum { terms } => terms.iter().map(policy_min).sum(),
        PolicyFunction::PiecewiseByGroup {
            branches, default, ..
        } => branches
            .values()
            .chain([default.as_ref()])
            .map(policy_min)
            .fold(f64::INFINITY, f64::min),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub stage: String,
    pub policy: PolicyFunction,
}

/// Ordered record of every policy charged during a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    charges: Vec<Charge>,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, stage: impl Into<String>, policy: PolicyFunction) {
        self.charges.push(Charge {
            stage: stage.into(),
            policy,
        });
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    /// Sequential composition of every charge, in order.
    pub fn combined(&self) -> PolicyFunction {
        sum_of(self.charges.iter().map(|c| c.policy.clone()))
    }
}
