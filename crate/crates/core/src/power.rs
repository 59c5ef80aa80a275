//! Distributed per-cell power allocation.
//!
//! Every non-head member gets the least power that meets its rate guarantee
//! and its SIC gap at every receiver that decodes it; the cluster-head gets
//! what is left. Joint transmission couples the cells of a CoMP set through
//! the CoMP users' shared signals, which [`allocate_jt`] resolves by sweeping
//! the CoMP users in decode order until the powers stop moving.

use std::collections::BTreeMap;

use crate::channel::ChannelRealization;
use crate::comp::validate_jt_conditions;
use crate::error::{Error, Result};
use crate::noma::{NomaCluster, PowerAllocation, UserId, SIC_ROUNDING};

pub const JT_TOLERANCE: f64 = 1e-9;
pub const JT_MAX_ITERATIONS: usize = 100;

/// Relative slack when re-checking guarantees on a finished allocation.
const GUARANTEE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub cluster: NomaCluster,
    /// Noise-normalized gain of every member at this cell, over the
    /// cluster's band (1/mW). Users whose rate also suffers cross-cell
    /// interference carry gain / (1 + interference) here.
    pub gains: BTreeMap<UserId, f64>,
    /// mW available on the cluster's band.
    pub budget: f64,
    pub p_tol: f64,
    /// Powers fixed from outside, used for JT shares.
    pub pinned: BTreeMap<UserId, f64>,
}

impl AllocationProblem {
    pub fn new(
        cluster: NomaCluster,
        gains: BTreeMap<UserId, f64>,
        budget: f64,
        p_tol: f64,
    ) -> Result<Self> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::Domain(format!(
                "budget must be positive, got {budget}"
            )));
        }
        if !(p_tol >= 0.0 && p_tol.is_finite()) {
            return Err(Error::Domain(format!(
                "p_tol must be non-negative, got {p_tol}"
            )));
        }
        for u in &cluster.decode_order {
            match gains.get(u) {
                Some(g) if *g >= 0.0 && g.is_finite() => {}
                _ => return Err(Error::Lookup(format!("missing or invalid gain for {u}"))),
            }
        }
        Ok(AllocationProblem {
            cluster,
            gains,
            budget,
            p_tol,
            pinned: BTreeMap::new(),
        })
    }

    /// Takes each member's in-band gain at the cluster's cell.
    pub fn from_realization(
        cluster: NomaCluster,
        realization: &ChannelRealization,
        budget: f64,
        p_tol: f64,
    ) -> Result<Self> {
        let gains = cluster
            .decode_order
            .iter()
            .map(|u| {
                Ok((
                    *u,
                    realization.in_band(cluster.cell, *u, cluster.band.width)?,
                ))
            })
            .collect::<Result<_>>()?;
        Self::new(cluster, gains, budget, p_tol)
    }

    pub fn band_width(&self) -> f64 {
        self.cluster.band.width
    }

    fn gain(&self, user: UserId) -> f64 {
        self.gains[&user]
    }

    /// Whether the forward solve will give `user` any power: heads and
    /// pinned users always, others only with a positive guarantee.
    fn is_served(&self, user: UserId) -> bool {
        if let Some(p) = self.pinned.get(&user) {
            return *p > 0.0;
        }
        user == self.cluster.cluster_head()
            || self
                .cluster
                .rate_guarantees
                .get(&user)
                .is_some_and(|g| *g > 0.0)
    }

    /// Smallest gain among served members decoded at or after `position`.
    fn min_decoder_gain(&self, position: usize) -> f64 {
        self.cluster.decode_order[position..]
            .iter()
            .filter(|u| self.is_served(**u))
            .map(|u| self.gain(*u))
            .fold(f64::INFINITY, f64::min)
    }
}

/// SINR needed to carry `rate` bits/s over `width` Hz.
pub fn sinr_threshold(rate: f64, width: f64) -> f64 {
    (rate / width).exp2() - 1.0
}

/// p such that p g / ((remaining - p) g + 1) = t.
fn rate_power(t: f64, remaining: f64, gain: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if gain <= 0.0 {
        f64::INFINITY
    } else {
        t * (remaining + 1.0 / gain) / (1.0 + t)
    }
}

/// p such that (p - (remaining - p)) g = p_tol.
fn sic_power(p_tol: f64, remaining: f64, gain: f64) -> f64 {
    let offset = if p_tol <= 0.0 {
        0.0
    } else if gain <= 0.0 {
        f64::INFINITY
    } else {
        p_tol / gain
    };
    (remaining + offset) / 2.0
}

/// Rate of the member at `position` from the problem's own gains.
pub fn member_rate(
    problem: &AllocationProblem,
    powers: &BTreeMap<UserId, f64>,
    position: usize,
) -> f64 {
    let order = &problem.cluster.decode_order;
    let user = order[position];
    let g = problem.gain(user);
    let interference: f64 = order[position + 1..].iter().map(|u| powers[u] * g).sum();
    problem.band_width() * (1.0 + powers[&user] * g / (interference + 1.0)).log2()
}

pub fn sum_rate(problem: &AllocationProblem, alloc: &PowerAllocation) -> f64 {
    (0..problem.cluster.len())
        .map(|k| member_rate(problem, &alloc.powers, k))
        .sum()
}

/// Sequential forward solve in decode order.
///
/// Position `k` with remaining budget `P_k` takes
/// `max(t_k (P_k + 1/g_k) / (1 + t_k), (P_k + p_tol/g_k) / 2)`, where `g_k`
/// is the weakest gain among the members that decode signal `k`. The head
/// takes the rest.
pub fn allocate_single_cell(problem: &AllocationProblem) -> Result<PowerAllocation> {
    let order = &problem.cluster.decode_order;
    let n = order.len();
    let width = problem.band_width();
    let mut remaining = problem.budget;
    let mut powers = BTreeMap::new();
    let mut diagnostics = Vec::new();

    for (k, &user) in order.iter().enumerate().take(n - 1) {
        let p = match problem.pinned.get(&user) {
            Some(&pinned) => {
                diagnostics.push(format!("pos{}:pinned", k + 1));
                pinned
            }
            None if !problem.is_served(user) => {
                diagnostics.push(format!("pos{}:unserved", k + 1));
                0.0
            }
            None => {
                let g_min = problem.min_decoder_gain(k);
                let guarantee = problem.cluster.rate_guarantees[&user];
                let by_rate = rate_power(sinr_threshold(guarantee, width), remaining, g_min);
                let by_sic = sic_power(problem.p_tol, remaining, g_min);
                if by_rate >= by_sic {
                    diagnostics.push(format!("pos{}:rate-bound", k + 1));
                    by_rate
                } else {
                    diagnostics.push(format!("pos{}:sic-bound", k + 1));
                    by_sic
                }
            }
        };
        if p.is_nan() || p > remaining {
            return Err(Error::InfeasibleGuarantee {
                position: k + 1,
                user,
                required: p,
                available: remaining,
            });
        }
        powers.insert(user, p);
        remaining -= p;
    }

    let head = order[n - 1];
    let residual = remaining.max(0.0);
    if let Some(&pinned) = problem.pinned.get(&head) {
        if pinned.is_nan() || pinned > residual * (1.0 + 1e-12) {
            return Err(Error::InfeasibleGuarantee {
                position: n,
                user: head,
                required: pinned,
                available: residual,
            });
        }
    }
    powers.insert(head, residual);

    let mut feasible = true;
    if let Some(&g) = problem.cluster.rate_guarantees.get(&head) {
        if !problem.pinned.contains_key(&head) {
            let head_rate = width * (1.0 + residual * problem.gain(head)).log2();
            if head_rate < g * (1.0 - GUARANTEE_SLACK) {
                feasible = false;
                diagnostics.push(format!("pos{n}:head-guarantee-unmet"));
            }
        }
    }
    Ok(PowerAllocation {
        powers,
        feasible,
        diagnostics,
    })
}

/// How a JT CoMP user's combined received power is divided among the cells
/// that share it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JtSplit {
    /// Every sharing cell delivers the same received power.
    EqualReceived,
    /// Every sharing cell spends the same transmit power. Unlike
    /// `EqualReceived`, this never asks a weak link for more than the
    /// strong one, so the half-budget SIC floor in each cell stays reachable.
    #[default]
    EqualPower,
}

impl JtSplit {
    /// Transmit power per unit of combined received power for each link;
    /// `sum_c w_c g_c = 1` over the sharing links with positive gain.
    fn weights(&self, gains: &[f64]) -> Vec<f64> {
        match self {
            JtSplit::EqualReceived => {
                let m = gains.len() as f64;
                gains.iter().map(|g| 1.0 / (m * g)).collect()
            }
            JtSplit::EqualPower => {
                let total: f64 = gains.iter().sum();
                vec![1.0 / total; gains.len()]
            }
        }
    }
}

/// Result of [`allocate_jt`]: one allocation per cell, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct JtAllocation {
    pub cells: Vec<PowerAllocation>,
    /// Sweeps that changed the powers before the fixed point was confirmed.
    pub iterations: usize,
}

impl JtAllocation {
    pub fn feasible(&self) -> bool {
        self.cells.iter().all(|a| a.feasible)
    }
}

/// Per-cell view of one CoMP user during a sweep.
struct CompLink {
    cell: usize,
    gain: f64,
    /// Power left after earlier CoMP users in this cell.
    available: f64,
    /// Whether the user is this cluster's head (takes the residual).
    is_head: bool,
    /// Transmit power per unit of combined received power.
    weight: f64,
}

/// Joint-transmission allocation across the cells of a CoMP set.
///
/// Each guaranteed CoMP user needs a combined received power `S`; cells in
/// which it is not the head contribute equal received shares of it
/// (`p_c = S / (M' g_c)` over those `M'` cells), cells in which it is the
/// head give it their residual. Non-CoMP members are then solved per cell
/// with the CoMP powers pinned. Sweeps repeat until the largest relative
/// power change drops below [`JT_TOLERANCE`].
pub fn allocate_jt(problems: &[AllocationProblem]) -> Result<JtAllocation> {
    allocate_jt_with(problems, JtSplit::EqualReceived)
}

/// [`allocate_jt`] with a chosen per-cell split.
pub fn allocate_jt_with(problems: &[AllocationProblem], split: JtSplit) -> Result<JtAllocation> {
    if problems.is_empty() {
        return Err(Error::Domain(
            "JT allocation needs at least one cell".into(),
        ));
    }
    if problems.len() == 1 {
        return Ok(JtAllocation {
            cells: vec![allocate_single_cell(&problems[0])?],
            iterations: 1,
        });
    }

    let clusters: Vec<&NomaCluster> = problems.iter().map(|p| &p.cluster).collect();
    let comp_users = problems[0].cluster.comp_users.clone();
    if problems.iter().any(|p| p.cluster.comp_users != comp_users) {
        return Err(Error::Domain(
            "JT clusters disagree on the CoMP user set".into(),
        ));
    }
    validate_jt_conditions(&clusters, &comp_users)?;
    let width = problems[0].band_width();
    if problems.iter().any(|p| p.band_width() != width) {
        return Err(Error::Domain("JT clusters must share one band".into()));
    }

    let comp_order: Vec<UserId> = problems[0]
        .cluster
        .decode_order
        .iter()
        .copied()
        .filter(|u| comp_users.contains(u))
        .collect();
    let guarantee = |u: UserId| -> Option<f64> {
        problems
            .iter()
            .filter_map(|p| p.cluster.rate_guarantees.get(&u).copied())
            .reduce(f64::max)
    };

    let mut previous: Option<Vec<PowerAllocation>> = None;
    let mut last_change = f64::INFINITY;
    for sweep in 1..=JT_MAX_ITERATIONS {
        let mut pinned: Vec<BTreeMap<UserId, f64>> = vec![BTreeMap::new(); problems.len()];
        let mut spent: Vec<f64> = vec![0.0; problems.len()];

        for &u in &comp_order {
            // unguaranteed CoMP users are left to the per-cell solve
            let Some(g_u) = guarantee(u).filter(|g| *g > 0.0) else {
                continue;
            };
            let mut links: Vec<CompLink> = problems
                .iter()
                .enumerate()
                .map(|(c, p)| CompLink {
                    cell: c,
                    gain: p.gain(u),
                    available: p.budget - spent[c],
                    is_head: p.cluster.cluster_head() == u,
                    weight: 0.0,
                })
                .collect();
            let sharing_gains: Vec<f64> = links
                .iter()
                .filter(|l| !l.is_head)
                .map(|l| l.gain)
                .collect();
            let mut weights = split.weights(&sharing_gains).into_iter();
            for link in links.iter_mut().filter(|l| !l.is_head) {
                link.weight = weights.next().expect("one weight per sharing link");
            }
            let target = combined_target(problems, &links, u, g_u, width)?;
            for link in links.iter().filter(|l| !l.is_head) {
                let share = if target <= 0.0 {
                    0.0
                } else {
                    target * link.weight
                };
                if share.is_nan() || share > link.available {
                    return Err(Error::InfeasibleGuarantee {
                        position: problems[link.cell].cluster.position(u).unwrap_or(0) + 1,
                        user: u,
                        required: share,
                        available: link.available,
                    });
                }
                pinned[link.cell].insert(u, share);
                spent[link.cell] += share;
            }
        }

        let mut cells = Vec::with_capacity(problems.len());
        for (problem, pins) in problems.iter().zip(pinned) {
            let mut sub = problem.clone();
            sub.pinned = pins;
            cells.push(allocate_single_cell(&sub)?);
        }

        if let Some(prev) = &previous {
            last_change = max_relative_change(prev, &cells);
            if last_change < JT_TOLERANCE {
                finish_jt(problems, &comp_order, &guarantee, &mut cells, width);
                return Ok(JtAllocation {
                    cells,
                    iterations: sweep - 1,
                });
            }
        }
        previous = Some(cells);
    }
    Err(Error::NonConvergence {
        iterations: JT_MAX_ITERATIONS,
        last_change,
    })
}

/// Combined received power a CoMP user needs from its guarantee and from
/// the SIC gaps at every receiver that decodes it.
fn combined_target(
    problems: &[AllocationProblem],
    links: &[CompLink],
    user: UserId,
    guarantee: f64,
    width: f64,
) -> Result<f64> {
    if links.iter().all(|l| l.is_head) {
        return Ok(0.0);
    }
    let p_tol = problems[0].p_tol;
    // Received power from head cells, and what the sharing cells could
    // deliver if everything left went to later members.
    let head_power: f64 = links
        .iter()
        .filter(|l| l.is_head)
        .map(|l| l.available * l.gain)
        .sum();
    let open: f64 = links
        .iter()
        .filter(|l| !l.is_head)
        .map(|l| l.available * l.gain)
        .sum();

    // S + H >= t (A - S + 1)
    let t = sinr_threshold(guarantee, width);
    let mut target = if t <= 0.0 {
        0.0
    } else {
        (t * (open + 1.0) - head_power) / (1.0 + t)
    };

    // SIC gap at each decoder of this signal.
    let position = |c: usize| {
        problems[c]
            .cluster
            .position(user)
            .expect("validated membership")
    };
    for link in links.iter().filter(|l| !l.is_head) {
        let cluster = &problems[link.cell].cluster;
        for &k in &cluster.decode_order[position(link.cell)..] {
            let needed = if cluster.is_comp(k) {
                // Combined gap: sum_c (p_c - later_c) g_{c,k} >= p_tol.
                let mut coefficient = 0.0;
                let mut rhs = p_tol;
                for l in links {
                    let g_k = problems[l.cell].gain(k);
                    if l.is_head {
                        rhs -= l.available * g_k;
                    } else {
                        if l.weight.is_finite() {
                            coefficient += 2.0 * g_k * l.weight;
                        }
                        rhs += l.available * g_k;
                    }
                }
                if rhs <= 0.0 {
                    0.0
                } else if coefficient > 0.0 {
                    rhs / coefficient
                } else {
                    f64::INFINITY
                }
            } else {
                // Single-cell decoder: (2 p_c - available_c) g_{c,k} >= p_tol.
                let g_k = problems[link.cell].gain(k);
                let offset = if p_tol <= 0.0 {
                    0.0
                } else if g_k > 0.0 {
                    p_tol / g_k
                } else {
                    f64::INFINITY
                };
                (link.available + offset) / (2.0 * link.weight)
            };
            target = target.max(needed);
        }
        // Each sharing cell is visited once per decoder set; CoMP decoders
        // repeat across cells but give the same bound.
    }
    if target.is_nan() {
        return Err(Error::Domain(format!("undefined JT target for {user}")));
    }
    Ok(target.max(0.0))
}

fn max_relative_change(prev: &[PowerAllocation], next: &[PowerAllocation]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, b) in prev.iter().zip(next) {
        for (u, p) in &b.powers {
            let q = a.powers.get(u).copied().unwrap_or(0.0);
            let scale = p.abs().max(q.abs());
            if scale > 0.0 {
                worst = worst.max((p - q).abs() / scale);
            }
        }
    }
    worst
}

/// Re-checks CoMP guarantees and combined SIC gaps on the converged powers.
fn finish_jt(
    problems: &[AllocationProblem],
    comp_order: &[UserId],
    guarantee: &dyn Fn(UserId) -> Option<f64>,
    cells: &mut [PowerAllocation],
    width: f64,
) {
    let mut issues = Vec::new();
    for &u in comp_order {
        let mut signal = 0.0;
        let mut interference = 0.0;
        for (p, a) in problems.iter().zip(cells.iter()) {
            let g = p.gain(u);
            let pos = p.cluster.position(u).expect("validated membership");
            signal += a.powers[&u] * g;
            interference += p.cluster.decode_order[pos + 1..]
                .iter()
                .map(|v| a.powers[v] * g)
                .sum::<f64>();
        }
        if let Some(g) = guarantee(u) {
            let rate = width * (1.0 + signal / (interference + 1.0)).log2();
            if rate < g * (1.0 - GUARANTEE_SLACK) {
                issues.push(format!("{u}:jt-guarantee-unmet"));
            }
        }
    }
    if !jt_sic_gaps_hold(problems, cells) {
        issues.push("jt-sic-gap".into());
    }
    if !issues.is_empty() {
        for cell in cells.iter_mut() {
            cell.feasible = false;
            cell.diagnostics.extend(issues.iter().cloned());
        }
    }
}

/// SIC gap check across a JT CoMP set. CoMP signals decoded by CoMP users
/// are compared in the combined domain; every other pair per cell.
pub fn jt_sic_gaps_hold(problems: &[AllocationProblem], cells: &[PowerAllocation]) -> bool {
    let p_tol = problems[0].p_tol;
    let later_sum = |c: usize, pos: usize| -> f64 {
        problems[c].cluster.decode_order[pos + 1..]
            .iter()
            .map(|v| cells[c].powers[v])
            .sum()
    };
    for (c, problem) in problems.iter().enumerate() {
        let order = &problem.cluster.decode_order;
        for (i, &signal) in order.iter().enumerate().take(order.len().saturating_sub(1)) {
            if cells[c].powers[&signal] <= 0.0 {
                continue;
            }
            for &decoder in order[i..].iter().filter(|d| cells[c].powers[*d] > 0.0) {
                // (gap, magnitude of the subtracted terms)
                let (gap, scale) =
                    if problem.cluster.is_comp(signal) && problem.cluster.is_comp(decoder) {
                        problems
                            .iter()
                            .enumerate()
                            .map(|(m, p)| {
                                let pos = p.cluster.position(signal).expect("validated membership");
                                let (own, later) = (cells[m].powers[&signal], later_sum(m, pos));
                                (
                                    (own - later) * p.gain(decoder),
                                    (own + later) * p.gain(decoder),
                                )
                            })
                            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
                    } else {
                        let (own, later) = (cells[c].powers[&signal], later_sum(c, i));
                        (
                            (own - later) * problem.gain(decoder),
                            (own + later) * problem.gain(decoder),
                        )
                    };
                if gap + SIC_ROUNDING * scale < p_tol {
                    return false;
                }
            }
        }
    }
    true
}

/// Exhaustive search over the full-budget power simplex (n <= 3).
///
/// Maximizes the cluster sum-rate subject to every guarantee being decodable
/// at each receiver that decodes it and to the SIC gaps. `grid_points` is
/// the number of steps per free dimension.
pub fn brute_force_oracle(problem: &AllocationProblem, grid_points: usize) -> PowerAllocation {
    let order = &problem.cluster.decode_order;
    let n = order.len();
    assert!(
        (1..=3).contains(&n),
        "oracle supports clusters of 1 to 3 users"
    );
    let budget = problem.budget;
    let step = budget / grid_points as f64;
    let gains: Vec<f64> = order.iter().map(|u| problem.gain(*u)).collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |p: Vec<f64>| {
        if let Some(value) = oracle_objective(problem, &gains, &p) {
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, p));
            }
        }
    };
    match n {
        1 => consider(vec![budget]),
        2 => {
            for i in 0..=grid_points {
                let p1 = i as f64 * step;
                consider(vec![p1, (budget - p1).max(0.0)]);
            }
        }
        _ => {
            for i in 0..=grid_points {
                let p1 = i as f64 * step;
                for j in 0..=(grid_points - i) {
                    let p2 = j as f64 * step;
                    consider(vec![p1, p2, (budget - p1 - p2).max(0.0)]);
                }
            }
        }
    }

    match best {
        Some((_, p)) => PowerAllocation {
            powers: order.iter().copied().zip(p).collect(),
            feasible: true,
            diagnostics: vec![],
        },
        None => PowerAllocation {
            powers: order.iter().map(|u| (*u, 0.0)).collect(),
            feasible: false,
            diagnostics: vec!["grid:no-feasible-point".into()],
        },
    }
}

/// Sum-rate of a candidate point, or `None` if it breaks a constraint.
fn oracle_objective(problem: &AllocationProblem, gains: &[f64], p: &[f64]) -> Option<f64> {
    let order = &problem.cluster.decode_order;
    let n = p.len();
    let width = problem.band_width();
    let rate_at = |signal: usize, receiver: usize| -> f64 {
        let g = gains[receiver];
        let rest: f64 = p[signal + 1..].iter().sum();
        width * (1.0 + p[signal] * g / (rest * g + 1.0)).log2()
    };
    for k in 0..n {
        let guarantee = problem.cluster.rate_guarantees.get(&order[k]).copied();
        if let Some(g) = guarantee {
            for j in (k..n).filter(|j| *j == k || p[*j] > 0.0) {
                if rate_at(k, j) < g * (1.0 - 1e-12) {
                    return None;
                }
            }
        }
        if k + 1 < n && p[k] > 0.0 {
            let gap = p[k] - p[k + 1..].iter().sum::<f64>();
            let served = (k..n).filter(|j| p[*j] > 0.0);
            if served.map(|j| gains[j]).any(|g| gap * g < problem.p_tol) {
                return None;
            }
        }
    }
    Some((0..n).map(|k| rate_at(k, k)).sum())
}
