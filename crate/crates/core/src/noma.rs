//! Users, cells and NOMA clusters, plus the per-user achievable-rate
//! formulas and the SIC feasibility predicate.
//!
//! Rates are in bits/s over the band the cluster occupies. Channel gains are
//! looked up through [`ChannelRealization::in_band`], which rescales the
//! stored full-band gain to the noise power of the cluster's band.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cell{}", self.0)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ue{}", self.0)
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Comp,
    NonComp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEquipment {
    pub id: UserId,
    pub role: Role,
    /// Every cell of the CoMP set for CoMP users, the single serving cell
    /// otherwise.
    pub serving_cells: Vec<CellId>,
    pub position: Position,
}

impl UserEquipment {
    pub fn is_comp(&self) -> bool {
        self.role == Role::Comp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: CellId,
    pub position: Position,
    /// Transmit power budget over the full system band, mW.
    pub power_budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub id: u32,
    /// Hz.
    pub width: f64,
}

/// One cell's superposition group on one band.
///
/// `decode_order[0]` is decoded (and cancelled) first at every receiver; the
/// last entry is the cluster-head.
#[derive(Debug, Clone, PartialEq)]
pub struct NomaCluster {
    pub cell: CellId,
    pub band: Band,
    pub decode_order: Vec<UserId>,
    /// Members served jointly with other cells.
    pub comp_users: BTreeSet<UserId>,
    /// Minimum rate in bits/s. Required for every non-head member; a head
    /// entry is optional and checked after allocation.
    pub rate_guarantees: BTreeMap<UserId, f64>,
}

impl NomaCluster {
    pub fn new(
        cell: CellId,
        band: Band,
        decode_order: Vec<UserId>,
        comp_users: BTreeSet<UserId>,
        rate_guarantees: BTreeMap<UserId, f64>,
    ) -> Result<Self> {
        if decode_order.is_empty() {
            return Err(Error::Domain(format!("empty cluster in {cell}")));
        }
        if !(band.width > 0.0 && band.width.is_finite()) {
            return Err(Error::Domain(format!(
                "band width {} must be positive",
                band.width
            )));
        }
        let mut seen = BTreeSet::new();
        for u in &decode_order {
            if !seen.insert(*u) {
                return Err(Error::Domain(format!(
                    "{u} appears twice in the decode order of {cell}"
                )));
            }
        }
        for u in &comp_users {
            if !seen.contains(u) {
                return Err(Error::Domain(format!(
                    "CoMP user {u} is not a member of {cell}'s cluster"
                )));
            }
        }
        for u in &decode_order[..decode_order.len() - 1] {
            match rate_guarantees.get(u) {
                Some(g) if *g >= 0.0 && g.is_finite() => {}
                Some(g) => {
                    return Err(Error::Domain(format!(
                        "guarantee {g} for {u} must be finite and non-negative"
                    )))
                }
                None => {
                    return Err(Error::Domain(format!(
                        "non-head user {u} in {cell} has no rate guarantee"
                    )))
                }
            }
        }
        Ok(NomaCluster {
            cell,
            band,
            decode_order,
            comp_users,
            rate_guarantees,
        })
    }

    pub fn cluster_head(&self) -> UserId {
        *self.decode_order.last().expect("cluster is never empty")
    }

    pub fn len(&self) -> usize {
        self.decode_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decode_order.is_empty()
    }

    pub fn position(&self, user: UserId) -> Option<usize> {
        self.decode_order.iter().position(|u| *u == user)
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.position(user).is_some()
    }

    pub fn is_comp(&self, user: UserId) -> bool {
        self.comp_users.contains(&user)
    }
}

/// Transmit powers for one cluster.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerAllocation {
    /// mW per member.
    pub powers: BTreeMap<UserId, f64>,
    pub feasible: bool,
    pub diagnostics: Vec<String>,
}

impl PowerAllocation {
    pub fn power(&self, user: UserId) -> Result<f64> {
        self.powers
            .get(&user)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no power allocated to {user}")))
    }

    pub fn total(&self) -> f64 {
        self.powers.values().sum()
    }
}

/// Whether non-CoMP users see the other cells' non-CoMP transmissions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterferenceMode {
    Full,
    Negligible,
}

/// Received signal and residual intra-cluster interference (both noise
/// normalized) of `user` in one cluster.
fn received(
    cluster: &NomaCluster,
    alloc: &PowerAllocation,
    gains: &ChannelRealization,
    user: UserId,
) -> Result<(f64, f64)> {
    let pos = cluster
        .position(user)
        .ok_or_else(|| Error::Lookup(format!("{user} is not in {}'s cluster", cluster.cell)))?;
    let gain = gains.in_band(cluster.cell, user, cluster.band.width)?;
    let signal = alloc.power(user)? * gain;
    let mut interference = 0.0;
    for later in &cluster.decode_order[pos + 1..] {
        interference += alloc.power(*later)? * gain;
    }
    Ok((signal, interference))
}

fn shannon(width: f64, signal: f64, interference_plus_noise: f64) -> f64 {
    width * (1.0 + signal / interference_plus_noise).log2()
}

/// Rate of `user` inside a single cluster: interference comes only from
/// members decoded after it.
pub fn user_rate_single_cell(
    cluster: &NomaCluster,
    alloc: &PowerAllocation,
    gains: &ChannelRealization,
    user: UserId,
) -> Result<f64> {
    let (signal, interference) = received(cluster, alloc, gains, user)?;
    Ok(shannon(cluster.band.width, signal, interference + 1.0))
}

/// Rate of a jointly transmitted user: received powers from every cell of
/// the CoMP set add coherently in the numerator, each cell's later-decoded
/// members add to the denominator.
pub fn comp_user_rate_jt(
    clusters: &[&NomaCluster],
    allocs: &[&PowerAllocation],
    gains: &ChannelRealization,
    user: UserId,
) -> Result<f64> {
    if clusters.is_empty() || clusters.len() != allocs.len() {
        return Err(Error::Domain(format!(
            "{} clusters but {} allocations",
            clusters.len(),
            allocs.len()
        )));
    }
    let width = clusters[0].band.width;
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (cluster, alloc) in clusters.iter().zip(allocs) {
        if cluster.band.width != width {
            return Err(Error::Domain("JT clusters must share one band".into()));
        }
        if !cluster.contains(user) {
            return Err(Error::ConditionViolation {
                which: crate::error::JtCondition::SameOrder,
                cluster: cluster.cell,
                users: vec![user],
            });
        }
        let (s, i) = received(cluster, alloc, gains, user)?;
        signal += s;
        interference += i;
    }
    Ok(shannon(width, signal, interference + 1.0))
}

/// Rate of a single-cell user. In [`InterferenceMode::Full`] the non-CoMP
/// transmissions of `others` (clusters of other cells on the same band) add
/// to the denominator through the cross-cell gain.
pub fn noncomp_user_rate(
    cluster: &NomaCluster,
    alloc: &PowerAllocation,
    gains: &ChannelRealization,
    user: UserId,
    mode: InterferenceMode,
    others: &[(&NomaCluster, &PowerAllocation)],
) -> Result<f64> {
    let (signal, interference) = received(cluster, alloc, gains, user)?;
    let cross = match mode {
        InterferenceMode::Negligible => 0.0,
        InterferenceMode::Full => cross_cell_interference(cluster, gains, user, others)?,
    };
    Ok(shannon(
        cluster.band.width,
        signal,
        interference + cross + 1.0,
    ))
}

/// Noise-normalized interference at `user` from other cells' non-CoMP
/// members on the same band.
pub fn cross_cell_interference(
    cluster: &NomaCluster,
    gains: &ChannelRealization,
    user: UserId,
    others: &[(&NomaCluster, &PowerAllocation)],
) -> Result<f64> {
    let mut cross = 0.0;
    for (other, other_alloc) in others {
        if other.cell == cluster.cell || other.band.id != cluster.band.id {
            continue;
        }
        let gain = gains.in_band(other.cell, user, other.band.width)?;
        for member in &other.decode_order {
            if !other.is_comp(*member) {
                cross += other_alloc.power(*member)? * gain;
            }
        }
    }
    Ok(cross)
}

/// SIC power-gap predicate for one cluster.
///
/// For every non-head position `i`, the gap between its power and the sum of
/// all later powers, received at every member that must decode signal `i`
/// (positions `>= i`), must reach `p_tol`. Members without power neither
/// need cancelling nor cancel anything.
/// Relative rounding allowance on the power difference in SIC gap checks.
pub const SIC_ROUNDING: f64 = 1e-12;

pub fn sic_feasible(
    cluster: &NomaCluster,
    alloc: &PowerAllocation,
    gains: &ChannelRealization,
    p_tol: f64,
) -> bool {
    let order = &cluster.decode_order;
    let powers: Option<Vec<f64>> = order.iter().map(|u| alloc.powers.get(u).copied()).collect();
    let gain_list: Option<Vec<f64>> = order
        .iter()
        .map(|u| gains.in_band(cluster.cell, *u, cluster.band.width).ok())
        .collect();
    let (Some(powers), Some(gain_list)) = (powers, gain_list) else {
        return false;
    };
    let n = order.len();
    for i in 0..n.saturating_sub(1) {
        if powers[i] <= 0.0 {
            continue;
        }
        let later: f64 = powers[i + 1..].iter().sum();
        let gap = powers[i] - later;
        // rounding in the subtraction is forgiven, nothing more
        let slack = SIC_ROUNDING * (powers[i] + later);
        let mut decoders = (i..n).filter(|k| powers[*k] > 0.0).map(|k| gain_list[k]);
        if decoders.any(|g| (gap + slack) * g < p_tol) {
            return false;
        }
    }
    true
}
