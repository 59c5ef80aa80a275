//! Deployment scenarios, OMA baselines and per-trial evaluation.
//!
//! Two cells sit `inter_bs_distance` apart on the x axis with the origin at
//! their midpoint. Non-CoMP users are placed deterministically inside their
//! cell's centre disc; CoMP users are drawn per trial outside every centre
//! disc.
//!
//! | scenario | CoMP users | non-CoMP users per cell  | swept parameter           |
//! |----------|------------|--------------------------|---------------------------|
//! | 1        | 1          | 2 (head, 300 m)          | cluster-head distance     |
//! | 2        | 2          | 1 (250 m)                | cell-edge coverage        |
//! | 3        | 2          | 1 in cell 1, 0 in cell 2 | cell-edge coverage        |

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::channel::{ChannelRealization, RadioParams};
use crate::comp::{
    build_cs_band_plan, dps_select_cell, reject_cb, CompScheme, CompSet, CsCellUsers,
};
use crate::error::{Error, Result};
use crate::noma::{
    comp_user_rate_jt, cross_cell_interference, noncomp_user_rate, Band, Cell, CellId,
    InterferenceMode, NomaCluster, Position, PowerAllocation, Role, UserEquipment, UserId,
};
use crate::power::{
    allocate_jt_with, allocate_single_cell, AllocationProblem, JtSplit, JT_MAX_ITERATIONS,
    JT_TOLERANCE,
};

pub const CELL_1: CellId = CellId(1);
pub const CELL_2: CellId = CellId(2);

/// Relative slack on the guarantee re-check of a finished trial.
pub const GUARANTEE_TOLERANCE: f64 = 1e-9;

/// Diagnostic suffix of a trial demoted by the guarantee re-check.
pub const RECHECK_FAILED: &str = "guarantee-recheck-failed";

const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScenarioId {
    One = 1,
    Two = 2,
    Three = 3,
}

impl TryFrom<u8> for ScenarioId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ScenarioId::One),
            2 => Ok(ScenarioId::Two),
            3 => Ok(ScenarioId::Three),
            _ => Err(Error::validation(
                "scenario_id",
                format!("must be 1, 2 or 3, got {v}"),
            )),
        }
    }
}

/// Which cluster's ascending-gain order fixes the CoMP users' shared order
/// in scenario 3.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum DecodeCase {
    /// Ascending gain inside cell 2's cluster.
    Case1,
    /// Ascending gain inside cell 1's cluster.
    Case2,
}

impl fmt::Display for DecodeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeCase::Case1 => "case1",
            DecodeCase::Case2 => "case2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementLaw {
    /// Uniform in a disc of radius `coverage` about the midpoint of the two
    /// base stations.
    Disc,
    /// Uniform in the ring between the centre disc and `centre + coverage`
    /// around a home cell, alternating home cells between CoMP users.
    Annulus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub inter_bs_distance: f64,
    /// Radius of the non-CoMP (cell-centre) area.
    pub noncomp_radius: f64,
    /// Scenario 1: distance of the second non-CoMP user.
    pub second_user_distance: f64,
    /// Scenarios 2 and 3: distance of the non-CoMP user.
    pub noncomp_distance: f64,
    /// Scenario 1: CoMP cell-edge coverage distance.
    pub comp_coverage: f64,
    pub law: PlacementLaw,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            inter_bs_distance: 1000.0,
            noncomp_radius: 400.0,
            second_user_distance: 300.0,
            noncomp_distance: 250.0,
            comp_coverage: 200.0,
            law: PlacementLaw::Disc,
        }
    }
}

/// Transmission scheme evaluated on a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    JtNoma,
    CsNoma,
    DpsNoma,
    JtOma,
    CsOma,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::JtNoma,
        Scheme::CsNoma,
        Scheme::DpsNoma,
        Scheme::JtOma,
        Scheme::CsOma,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::JtNoma => "JT-NOMA",
            Scheme::CsNoma => "CS-NOMA",
            Scheme::DpsNoma => "DPS-NOMA",
            Scheme::JtOma => "JT-OMA",
            Scheme::CsOma => "CS-OMA",
        }
    }

    pub fn is_noma(&self) -> bool {
        matches!(self, Scheme::JtNoma | Scheme::CsNoma | Scheme::DpsNoma)
    }

    pub fn comp_scheme(&self) -> CompScheme {
        match self {
            Scheme::JtNoma | Scheme::JtOma => CompScheme::Jt,
            Scheme::CsNoma | Scheme::CsOma => CompScheme::Cs,
            Scheme::DpsNoma => CompScheme::Dps,
        }
    }

    /// CS needs one CoMP user and one non-CoMP user per cell.
    pub fn check_applicable(&self, scenario: ScenarioId) -> Result<()> {
        if self.comp_scheme() == CompScheme::Cs && scenario != ScenarioId::Two {
            return Err(Error::Config(format!(
                "{} needs one CoMP and one non-CoMP user per cell (scenario 2)",
                self.label()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        if norm == "CB" || norm.starts_with("CB-") {
            return Err(reject_cb());
        }
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.label() == norm)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTopology {
    pub scenario: ScenarioId,
    pub cells: Vec<Cell>,
    /// Sorted by id.
    pub users: Vec<UserEquipment>,
    pub comp_set: CompSet,
    pub sweep_value: f64,
    pub decode_case: Option<DecodeCase>,
}

impl ScenarioTopology {
    pub fn user(&self, id: UserId) -> Option<&UserEquipment> {
        self.users.iter().find(|u| u.id == id)
    }

    pub fn comp_users(&self) -> Vec<UserId> {
        self.users
            .iter()
            .filter(|u| u.is_comp())
            .map(|u| u.id)
            .collect()
    }

    pub fn non_comp_of(&self, cell: CellId) -> Vec<UserId> {
        self.users
            .iter()
            .filter(|u| !u.is_comp() && u.serving_cells == [cell])
            .map(|u| u.id)
            .collect()
    }

    pub fn cell(&self, id: CellId) -> Option<&Cell> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn with_case(&self, case: DecodeCase) -> Self {
        ScenarioTopology {
            decode_case: Some(case),
            ..self.clone()
        }
    }
}

/// Admissible sweep range `(lo, hi]` for a scenario.
pub fn sweep_range(scenario: ScenarioId, geometry: &Geometry) -> (f64, f64) {
    match scenario {
        ScenarioId::One => (0.0, geometry.noncomp_radius),
        _ => match geometry.law {
            PlacementLaw::Disc => (0.0, geometry.inter_bs_distance / 2.0),
            PlacementLaw::Annulus => (0.0, geometry.inter_bs_distance),
        },
    }
}

fn non_comp_position(
    base: &Position,
    outward: f64,
    distance: f64,
    index: usize,
    count: usize,
) -> Position {
    let offset = if count <= 1 {
        0.0
    } else {
        -FRAC_PI_4 + 2.0 * FRAC_PI_4 * index as f64 / (count - 1) as f64
    };
    let angle = outward + offset;
    Position::new(
        base.x + distance * angle.cos(),
        base.y + distance * angle.sin(),
    )
}

fn place_comp_user<R: Rng + ?Sized>(
    rng: &mut R,
    cells: &[Cell],
    home: usize,
    coverage: f64,
    geometry: &Geometry,
) -> Result<Position> {
    let mid = Position::new(
        (cells[0].position.x + cells[1].position.x) / 2.0,
        (cells[0].position.y + cells[1].position.y) / 2.0,
    );
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let u: f64 = rng.random();
        let theta = 2.0 * PI * rng.random::<f64>();
        let (center, radius) = match geometry.law {
            PlacementLaw::Disc => (mid, coverage * u.sqrt()),
            PlacementLaw::Annulus => {
                let inner = geometry.noncomp_radius;
                let outer = inner + coverage;
                (
                    cells[home].position,
                    (inner * inner + u * (outer * outer - inner * inner)).sqrt(),
                )
            }
        };
        let p = Position::new(
            center.x + radius * theta.cos(),
            center.y + radius * theta.sin(),
        );
        if cells
            .iter()
            .all(|c| c.position.distance(&p) > geometry.noncomp_radius)
        {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "no CoMP position outside the {} m centre discs within coverage {coverage} m",
        geometry.noncomp_radius
    )))
}

/// Builds one scenario's topology. CoMP positions are drawn from `rng`;
/// everything else is deterministic.
pub fn build_scenario<R: Rng + ?Sized>(
    scenario: ScenarioId,
    sweep_value: f64,
    decode_case: Option<DecodeCase>,
    geometry: &Geometry,
    budget: f64,
    rng: &mut R,
) -> Result<ScenarioTopology> {
    let (lo, hi) = sweep_range(scenario, geometry);
    if !(sweep_value > lo && sweep_value <= hi) {
        return Err(Error::Config(format!(
            "sweep value {sweep_value} m outside ({lo}, {hi}] for scenario {}",
            scenario as u8
        )));
    }
    if scenario == ScenarioId::Three && decode_case.is_none() {
        return Err(Error::Config("scenario 3 needs a decode case".into()));
    }
    let half = geometry.inter_bs_distance / 2.0;
    let cells = vec![
        Cell {
            id: CELL_1,
            position: Position::new(-half, 0.0),
            power_budget: budget,
        },
        Cell {
            id: CELL_2,
            position: Position::new(half, 0.0),
            power_budget: budget,
        },
    ];
    let outward = [PI, 0.0];

    // (cell index, distances) of non-CoMP users, and the CoMP user count
    let (non_comp, comp_count, coverage): (Vec<(usize, Vec<f64>)>, usize, f64) = match scenario {
        ScenarioId::One => (
            vec![
                (0, vec![sweep_value, geometry.second_user_distance]),
                (1, vec![sweep_value, geometry.second_user_distance]),
            ],
            1,
            geometry.comp_coverage,
        ),
        ScenarioId::Two => (
            vec![
                (0, vec![geometry.noncomp_distance]),
                (1, vec![geometry.noncomp_distance]),
            ],
            2,
            sweep_value,
        ),
        ScenarioId::Three => (vec![(0, vec![geometry.noncomp_distance])], 2, sweep_value),
    };

    let mut users = Vec::new();
    let comp_cells = vec![CELL_1, CELL_2];
    for j in 0..comp_count {
        let position = place_comp_user(rng, &cells, j % 2, coverage, geometry)?;
        users.push(UserEquipment {
            id: UserId(j as u32 + 1),
            role: Role::Comp,
            serving_cells: comp_cells.clone(),
            position,
        });
    }
    for (cell_index, distances) in &non_comp {
        let cell = &cells[*cell_index];
        for (k, &d) in distances.iter().enumerate() {
            if !(d > 0.0 && d <= geometry.noncomp_radius) {
                return Err(Error::Config(format!(
                    "non-CoMP distance {d} m outside the {} m centre disc",
                    geometry.noncomp_radius
                )));
            }
            users.push(UserEquipment {
                id: UserId(10 * cell.id.0 + k as u32 + 1),
                role: Role::NonComp,
                serving_cells: vec![cell.id],
                position: non_comp_position(
                    &cell.position,
                    outward[*cell_index],
                    d,
                    k,
                    distances.len(),
                ),
            });
        }
    }
    users.sort_by_key(|u| u.id);

    let comp_set = CompSet::new(
        cells.iter().map(|c| c.id).collect(),
        CompScheme::Jt,
        users.iter().filter(|u| u.is_comp()).map(|u| u.id).collect(),
    )?;
    Ok(ScenarioTopology {
        scenario,
        cells,
        users,
        comp_set,
        sweep_value,
        decode_case,
    })
}

/// Orthogonal grant: a share of the system band, carried by every listed
/// cell at power proportional to the share.
#[derive(Debug, Clone, PartialEq)]
pub struct OmaGrant {
    pub user: UserId,
    pub fraction: f64,
    pub cells: Vec<CellId>,
}

/// Equal-share OMA plan used as the JT-CoMP-OMA baseline.
///
/// Each cell splits the band equally among the users it serves. A CoMP user
/// gets the smallest of its cells' shares on an aligned sub-band from all of
/// them, and each cell's surplus share as a single-cell grant.
pub fn jt_oma_plan(topology: &ScenarioTopology) -> Vec<OmaGrant> {
    let share = |cell: CellId| {
        let served = topology
            .users
            .iter()
            .filter(|u| u.serving_cells.contains(&cell))
            .count();
        1.0 / served as f64
    };
    let mut grants = Vec::new();
    for user in &topology.users {
        let shares: Vec<(CellId, f64)> =
            user.serving_cells.iter().map(|c| (*c, share(*c))).collect();
        let joint = shares.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        grants.push(OmaGrant {
            user: user.id,
            fraction: joint,
            cells: user.serving_cells.clone(),
        });
        for (cell, s) in shares {
            if s > joint {
                grants.push(OmaGrant {
                    user: user.id,
                    fraction: s - joint,
                    cells: vec![cell],
                });
            }
        }
    }
    grants
}

/// Rate of one grant: `w log2(1 + sum_c p_c g_c)` with `p_c = P_c w / B` and
/// gains normalized to the grant's band.
pub fn oma_grant_rate(
    grant: &OmaGrant,
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
) -> Result<f64> {
    let width = grant.fraction * radio.bandwidth;
    let mut snr = 0.0;
    for cell in &grant.cells {
        let budget = topology
            .cell(*cell)
            .ok_or_else(|| Error::Lookup(format!("unknown {cell}")))?
            .power_budget;
        snr += budget * grant.fraction * gains.in_band(*cell, grant.user, width)?;
    }
    Ok(width * (1.0 + snr).log2())
}

fn plan_rates(
    grants: &[OmaGrant],
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
) -> Result<BTreeMap<UserId, f64>> {
    let mut rates: BTreeMap<UserId, f64> = topology.users.iter().map(|u| (u.id, 0.0)).collect();
    for grant in grants {
        *rates.entry(grant.user).or_default() += oma_grant_rate(grant, topology, gains, radio)?;
    }
    Ok(rates)
}

/// JT-CoMP-OMA rates; these are also the NOMA rate guarantees.
pub fn oma_rates(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
) -> Result<BTreeMap<UserId, f64>> {
    plan_rates(&jt_oma_plan(topology), topology, gains, radio)
}

/// Assigns each CoMP user to one cell for CS, maximizing the summed
/// full-power log-SNR. Ties keep the id order.
pub fn cs_assignment(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
) -> Result<Vec<CsCellUsers>> {
    Scheme::CsNoma.check_applicable(topology.scenario)?;
    let comp = topology.comp_users();
    let score = |cell: CellId, user: UserId| -> Result<f64> {
        Ok((1.0 + radio.tx_power * gains.gain(cell, user)?).log2())
    };
    let straight = score(CELL_1, comp[0])? + score(CELL_2, comp[1])?;
    let crossed = score(CELL_1, comp[1])? + score(CELL_2, comp[0])?;
    let (a, b) = if crossed > straight {
        (comp[1], comp[0])
    } else {
        (comp[0], comp[1])
    };
    let single = |cell: CellId| -> Result<UserId> {
        match topology.non_comp_of(cell).as_slice() {
            [only] => Ok(*only),
            _ => Err(Error::Config(format!(
                "CS needs exactly one non-CoMP user in {cell}"
            ))),
        }
    };
    Ok(vec![
        CsCellUsers {
            cell: CELL_1,
            comp_user: a,
            non_comp: single(CELL_1)?,
        },
        CsCellUsers {
            cell: CELL_2,
            comp_user: b,
            non_comp: single(CELL_2)?,
        },
    ])
}

fn cs_set(topology: &ScenarioTopology) -> CompSet {
    CompSet {
        scheme: CompScheme::Cs,
        ..topology.comp_set.clone()
    }
}

/// CS-CoMP-OMA: on its own half band a CoMP user shares equally with the
/// cell's non-CoMP user, who also has the other half to itself.
pub fn cs_oma_rates(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
) -> Result<BTreeMap<UserId, f64>> {
    let assignment = cs_assignment(topology, gains, radio)?;
    let plan = build_cs_band_plan(
        &cs_set(topology),
        &assignment,
        radio.bandwidth,
        radio.tx_power,
    )?;
    let mut grants = Vec::new();
    for cell in &plan.cells {
        for band in &cell.bands {
            let each = band.fraction / band.members.len() as f64;
            for member in &band.members {
                grants.push(OmaGrant {
                    user: *member,
                    fraction: each,
                    cells: vec![cell.cell],
                });
            }
        }
    }
    plan_rates(&grants, topology, gains, radio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRate {
    pub user: UserId,
    /// bits/s under the evaluated scheme.
    pub noma: f64,
    /// bits/s under the OMA baseline.
    pub oma: f64,
    /// Whether `oma` was imposed as a minimum on `noma`.
    pub guaranteed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub scheme: Scheme,
    pub users: Vec<UserRate>,
    /// bits/s/Hz.
    pub noma_se: f64,
    pub oma_se: f64,
    pub feasible: bool,
    pub diagnostics: Vec<String>,
}

impl TrialResult {
    /// Spectral efficiency of the evaluated scheme.
    pub fn se(&self) -> f64 {
        if self.scheme.is_noma() {
            self.noma_se
        } else {
            self.oma_se
        }
    }

    /// Smallest `(noma - oma) / oma` over guaranteed users, `+inf` if none.
    pub fn guarantee_margin(&self) -> f64 {
        self.users
            .iter()
            .filter(|u| u.guaranteed && u.oma > 0.0)
            .map(|u| (u.noma - u.oma) / u.oma)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A cluster plus the power it may spend on its band.
struct Placed {
    cluster: NomaCluster,
    budget: f64,
}

/// Members whose rate sees other cells' transmissions in full mode. CoMP
/// users are served coherently (JT) or on a band the other cell leaves to
/// them (DPS, CS), so only non-CoMP users are exposed.
fn exposed(cluster: &NomaCluster, user: UserId) -> bool {
    !cluster.is_comp(user)
}

/// The CoMP users among `members`.
fn comp_among(topology: &ScenarioTopology, members: &[UserId]) -> BTreeSet<UserId> {
    members
        .iter()
        .copied()
        .filter(|u| topology.user(*u).is_some_and(|ue| ue.is_comp()))
        .collect()
}

/// Solves the clusters' powers, re-estimating cross-cell interference in
/// full mode until it settles.
fn allocate_with_interference(
    placed: &[Placed],
    gains: &ChannelRealization,
    radio: &RadioParams,
    mode: InterferenceMode,
    joint: Option<JtSplit>,
) -> Result<Vec<PowerAllocation>> {
    let mut cross: Vec<BTreeMap<UserId, f64>> = vec![BTreeMap::new(); placed.len()];
    let mut change = f64::INFINITY;
    for _ in 0..JT_MAX_ITERATIONS {
        let problems = placed
            .iter()
            .zip(&cross)
            .map(|(p, cross)| {
                let mut problem = AllocationProblem::from_realization(
                    p.cluster.clone(),
                    gains,
                    p.budget,
                    radio.sic_threshold(p.cluster.band.width),
                )?;
                for (user, interference) in cross {
                    if let Some(g) = problem.gains.get_mut(user) {
                        *g /= 1.0 + interference;
                    }
                }
                Ok(problem)
            })
            .collect::<Result<Vec<_>>>()?;
        let allocs = if let Some(split) = joint {
            allocate_jt_with(&problems, split)?.cells
        } else {
            problems
                .iter()
                .map(allocate_single_cell)
                .collect::<Result<Vec<_>>>()?
        };
        if mode == InterferenceMode::Negligible {
            return Ok(allocs);
        }

        let mut next = vec![BTreeMap::new(); placed.len()];
        change = 0.0;
        for (i, p) in placed.iter().enumerate() {
            let others: Vec<(&NomaCluster, &PowerAllocation)> = placed
                .iter()
                .zip(&allocs)
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (q, a))| (&q.cluster, a))
                .collect();
            for &u in p
                .cluster
                .decode_order
                .iter()
                .filter(|u| exposed(&p.cluster, **u))
            {
                let value = cross_cell_interference(&p.cluster, gains, u, &others)?;
                let old = cross[i].get(&u).copied().unwrap_or(0.0);
                let scale = value.abs().max(old.abs());
                if scale > 0.0 {
                    change = change.max((value - old).abs() / scale);
                }
                next[i].insert(u, value);
            }
        }
        if change < JT_TOLERANCE {
            return Ok(allocs);
        }
        cross = next;
    }
    Err(Error::NonConvergence {
        iterations: JT_MAX_ITERATIONS,
        last_change: change,
    })
}

/// Users sorted by ascending gain at `cell` (ties by id).
fn ascending_at(users: &[UserId], cell: CellId, gains: &ChannelRealization) -> Result<Vec<UserId>> {
    let mut keyed = users
        .iter()
        .map(|u| Ok((gains.gain(cell, *u)?, *u)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().map(|(_, u)| u).collect())
}

/// Shared decode order of the CoMP users under JT.
pub fn comp_decode_order(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
) -> Result<Vec<UserId>> {
    let reference = match (topology.scenario, topology.decode_case) {
        (ScenarioId::Three, Some(DecodeCase::Case1)) => CELL_2,
        _ => CELL_1,
    };
    ascending_at(&topology.comp_users(), reference, gains)
}

/// JT clusters: CoMP users first in their shared order, then the cell's own
/// users by ascending gain. Users that are not head of every cluster they
/// are in carry their guarantee.
pub fn jt_clusters(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    guarantees: &BTreeMap<UserId, f64>,
    band: Band,
) -> Result<Vec<NomaCluster>> {
    let comp_order = comp_decode_order(topology, gains)?;
    let comp: BTreeSet<UserId> = comp_order.iter().copied().collect();
    let orders = topology
        .cells
        .iter()
        .map(|cell| {
            let mut order = comp_order.clone();
            order.extend(ascending_at(
                &topology.non_comp_of(cell.id),
                cell.id,
                gains,
            )?);
            Ok((cell.id, order))
        })
        .collect::<Result<Vec<_>>>()?;
    orders
        .into_iter()
        .map(|(cell, order)| {
            let head = *order.last().expect("every cell holds the CoMP users");
            let rate_guarantees = order
                .iter()
                .filter(|u| **u != head)
                .map(|u| (*u, guarantees[u]))
                .collect();
            NomaCluster::new(cell, band, order, comp.clone(), rate_guarantees)
        })
        .collect()
}

fn se(rates: &BTreeMap<UserId, f64>, radio: &RadioParams) -> f64 {
    rates.values().sum::<f64>() / radio.bandwidth
}

/// Evaluates one scheme on one channel realization with the default JT
/// split.
pub fn run_trial(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    scheme: Scheme,
    radio: &RadioParams,
    mode: InterferenceMode,
) -> Result<TrialResult> {
    run_trial_with(topology, gains, scheme, radio, mode, JtSplit::default())
}

pub fn run_trial_with(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    scheme: Scheme,
    radio: &RadioParams,
    mode: InterferenceMode,
    split: JtSplit,
) -> Result<TrialResult> {
    scheme.check_applicable(topology.scenario)?;
    let baseline = oma_rates(topology, gains, radio)?;

    if !scheme.is_noma() {
        let rates = match scheme {
            Scheme::CsOma => cs_oma_rates(topology, gains, radio)?,
            _ => baseline,
        };
        let users = rates
            .iter()
            .map(|(u, r)| UserRate {
                user: *u,
                noma: *r,
                oma: *r,
                guaranteed: false,
            })
            .collect();
        let value = se(&rates, radio);
        return Ok(TrialResult {
            scheme,
            users,
            noma_se: value,
            oma_se: value,
            feasible: true,
            diagnostics: vec![],
        });
    }

    let outcome = match scheme {
        Scheme::JtNoma => noma_jt(topology, gains, radio, mode, split, &baseline),
        Scheme::CsNoma => noma_cs(topology, gains, radio, mode, &baseline),
        Scheme::DpsNoma => noma_dps(topology, gains, radio, mode, &baseline),
        _ => unreachable!("OMA handled above"),
    };
    let (rates, guaranteed, mut diagnostics) = match outcome {
        Ok(v) => v,
        Err(e @ (Error::InfeasibleGuarantee { .. } | Error::NonConvergence { .. })) => {
            (BTreeMap::new(), BTreeSet::new(), vec![e.to_string()])
        }
        Err(e) => return Err(e),
    };

    let mut feasible = !rates.is_empty();
    if feasible {
        for u in &guaranteed {
            if rates[u] < baseline[u] * (1.0 - GUARANTEE_TOLERANCE) {
                feasible = false;
                diagnostics.push(format!("{u}:{RECHECK_FAILED}"));
            }
        }
    }
    let noma_rates = if feasible { rates } else { baseline.clone() };
    let users = baseline
        .iter()
        .map(|(u, oma)| UserRate {
            user: *u,
            noma: noma_rates[u],
            oma: *oma,
            guaranteed: feasible && guaranteed.contains(u),
        })
        .collect();
    Ok(TrialResult {
        scheme,
        users,
        noma_se: se(&noma_rates, radio),
        oma_se: se(&baseline, radio),
        feasible,
        diagnostics,
    })
}

type NomaOutcome = (BTreeMap<UserId, f64>, BTreeSet<UserId>, Vec<String>);

fn diagnostics_of(allocs: &[PowerAllocation]) -> (bool, Vec<String>) {
    let feasible = allocs.iter().all(|a| a.feasible);
    let diags = allocs
        .iter()
        .filter(|a| !a.feasible)
        .flat_map(|a| a.diagnostics.iter().cloned())
        .collect();
    (feasible, diags)
}

fn noma_jt(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
    mode: InterferenceMode,
    split: JtSplit,
    baseline: &BTreeMap<UserId, f64>,
) -> Result<NomaOutcome> {
    let band = Band {
        id: 0,
        width: radio.bandwidth,
    };
    let clusters = jt_clusters(topology, gains, baseline, band)?;
    let placed: Vec<Placed> = clusters
        .iter()
        .map(|c| Placed {
            cluster: c.clone(),
            budget: topology
                .cell(c.cell)
                .map(|cell| cell.power_budget)
                .unwrap_or(radio.tx_power),
        })
        .collect();
    let allocs = allocate_with_interference(&placed, gains, radio, mode, Some(split))?;
    let (feasible, diags) = diagnostics_of(&allocs);
    if !feasible {
        return Ok((BTreeMap::new(), BTreeSet::new(), diags));
    }

    let cluster_refs: Vec<&NomaCluster> = clusters.iter().collect();
    let alloc_refs: Vec<&PowerAllocation> = allocs.iter().collect();
    let mut rates = BTreeMap::new();
    let mut guaranteed = BTreeSet::new();
    for c in &clusters {
        guaranteed.extend(c.rate_guarantees.keys().copied());
    }
    for user in &topology.users {
        let rate = if user.is_comp() {
            comp_user_rate_jt(&cluster_refs, &alloc_refs, gains, user.id)?
        } else {
            let i = clusters
                .iter()
                .position(|c| c.contains(user.id))
                .ok_or_else(|| Error::Lookup(format!("{} is in no cluster", user.id)))?;
            let others: Vec<_> = (0..clusters.len())
                .filter(|j| *j != i)
                .map(|j| (&clusters[j], &allocs[j]))
                .collect();
            noncomp_user_rate(&clusters[i], &allocs[i], gains, user.id, mode, &others)?
        };
        rates.insert(user.id, rate);
    }
    Ok((rates, guaranteed, vec![]))
}

/// Rates of every member of independently solved single-cell clusters.
fn single_cell_rates(
    placed: &[Placed],
    allocs: &[PowerAllocation],
    gains: &ChannelRealization,
    mode: InterferenceMode,
) -> Result<BTreeMap<UserId, f64>> {
    let mut rates = BTreeMap::new();
    for (i, p) in placed.iter().enumerate() {
        let others: Vec<_> = placed
            .iter()
            .zip(allocs)
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, (q, a))| (&q.cluster, a))
            .collect();
        for &u in &p.cluster.decode_order {
            let mode = if exposed(&p.cluster, u) {
                mode
            } else {
                InterferenceMode::Negligible
            };
            let r = noncomp_user_rate(&p.cluster, &allocs[i], gains, u, mode, &others)?;
            *rates.entry(u).or_insert(0.0) += r;
        }
    }
    Ok(rates)
}

fn noma_dps(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
    mode: InterferenceMode,
    baseline: &BTreeMap<UserId, f64>,
) -> Result<NomaOutcome> {
    let mut members: BTreeMap<CellId, Vec<UserId>> = topology
        .cells
        .iter()
        .map(|c| (c.id, topology.non_comp_of(c.id)))
        .collect();
    for u in topology.comp_users() {
        let cell = dps_select_cell(u, gains, &topology.comp_set.cells)?;
        members.entry(cell).or_default().push(u);
    }
    let band = Band {
        id: 0,
        width: radio.bandwidth,
    };
    let mut placed = Vec::new();
    let mut guaranteed = BTreeSet::new();
    for cell in &topology.cells {
        let users = &members[&cell.id];
        if users.is_empty() {
            continue;
        }
        let order = ascending_at(users, cell.id, gains)?;
        let head = *order.last().expect("non-empty");
        let rate_guarantees: BTreeMap<UserId, f64> = order
            .iter()
            .filter(|u| **u != head)
            .map(|u| (*u, baseline[u]))
            .collect();
        guaranteed.extend(rate_guarantees.keys().copied());
        let comp = comp_among(topology, &order);
        placed.push(Placed {
            cluster: NomaCluster::new(cell.id, band, order, comp, rate_guarantees)?,
            budget: cell.power_budget,
        });
    }
    let allocs = allocate_with_interference(&placed, gains, radio, mode, None)?;
    let (feasible, diags) = diagnostics_of(&allocs);
    if !feasible {
        return Ok((BTreeMap::new(), BTreeSet::new(), diags));
    }
    let mut rates = single_cell_rates(&placed, &allocs, gains, mode)?;
    for u in &topology.users {
        rates.entry(u.id).or_insert(0.0);
    }
    Ok((rates, guaranteed, vec![]))
}

fn noma_cs(
    topology: &ScenarioTopology,
    gains: &ChannelRealization,
    radio: &RadioParams,
    mode: InterferenceMode,
    baseline: &BTreeMap<UserId, f64>,
) -> Result<NomaOutcome> {
    let assignment = cs_assignment(topology, gains, radio)?;
    let plan = build_cs_band_plan(
        &cs_set(topology),
        &assignment,
        radio.bandwidth,
        radio.tx_power,
    )?;

    // A non-CoMP user alone on its band gets the whole band power; any part
    // of its guarantee left over must come from the shared band.
    let mut alone_rate: BTreeMap<UserId, f64> = BTreeMap::new();
    for cell in &plan.cells {
        for band in cell.bands.iter().filter(|b| b.members.len() == 1) {
            let u = band.members[0];
            let g = gains.in_band(cell.cell, u, band.band.width)?;
            *alone_rate.entry(u).or_default() += band.band.width * (1.0 + band.power * g).log2();
        }
    }

    let mut placed = Vec::new();
    let mut guaranteed = BTreeSet::new();
    for cell in &plan.cells {
        for band in &cell.bands {
            let order = ascending_at(&band.members, cell.cell, gains)?;
            let head = *order.last().expect("bands are never empty");
            let rate_guarantees: BTreeMap<UserId, f64> = order
                .iter()
                .filter(|u| **u != head)
                .map(|u| {
                    let elsewhere = alone_rate.get(u).copied().unwrap_or(0.0);
                    (*u, (baseline[u] - elsewhere).max(0.0))
                })
                .collect();
            guaranteed.extend(rate_guarantees.keys().copied());
            let comp = comp_among(topology, &order);
            placed.push(Placed {
                cluster: NomaCluster::new(cell.cell, band.band, order, comp, rate_guarantees)?,
                budget: band.power,
            });
        }
    }
    let allocs = allocate_with_interference(&placed, gains, radio, mode, None)?;
    let (feasible, diags) = diagnostics_of(&allocs);
    if !feasible {
        return Ok((BTreeMap::new(), BTreeSet::new(), diags));
    }
    let rates = single_cell_rates(&placed, &allocs, gains, mode)?;
    Ok((rates, guaranteed, vec![]))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::channel::draw_realization;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn build(id: ScenarioId, sweep: f64, case: Option<DecodeCase>) -> ScenarioTopology {
        build_scenario(
            id,
            sweep,
            case,
            &Geometry::default(),
            RadioParams::default().tx_power,
            &mut rng(),
        )
        .unwrap()
    }

    #[test]
    fn scenario_one_layout() {
        let t = build(ScenarioId::One, 100.0, None);
        assert_eq!(t.comp_users(), vec![UserId(1)]);
        for cell in &t.cells {
            let ids = t.non_comp_of(cell.id);
            assert_eq!(ids.len(), 2);
            let d: Vec<f64> = ids
                .iter()
                .map(|u| t.user(*u).unwrap().position.distance(&cell.position))
                .collect();
            assert!(
                (d[0] - 100.0).abs() < 1e-9 && (d[1] - 300.0).abs() < 1e-9,
                "{d:?}"
            );
        }
    }

    #[test]
    fn scenario_two_and_three_layouts() {
        let t = build(ScenarioId::Two, 150.0, None);
        assert_eq!(t.comp_users().len(), 2);
        for cell in &t.cells {
            let ids = t.non_comp_of(cell.id);
            assert_eq!(ids.len(), 1);
            let d = t.user(ids[0]).unwrap().position.distance(&cell.position);
            assert!((d - 250.0).abs() < 1e-9);
        }
        let t = build(ScenarioId::Three, 150.0, Some(DecodeCase::Case1));
        assert_eq!(t.non_comp_of(CELL_1).len(), 1);
        assert!(t.non_comp_of(CELL_2).is_empty());
    }

    #[test]
    fn sweep_out_of_range() {
        let g = Geometry::default();
        let p = RadioParams::default().tx_power;
        assert!(matches!(
            build_scenario(ScenarioId::One, 450.0, None, &g, p, &mut rng()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_scenario(ScenarioId::Two, 0.0, None, &g, p, &mut rng()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_scenario(ScenarioId::Three, 100.0, None, &g, p, &mut rng()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn oma_plan_band_accounting() {
        for (id, case) in [
            (ScenarioId::One, None),
            (ScenarioId::Two, None),
            (ScenarioId::Three, Some(DecodeCase::Case2)),
        ] {
            let t = build(id, 100.0, case);
            let plan = jt_oma_plan(&t);
            for cell in &t.cells {
                let total: f64 = plan
                    .iter()
                    .filter(|g| g.cells.contains(&cell.id))
                    .map(|g| g.fraction)
                    .sum();
                assert!((total - 1.0).abs() < 1e-12, "{id:?} {}: {total}", cell.id);
            }
        }
    }

    #[test]
    fn scenario_three_oma_split() {
        let t = build(ScenarioId::Three, 100.0, Some(DecodeCase::Case1));
        let plan = jt_oma_plan(&t);
        let c1: Vec<&OmaGrant> = plan.iter().filter(|g| g.user == UserId(1)).collect();
        assert_eq!(c1.len(), 2);
        assert!((c1[0].fraction - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c1[0].cells, vec![CELL_1, CELL_2]);
        assert!((c1[1].fraction - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(c1[1].cells, vec![CELL_2]);
    }

    #[test]
    fn oma_rate_examples() {
        // B = 1 Hz, P gamma = 3: w = B/3 keeps in-band SNR at 3
        let radio = RadioParams::new(1.0, 1.0, 1.0, 4.0, 1.0).unwrap();
        let mut t = build(ScenarioId::One, 100.0, None);
        for c in &mut t.cells {
            c.power_budget = 1.0;
        }
        let gains = ChannelRealization::from_entries(
            1.0,
            [
                ((CELL_1, UserId(11)), 3.0),
                ((CELL_1, UserId(1)), 3.0),
                ((CELL_2, UserId(1)), 3.0),
            ],
        );
        let single = OmaGrant {
            user: UserId(11),
            fraction: 1.0 / 3.0,
            cells: vec![CELL_1],
        };
        let r = oma_grant_rate(&single, &t, &gains, &radio).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12, "{r}");
        let joint = OmaGrant {
            user: UserId(1),
            fraction: 1.0 / 3.0,
            cells: vec![CELL_1, CELL_2],
        };
        let r = oma_grant_rate(&joint, &t, &gains, &radio).unwrap();
        assert!((r - 7f64.log2() / 3.0).abs() < 1e-12, "{r}");
        let full = OmaGrant {
            user: UserId(11),
            fraction: 1.0,
            cells: vec![CELL_1],
        };
        let r = oma_grant_rate(&full, &t, &gains, &radio).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cs_is_scenario_two_only() {
        let radio = RadioParams::default();
        let t = build(ScenarioId::One, 100.0, None);
        let g = draw_realization(&t, &radio, &mut rng()).unwrap();
        assert!(matches!(
            run_trial(&t, &g, Scheme::CsNoma, &radio, InterferenceMode::Negligible),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("jt-noma".parse::<Scheme>().unwrap(), Scheme::JtNoma);
        assert_eq!("CS_OMA".parse::<Scheme>().unwrap(), Scheme::CsOma);
        assert!(matches!("CB".parse::<Scheme>(), Err(Error::Config(m)) if m.contains("CB-CoMP")));
        assert!(
            matches!("CB-NOMA".parse::<Scheme>(), Err(Error::Config(m)) if m.contains("CB-CoMP"))
        );
        assert!("XYZ".parse::<Scheme>().is_err());
    }

    #[test]
    fn jt_clusters_satisfy_conditions() {
        let radio = RadioParams::default();
        let mut r = rng();
        for (id, case) in [
            (ScenarioId::One, None),
            (ScenarioId::Two, None),
            (ScenarioId::Three, Some(DecodeCase::Case1)),
            (ScenarioId::Three, Some(DecodeCase::Case2)),
        ] {
            for _ in 0..50 {
                let t = build_scenario(
                    id,
                    150.0,
                    case,
                    &Geometry::default(),
                    radio.tx_power,
                    &mut r,
                )
                .unwrap();
                let g = draw_realization(&t, &radio, &mut r).unwrap();
                let base = oma_rates(&t, &g, &radio).unwrap();
                let band = Band {
                    id: 0,
                    width: radio.bandwidth,
                };
                let clusters = jt_clusters(&t, &g, &base, band).unwrap();
                let refs: Vec<&NomaCluster> = clusters.iter().collect();
                crate::comp::validate_jt_conditions(&refs, &t.comp_set.comp_users).unwrap();
            }
        }
    }

    #[test]
    fn infeasible_trial_falls_back_to_oma() {
        // weak CoMP link to cell 2 makes the equal split impossible
        let radio = RadioParams::default();
        let t = build(ScenarioId::One, 100.0, None);
        let mut g = draw_realization(&t, &radio, &mut rng()).unwrap();
        g.insert(CELL_2, UserId(1), 1e-12);
        let r = run_trial_with(
            &t,
            &g,
            Scheme::JtNoma,
            &radio,
            InterferenceMode::Negligible,
            JtSplit::EqualReceived,
        )
        .unwrap();
        assert!(!r.feasible);
        assert_eq!(r.noma_se, r.oma_se);
        assert!(r.users.iter().all(|u| u.noma == u.oma));
    }

    #[test]
    fn full_mode_spares_single_cell_comp_users() {
        let t = build(ScenarioId::Two, 100.0, None);
        let band = Band { id: 0, width: 1.0 };
        let mut g = ChannelRealization::new(1.0);
        for (cell, user, gain) in [
            (CELL_1, 1, 2.0),
            (CELL_1, 11, 8.0),
            (CELL_2, 1, 1.0),
            (CELL_2, 11, 1.0),
            (CELL_2, 21, 4.0),
            (CELL_1, 21, 1.0),
        ] {
            g.insert(cell, UserId(user), gain);
        }
        let cluster = |cell, order: Vec<UserId>| {
            let comp = comp_among(&t, &order);
            let guarantees = order[..order.len() - 1].iter().map(|u| (*u, 0.1)).collect();
            NomaCluster::new(cell, band, order, comp, guarantees).unwrap()
        };
        let placed = [
            Placed {
                cluster: cluster(CELL_1, vec![UserId(1), UserId(11)]),
                budget: 1.0,
            },
            Placed {
                cluster: cluster(CELL_2, vec![UserId(21)]),
                budget: 1.0,
            },
        ];
        assert!(placed[0].cluster.is_comp(UserId(1)));
        let allocs = [
            PowerAllocation {
                powers: [(UserId(1), 0.75), (UserId(11), 0.25)].into(),
                ..Default::default()
            },
            PowerAllocation {
                powers: [(UserId(21), 1.0)].into(),
                ..Default::default()
            },
        ];
        let full = single_cell_rates(&placed, &allocs, &g, InterferenceMode::Full).unwrap();
        let none = single_cell_rates(&placed, &allocs, &g, InterferenceMode::Negligible).unwrap();
        assert_eq!(full[&UserId(1)], none[&UserId(1)]);
        // 0.25 * 8 / (1 + 1 * 1)
        assert!((full[&UserId(11)] - 2f64.log2()).abs() < 1e-15);
        assert!((none[&UserId(11)] - 3f64.log2()).abs() < 1e-15);
    }
}
