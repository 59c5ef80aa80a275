//! CoMP schemes over NOMA clusters: the JT decoding conditions, DPS cell
//! selection, the CS band plan, and the CB rejection.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::channel::ChannelRealization;
use crate::error::{Error, JtCondition, Result};
use crate::noma::{Band, CellId, NomaCluster, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CompScheme {
    /// Coordinated scheduling: CoMP users on orthogonal bands, one cell each.
    Cs,
    /// Joint transmission: every cell of the set sends the same data.
    Jt,
    /// Dynamic point selection: the best cell sends, re-picked per subframe.
    Dps,
}

impl fmt::Display for CompScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompScheme::Cs => "CS",
            CompScheme::Jt => "JT",
            CompScheme::Dps => "DPS",
        })
    }
}

impl FromStr for CompScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CS" => Ok(CompScheme::Cs),
            "JT" => Ok(CompScheme::Jt),
            "DPS" => Ok(CompScheme::Dps),
            "CB" => Err(reject_cb()),
            other => Err(Error::Config(format!("unknown CoMP scheme `{other}`"))),
        }
    }
}

/// Cells coordinating transmission to a group of cell-edge users.
#[derive(Debug, Clone, PartialEq)]
pub struct CompSet {
    pub cells: BTreeSet<CellId>,
    pub scheme: CompScheme,
    pub comp_users: BTreeSet<UserId>,
}

impl CompSet {
    pub fn new(
        cells: BTreeSet<CellId>,
        scheme: CompScheme,
        comp_users: BTreeSet<UserId>,
    ) -> Result<Self> {
        if cells.len() < 2 {
            return Err(Error::Config("a CoMP set needs at least two cells".into()));
        }
        if comp_users.is_empty() {
            return Err(Error::Config(
                "a CoMP set needs at least one CoMP user".into(),
            ));
        }
        Ok(CompSet {
            cells,
            scheme,
            comp_users,
        })
    }
}

/// Checks the two necessary conditions for JT over NOMA clusters:
/// every CoMP user is decoded before every non-CoMP user (1), and CoMP users
/// keep one relative order in every cluster that holds them (2).
pub fn validate_jt_conditions(
    clusters: &[&NomaCluster],
    comp_users: &BTreeSet<UserId>,
) -> Result<()> {
    for cluster in clusters {
        let first_noncomp = cluster
            .decode_order
            .iter()
            .position(|u| !comp_users.contains(u));
        if let Some(boundary) = first_noncomp {
            let late: Vec<UserId> = cluster.decode_order[boundary..]
                .iter()
                .copied()
                .filter(|u| comp_users.contains(u))
                .collect();
            if !late.is_empty() {
                let mut users = vec![cluster.decode_order[boundary]];
                users.extend(late);
                return Err(Error::ConditionViolation {
                    which: JtCondition::CompFirst,
                    cluster: cluster.cell,
                    users,
                });
            }
        }
    }

    let mut reference: Option<Vec<UserId>> = None;
    for cluster in clusters {
        let order: Vec<UserId> = cluster
            .decode_order
            .iter()
            .copied()
            .filter(|u| comp_users.contains(u))
            .collect();
        match &reference {
            None => reference = Some(order),
            Some(ref_order) => {
                // compare relative order on the users both clusters hold
                let shared: Vec<UserId> = ref_order
                    .iter()
                    .copied()
                    .filter(|u| order.contains(u))
                    .collect();
                let mine: Vec<UserId> = order
                    .iter()
                    .copied()
                    .filter(|u| shared.contains(u))
                    .collect();
                if shared != mine {
                    let users = shared
                        .iter()
                        .zip(&mine)
                        .filter(|(a, b)| a != b)
                        .map(|(a, _)| *a)
                        .collect();
                    return Err(Error::ConditionViolation {
                        which: JtCondition::SameOrder,
                        cluster: cluster.cell,
                        users,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Cell with the largest gain to `user`; ties go to the lowest cell id.
pub fn dps_select_cell(
    user: UserId,
    gains: &ChannelRealization,
    cells: &BTreeSet<CellId>,
) -> Result<CellId> {
    let mut best: Option<(CellId, f64)> = None;
    for &cell in cells {
        let g = gains.gain(cell, user)?;
        if best.is_none_or(|(_, b)| g > b) {
            best = Some((cell, g));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Domain(format!("no candidate cells for {user}")))
}

/// CoMP and non-CoMP users a cell brings into the CS band plan.
#[derive(Debug, Clone, PartialEq)]
pub struct CsCellUsers {
    pub cell: CellId,
    pub comp_user: UserId,
    pub non_comp: UserId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandAssignment {
    pub band: Band,
    /// Share of the system bandwidth.
    pub fraction: f64,
    /// mW, proportional to the share.
    pub power: f64,
    /// Members of the cell's cluster on this band.
    pub members: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellBands {
    pub cell: CellId,
    pub bands: Vec<BandAssignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPlan {
    pub cells: Vec<CellBands>,
}

impl BandPlan {
    pub fn cell(&self, cell: CellId) -> Option<&CellBands> {
        self.cells.iter().find(|c| c.cell == cell)
    }
}

/// Orthogonal band plan for CS-CoMP with one CoMP user per cell.
///
/// The system band is halved. Cell `i` puts its CoMP user together with its
/// non-CoMP user on half `i`, and its non-CoMP user alone on the other half.
/// Power per band is the cell budget times the band share.
pub fn build_cs_band_plan(
    set: &CompSet,
    users_per_cell: &[CsCellUsers],
    system_bandwidth: f64,
    budget: f64,
) -> Result<BandPlan> {
    if set.scheme != CompScheme::Cs {
        return Err(Error::Config(format!(
            "band plan requested for {} CoMP",
            set.scheme
        )));
    }
    if set.cells.len() != 2 || users_per_cell.len() != 2 {
        return Err(Error::Config(
            "CS band plan supports exactly two cells".into(),
        ));
    }
    let comp: BTreeSet<UserId> = users_per_cell.iter().map(|c| c.comp_user).collect();
    if comp.len() != 2 || comp != set.comp_users {
        return Err(Error::Config(
            "CS band plan needs one distinct CoMP user per cell".into(),
        ));
    }
    if users_per_cell.iter().any(|c| !set.cells.contains(&c.cell)) {
        return Err(Error::Config(
            "CS band plan references a cell outside the CoMP set".into(),
        ));
    }
    let fraction = 0.5;
    let band = |id: u32| Band {
        id,
        width: system_bandwidth * fraction,
    };
    let cells = users_per_cell
        .iter()
        .enumerate()
        .map(|(i, users)| {
            let own = i as u32;
            let other = 1 - own;
            CellBands {
                cell: users.cell,
                bands: vec![
                    BandAssignment {
                        band: band(own),
                        fraction,
                        power: budget * fraction,
                        members: vec![users.comp_user, users.non_comp],
                    },
                    BandAssignment {
                        band: band(other),
                        fraction,
                        power: budget * fraction,
                        members: vec![users.non_comp],
                    },
                ],
            }
        })
        .collect();
    Ok(BandPlan { cells })
}

/// CB-CoMP zero-forcing needs a precoder sized to the CoMP set, which a
/// single-antenna non-CoMP user's scalar channel cannot match.
pub fn reject_cb() -> Error {
    Error::Config(
        "CB-CoMP not applicable under single-antenna NOMA: the zero-forcing precoder has the \
         CoMP-set dimension while each non-CoMP user's channel to its serving cell is scalar"
            .into(),
    )
}
