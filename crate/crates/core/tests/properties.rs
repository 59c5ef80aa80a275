//! Property tests over the channel model, rates, the allocator and the
//! scenario builder.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use comp_noma::channel::{normalized_gain, sample_fading, ChannelRealization, RadioParams};
use comp_noma::comp::{build_cs_band_plan, dps_select_cell, CompScheme, CompSet, CsCellUsers};
use comp_noma::harness::{compensated_mean, mean_ci95};
use comp_noma::noma::{
    comp_user_rate_jt, sic_feasible, user_rate_single_cell, Band, CellId, NomaCluster,
    PowerAllocation, UserId,
};
use comp_noma::power::{allocate_jt, allocate_single_cell, member_rate, AllocationProblem};
use comp_noma::scenario::{
    build_scenario, jt_oma_plan, sweep_range, DecodeCase, Geometry, PlacementLaw, ScenarioId,
    CELL_1, CELL_2,
};

const WIDTH: f64 = 8.64e6;
const BUDGET: f64 = 19_952.623_149_688_8;

fn users(n: usize) -> Vec<UserId> {
    (1..=n as u32).map(UserId).collect()
}

fn cluster(
    order: &[UserId],
    comp: BTreeSet<UserId>,
    guarantees: BTreeMap<UserId, f64>,
) -> NomaCluster {
    NomaCluster::new(
        CellId(1),
        Band {
            id: 0,
            width: WIDTH,
        },
        order.to_vec(),
        comp,
        guarantees,
    )
    .unwrap()
}

fn realization(order: &[UserId], gains: &[f64]) -> ChannelRealization {
    let mut r = ChannelRealization::new(WIDTH);
    for (u, g) in order.iter().zip(gains) {
        r.insert(CellId(1), *u, *g);
    }
    r
}

fn alloc(order: &[UserId], powers: &[f64]) -> PowerAllocation {
    PowerAllocation {
        powers: order.iter().copied().zip(powers.iter().copied()).collect(),
        feasible: true,
        diagnostics: vec![],
    }
}

fn log_gain() -> impl Strategy<Value = f64> {
    (-5.0f64..-2.0).prop_map(|e| 10f64.powf(e))
}

/// Ascending-gain problem with guarantees set to `fractions` of the members'
/// equal-share OMA rates.
fn problem(mut gains: Vec<f64>, fractions: &[f64], p_tol: f64) -> AllocationProblem {
    gains.sort_by(f64::total_cmp);
    let n = gains.len();
    let order = users(n);
    let guarantees = order[..n - 1]
        .iter()
        .zip(&gains)
        .zip(fractions)
        .map(|((u, g), f)| (*u, f * WIDTH / n as f64 * (1.0 + BUDGET * g).log2()))
        .collect();
    let c = cluster(&order, BTreeSet::new(), guarantees);
    AllocationProblem::new(c, order.into_iter().zip(gains).collect(), BUDGET, p_tol).unwrap()
}

fn problem_strategy() -> impl Strategy<Value = AllocationProblem> {
    (
        prop::collection::vec(log_gain(), 2..=3),
        prop::collection::vec(0.0f64..1.0, 2),
        prop::bool::ANY,
    )
        .prop_map(|(g, f, tol)| problem(g, &f, if tol { 100.0 } else { 0.0 }))
}

fn scaled_guarantees(p: &AllocationProblem, factor: f64) -> AllocationProblem {
    let mut c = p.cluster.clone();
    c.rate_guarantees.values_mut().for_each(|g| *g *= factor);
    AllocationProblem::new(c, p.gains.clone(), p.budget, p.p_tol).unwrap()
}

proptest! {
    #[test]
    fn gain_follows_pathloss(d1 in 1.0f64..2000.0, d2 in 1.0f64..2000.0, fading in 0.01f64..10.0) {
        let radio = RadioParams::default();
        let (g1, g2) = (normalized_gain(d1, fading, &radio).unwrap(), normalized_gain(d2, fading, &radio).unwrap());
        let expected = (d1 / d2).powf(radio.pathloss_exponent);
        prop_assert!((g2 / g1 - expected).abs() <= 1e-12 * expected);
        if d1 < d2 {
            prop_assert!(g1 > g2);
        }
    }

    #[test]
    fn gain_is_linear_in_fading(d in 1.0f64..2000.0, fading in 0.01f64..10.0, k in 0.1f64..10.0) {
        let radio = RadioParams::default();
        let a = normalized_gain(d, fading, &radio).unwrap();
        let b = normalized_gain(d, fading * k, &radio).unwrap();
        prop_assert!((b / a - k).abs() <= 1e-12 * k);
    }

    #[test]
    fn rates_are_finite_and_nonnegative(
        n in 1usize..=4,
        gains in prop::collection::vec(0.0f64..1e-2, 4),
        powers in prop::collection::vec(0.0f64..2e4, 4),
    ) {
        let order = users(n);
        let c = cluster(&order, BTreeSet::new(), order[..n - 1].iter().map(|u| (*u, 1.0)).collect());
        let r = realization(&order, &gains[..n]);
        let a = alloc(&order, &powers[..n]);
        for u in &order {
            let rate = user_rate_single_cell(&c, &a, &r, *u).unwrap();
            prop_assert!(rate.is_finite() && rate >= 0.0);
        }
    }

    #[test]
    fn one_cell_jt_rate_is_single_cell_rate(
        n in 1usize..=4,
        gains in prop::collection::vec(0.0f64..1e-2, 4),
        powers in prop::collection::vec(0.0f64..2e4, 4),
    ) {
        let order = users(n);
        let c = cluster(&order, BTreeSet::new(), order[..n - 1].iter().map(|u| (*u, 1.0)).collect());
        let r = realization(&order, &gains[..n]);
        let a = alloc(&order, &powers[..n]);
        for u in &order {
            let single = user_rate_single_cell(&c, &a, &r, *u).unwrap();
            let jt = comp_user_rate_jt(&[&c], &[&a], &r, *u).unwrap();
            prop_assert_eq!(single.to_bits(), jt.to_bits());
        }
    }

    #[test]
    fn sic_feasibility_is_monotone_in_tolerance(
        n in 2usize..=4,
        gains in prop::collection::vec(1e-5f64..1e-2, 4),
        powers in prop::collection::vec(0.0f64..2e4, 4),
        tol in 0.0f64..200.0,
        lower in 0.0f64..1.0,
    ) {
        let order = users(n);
        let c = cluster(&order, BTreeSet::new(), order[..n - 1].iter().map(|u| (*u, 1.0)).collect());
        let r = realization(&order, &gains[..n]);
        let a = alloc(&order, &powers[..n]);
        if sic_feasible(&c, &a, &r, tol) {
            prop_assert!(sic_feasible(&c, &a, &r, tol * lower));
        }
    }

    #[test]
    fn allocation_spends_the_budget(p in problem_strategy()) {
        if let Ok(a) = allocate_single_cell(&p) {
            prop_assert!(a.powers.values().all(|x| *x >= 0.0 && x.is_finite()));
            prop_assert!((a.total() - p.budget).abs() <= 1e-9 * p.budget);
        }
    }

    #[test]
    fn feasible_allocations_meet_their_constraints(p in problem_strategy()) {
        if let Ok(a) = allocate_single_cell(&p) {
            if a.feasible {
                for (k, u) in p.cluster.decode_order.iter().enumerate() {
                    if let Some(g) = p.cluster.rate_guarantees.get(u) {
                        prop_assert!(member_rate(&p, &a.powers, k) >= g * (1.0 - 1e-9));
                    }
                }
                let r = realization(&p.cluster.decode_order, &p.gains.values().copied().collect::<Vec<_>>());
                prop_assert!(sic_feasible(&p.cluster, &a, &r, p.p_tol));
            }
        }
    }

    #[test]
    fn head_power_falls_as_guarantees_rise(p in problem_strategy(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let head = p.cluster.cluster_head();
        if let (Ok(a), Ok(b)) = (allocate_single_cell(&scaled_guarantees(&p, lo)), allocate_single_cell(&scaled_guarantees(&p, hi))) {
            prop_assert!(b.powers[&head] <= a.powers[&head] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn one_cell_jt_allocation_is_single_cell(g_comp in log_gain(), g_local in log_gain(), f in 0.0f64..1.0, tol in prop::bool::ANY) {
        let order = users(2);
        let (weak, strong) = if g_comp <= g_local { (g_comp, g_local) } else { (g_local, g_comp) };
        let c = cluster(
            &order,
            [UserId(1)].into(),
            [(UserId(1), f * WIDTH / 2.0 * (1.0 + BUDGET * weak).log2())].into(),
        );
        let p = AllocationProblem::new(c, [(UserId(1), weak), (UserId(2), strong)].into(), BUDGET, if tol { 100.0 } else { 0.0 }).unwrap();
        match (allocate_jt(std::slice::from_ref(&p)), allocate_single_cell(&p)) {
            (Ok(jt), Ok(single)) => prop_assert_eq!(&jt.cells[0], &single),
            (Err(_), Err(_)) => {}
            (jt, single) => prop_assert!(false, "verdicts differ: {:?} vs {:?}", jt.is_ok(), single.is_ok()),
        }
    }

    #[test]
    fn dps_choice_ignores_common_scaling(g1 in 1e-6f64..1.0, g2 in 1e-6f64..1.0, k in 1e-3f64..1e3) {
        let mut r = ChannelRealization::new(WIDTH);
        r.insert(CELL_1, UserId(1), g1);
        r.insert(CELL_2, UserId(1), g2);
        let cells: BTreeSet<CellId> = [CELL_1, CELL_2].into();
        prop_assert_eq!(
            dps_select_cell(UserId(1), &r, &cells).unwrap(),
            dps_select_cell(UserId(1), &r.scaled(k), &cells).unwrap()
        );
    }

    #[test]
    fn scenarios_respect_geometry(scenario in 1u8..=3, at in 0.01f64..1.0, annulus in prop::bool::ANY, seed in any::<u64>()) {
        let id = ScenarioId::try_from(scenario).unwrap();
        let geometry = Geometry {
            law: if annulus { PlacementLaw::Annulus } else { PlacementLaw::Disc },
            ..Geometry::default()
        };
        let (_, hi) = sweep_range(id, &geometry);
        // keep disc coverage out of the region the centre discs nearly fill
        let hi = if annulus || id == ScenarioId::One { hi } else { hi * 0.8 };
        let sweep = hi * at;
        let case = (id == ScenarioId::Three).then_some(DecodeCase::Case1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = build_scenario(id, sweep, case, &geometry, BUDGET, &mut rng).unwrap();
        let mid = comp_noma::noma::Position::new(0.0, 0.0);
        let coverage = if id == ScenarioId::One { geometry.comp_coverage } else { sweep };
        for (j, u) in t.users.iter().filter(|u| u.is_comp()).enumerate() {
            for c in &t.cells {
                prop_assert!(c.position.distance(&u.position) > geometry.noncomp_radius);
            }
            if annulus {
                let d = t.cells[j % 2].position.distance(&u.position);
                prop_assert!(d >= geometry.noncomp_radius - 1e-9 && d <= geometry.noncomp_radius + coverage + 1e-9);
            } else {
                prop_assert!(mid.distance(&u.position) <= coverage + 1e-9);
            }
        }
        for u in t.users.iter().filter(|u| !u.is_comp()) {
            let d = t.cell(u.serving_cells[0]).unwrap().position.distance(&u.position);
            prop_assert!(d > 0.0 && d <= geometry.noncomp_radius + 1e-9);
        }
    }

    #[test]
    fn oma_plan_fills_every_cell_band(scenario in 1u8..=3, seed in any::<u64>()) {
        let id = ScenarioId::try_from(scenario).unwrap();
        let case = (id == ScenarioId::Three).then_some(DecodeCase::Case2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = build_scenario(id, 100.0, case, &Geometry::default(), BUDGET, &mut rng).unwrap();
        let plan = jt_oma_plan(&t);
        for cell in [CELL_1, CELL_2] {
            let used: f64 = plan.iter().filter(|g| g.cells.contains(&cell)).map(|g| g.fraction).sum();
            prop_assert!((used - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compensated_mean_matches_plain_mean(values in prop::collection::vec(-1e3f64..1e3, 1..500)) {
        let plain = values.iter().sum::<f64>() / values.len() as f64;
        let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!((compensated_mean(&values) - plain).abs() <= 1e-12 * scale);
    }
}

#[test]
fn cs_band_plan_fills_every_cell_band() {
    let set = CompSet::new(
        [CELL_1, CELL_2].into(),
        CompScheme::Cs,
        [UserId(1), UserId(2)].into(),
    )
    .unwrap();
    let cell_users = [
        CsCellUsers {
            cell: CELL_1,
            comp_user: UserId(1),
            non_comp: UserId(11),
        },
        CsCellUsers {
            cell: CELL_2,
            comp_user: UserId(2),
            non_comp: UserId(21),
        },
    ];
    let plan = build_cs_band_plan(&set, &cell_users, WIDTH, BUDGET).unwrap();
    for cell in &plan.cells {
        let fraction: f64 = cell.bands.iter().map(|b| b.fraction).sum();
        let power: f64 = cell.bands.iter().map(|b| b.power).sum();
        let width: f64 = cell.bands.iter().map(|b| b.band.width).sum();
        assert_eq!(fraction, 1.0);
        assert_eq!(power, BUDGET);
        assert_eq!(width, WIDTH);
    }
}

/// One-sample Kolmogorov-Smirnov test against Exp(1) at the 1% level.
#[test]
fn fading_is_unit_exponential() {
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples: Vec<f64> = (0..n).map(|_| sample_fading(&mut rng)).collect();
    samples.sort_by(f64::total_cmp);
    let d = samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let cdf = 1.0 - (-x).exp();
            (cdf - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - cdf)
        })
        .fold(0.0, f64::max);
    assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn ci_shrinks_with_root_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<f64> = (0..40_000).map(|_| sample_fading(&mut rng)).collect();
    let (_, half) = mean_ci95(&samples[..20_000]);
    let (_, full) = mean_ci95(&samples);
    let ratio = full / half;
    assert!(
        (ratio - std::f64::consts::FRAC_1_SQRT_2).abs() <= 0.1 * std::f64::consts::FRAC_1_SQRT_2,
        "{ratio}"
    );
}
