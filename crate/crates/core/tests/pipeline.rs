//! Cross-module invariants of the experiment pipeline: the sweep reduces
//! to the static scenario at the equivalent distance, served traffic
//! trends monotonically with separation, and a far-away deployable does
//! not degrade the macro network.

use copxsim_core::experiment::{
    run_distance_sweep, run_realization, run_realization_with_users, sweep_prop_seed,
    sweep_user_seed, RunSpec, SweepSpec,
};
use copxsim_core::scenario::{
    build_preset, drop_users, McAccess, ScenarioOverrides, ScenarioPreset,
};
use copxsim_core::{NetworkId, UserClass};

/// At the preset's own macro-deployable separation, the sweep pipeline
/// reproduces the static scenario through the same seeds to within 1e-9:
/// the rigid translation becomes the identity.
#[test]
fn sweep_at_native_distance_matches_static_scenario() {
    let config = build_preset(ScenarioPreset::MacroUav, &ScenarioOverrides::default()).unwrap();
    let uav = config.base_stations[2].site;
    let reference = config.base_stations[0].site;
    let native_distance = uav.distance_2d(&reference);
    assert!(native_distance >= 10_000.0);

    let n = 5;
    let base_seed = 7;
    let spec = SweepSpec {
        base: RunSpec { config: config.clone(), n_realizations: n, base_seed },
        d_min_m: native_distance,
        d_max_m: native_distance,
        step_m: 10.0,
        deployable_power_dbm: config.base_stations[2].tx_power_dbm,
        mc_access: config.policy.mc_access,
    };
    let table = run_distance_sweep(&spec).unwrap();
    assert_eq!(table.rows.len(), 15);

    for user in 0..15 {
        let mut served_sum = 0.0;
        for i in 0..n {
            let users = drop_users(&config, sweep_user_seed(base_seed, i as u64)).unwrap();
            let result = run_realization_with_users(
                &config,
                &users,
                sweep_prop_seed(base_seed, i as u64, 0),
            )
            .unwrap();
            served_sum += result.reports[user].dl.served_bps;
        }
        let static_mean = served_sum / n as f64;
        let sweep_mean = table.rows[user].mean_dl_served_bps;
        let err = (static_mean - sweep_mean).abs() / static_mean.max(1.0);
        assert!(
            err <= 1e-9,
            "user {user}: static {static_mean} vs sweep {sweep_mean} (rel err {err:.2e})"
        );
    }
}

/// Mean MC served DL traffic under deployable-only access at 24 dBm is
/// non-increasing as the separation shrinks from 5 km to 0.1 km, allowing
/// single-step violations up to 0.1 Mbps of realization noise.
#[test]
fn served_traffic_monotone_in_separation() {
    let base = build_preset(ScenarioPreset::MacroUav, &ScenarioOverrides::default()).unwrap();
    let spec = SweepSpec {
        base: RunSpec { config: base, n_realizations: 20, base_seed: 7 },
        d_min_m: 100.0,
        d_max_m: 5_000.0,
        step_m: 350.0,
        deployable_power_dbm: 24.0,
        mc_access: McAccess::DeployableOnly,
    };
    let table = run_distance_sweep(&spec).unwrap();
    let mut prev: Option<(f64, f64)> = None;
    for d in table.distances() {
        let rows = table.rows_at(d);
        let mean = rows.iter().map(|r| r.mean_dl_served_bps).sum::<f64>() / rows.len() as f64;
        if let Some((prev_d, prev_mean)) = prev {
            assert!(
                mean >= prev_mean - 0.1e6,
                "served traffic fell from {:.3} Mbps at {prev_d} m to {:.3} Mbps at {d} m",
                prev_mean / 1e6,
                mean / 1e6
            );
        }
        prev = Some((d, mean));
    }
}

/// A deployable transmitting at least 10 km from both macros does not
/// load the macro network: per macro sector, the MC attachment count is
/// no higher than in Macro-Only, and the DL load is no higher up to the
/// sub-percent interference it radiates into the macro cells.
#[test]
fn distant_deployable_does_not_load_the_macro_network() {
    let only = build_preset(ScenarioPreset::MacroOnly, &ScenarioOverrides::default()).unwrap();
    let uav = build_preset(ScenarioPreset::MacroUav, &ScenarioOverrides::default()).unwrap();
    let site = uav.base_stations[2].site;
    for macro_bs in &uav.base_stations[..2] {
        assert!(site.distance_2d(&macro_bs.site) >= 10_000.0);
    }

    for i in 0..10u64 {
        let seed = 7 + i;
        let r_only = run_realization(&only, seed).unwrap();
        let r_uav = run_realization(&uav, seed).unwrap();

        for sector in 0..6 {
            let mc_count = |reports: &[copxsim_core::TrafficReport]| {
                reports
                    .iter()
                    .filter(|r| r.class == UserClass::Mc && r.serving_sector == Some(sector))
                    .count()
            };
            assert!(
                mc_count(&r_uav.reports) <= mc_count(&r_only.reports),
                "sector {sector} gained MC users with the deployable present (seed {seed})"
            );
            assert!(
                r_uav.dl_loads[sector] <= r_only.dl_loads[sector] + 0.005,
                "sector {sector} load rose from {} to {} (seed {seed})",
                r_only.dl_loads[sector],
                r_uav.dl_loads[sector]
            );
        }
        // With the deployable present every MC user leaves the macros.
        for report in r_uav.reports.iter().take(15) {
            assert_eq!(report.network, Some(NetworkId::Deployable));
        }
    }
}
