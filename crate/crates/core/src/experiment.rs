//! Monte-Carlo experiment harness: single realizations, scenario runs,
//! the macro-to-deployable distance sweep, aggregation, summaries, and
//! the CSV/manifest output formats.
//!
//! Determinism contract: every realization is a pure function of
//! `(config, seed)`. Sweep realization `i` at distance index `k` derives
//! its propagation stream from `(base_seed, i, k)` while the user cluster
//! offsets derive from `(base_seed, i)` alone, so the cluster is rigid
//! across distances. Results are merged in index order and therefore do
//! not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::propagation::{build_link_gains, ChannelSwitches, RmaParams};
use crate::scenario::{
    drop_users, translate_mc_cluster, McAccess, NetworkId, ScenarioConfig, UserClass, UserSpec,
};
use crate::seed::{mix2, mix3, stream};
use crate::traffic::{
    account, apply_admission, select_cell, solve_load_coupling, traffic_reports_to_csv, Attachment,
    DropReason, TrafficReport,
};
use crate::units::format_sig;

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

/// A scenario run: one config, repeated over seeded realizations.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: ScenarioConfig,
    pub n_realizations: usize,
    pub base_seed: u64,
}

/// A macro-to-deployable distance sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: RunSpec,
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub step_m: f64,
    pub deployable_power_dbm: f64,
    pub mc_access: McAccess,
}

impl SweepSpec {
    pub fn distances(&self) -> Vec<f64> {
        let n = ((self.d_max_m - self.d_min_m) / self.step_m + 1e-9).floor() as usize + 1;
        (0..n).map(|k| self.d_min_m + k as f64 * self.step_m).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.d_min_m > self.d_max_m {
            return Err(Error::InvalidConfig("d_min exceeds d_max".into()));
        }
        if self.step_m <= 0.0 {
            return Err(Error::InvalidConfig("sweep step must be positive".into()));
        }
        if self.d_min_m < 0.0 {
            return Err(Error::NegativeDistance(self.d_min_m));
        }
        if self.base.n_realizations == 0 {
            return Err(Error::InvalidConfig("n_realizations must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

/// Seed of realization `i` in a scenario run.
pub fn realization_seed(base_seed: u64, realization: u64) -> u64 {
    base_seed.wrapping_add(realization)
}

/// User-drop stream of sweep realization `i`, shared across distances.
pub fn sweep_user_seed(base_seed: u64, realization: u64) -> u64 {
    mix2(mix2(base_seed, stream::USER_DROP), realization)
}

/// Propagation stream of sweep realization `i` at distance index `k`.
pub fn sweep_prop_seed(base_seed: u64, realization: u64, distance_index: u64) -> u64 {
    mix3(mix2(base_seed, stream::PROPAGATION), realization, distance_index)
}

// ---------------------------------------------------------------------------
// Single realization
// ---------------------------------------------------------------------------

/// Everything observed in one realization.
#[derive(Debug, Clone)]
pub struct RealizationResult {
    pub reports: Vec<TrafficReport>,
    pub dl_loads: Vec<f64>,
    pub ul_loads: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl RealizationResult {
    pub fn to_csv(&self) -> String {
        traffic_reports_to_csv(&self.reports)
    }
}

/// Run one realization end to end: drop users, draw the channel, attach,
/// solve the load coupling, and account traffic.
pub fn run_realization(config: &ScenarioConfig, seed: u64) -> Result<RealizationResult> {
    let users = drop_users(config, mix2(seed, stream::USER_DROP))?;
    run_realization_with_users(config, &users, mix2(seed, stream::PROPAGATION))
}

/// Run one realization with an externally provided user drop, as the
/// sweep does to keep the cluster rigid across distances.
pub fn run_realization_with_users(
    config: &ScenarioConfig,
    users: &[UserSpec],
    prop_seed: u64,
) -> Result<RealizationResult> {
    config.validate()?;
    let sectors = config.sectors();
    let params = RmaParams {
        avg_building_height_m: config.propagation.avg_building_height_m,
        street_width_m: config.propagation.street_width_m,
        carrier_ghz: config.carrier_hz / 1e9,
    };
    let switches = ChannelSwitches {
        enable_shadowing: config.propagation.enable_shadowing,
        force_los: config.propagation.force_los,
    };
    let gains = build_link_gains(&sectors, users, &params, switches, prop_seed);

    let (admitted, blocked) = apply_admission(users, &config.policy);
    let attachments: Vec<Attachment> = admitted
        .iter()
        .map(|&id| select_cell(id, &users[id], &sectors, &gains, &config.policy))
        .collect::<Result<_>>()?;

    let solution = solve_load_coupling(&sectors, users, &attachments, &gains, config);

    let mut reports: Vec<Option<TrafficReport>> = vec![None; users.len()];
    for link in &solution.links {
        let user = &users[link.user_id];
        let dl = account(user.service.dl_req_bps, link.dl_dropped, link.dl_rate_bps);
        let ul = account(user.service.ul_req_bps, link.ul_dropped, link.ul_rate_bps);
        reports[link.user_id] = Some(TrafficReport {
            user_id: link.user_id,
            class: user.class,
            serving_sector: Some(link.serving_sector_id),
            network: Some(sectors[link.serving_sector_id].network),
            dl_sinr_db: Some(link.dl_sinr_db),
            ul_sinr_db: Some(link.ul_sinr_db),
            dl,
            ul,
            drop_reason: if link.dl_dropped || link.ul_dropped {
                DropReason::LinkQuality
            } else {
                DropReason::None
            },
        });
    }
    for id in blocked {
        reports[id] = Some(TrafficReport::admission_blocked(id, &users[id]));
    }

    Ok(RealizationResult {
        reports: reports.into_iter().map(|r| r.expect("report for every user")).collect(),
        dl_loads: solution.dl_loads,
        ul_loads: solution.ul_loads,
        converged: solution.converged,
        iterations: solution.iterations,
    })
}

// ---------------------------------------------------------------------------
// Scenario aggregation
// ---------------------------------------------------------------------------

const FULL_SERVICE_REL_TOL: f64 = 1e-9;

fn fully_served(req_bps: f64, served_bps: f64) -> bool {
    req_bps - served_bps <= FULL_SERVICE_REL_TOL * req_bps.max(1.0)
}

/// Per-user metrics averaged over realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct UserAggregate {
    pub user_id: usize,
    pub class: UserClass,
    pub dl_req_bps: f64,
    pub ul_req_bps: f64,
    pub mean_dl_served_bps: f64,
    pub mean_ul_served_bps: f64,
    /// Mean SINR over the realizations in which the user was attached.
    pub mean_dl_sinr_db: Option<f64>,
    pub mean_ul_sinr_db: Option<f64>,
    /// Share of realizations in which the direction was fully served.
    pub fully_served_dl_fraction: f64,
    pub fully_served_ul_fraction: f64,
    /// Share of realizations served by the deployable network.
    pub deployable_fraction: f64,
}

/// Scenario-level aggregate over realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub per_user: Vec<UserAggregate>,
    /// Mean load per sector, per direction.
    pub mean_dl_load: Vec<f64>,
    pub mean_ul_load: Vec<f64>,
    pub n_realizations: usize,
    pub realizations_converged: usize,
    pub max_iterations: usize,
}

impl AggregateMetrics {
    fn mc_users(&self) -> impl Iterator<Item = &UserAggregate> {
        self.per_user.iter().filter(|u| u.class == UserClass::Mc)
    }

    /// Fraction of MC users whose *mean* served traffic meets the full
    /// request, per direction.
    pub fn mc_fully_served_by_mean(&self, downlink: bool) -> f64 {
        let (total, full) = self.mc_users().fold((0usize, 0usize), |(t, f), u| {
            let (req, served) = if downlink {
                (u.dl_req_bps, u.mean_dl_served_bps)
            } else {
                (u.ul_req_bps, u.mean_ul_served_bps)
            };
            (t + 1, f + usize::from(fully_served(req, served)))
        });
        if total == 0 {
            0.0
        } else {
            full as f64 / total as f64
        }
    }

    /// Realization-averaged fraction of MC users fully served, per
    /// direction (each user contributes its per-realization full-service
    /// share).
    pub fn mc_mean_fully_served_fraction(&self, downlink: bool) -> f64 {
        let (total, sum) = self.mc_users().fold((0usize, 0.0), |(t, s), u| {
            let f = if downlink { u.fully_served_dl_fraction } else { u.fully_served_ul_fraction };
            (t + 1, s + f)
        });
        if total == 0 {
            0.0
        } else {
            sum / total as f64
        }
    }

    /// Median over MC users of the per-user mean DL SINR.
    pub fn mc_median_dl_sinr_db(&self) -> Option<f64> {
        let mut values: Vec<f64> = self.mc_users().filter_map(|u| u.mean_dl_sinr_db).collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let mid = values.len() / 2;
        Some(if values.len() % 2 == 1 {
            values[mid]
        } else {
            0.5 * (values[mid - 1] + values[mid])
        })
    }
}

/// Run a scenario over `n_realizations` seeded realizations and average.
pub fn run_scenario(spec: &RunSpec) -> Result<AggregateMetrics> {
    if spec.n_realizations == 0 {
        return Err(Error::InvalidConfig("n_realizations must be at least 1".into()));
    }
    let results: Vec<RealizationResult> = (0..spec.n_realizations)
        .into_par_iter()
        .map(|i| run_realization(&spec.config, realization_seed(spec.base_seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(aggregate(&results))
}

/// Fold realization results into per-user and per-cell means. Results are
/// folded in realization order, keeping the output independent of how the
/// realizations were scheduled.
pub fn aggregate(results: &[RealizationResult]) -> AggregateMetrics {
    let n = results.len();
    let n_users = results.first().map_or(0, |r| r.reports.len());
    let n_sectors = results.first().map_or(0, |r| r.dl_loads.len());

    let mut per_user = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let first = &results[0].reports[u];
        let mut agg = UserAggregate {
            user_id: u,
            class: first.class,
            dl_req_bps: first.dl.req_bps,
            ul_req_bps: first.ul.req_bps,
            mean_dl_served_bps: 0.0,
            mean_ul_served_bps: 0.0,
            mean_dl_sinr_db: None,
            mean_ul_sinr_db: None,
            fully_served_dl_fraction: 0.0,
            fully_served_ul_fraction: 0.0,
            deployable_fraction: 0.0,
        };
        let mut dl_sinr_sum = 0.0;
        let mut ul_sinr_sum = 0.0;
        let mut attached = 0usize;
        for result in results {
            let report = &result.reports[u];
            agg.mean_dl_served_bps += report.dl.served_bps;
            agg.mean_ul_served_bps += report.ul.served_bps;
            agg.fully_served_dl_fraction += f64::from(fully_served(report.dl.req_bps, report.dl.served_bps));
            agg.fully_served_ul_fraction += f64::from(fully_served(report.ul.req_bps, report.ul.served_bps));
            if let (Some(dl), Some(ul)) = (report.dl_sinr_db, report.ul_sinr_db) {
                dl_sinr_sum += dl;
                ul_sinr_sum += ul;
                attached += 1;
            }
            if report.network == Some(NetworkId::Deployable) {
                agg.deployable_fraction += 1.0;
            }
        }
        agg.mean_dl_served_bps /= n as f64;
        agg.mean_ul_served_bps /= n as f64;
        agg.fully_served_dl_fraction /= n as f64;
        agg.fully_served_ul_fraction /= n as f64;
        agg.deployable_fraction /= n as f64;
        if attached > 0 {
            agg.mean_dl_sinr_db = Some(dl_sinr_sum / attached as f64);
            agg.mean_ul_sinr_db = Some(ul_sinr_sum / attached as f64);
        }
        per_user.push(agg);
    }

    let mut mean_dl_load = vec![0.0; n_sectors];
    let mut mean_ul_load = vec![0.0; n_sectors];
    for result in results {
        for s in 0..n_sectors {
            mean_dl_load[s] += result.dl_loads[s];
            mean_ul_load[s] += result.ul_loads[s];
        }
    }
    for s in 0..n_sectors {
        mean_dl_load[s] /= n as f64;
        mean_ul_load[s] /= n as f64;
    }

    AggregateMetrics {
        per_user,
        mean_dl_load,
        mean_ul_load,
        n_realizations: n,
        realizations_converged: results.iter().filter(|r| r.converged).count(),
        max_iterations: results.iter().map(|r| r.iterations).max().unwrap_or(0),
    }
}

// ---------------------------------------------------------------------------
// Distance sweep
// ---------------------------------------------------------------------------

/// One (distance, MC user) row of the sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub distance_m: f64,
    pub user_id: usize,
    pub mean_dl_served_bps: f64,
    pub mean_dl_sinr_db: f64,
    /// Network serving the user in most realizations at this distance.
    pub modal_network: NetworkId,
    /// Share of realizations served by the modal network.
    pub modal_network_fraction: f64,
    /// Share of realizations with the DL request fully served.
    pub fully_served_dl_fraction: f64,
}

/// Served-traffic results indexed by macro-deployable distance; one row
/// per (distance, MC user).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub n_mc_users: usize,
    pub n_realizations: usize,
    pub realizations_converged: usize,
    pub total_realizations: usize,
    pub max_iterations: usize,
}

impl SweepTable {
    pub fn distances(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for row in &self.rows {
            if out.last() != Some(&row.distance_m) {
                out.push(row.distance_m);
            }
        }
        out
    }

    pub fn rows_at(&self, distance_m: f64) -> &[SweepRow] {
        let start = self
            .rows
            .partition_point(|r| r.distance_m < distance_m);
        let end = self.rows.partition_point(|r| r.distance_m <= distance_m);
        &self.rows[start..end]
    }
}

/// Run the distance sweep: for every grid distance, rigidly translate the
/// MC cluster, run the realizations, and aggregate the MC users' DL
/// metrics.
pub fn run_distance_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let mut config = spec.base.config.clone();
    for idx in config.deployable_indices() {
        config.base_stations[idx].tx_power_dbm = spec.deployable_power_dbm;
    }
    config.policy.mc_access = spec.mc_access;
    config.validate()?;
    let deployables = config.deployable_indices();
    if deployables.len() != 1 {
        return Err(Error::DeployableCount(deployables.len()));
    }

    let n_real = spec.base.n_realizations;
    let base_seed = spec.base.base_seed;
    let user_drops: Vec<Vec<UserSpec>> = (0..n_real)
        .map(|i| drop_users(&config, sweep_user_seed(base_seed, i as u64)))
        .collect::<Result<_>>()?;

    let distances = spec.distances();
    let n_mc = config.n_mc_users;

    struct DistanceOutcome {
        rows: Vec<SweepRow>,
        converged: usize,
        max_iterations: usize,
    }

    let outcomes: Vec<DistanceOutcome> = distances
        .par_iter()
        .enumerate()
        .map(|(k, &distance)| -> Result<DistanceOutcome> {
            let mut served_sum = vec![0.0; n_mc];
            let mut sinr_sum = vec![0.0; n_mc];
            let mut fully = vec![0usize; n_mc];
            let mut on_public = vec![0usize; n_mc];
            let mut converged = 0usize;
            let mut max_iterations = 0usize;
            for i in 0..n_real {
                let (cfg, users) = translate_mc_cluster(&config, &user_drops[i], distance)?;
                let result = run_realization_with_users(
                    &cfg,
                    &users,
                    sweep_prop_seed(base_seed, i as u64, k as u64),
                )?;
                converged += usize::from(result.converged);
                max_iterations = max_iterations.max(result.iterations);
                for u in 0..n_mc {
                    let report = &result.reports[u];
                    served_sum[u] += report.dl.served_bps;
                    sinr_sum[u] += report.dl_sinr_db.unwrap_or(f64::NAN);
                    fully[u] += usize::from(fully_served(report.dl.req_bps, report.dl.served_bps));
                    on_public[u] += usize::from(report.network == Some(NetworkId::Public));
                }
            }
            let rows = (0..n_mc)
                .map(|u| {
                    let public = on_public[u];
                    let deployable = n_real - public;
                    let (modal_network, modal_count) = if public >= deployable {
                        (NetworkId::Public, public)
                    } else {
                        (NetworkId::Deployable, deployable)
                    };
                    SweepRow {
                        distance_m: distance,
                        user_id: u,
                        mean_dl_served_bps: served_sum[u] / n_real as f64,
                        mean_dl_sinr_db: sinr_sum[u] / n_real as f64,
                        modal_network,
                        modal_network_fraction: modal_count as f64 / n_real as f64,
                        fully_served_dl_fraction: fully[u] as f64 / n_real as f64,
                    }
                })
                .collect();
            Ok(DistanceOutcome { rows, converged, max_iterations })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(distances.len() * n_mc);
    let mut converged = 0;
    let mut max_iterations = 0;
    for outcome in outcomes {
        rows.extend(outcome.rows);
        converged += outcome.converged;
        max_iterations = max_iterations.max(outcome.max_iterations);
    }
    Ok(SweepTable {
        rows,
        n_mc_users: n_mc,
        n_realizations: n_real,
        realizations_converged: converged,
        total_realizations: distances.len() * n_real,
        max_iterations,
    })
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

fn percentile_triple(mut values: Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(f64::total_cmp);
    let min = values[0];
    let max = *values.last().unwrap();
    let mid = values.len() / 2;
    let median = if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    };
    (min, median, max)
}

/// Per-distance summary of MC served traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSummary {
    pub distance_m: f64,
    pub min_served_bps: f64,
    pub median_served_bps: f64,
    pub max_served_bps: f64,
    pub fully_served_fraction: f64,
}

/// Summary of a whole sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub per_distance: Vec<DistanceSummary>,
    /// Smallest grid distance at which every MC user's mean DL served
    /// traffic meets the request.
    pub first_distance_all_fully_served_m: Option<f64>,
    /// Worst per-user mean served traffic anywhere in the sweep.
    pub worst_user_mean_served_bps: f64,
    pub worst_case_distance_m: f64,
}

/// Reduce a sweep table to per-distance min/median/max and the worst case.
pub fn summarize_sweep(table: &SweepTable) -> Result<SweepSummary> {
    if table.rows.is_empty() {
        return Err(Error::EmptyInput("sweep table"));
    }
    let mut per_distance = Vec::new();
    let mut first_all_full: Option<f64> = None;
    let mut worst = f64::INFINITY;
    let mut worst_distance = 0.0;
    for distance in table.distances() {
        let rows = table.rows_at(distance);
        let served: Vec<f64> = rows.iter().map(|r| r.mean_dl_served_bps).collect();
        let (min, median, max) = percentile_triple(served);
        let all_full = rows.iter().all(|r| r.fully_served_dl_fraction >= 1.0);
        if all_full && first_all_full.is_none() {
            first_all_full = Some(distance);
        }
        if min < worst {
            worst = min;
            worst_distance = distance;
        }
        per_distance.push(DistanceSummary {
            distance_m: distance,
            min_served_bps: min,
            median_served_bps: median,
            max_served_bps: max,
            fully_served_fraction: rows.iter().map(|r| r.fully_served_dl_fraction).sum::<f64>()
                / rows.len() as f64,
        });
    }
    Ok(SweepSummary {
        per_distance,
        first_distance_all_fully_served_m: first_all_full,
        worst_user_mean_served_bps: worst,
        worst_case_distance_m: worst_distance,
    })
}

/// Summary of one scenario aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub mc_fully_served_dl_fraction: f64,
    pub mc_fully_served_ul_fraction: f64,
    pub mc_min_served_dl_bps: f64,
    pub mc_median_served_dl_bps: f64,
    pub mc_max_served_dl_bps: f64,
}

pub fn summarize_scenario(metrics: &AggregateMetrics) -> Result<ScenarioSummary> {
    let mc: Vec<f64> = metrics
        .per_user
        .iter()
        .filter(|u| u.class == UserClass::Mc)
        .map(|u| u.mean_dl_served_bps)
        .collect();
    if mc.is_empty() {
        return Err(Error::EmptyInput("aggregate has no MC users"));
    }
    let (min, median, max) = percentile_triple(mc);
    Ok(ScenarioSummary {
        mc_fully_served_dl_fraction: metrics.mc_fully_served_by_mean(true),
        mc_fully_served_ul_fraction: metrics.mc_fully_served_by_mean(false),
        mc_min_served_dl_bps: min,
        mc_median_served_dl_bps: median,
        mc_max_served_dl_bps: max,
    })
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub const AGGREGATE_CSV_HEADER: &str = "user_id,class,dl_req_mbps,ul_req_mbps,\
mean_dl_served_mbps,mean_ul_served_mbps,mean_dl_sinr_db,mean_ul_sinr_db,\
fully_served_dl_fraction,fully_served_ul_fraction,deployable_fraction";

pub const SWEEP_CSV_HEADER: &str = "distance_m,user_id,mean_dl_served_mbps,mean_dl_sinr_db,\
modal_network,serving_network_mode_fraction,fully_served_dl_fraction";

fn mbps(bps: f64) -> String {
    format_sig(bps / 1e6, 6)
}

impl AggregateMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(AGGREGATE_CSV_HEADER);
        out.push('\n');
        for u in &self.per_user {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                u.user_id,
                u.class,
                mbps(u.dl_req_bps),
                mbps(u.ul_req_bps),
                mbps(u.mean_dl_served_bps),
                mbps(u.mean_ul_served_bps),
                u.mean_dl_sinr_db.map_or(String::new(), |v| format!("{v:.4}")),
                u.mean_ul_sinr_db.map_or(String::new(), |v| format!("{v:.4}")),
                u.fully_served_dl_fraction,
                u.fully_served_ul_fraction,
                u.deployable_fraction,
            ));
        }
        out
    }
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:.1},{},{},{:.4},{},{:.6},{:.6}\n",
                r.distance_m,
                r.user_id,
                mbps(r.mean_dl_served_bps),
                r.mean_dl_sinr_db,
                r.modal_network,
                r.modal_network_fraction,
                r.fully_served_dl_fraction,
            ));
        }
        out
    }
}

/// Parse an aggregate CSV, validating the schema. Returns
/// `(user_id, class, numeric fields)` rows.
pub fn parse_aggregate_csv(text: &str) -> Result<Vec<(usize, String, Vec<Option<f64>>)>> {
    parse_csv(text, AGGREGATE_CSV_HEADER, 11, 0, 1)
}

/// Parse a sweep CSV, validating the schema. Returns
/// `(user_id, modal network, numeric fields)` rows.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<(usize, String, Vec<Option<f64>>)>> {
    parse_csv(text, SWEEP_CSV_HEADER, 7, 1, 4)
}

fn parse_csv(
    text: &str,
    header: &str,
    n_fields: usize,
    id_col: usize,
    label_col: usize,
) -> Result<Vec<(usize, String, Vec<Option<f64>>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        _ => {
            return Err(Error::Csv {
                line: 1,
                reason: "missing or unexpected header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_fields {
            return Err(Error::Csv {
                line: idx + 1,
                reason: format!("expected {n_fields} fields, got {}", fields.len()),
            });
        }
        let id = fields[id_col].parse::<usize>().map_err(|e| Error::Csv {
            line: idx + 1,
            reason: format!("id column: {e}"),
        })?;
        let mut numbers = Vec::new();
        for (col, field) in fields.iter().enumerate() {
            if col == label_col {
                continue;
            }
            if field.is_empty() {
                numbers.push(None);
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) => numbers.push(Some(v)),
                Err(_) if col == id_col => numbers.push(Some(id as f64)),
                Err(e) => {
                    return Err(Error::Csv {
                        line: idx + 1,
                        reason: format!("column {col}: {e}"),
                    })
                }
            }
        }
        rows.push((id, fields[label_col].to_string(), numbers));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Convergence bookkeeping written into the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvergenceStats {
    pub total_realizations: usize,
    pub converged_realizations: usize,
    pub max_iterations: usize,
}

/// Sweep parameters echoed in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepManifest {
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub step_m: f64,
    pub deployable_power_dbm: f64,
    pub mc_access: McAccess,
}

/// Machine-readable record of what produced an output file. Contains no
/// timestamps so reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub base_seed: u64,
    pub n_realizations: usize,
    pub config_sha256: String,
    pub config: ScenarioConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepManifest>,
    pub convergence: ConvergenceStats,
    pub outputs: Vec<String>,
}

/// Hex SHA-256 of the canonical JSON encoding of a config.
pub fn config_hash(config: &ScenarioConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(
        command: String,
        config: &ScenarioConfig,
        base_seed: u64,
        n_realizations: usize,
        sweep: Option<SweepManifest>,
        convergence: ConvergenceStats,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            tool: "copxsim".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            base_seed,
            n_realizations,
            config_sha256: config_hash(config),
            config: config.clone(),
            sweep,
            convergence,
            outputs,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_preset, ScenarioOverrides, ScenarioPreset};

    fn preset(p: ScenarioPreset) -> ScenarioConfig {
        build_preset(p, &ScenarioOverrides::default()).unwrap()
    }

    #[test]
    fn realization_report_counts_and_ordering() {
        let config = preset(ScenarioPreset::MacroTruck);
        let result = run_realization(&config, 5).unwrap();
        assert_eq!(result.reports.len(), 115);
        for (i, r) in result.reports.iter().enumerate() {
            assert_eq!(r.user_id, i);
        }
        assert_eq!(result.dl_loads.len(), 9);
    }

    #[test]
    fn realization_is_deterministic() {
        let config = preset(ScenarioPreset::MacroUav);
        let a = run_realization(&config, 123).unwrap();
        let b = run_realization(&config, 123).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = run_realization(&config, 124).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn macro_only_serves_every_mc_user_from_the_public_network() {
        let config = preset(ScenarioPreset::MacroOnly);
        let result = run_realization(&config, 9).unwrap();
        for report in result.reports.iter().take(15) {
            assert_eq!(report.network, Some(NetworkId::Public));
        }
    }

    #[test]
    fn accounting_identity_holds_for_every_user() {
        for p in ScenarioPreset::ALL {
            let config = preset(p);
            let result = run_realization(&config, 77).unwrap();
            for r in &result.reports {
                for t in [&r.dl, &r.ul] {
                    let residue = t.req_bps - t.dropped_bps - t.blocked_bps - t.served_bps;
                    assert!(
                        residue.abs() <= 1e-9 * t.req_bps.max(1.0),
                        "identity violated for user {} in {:?}: {residue}",
                        r.user_id,
                        p
                    );
                }
            }
        }
    }

    #[test]
    fn single_realization_aggregate_is_identity() {
        let config = preset(ScenarioPreset::MacroTruck);
        let result = run_realization(&config, realization_seed(50, 0)).unwrap();
        let spec = RunSpec { config, n_realizations: 1, base_seed: 50 };
        let metrics = run_scenario(&spec).unwrap();
        for (agg, report) in metrics.per_user.iter().zip(&result.reports) {
            assert_eq!(agg.mean_dl_served_bps, report.dl.served_bps);
            assert_eq!(agg.mean_ul_served_bps, report.ul.served_bps);
        }
        let frac = metrics.mc_mean_fully_served_fraction(true);
        assert!((0.0..=1.0).contains(&frac));
    }

    #[test]
    fn sweep_grid_has_1001_default_points() {
        let spec = SweepSpec {
            base: RunSpec { config: preset(ScenarioPreset::MacroUav), n_realizations: 1, base_seed: 0 },
            d_min_m: 0.0,
            d_max_m: 10_000.0,
            step_m: 10.0,
            deployable_power_dbm: 40.0,
            mc_access: McAccess::DeployableOnly,
        };
        assert_eq!(spec.distances().len(), 1001);
        assert_eq!(spec.distances()[0], 0.0);
        assert_eq!(*spec.distances().last().unwrap(), 10_000.0);
    }

    #[test]
    fn sweep_is_deterministic_and_ordered() {
        let spec = SweepSpec {
            base: RunSpec { config: preset(ScenarioPreset::MacroUav), n_realizations: 2, base_seed: 3 },
            d_min_m: 1_000.0,
            d_max_m: 2_000.0,
            step_m: 500.0,
            deployable_power_dbm: 40.0,
            mc_access: McAccess::AnyNetwork,
        };
        let a = run_distance_sweep(&spec).unwrap();
        let b = run_distance_sweep(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3 * 15);
        assert_eq!(a.distances(), vec![1_000.0, 1_500.0, 2_000.0]);
    }

    #[test]
    fn sweep_requires_a_deployable() {
        let spec = SweepSpec {
            base: RunSpec { config: preset(ScenarioPreset::MacroOnly), n_realizations: 1, base_seed: 0 },
            d_min_m: 0.0,
            d_max_m: 100.0,
            step_m: 50.0,
            deployable_power_dbm: 40.0,
            mc_access: McAccess::AnyNetwork,
        };
        assert!(matches!(run_distance_sweep(&spec), Err(Error::DeployableCount(0))));
    }

    #[test]
    fn summaries_behave_on_small_inputs() {
        let row = |d: f64, u: usize, served: f64| SweepRow {
            distance_m: d,
            user_id: u,
            mean_dl_served_bps: served,
            mean_dl_sinr_db: 10.0,
            modal_network: NetworkId::Deployable,
            modal_network_fraction: 1.0,
            fully_served_dl_fraction: if served >= 2e6 { 1.0 } else { 0.0 },
        };
        let table = SweepTable {
            rows: vec![row(100.0, 0, 1e6), row(100.0, 1, 2e6), row(200.0, 0, 2e6), row(200.0, 1, 2e6)],
            n_mc_users: 2,
            n_realizations: 1,
            realizations_converged: 2,
            total_realizations: 2,
            max_iterations: 5,
        };
        let summary = summarize_sweep(&table).unwrap();
        assert_eq!(summary.per_distance.len(), 2);
        assert_eq!(summary.worst_user_mean_served_bps, 1e6);
        assert_eq!(summary.worst_case_distance_m, 100.0);
        assert_eq!(summary.first_distance_all_fully_served_m, Some(200.0));

        // Single-row table: min = median = max.
        let single = SweepTable {
            rows: vec![row(5.0, 0, 1.5e6)],
            n_mc_users: 1,
            n_realizations: 1,
            realizations_converged: 1,
            total_realizations: 1,
            max_iterations: 5,
        };
        let s = summarize_sweep(&single).unwrap();
        assert_eq!(s.per_distance[0].min_served_bps, s.per_distance[0].median_served_bps);
        assert_eq!(s.per_distance[0].median_served_bps, s.per_distance[0].max_served_bps);

        let empty = SweepTable {
            rows: vec![],
            n_mc_users: 0,
            n_realizations: 0,
            realizations_converged: 0,
            total_realizations: 0,
            max_iterations: 0,
        };
        assert!(summarize_sweep(&empty).is_err());
    }

    #[test]
    fn csv_schemas_roundtrip() {
        let config = preset(ScenarioPreset::MacroTruck);
        let spec = RunSpec { config, n_realizations: 2, base_seed: 8 };
        let metrics = run_scenario(&spec).unwrap();
        let csv = metrics.to_csv();
        let rows = parse_aggregate_csv(&csv).unwrap();
        assert_eq!(rows.len(), 115);
        assert_eq!(rows[0].0, 0);
        assert_eq!(rows[0].1, "mc");

        let sweep = SweepSpec {
            base: RunSpec { config: preset(ScenarioPreset::MacroUav), n_realizations: 1, base_seed: 1 },
            d_min_m: 9_000.0,
            d_max_m: 9_000.0,
            step_m: 10.0,
            deployable_power_dbm: 40.0,
            mc_access: McAccess::AnyNetwork,
        };
        let table = run_distance_sweep(&sweep).unwrap();
        let rows = parse_sweep_csv(&table.to_csv()).unwrap();
        assert_eq!(rows.len(), 15);
    }

    #[test]
    fn manifest_is_stable_json() {
        let config = preset(ScenarioPreset::MacroUav);
        let manifest = RunManifest::new(
            "run".into(),
            &config,
            7,
            20,
            None,
            ConvergenceStats { total_realizations: 20, converged_realizations: 20, max_iterations: 9 },
            vec!["out.csv".into()],
        );
        let a = manifest.to_json().unwrap();
        let b = manifest.to_json().unwrap();
        assert_eq!(a, b);
        assert_eq!(config_hash(&config), config_hash(&config));
        assert_ne!(
            config_hash(&config),
            config_hash(&preset(ScenarioPreset::MacroTruck))
        );
    }
}
