//! Cell selection, admission control, drop decisions, bandwidth
//! allocation with mission-critical priority, the load-coupling fixed
//! point, and per-user traffic accounting.
//!
//! Accounting follows the identity `served = requested - dropped -
//! blocked`: a direction whose SINR is below the drop threshold loses its
//! whole request as dropped traffic, and whatever the serving cell cannot
//! fit in its carrier bandwidth is blocked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::LinkGainTable;
use crate::radio::{self, noise_power_dbm, per_hz_rate_bps, PC_REFERENCE_BW_HZ};
use crate::scenario::{AccessPolicy, McAccess, NetworkId, ScenarioConfig, SectorInstance, UserClass, UserSpec};
use crate::units::{db_to_linear, dbm_to_mw, format_sig};

// ---------------------------------------------------------------------------
// Attachment and admission
// ---------------------------------------------------------------------------

/// A user's serving cell together with the networks it was allowed to
/// consider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub user_id: usize,
    pub serving_sector_id: usize,
    pub allowed_networks: Vec<NetworkId>,
}

/// Networks a user class may attach to under a policy. Normal users are
/// fixed to the public network.
pub fn allowed_networks(class: UserClass, policy: &AccessPolicy) -> Vec<NetworkId> {
    match class {
        UserClass::Normal => vec![NetworkId::Public],
        UserClass::Mc => match policy.mc_access {
            McAccess::DeployableOnly => vec![NetworkId::Deployable],
            McAccess::AnyNetwork => vec![NetworkId::Public, NetworkId::Deployable],
        },
    }
}

/// Pick the serving sector: the allowed sector with the highest DL
/// received power (`tx_power + cell gain`), ties broken by lowest sector id.
pub fn select_cell(
    user_id: usize,
    user: &UserSpec,
    sectors: &[SectorInstance],
    gains: &LinkGainTable,
    policy: &AccessPolicy,
) -> Result<Attachment> {
    let allowed = allowed_networks(user.class, policy);
    let mut best: Option<(usize, f64)> = None;
    for sector in sectors {
        if !allowed.contains(&sector.network) {
            continue;
        }
        let rx_dbm = sector.tx_power_dbm + gains.gain_db(sector.sector_id, user_id);
        match best {
            Some((_, best_rx)) if rx_dbm <= best_rx => {}
            _ => best = Some((sector.sector_id, rx_dbm)),
        }
    }
    let (serving_sector_id, _) = best.ok_or(Error::NoAllowedSector { user_id })?;
    Ok(Attachment {
        user_id,
        serving_sector_id,
        allowed_networks: allowed,
    })
}

/// Partition users into admitted and admission-blocked ids.
///
/// With `block_normal_users` every normal user is excluded up front and
/// its whole request is accounted as dropped; MC users are always admitted.
pub fn apply_admission(users: &[UserSpec], policy: &AccessPolicy) -> (Vec<usize>, Vec<usize>) {
    let mut admitted = Vec::new();
    let mut blocked = Vec::new();
    for (id, user) in users.iter().enumerate() {
        if policy.block_normal_users && user.class == UserClass::Normal {
            blocked.push(id);
        } else {
            admitted.push(id);
        }
    }
    (admitted, blocked)
}

/// Per-direction drop decision: dropped iff SINR is strictly below the
/// threshold.
pub fn drop_check(dl_sinr_db: f64, ul_sinr_db: f64, threshold_db: f64) -> (bool, bool) {
    (dl_sinr_db < threshold_db, ul_sinr_db < threshold_db)
}

// ---------------------------------------------------------------------------
// Bandwidth allocation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Dl,
    Ul,
}

/// One user's claim on a cell's bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct AllocationRequest {
    pub user_id: usize,
    pub class: UserClass,
    pub req_bps: f64,
    /// Deliverable rate per Hz at the user's SINR; zero means the link
    /// cannot carry traffic at any allocation.
    pub per_hz_bps: f64,
}

/// Outcome of allocating one cell in one direction.
#[derive(Debug, Clone)]
pub struct CellAllocation {
    pub sector_id: usize,
    pub direction: Direction,
    /// `(user_id, allocated bandwidth in Hz)`, in allocation order.
    pub allocations: Vec<(usize, f64)>,
    pub residual_bandwidth_hz: f64,
    /// Allocated fraction of the carrier.
    pub load: f64,
}

impl CellAllocation {
    pub fn allocated_hz(&self, user_id: usize) -> f64 {
        self.allocations
            .iter()
            .find(|(id, _)| *id == user_id)
            .map_or(0.0, |(_, hz)| *hz)
    }
}

/// Greedy fill of one cell's carrier: MC users first, then ascending
/// bandwidth demand, ties by user id. Each user receives
/// `min(demand, residual)`; users whose link carries nothing per Hz get no
/// allocation.
pub fn allocate_cell(
    sector_id: usize,
    direction: Direction,
    requests: &[AllocationRequest],
    carrier_bandwidth_hz: f64,
) -> CellAllocation {
    let mut order: Vec<&AllocationRequest> = requests.iter().collect();
    order.sort_by(|a, b| {
        let class_a = a.class != UserClass::Mc;
        let class_b = b.class != UserClass::Mc;
        class_a
            .cmp(&class_b)
            .then(demand_hz(a).total_cmp(&demand_hz(b)))
            .then(a.user_id.cmp(&b.user_id))
    });

    let mut residual = carrier_bandwidth_hz;
    let mut allocations = Vec::with_capacity(order.len());
    for request in order {
        let grant = if request.per_hz_bps > 0.0 {
            demand_hz(request).min(residual)
        } else {
            0.0
        };
        residual -= grant;
        allocations.push((request.user_id, grant));
    }
    CellAllocation {
        sector_id,
        direction,
        allocations,
        residual_bandwidth_hz: residual,
        load: (carrier_bandwidth_hz - residual) / carrier_bandwidth_hz,
    }
}

fn demand_hz(request: &AllocationRequest) -> f64 {
    if request.per_hz_bps > 0.0 {
        request.req_bps / request.per_hz_bps
    } else if request.req_bps > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Traffic accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    None,
    AdmissionBlocked,
    LinkQuality,
}

/// Requested/dropped/blocked/served traffic of one direction, bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionTraffic {
    pub req_bps: f64,
    pub dropped_bps: f64,
    pub blocked_bps: f64,
    pub served_bps: f64,
}

/// Account one direction given the rate achievable on the allocated
/// bandwidth. Served traffic never exceeds the request even when the link
/// could carry more, and the identity `req = served + dropped + blocked`
/// holds exactly.
pub fn account(req_bps: f64, dropped: bool, achievable_bps: f64) -> DirectionTraffic {
    if dropped {
        return DirectionTraffic {
            req_bps,
            dropped_bps: req_bps,
            blocked_bps: 0.0,
            served_bps: 0.0,
        };
    }
    let served = achievable_bps.min(req_bps);
    DirectionTraffic {
        req_bps,
        dropped_bps: 0.0,
        blocked_bps: req_bps - served,
        served_bps: served,
    }
}

/// Per-user, per-direction traffic outcome of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub user_id: usize,
    pub class: UserClass,
    pub serving_sector: Option<usize>,
    pub network: Option<NetworkId>,
    pub dl_sinr_db: Option<f64>,
    pub ul_sinr_db: Option<f64>,
    pub dl: DirectionTraffic,
    pub ul: DirectionTraffic,
    pub drop_reason: DropReason,
}

impl TrafficReport {
    /// Report for a user excluded by admission control: the full request
    /// of both directions is dropped.
    pub fn admission_blocked(user_id: usize, user: &UserSpec) -> Self {
        let drop = |req_bps: f64| DirectionTraffic {
            req_bps,
            dropped_bps: req_bps,
            blocked_bps: 0.0,
            served_bps: 0.0,
        };
        Self {
            user_id,
            class: user.class,
            serving_sector: None,
            network: None,
            dl_sinr_db: None,
            ul_sinr_db: None,
            dl: drop(user.service.dl_req_bps),
            ul: drop(user.service.ul_req_bps),
            drop_reason: DropReason::AdmissionBlocked,
        }
    }
}

// ---------------------------------------------------------------------------
// Load coupling
// ---------------------------------------------------------------------------

const MAX_ITERATIONS: usize = 50;
const LOAD_TOLERANCE: f64 = 1e-3;
const DAMPING: f64 = 0.5;

/// Express an uplink claim as a synthetic per-Hz rate so that the greedy
/// allocator's `req / per_hz` demand equals the power-aware bandwidth
/// demand. A user that cannot reach its request at any allocation asks
/// for the largest allocation that still carries traffic and queues
/// behind everyone else.
#[allow(clippy::too_many_arguments)]
fn ul_request_per_hz(
    pc: &crate::radio::UplinkPowerControl,
    coupling_loss_db: f64,
    gain_db: f64,
    denom_psd_mw_hz: f64,
    req_bps: f64,
    bw_hz: f64,
    max_power_dbm: f64,
    model: &crate::radio::LinkRateModel,
) -> f64 {
    if req_bps <= 0.0 {
        return 1.0;
    }
    let demand = radio::ul_demand_hz(
        pc,
        coupling_loss_db,
        gain_db,
        denom_psd_mw_hz,
        req_bps,
        bw_hz,
        max_power_dbm,
        model,
    );
    match demand {
        Some(d) if d > 0.0 => req_bps / d,
        Some(_) => 1.0,
        None => {
            // Beyond this allocation the capped density falls below the
            // minimum SINR and the link carries nothing.
            let a_floor = dbm_to_mw(max_power_dbm) * db_to_linear(gain_db)
                / (denom_psd_mw_hz * db_to_linear(model.min_sinr_db));
            let useful = bw_hz.min(a_floor);
            let partial_rate = radio::ul_rate_bps(
                pc,
                coupling_loss_db,
                gain_db,
                denom_psd_mw_hz,
                useful,
                max_power_dbm,
                model,
            );
            if useful > 0.0 && partial_rate > 0.0 {
                req_bps / useful
            } else {
                0.0
            }
        }
    }
}

/// Converged link state of one attached user.
#[derive(Debug, Clone, Copy)]
pub struct UserLink {
    pub user_id: usize,
    pub serving_sector_id: usize,
    pub dl_sinr_db: f64,
    /// UL SINR at the reference-bandwidth transmit density.
    pub ul_sinr_db: f64,
    pub dl_alloc_hz: f64,
    pub ul_alloc_hz: f64,
    /// Rate achievable on the granted allocation.
    pub dl_rate_bps: f64,
    pub ul_rate_bps: f64,
    pub dl_dropped: bool,
    pub ul_dropped: bool,
    pub ul_tx_power_dbm: f64,
}

/// Output of the load-coupling fixed point.
#[derive(Debug, Clone)]
pub struct LoadSolution {
    /// One entry per attachment, in attachment order.
    pub links: Vec<UserLink>,
    pub dl_loads: Vec<f64>,
    pub ul_loads: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Solve the coupling between cell loads, SINR, and bandwidth demand.
///
/// Interference loads start at 1 (conservative) and are damped as
/// `load <- 0.5 old + 0.5 new`; the iteration stops when consecutive
/// allocation-derived loads agree within `1e-3` or after 50 rounds.
/// Non-convergence is reported, and the last iterate is used.
pub fn solve_load_coupling(
    sectors: &[SectorInstance],
    users: &[UserSpec],
    attachments: &[Attachment],
    gains: &LinkGainTable,
    config: &ScenarioConfig,
) -> LoadSolution {
    let n_sectors = sectors.len();
    let n_att = attachments.len();
    let bw = config.bandwidth_hz;
    let full_load = config.full_load_interference;

    // Pre-resolved per-attachment constants.
    let serving: Vec<usize> = attachments.iter().map(|a| a.serving_sector_id).collect();
    let coupling_loss: Vec<f64> = attachments
        .iter()
        .map(|a| -gains.gain_db(a.serving_sector_id, a.user_id))
        .collect();
    let dl_noise_dbm = noise_power_dbm(bw, config.noise.ue_noise_figure_db);
    let ul_noise_psd_dbm = noise_power_dbm(1.0, config.noise.bs_noise_figure_db);

    // Linear-domain DL receive powers for every (sector, attachment) pair.
    let rx_mw: Vec<f64> = (0..n_sectors)
        .flat_map(|s| {
            attachments
                .iter()
                .map(move |a| (s, a.user_id))
                .collect::<Vec<_>>()
        })
        .map(|(s, u)| dbm_to_mw(sectors[s].tx_power_dbm + gains.gain_db(s, u)))
        .collect();
    let rx = |s: usize, att: usize| rx_mw[s * n_att + att];

    let mut dl_interf_load: Vec<f64> = vec![1.0; n_sectors];
    let mut ul_interf_load: Vec<f64> = vec![1.0; n_sectors];
    // Previous iteration's UL allocations; full carrier initially so the
    // first round sees conservative interference and power-cap effects.
    let mut ul_alloc_prev: Vec<f64> = vec![bw; n_att];
    let mut prev_dl_raw: Option<Vec<f64>> = None;
    let mut prev_ul_raw: Option<Vec<f64>> = None;

    let mut links = vec![
        UserLink {
            user_id: 0,
            serving_sector_id: 0,
            dl_sinr_db: 0.0,
            ul_sinr_db: 0.0,
            dl_alloc_hz: 0.0,
            ul_alloc_hz: 0.0,
            dl_rate_bps: 0.0,
            ul_rate_bps: 0.0,
            dl_dropped: false,
            ul_dropped: false,
            ul_tx_power_dbm: 0.0,
        };
        n_att
    ];
    let mut dl_raw = vec![0.0; n_sectors];
    let mut ul_raw = vec![0.0; n_sectors];
    let mut converged = false;
    let mut iterations = 0;
    let mut consistency_pass = false;

    for iteration in 1..=MAX_ITERATIONS + 1 {
        if !consistency_pass {
            iterations = iteration;
        }

        // Transmit spectral density each user put on its previous grant;
        // this is what other cells hear this round.
        let mut ul_psd_mw_hz = vec![0.0; n_att];
        for (i, att) in attachments.iter().enumerate() {
            if ul_alloc_prev[i] > 0.0 {
                ul_psd_mw_hz[i] = radio::ul_tx_psd_mw_hz(
                    &config.power_control,
                    coupling_loss[i],
                    ul_alloc_prev[i],
                    users[att.user_id].tx_power_dbm,
                );
            }
        }

        // Aggregate UL interference spectral density seen at each sector.
        // A cell's composite transmit PSD is the allocation-share-weighted
        // mean over its users, scaled by the cell's (damped) UL load; the
        // victim-side load factor is applied in the SINR denominator. This
        // realizes the load-overlap weighting per interfering cell.
        let mut cell_alloc_total = vec![0.0; n_sectors];
        for (i, _) in attachments.iter().enumerate() {
            cell_alloc_total[serving[i]] += ul_alloc_prev[i];
        }
        let mut ul_interference = vec![0.0; n_sectors];
        for (i, att) in attachments.iter().enumerate() {
            let own_cell = serving[i];
            let weight = if full_load {
                1.0
            } else if ul_alloc_prev[i] > 0.0 {
                ul_interf_load[own_cell].min(1.0) * ul_alloc_prev[i] / cell_alloc_total[own_cell]
            } else {
                0.0
            };
            if weight == 0.0 {
                continue;
            }
            for s in 0..n_sectors {
                if s == own_cell {
                    continue;
                }
                ul_interference[s] +=
                    weight * ul_psd_mw_hz[i] * db_to_linear(gains.gain_db(s, att.user_id));
            }
        }

        // Per-user SINR and drop state. The UL SINR is evaluated at the
        // reference-bandwidth transmit density, so the drop decision does
        // not depend on the allocation.
        let mut ul_denom_psd_mw = vec![0.0; n_att];
        for (i, att) in attachments.iter().enumerate() {
            let s = serving[i];
            let mut dl_interf_mw = 0.0;
            for other in 0..n_sectors {
                if other == s {
                    continue;
                }
                let weight = if full_load { 1.0 } else { dl_interf_load[other] };
                dl_interf_mw += weight * rx(other, i);
            }
            let dl_sinr =
                10.0 * (rx(s, i) / (dl_interf_mw + dbm_to_mw(dl_noise_dbm))).log10();

            let victim_weight = if full_load { 1.0 } else { ul_interf_load[s].min(1.0) };
            let denom = victim_weight * ul_interference[s] + dbm_to_mw(ul_noise_psd_dbm);
            ul_denom_psd_mw[i] = denom;
            let ref_psd = radio::ul_tx_psd_mw_hz(
                &config.power_control,
                coupling_loss[i],
                PC_REFERENCE_BW_HZ,
                users[att.user_id].tx_power_dbm,
            );
            let ul_sinr = 10.0
                * (ref_psd * db_to_linear(gains.gain_db(s, att.user_id)) / denom).log10();

            let (dl_dropped, ul_dropped) =
                drop_check(dl_sinr, ul_sinr, config.drop_sinr_threshold_db);
            links[i].user_id = att.user_id;
            links[i].serving_sector_id = s;
            links[i].dl_sinr_db = dl_sinr;
            links[i].ul_sinr_db = ul_sinr;
            links[i].dl_dropped = dl_dropped;
            links[i].ul_dropped = ul_dropped;
        }

        // Allocate every cell in both directions. DL demand is linear in
        // the allocation; UL demand accounts for the power cap diluting
        // the transmit density over wider grants.
        dl_raw = vec![0.0; n_sectors];
        ul_raw = vec![0.0; n_sectors];
        for s in 0..n_sectors {
            for direction in [Direction::Dl, Direction::Ul] {
                let requests: Vec<AllocationRequest> = attachments
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| serving[*i] == s)
                    .filter(|(i, _)| match direction {
                        Direction::Dl => !links[*i].dl_dropped,
                        Direction::Ul => !links[*i].ul_dropped,
                    })
                    .map(|(i, att)| {
                        let user = &users[att.user_id];
                        let (req, per_hz) = match direction {
                            Direction::Dl => (
                                user.service.dl_req_bps,
                                per_hz_rate_bps(links[i].dl_sinr_db, &config.rate_model),
                            ),
                            Direction::Ul => {
                                let req = user.service.ul_req_bps;
                                let per_hz = ul_request_per_hz(
                                    &config.power_control,
                                    coupling_loss[i],
                                    gains.gain_db(s, att.user_id),
                                    ul_denom_psd_mw[i],
                                    req,
                                    bw,
                                    user.tx_power_dbm,
                                    &config.rate_model,
                                );
                                (req, per_hz)
                            }
                        };
                        AllocationRequest {
                            user_id: att.user_id,
                            class: user.class,
                            req_bps: req,
                            per_hz_bps: per_hz,
                        }
                    })
                    .collect();
                let allocation = allocate_cell(s, direction, &requests, bw);
                for (i, att) in attachments.iter().enumerate() {
                    if serving[i] != s {
                        continue;
                    }
                    let hz = allocation.allocated_hz(att.user_id);
                    match direction {
                        Direction::Dl => {
                            links[i].dl_alloc_hz = if links[i].dl_dropped { 0.0 } else { hz };
                            links[i].dl_rate_bps = radio::link_rate_bps(
                                links[i].dl_sinr_db,
                                links[i].dl_alloc_hz,
                                &config.rate_model,
                            );
                        }
                        Direction::Ul => {
                            links[i].ul_alloc_hz = if links[i].ul_dropped { 0.0 } else { hz };
                            links[i].ul_rate_bps = radio::ul_rate_bps(
                                &config.power_control,
                                coupling_loss[i],
                                gains.gain_db(s, att.user_id),
                                ul_denom_psd_mw[i],
                                links[i].ul_alloc_hz,
                                users[att.user_id].tx_power_dbm,
                                &config.rate_model,
                            );
                            links[i].ul_tx_power_dbm = radio::ul_tx_power_dbm(
                                &config.power_control,
                                coupling_loss[i],
                                links[i].ul_alloc_hz.max(PC_REFERENCE_BW_HZ),
                                users[att.user_id].tx_power_dbm,
                            );
                        }
                    }
                }
                match direction {
                    Direction::Dl => dl_raw[s] = allocation.load,
                    Direction::Ul => ul_raw[s] = allocation.load,
                }
            }
        }

        if consistency_pass {
            break;
        }

        // Convergence on consecutive allocation-derived loads. Once they
        // settle (or the iteration budget runs out), one more evaluation
        // at exactly the settled loads aligns the reported SINRs with the
        // reported loads; without it, cells whose load froze early would
        // still be weighted by the residue of the conservative start.
        let settled = if let (Some(prev_dl), Some(prev_ul)) = (&prev_dl_raw, &prev_ul_raw) {
            let delta = dl_raw
                .iter()
                .zip(prev_dl)
                .chain(ul_raw.iter().zip(prev_ul))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            delta < LOAD_TOLERANCE
        } else {
            false
        };
        if settled || iteration == MAX_ITERATIONS {
            converged = settled;
            consistency_pass = true;
            dl_interf_load.copy_from_slice(&dl_raw);
            ul_interf_load.copy_from_slice(&ul_raw);
            for (i, link) in links.iter().enumerate() {
                ul_alloc_prev[i] = link.ul_alloc_hz;
            }
            continue;
        }
        prev_dl_raw = Some(dl_raw.clone());
        prev_ul_raw = Some(ul_raw.clone());

        for s in 0..n_sectors {
            dl_interf_load[s] = DAMPING * dl_interf_load[s] + (1.0 - DAMPING) * dl_raw[s];
            ul_interf_load[s] = DAMPING * ul_interf_load[s] + (1.0 - DAMPING) * ul_raw[s];
        }
        for (i, link) in links.iter().enumerate() {
            ul_alloc_prev[i] = link.ul_alloc_hz;
        }
    }

    LoadSolution {
        links,
        dl_loads: dl_raw,
        ul_loads: ul_raw,
        converged,
        iterations,
    }
}

// ---------------------------------------------------------------------------
// CSV emission and parsing
// ---------------------------------------------------------------------------

pub const TRAFFIC_CSV_HEADER: &str = "user_id,class,serving_sector,network,dl_sinr_db,ul_sinr_db,\
dl_req_mbps,dl_dropped_mbps,dl_blocked_mbps,dl_served_mbps,\
ul_req_mbps,ul_dropped_mbps,ul_blocked_mbps,ul_served_mbps";

fn mbps(bps: f64) -> String {
    format_sig(bps / 1e6, 6)
}

/// Serialize reports into the per-realization CSV table.
pub fn traffic_reports_to_csv(reports: &[TrafficReport]) -> String {
    let mut out = String::from(TRAFFIC_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let sector = r.serving_sector.map_or(String::new(), |s| s.to_string());
        let network = r.network.map_or(String::new(), |n| n.to_string());
        let dl_sinr = r.dl_sinr_db.map_or(String::new(), |v| format!("{v:.4}"));
        let ul_sinr = r.ul_sinr_db.map_or(String::new(), |v| format!("{v:.4}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.user_id,
            r.class,
            sector,
            network,
            dl_sinr,
            ul_sinr,
            mbps(r.dl.req_bps),
            mbps(r.dl.dropped_bps),
            mbps(r.dl.blocked_bps),
            mbps(r.dl.served_bps),
            mbps(r.ul.req_bps),
            mbps(r.ul.dropped_bps),
            mbps(r.ul.blocked_bps),
            mbps(r.ul.served_bps),
        ));
    }
    out
}

/// Diagnostic dump of per-user SINR, one row per direction.
pub fn sinr_diagnostic_csv(reports: &[TrafficReport]) -> String {
    let mut out = String::from("user_id,direction,sinr_db,serving_sector\n");
    for r in reports {
        if let (Some(sector), Some(dl), Some(ul)) = (r.serving_sector, r.dl_sinr_db, r.ul_sinr_db) {
            out.push_str(&format!("{},dl,{dl:.4},{sector}\n", r.user_id));
            out.push_str(&format!("{},ul,{ul:.4},{sector}\n", r.user_id));
        }
    }
    out
}

/// One parsed row of the traffic CSV schema.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficCsvRow {
    pub user_id: usize,
    pub class: String,
    pub serving_sector: Option<usize>,
    pub network: Option<String>,
    pub dl_sinr_db: Option<f64>,
    pub ul_sinr_db: Option<f64>,
    pub dl_mbps: [f64; 4],
    pub ul_mbps: [f64; 4],
}

/// Parse a traffic CSV back into rows, validating the schema.
pub fn parse_traffic_csv(text: &str) -> Result<Vec<TrafficCsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == TRAFFIC_CSV_HEADER => {}
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
        if fields.len() != 14 {
            return Err(Error::Csv {
                line: idx + 1,
                reason: format!("expected 14 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| Error::Csv {
                line: idx + 1,
                reason: format!("field {i}: {e}"),
            })
        };
        let opt_num = |i: usize| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        rows.push(TrafficCsvRow {
            user_id: fields[0].parse().map_err(|e| Error::Csv {
                line: idx + 1,
                reason: format!("user_id: {e}"),
            })?,
            class: fields[1].to_string(),
            serving_sector: if fields[2].is_empty() {
                None
            } else {
                Some(fields[2].parse().map_err(|e| Error::Csv {
                    line: idx + 1,
                    reason: format!("serving_sector: {e}"),
                })?)
            },
            network: if fields[3].is_empty() {
                None
            } else {
                Some(fields[3].to_string())
            },
            dl_sinr_db: opt_num(4)?,
            ul_sinr_db: opt_num(5)?,
            dl_mbps: [num(6)?, num(7)?, num(8)?, num(9)?],
            ul_mbps: [num(10)?, num(11)?, num(12)?, num(13)?],
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::LinkRateModel;
    use proptest::prelude::*;

    fn request(user_id: usize, class: UserClass, req_bps: f64, per_hz: f64) -> AllocationRequest {
        AllocationRequest { user_id, class, req_bps, per_hz_bps: per_hz }
    }

    #[test]
    fn underloaded_cell_serves_everyone() {
        // Two users each demanding 2 MHz from a 10 MHz carrier.
        let requests = vec![
            request(0, UserClass::Normal, 2e6, 1.0),
            request(1, UserClass::Normal, 2e6, 1.0),
        ];
        let alloc = allocate_cell(0, Direction::Dl, &requests, 10e6);
        assert_eq!(alloc.allocated_hz(0), 2e6);
        assert_eq!(alloc.allocated_hz(1), 2e6);
        assert!((alloc.load - 0.4).abs() < 1e-12);
        assert!((alloc.residual_bandwidth_hz - 6e6).abs() < 1e-6);
    }

    #[test]
    fn greedy_fills_smaller_demand_first() {
        // Demands of 8 MHz and 6 MHz in the same class: the 6 MHz user is
        // ordered first, is fully served, and the 8 MHz user gets the
        // remaining 4 MHz, blocking half of its traffic.
        let requests = vec![
            request(0, UserClass::Normal, 8e6, 1.0),
            request(1, UserClass::Normal, 6e6, 1.0),
        ];
        let alloc = allocate_cell(0, Direction::Dl, &requests, 10e6);
        assert_eq!(alloc.allocated_hz(1), 6e6);
        assert_eq!(alloc.allocated_hz(0), 4e6);
        assert_eq!(alloc.residual_bandwidth_hz, 0.0);
        assert!((alloc.load - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mc_users_preempt_larger_normal_demand() {
        let requests = vec![
            request(0, UserClass::Normal, 7e6, 1.0),
            request(1, UserClass::Mc, 7e6, 1.0),
        ];
        let alloc = allocate_cell(0, Direction::Dl, &requests, 10e6);
        assert_eq!(alloc.allocated_hz(1), 7e6);
        assert_eq!(alloc.allocated_hz(0), 3e6);
    }

    #[test]
    fn unservable_user_gets_nothing() {
        let requests = vec![
            request(0, UserClass::Mc, 2e6, 0.0),
            request(1, UserClass::Normal, 2e6, 1.0),
        ];
        let alloc = allocate_cell(0, Direction::Dl, &requests, 10e6);
        assert_eq!(alloc.allocated_hz(0), 0.0);
        assert_eq!(alloc.allocated_hz(1), 2e6);
    }

    #[test]
    fn drop_check_boundary_and_independence() {
        assert_eq!(drop_check(-20.0, 5.0, -6.0), (true, false));
        // Exactly at the threshold is not dropped.
        assert_eq!(drop_check(-6.0, -6.0, -6.0), (false, false));
        assert_eq!(drop_check(5.0, -7.0, -6.0), (false, true));
    }

    #[test]
    fn accounting_identity_cases() {
        // req 2 Mbps, no drop, only 1.5 Mbps achievable: 0.5 Mbps blocked.
        let t = account(2e6, false, 1.5e6);
        assert_eq!(t.served_bps, 1.5e6);
        assert_eq!(t.blocked_bps, 0.5e6);
        assert_eq!(t.req_bps - t.dropped_bps - t.blocked_bps - t.served_bps, 0.0);

        // Full drop loses the whole request regardless of the link rate.
        let t = account(2e6, true, 50e6);
        assert_eq!(t.served_bps, 0.0);
        assert_eq!(t.dropped_bps, 2e6);
        assert_eq!(t.blocked_bps, 0.0);

        // Huge achievable rate: served exactly the request, never more.
        let model = LinkRateModel { bandwidth_efficiency: 1.0, se_cap_bps_hz: 7.4, min_sinr_db: -10.0 };
        let achievable = crate::radio::link_rate_bps(40.0, 9e6, &model);
        assert!(achievable > 2e6);
        let t = account(2e6, false, achievable);
        assert_eq!(t.served_bps, 2e6);
        assert_eq!(t.blocked_bps, 0.0);
    }

    #[test]
    fn admission_blocks_normal_users_only() {
        let config = crate::scenario::ScenarioConfig::default();
        let users = crate::scenario::drop_users(&config, 3).unwrap();
        let policy = AccessPolicy { mc_access: McAccess::AnyNetwork, block_normal_users: true };
        let (admitted, blocked) = apply_admission(&users, &policy);
        assert_eq!(admitted.len(), 15);
        assert_eq!(blocked.len(), 100);
        assert!(admitted.iter().all(|&i| users[i].class == UserClass::Mc));

        let open = AccessPolicy::default();
        let (admitted, blocked) = apply_admission(&users, &open);
        assert_eq!(admitted.len(), 115);
        assert!(blocked.is_empty());

        let report = TrafficReport::admission_blocked(20, &users[20]);
        assert_eq!(report.dl.served_bps, 0.0);
        assert_eq!(report.dl.dropped_bps, report.dl.req_bps);
        assert_eq!(report.drop_reason, DropReason::AdmissionBlocked);
    }

    proptest! {
        #[test]
        fn allocation_never_exceeds_carrier(
            demands in proptest::collection::vec((0.0f64..20e6, 0.1f64..8.0), 1..20)
        ) {
            let requests: Vec<AllocationRequest> = demands
                .iter()
                .enumerate()
                .map(|(i, &(req, per_hz))| request(i, if i % 3 == 0 { UserClass::Mc } else { UserClass::Normal }, req, per_hz))
                .collect();
            let alloc = allocate_cell(0, Direction::Ul, &requests, 10e6);
            let total: f64 = alloc.allocations.iter().map(|(_, hz)| hz).sum();
            prop_assert!(total <= 10e6 + 1e-6);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&alloc.load));
        }

        #[test]
        fn removing_a_user_never_shrinks_other_allocations(
            demands in proptest::collection::vec((1e5f64..15e6, 0.2f64..6.0), 2..15),
            removed in 0usize..14,
        ) {
            prop_assume!(removed < demands.len());
            let requests: Vec<AllocationRequest> = demands
                .iter()
                .enumerate()
                .map(|(i, &(req, per_hz))| request(i, UserClass::Normal, req, per_hz))
                .collect();
            let full = allocate_cell(0, Direction::Dl, &requests, 10e6);
            let reduced_requests: Vec<AllocationRequest> = requests
                .iter()
                .filter(|r| r.user_id != removed)
                .copied()
                .collect();
            let reduced = allocate_cell(0, Direction::Dl, &reduced_requests, 10e6);
            for r in &reduced_requests {
                prop_assert!(
                    reduced.allocated_hz(r.user_id) >= full.allocated_hz(r.user_id) - 1e-9,
                    "user {} shrank from {} to {}",
                    r.user_id,
                    full.allocated_hz(r.user_id),
                    reduced.allocated_hz(r.user_id)
                );
            }
        }

        #[test]
        fn accounting_identity_random(
            req in 0.0f64..10e6,
            alloc in 0.0f64..10e6,
            sinr in -30.0f64..50.0,
            dropped in proptest::bool::ANY,
        ) {
            let model = LinkRateModel::default();
            let t = account(req, dropped, crate::radio::link_rate_bps(sinr, alloc, &model));
            let residue = t.req_bps - t.dropped_bps - t.blocked_bps - t.served_bps;
            prop_assert!(residue.abs() <= 1e-9 * t.req_bps.max(1.0));
            prop_assert!(t.served_bps >= 0.0 && t.dropped_bps >= 0.0 && t.blocked_bps >= 0.0);
            prop_assert!(t.served_bps <= t.req_bps);
        }
    }

    // -- cell selection ----------------------------------------------------

    use crate::propagation::{build_link_gains, AntennaConfig, ChannelSwitches};
    use crate::scenario::{Position, ScenarioConfig, SectorInstance, ServiceProfile, UserSpec};

    fn omni_sector(
        sector_id: usize,
        site_index: usize,
        x: f64,
        y: f64,
        network: NetworkId,
        tx_power_dbm: f64,
    ) -> SectorInstance {
        SectorInstance {
            sector_id,
            site_index,
            network,
            position: Position { x, y, z: 30.0 },
            azimuth_deg: 0.0,
            tx_power_dbm,
            antenna: AntennaConfig::omni(5.0),
        }
    }

    fn user_at(x: f64, y: f64, class: UserClass) -> UserSpec {
        UserSpec {
            position: Position { x, y, z: 1.5 },
            class,
            tx_power_dbm: 23.0,
            noise_figure_db: 9.0,
            service: ServiceProfile { dl_req_bps: 1e6, ul_req_bps: 0.5e6 },
        }
    }

    fn deterministic_gains(
        sectors: &[SectorInstance],
        users: &[UserSpec],
    ) -> crate::propagation::LinkGainTable {
        build_link_gains(
            sectors,
            users,
            &crate::propagation::RmaParams::default(),
            ChannelSwitches { enable_shadowing: false, force_los: true },
            1,
        )
    }

    #[test]
    fn select_cell_follows_policy_and_power() {
        // Deployable close by, macro far away.
        let sectors = vec![
            omni_sector(0, 0, 8_000.0, 0.0, NetworkId::Public, 49.0),
            omni_sector(1, 1, 200.0, 0.0, NetworkId::Deployable, 40.0),
        ];
        let users = vec![user_at(0.0, 0.0, UserClass::Mc), user_at(0.0, 0.0, UserClass::Normal)];
        let gains = deterministic_gains(&sectors, &users);

        let any = AccessPolicy { mc_access: McAccess::AnyNetwork, block_normal_users: false };
        let att = select_cell(0, &users[0], &sectors, &gains, &any).unwrap();
        assert_eq!(att.serving_sector_id, 1, "MC user should take the stronger deployable");

        // Normal users never leave the public network even when the
        // deployable is stronger.
        let att = select_cell(1, &users[1], &sectors, &gains, &any).unwrap();
        assert_eq!(att.serving_sector_id, 0);

        // With the macro closer, a deployable-only MC user still attaches
        // to the deployable.
        let sectors_near_macro = vec![
            omni_sector(0, 0, 300.0, 0.0, NetworkId::Public, 49.0),
            omni_sector(1, 1, 5_000.0, 0.0, NetworkId::Deployable, 40.0),
        ];
        let gains2 = deterministic_gains(&sectors_near_macro, &users);
        let dep_only = AccessPolicy { mc_access: McAccess::DeployableOnly, block_normal_users: false };
        let att = select_cell(0, &users[0], &sectors_near_macro, &gains2, &dep_only).unwrap();
        assert_eq!(att.serving_sector_id, 1);

        // No deployable sector at all: the allowed set is empty.
        let only_macro = vec![omni_sector(0, 0, 300.0, 0.0, NetworkId::Public, 49.0)];
        let gains3 = deterministic_gains(&only_macro, &users);
        assert!(matches!(
            select_cell(0, &users[0], &only_macro, &gains3, &dep_only),
            Err(Error::NoAllowedSector { user_id: 0 })
        ));
    }

    #[test]
    fn select_cell_breaks_ties_by_lowest_sector_id() {
        let sectors = vec![
            omni_sector(0, 0, 1_000.0, 0.0, NetworkId::Public, 49.0),
            omni_sector(1, 0, 1_000.0, 0.0, NetworkId::Public, 49.0),
        ];
        let users = vec![user_at(0.0, 0.0, UserClass::Normal)];
        let gains = deterministic_gains(&sectors, &users);
        let att = select_cell(0, &users[0], &sectors, &gains, &AccessPolicy::default()).unwrap();
        assert_eq!(att.serving_sector_id, 0);
    }

    proptest! {
        #[test]
        fn select_cell_invariant_under_constant_power_offset(
            offset in -40.0f64..40.0,
            powers in proptest::collection::vec(20.0f64..60.0, 4),
        ) {
            let mut sectors: Vec<SectorInstance> = powers
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    omni_sector(i, i, 500.0 + 700.0 * i as f64, 300.0 * i as f64, NetworkId::Public, p)
                })
                .collect();
            let users = vec![user_at(0.0, 0.0, UserClass::Normal)];
            let gains = deterministic_gains(&sectors, &users);
            let policy = AccessPolicy::default();
            let before = select_cell(0, &users[0], &sectors, &gains, &policy).unwrap();
            for s in &mut sectors {
                s.tx_power_dbm += offset;
            }
            let after = select_cell(0, &users[0], &sectors, &gains, &policy).unwrap();
            prop_assert_eq!(before.serving_sector_id, after.serving_sector_id);
        }
    }

    // -- load coupling -----------------------------------------------------

    fn attach_all(users: &[UserSpec], sectors: &[SectorInstance], gains: &crate::propagation::LinkGainTable) -> Vec<Attachment> {
        users
            .iter()
            .enumerate()
            .map(|(id, u)| select_cell(id, u, sectors, gains, &AccessPolicy::default()).unwrap())
            .collect()
    }

    #[test]
    fn isolated_cell_converges_in_two_iterations() {
        let sectors = vec![omni_sector(0, 0, 0.0, 0.0, NetworkId::Public, 46.0)];
        let users = vec![user_at(150.0, 0.0, UserClass::Normal), user_at(-220.0, 90.0, UserClass::Normal)];
        let gains = deterministic_gains(&sectors, &users);
        let attachments = attach_all(&users, &sectors, &gains);
        let config = ScenarioConfig::default();
        let solution = solve_load_coupling(&sectors, &users, &attachments, &gains, &config);
        assert!(solution.converged);
        assert!(solution.iterations <= 2, "took {} iterations", solution.iterations);
        for link in &solution.links {
            assert!(!link.dl_dropped && !link.ul_dropped);
        }
    }

    #[test]
    fn symmetric_two_cell_instance_has_equal_loads() {
        let sectors = vec![
            omni_sector(0, 0, -1_000.0, 0.0, NetworkId::Public, 46.0),
            omni_sector(1, 1, 1_000.0, 0.0, NetworkId::Public, 46.0),
        ];
        let users = vec![
            user_at(-1_300.0, 0.0, UserClass::Normal),
            user_at(1_300.0, 0.0, UserClass::Normal),
            user_at(-400.0, 0.0, UserClass::Normal),
            user_at(400.0, 0.0, UserClass::Normal),
        ];
        let gains = deterministic_gains(&sectors, &users);
        let attachments = attach_all(&users, &sectors, &gains);
        assert_eq!(attachments[0].serving_sector_id, 0);
        assert_eq!(attachments[1].serving_sector_id, 1);
        let config = ScenarioConfig::default();
        let solution = solve_load_coupling(&sectors, &users, &attachments, &gains, &config);
        assert!(solution.converged);
        assert!((solution.dl_loads[0] - solution.dl_loads[1]).abs() < 1e-9);
        assert!((solution.ul_loads[0] - solution.ul_loads[1]).abs() < 1e-9);
        assert!((solution.links[0].dl_sinr_db - solution.links[1].dl_sinr_db).abs() < 1e-9);
        for load in solution.dl_loads.iter().chain(&solution.ul_loads) {
            assert!((0.0..=1.0).contains(load));
        }
    }

    #[test]
    fn empty_network_has_zero_loads() {
        let sectors = vec![
            omni_sector(0, 0, 0.0, 0.0, NetworkId::Public, 46.0),
            omni_sector(1, 1, 2_000.0, 0.0, NetworkId::Public, 46.0),
        ];
        let users: Vec<UserSpec> = Vec::new();
        let gains = deterministic_gains(&sectors, &users);
        let config = ScenarioConfig::default();
        let solution = solve_load_coupling(&sectors, &users, &[], &gains, &config);
        assert!(solution.converged);
        assert_eq!(solution.dl_loads, vec![0.0, 0.0]);
        assert_eq!(solution.ul_loads, vec![0.0, 0.0]);
    }

    #[test]
    fn reported_sinr_ignores_idle_interfering_cells() {
        // One user attached to sector 0; sector 1 carries nothing, so at
        // the solution its load weight must be zero and the reported SINR
        // must equal the interference-free SNR from the radio op.
        let sectors = vec![
            omni_sector(0, 0, 0.0, 0.0, NetworkId::Public, 46.0),
            omni_sector(1, 1, 1_500.0, 0.0, NetworkId::Public, 46.0),
        ];
        let users = vec![user_at(100.0, 0.0, UserClass::Normal)];
        let gains = deterministic_gains(&sectors, &users);
        let attachments = attach_all(&users, &sectors, &gains);
        let config = ScenarioConfig::default();
        let solution = solve_load_coupling(&sectors, &users, &attachments, &gains, &config);
        assert_eq!(solution.dl_loads[1], 0.0);

        let rx = sectors[0].tx_power_dbm + gains.gain_db(0, 0);
        let noise = noise_power_dbm(config.bandwidth_hz, config.noise.ue_noise_figure_db);
        let snr = radio::dl_sinr_db(rx, &[], noise);
        assert!(
            (solution.links[0].dl_sinr_db - snr).abs() < 1e-9,
            "solver SINR {} vs interference-free SNR {snr}",
            solution.links[0].dl_sinr_db
        );
    }

    #[test]
    fn sinr_diagnostic_csv_shape() {
        let config = crate::scenario::build_preset(
            crate::scenario::ScenarioPreset::MacroTruck,
            &crate::scenario::ScenarioOverrides::default(),
        )
        .unwrap();
        let result = crate::experiment::run_realization(&config, 3).unwrap();
        let csv = sinr_diagnostic_csv(&result.reports);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "user_id,direction,sinr_db,serving_sector");
        // Two rows per attached user.
        assert_eq!(csv.lines().count(), 1 + 2 * 115);
        assert!(csv.contains(",dl,") && csv.contains(",ul,"));
    }

    #[test]
    fn traffic_csv_roundtrip() {
        let reports = vec![
            TrafficReport {
                user_id: 0,
                class: UserClass::Mc,
                serving_sector: Some(6),
                network: Some(NetworkId::Deployable),
                dl_sinr_db: Some(21.1234),
                ul_sinr_db: Some(7.5),
                dl: DirectionTraffic { req_bps: 2e6, dropped_bps: 0.0, blocked_bps: 0.5e6, served_bps: 1.5e6 },
                ul: DirectionTraffic { req_bps: 0.5e6, dropped_bps: 0.0, blocked_bps: 0.0, served_bps: 0.5e6 },
                drop_reason: DropReason::None,
            },
            TrafficReport::admission_blocked(
                1,
                &UserSpec {
                    position: crate::scenario::Position { x: 0.0, y: 0.0, z: 1.5 },
                    class: UserClass::Normal,
                    tx_power_dbm: 23.0,
                    noise_figure_db: 9.0,
                    service: crate::scenario::ServiceProfile { dl_req_bps: 1e6, ul_req_bps: 0.5e6 },
                },
            ),
        ];
        let csv = traffic_reports_to_csv(&reports);
        let rows = parse_traffic_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].serving_sector, Some(6));
        assert_eq!(rows[0].network.as_deref(), Some("deployable"));
        assert_eq!(rows[0].dl_mbps, [2.0, 0.0, 0.5, 1.5]);
        assert_eq!(rows[1].serving_sector, None);
        assert_eq!(rows[1].dl_mbps, [1.0, 1.0, 0.0, 0.0]);

        assert!(parse_traffic_csv("bogus\n1,2,3").is_err());
    }
}
