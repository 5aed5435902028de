//! Rural-macro propagation: pathloss, LOS probability, shadow fading,
//! sector antenna patterns, and per-link cell gain tables.
//!
//! The pathloss model is the rural-macro (RMa) two-slope model with an
//! NLOS floor, evaluated directly from its closed-form expressions. Cell
//! gain for a sector-user link is `antenna_gain - pathloss + shadowing`,
//! and the same value is used for DL and UL (reciprocity).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scenario::{SectorInstance, UserSpec};
use crate::seed::mix3;

/// Propagation speed used by the breakpoint-distance formula, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 3.0e8;

/// Validity limit of the NLOS expression; links beyond it are evaluated by
/// extrapolation and flagged in diagnostics.
pub const NLOS_VALIDITY_LIMIT_M: f64 = 5_000.0;

const MIN_MODEL_DISTANCE_M: f64 = 10.0;

// ---------------------------------------------------------------------------
// Parameters and link state
// ---------------------------------------------------------------------------

/// Environment parameters of the rural-macro pathloss model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RmaParams {
    /// Average building height, meters (nominal range 5..50).
    pub avg_building_height_m: f64,
    /// Average street width, meters.
    pub street_width_m: f64,
    /// Carrier frequency, GHz.
    pub carrier_ghz: f64,
}

impl Default for RmaParams {
    fn default() -> Self {
        Self {
            avg_building_height_m: 5.0,
            street_width_m: 20.0,
            carrier_ghz: 0.7,
        }
    }
}

impl RmaParams {
    pub fn with_carrier_hz(carrier_hz: f64) -> Self {
        Self {
            carrier_ghz: carrier_hz / 1e9,
            ..Self::default()
        }
    }
}

/// LOS/NLOS state of a site-user link, sampled once per realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkState {
    Los,
    Nlos,
}

impl std::fmt::Display for LinkState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkState::Los => write!(f, "LOS"),
            LinkState::Nlos => write!(f, "NLOS"),
        }
    }
}

// ---------------------------------------------------------------------------
// Pathloss
// ---------------------------------------------------------------------------

/// Rural-macro LOS probability as a function of 2-D distance.
pub fn los_probability(d2d_m: f64) -> f64 {
    if d2d_m <= 10.0 {
        1.0
    } else {
        (-(d2d_m - 10.0) / 1000.0).exp()
    }
}

/// Breakpoint distance of the two-slope LOS model, meters.
pub fn breakpoint_distance_m(h_bs_m: f64, h_ut_m: f64, carrier_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * h_bs_m * h_ut_m * carrier_hz / SPEED_OF_LIGHT_M_S
}

/// First-slope LOS pathloss evaluated at 3-D distance `d3d_m`.
fn pl1_db(d3d_m: f64, params: &RmaParams) -> f64 {
    let h = params.avg_building_height_m;
    let fc = params.carrier_ghz;
    let h172 = h.powf(1.72);
    20.0 * (40.0 * std::f64::consts::PI * d3d_m * fc / 3.0).log10()
        + (0.03 * h172).min(10.0) * d3d_m.log10()
        - (0.044 * h172).min(14.77)
        + 0.002 * h.log10() * d3d_m
}

fn pathloss_los_db(d2d_m: f64, d3d_m: f64, h_bs_m: f64, h_ut_m: f64, params: &RmaParams) -> f64 {
    let d_bp = breakpoint_distance_m(h_bs_m, h_ut_m, params.carrier_ghz * 1e9);
    if d2d_m <= d_bp {
        pl1_db(d3d_m, params)
    } else {
        pl1_db(d_bp, params) + 40.0 * (d3d_m / d_bp).log10()
    }
}

fn pathloss_nlos_term_db(d3d_m: f64, h_bs_m: f64, h_ut_m: f64, params: &RmaParams) -> f64 {
    let h = params.avg_building_height_m;
    let w = params.street_width_m;
    let fc = params.carrier_ghz;
    161.04 - 7.1 * w.log10() + 7.5 * h.log10()
        - (24.37 - 3.7 * (h / h_bs_m).powi(2)) * h_bs_m.log10()
        + (43.42 - 3.1 * h_bs_m.log10()) * (d3d_m.log10() - 3.0)
        + 20.0 * fc.log10()
        - (3.2 * (11.75 * h_ut_m).log10().powi(2) - 4.97)
}

/// Rural-macro pathloss in dB.
///
/// LOS uses the two-slope model (slope change at the breakpoint distance);
/// NLOS is the maximum of the LOS value and the NLOS expression. Distances
/// below 10 m are clamped to 10 m, which is the model's lower limit.
pub fn rma_pathloss_db(
    state: LinkState,
    d2d_m: f64,
    d3d_m: f64,
    h_bs_m: f64,
    h_ut_m: f64,
    params: &RmaParams,
) -> f64 {
    let d2d = d2d_m.max(MIN_MODEL_DISTANCE_M);
    let d3d = d3d_m.max(MIN_MODEL_DISTANCE_M);
    let los = pathloss_los_db(d2d, d3d, h_bs_m, h_ut_m, params);
    match state {
        LinkState::Los => los,
        LinkState::Nlos => los.max(pathloss_nlos_term_db(d3d, h_bs_m, h_ut_m, params)),
    }
}

// ---------------------------------------------------------------------------
// Shadowing
// ---------------------------------------------------------------------------

/// Shadow-fading standard deviation for a link state, dB.
pub fn shadowing_sigma_db(state: LinkState, beyond_breakpoint: bool) -> f64 {
    match (state, beyond_breakpoint) {
        (LinkState::Los, false) => 4.0,
        (LinkState::Los, true) => 6.0,
        (LinkState::Nlos, _) => 8.0,
    }
}

/// Draw one zero-mean lognormal shadowing value in dB from an explicit
/// stream. Draws are i.i.d. per link; no spatial correlation is modeled.
pub fn sample_shadowing(state: LinkState, beyond_breakpoint: bool, rng: &mut ChaCha8Rng) -> f64 {
    let sigma = shadowing_sigma_db(state, beyond_breakpoint);
    Normal::new(0.0, sigma).expect("sigma > 0").sample(rng)
}

// ---------------------------------------------------------------------------
// Antennas
// ---------------------------------------------------------------------------

/// Horizontal antenna pattern of a sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntennaPattern {
    TriSector,
    Omni,
}

/// Antenna configuration of one base station's sectors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AntennaConfig {
    pub pattern: AntennaPattern,
    pub boresight_gain_dbi: f64,
    /// Half-power beamwidth of the sector pattern, degrees.
    #[serde(default = "default_phi_3db")]
    pub phi_3db_deg: f64,
    /// Attenuation floor of the pattern, dB.
    #[serde(default = "default_front_back")]
    pub front_back_ratio_db: f64,
}

fn default_phi_3db() -> f64 {
    65.0
}

fn default_front_back() -> f64 {
    30.0
}

impl AntennaConfig {
    pub fn tri_sector(boresight_gain_dbi: f64) -> Self {
        Self {
            pattern: AntennaPattern::TriSector,
            boresight_gain_dbi,
            phi_3db_deg: default_phi_3db(),
            front_back_ratio_db: default_front_back(),
        }
    }

    pub fn omni(boresight_gain_dbi: f64) -> Self {
        Self {
            pattern: AntennaPattern::Omni,
            boresight_gain_dbi,
            phi_3db_deg: default_phi_3db(),
            front_back_ratio_db: default_front_back(),
        }
    }
}

/// Wrap an angle difference into (-180, 180] degrees.
fn wrap_angle_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    a
}

/// Horizontal antenna gain toward a bearing, dBi.
///
/// The sector pattern is `boresight - min(12 (phi/phi_3dB)^2, A_m)`; an
/// omni antenna has constant gain.
pub fn antenna_gain_dbi(antenna: &AntennaConfig, sector_azimuth_deg: f64, bearing_deg: f64) -> f64 {
    match antenna.pattern {
        AntennaPattern::Omni => antenna.boresight_gain_dbi,
        AntennaPattern::TriSector => {
            let phi = wrap_angle_deg(bearing_deg - sector_azimuth_deg);
            let attenuation =
                (12.0 * (phi / antenna.phi_3db_deg).powi(2)).min(antenna.front_back_ratio_db);
            antenna.boresight_gain_dbi - attenuation
        }
    }
}

// ---------------------------------------------------------------------------
// Cell gain and link tables
// ---------------------------------------------------------------------------

/// Composite gain of one sector-user link in dB: antenna gain minus
/// pathloss plus shadowing. Reused for DL and UL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGain {
    pub gain_db: f64,
}

/// Cell gain for one sector-user link given a fixed link state and
/// shadowing draw for the sector's site.
pub fn cell_gain(
    sector: &SectorInstance,
    user: &UserSpec,
    state: LinkState,
    shadowing_db: f64,
    params: &RmaParams,
) -> CellGain {
    let dx = user.position.x - sector.position.x;
    let dy = user.position.y - sector.position.y;
    let d2d = (dx * dx + dy * dy).sqrt();
    let dz = sector.position.z - user.position.z;
    let d3d = (d2d * d2d + dz * dz).sqrt();
    let bearing = dy.atan2(dx).to_degrees();
    let antenna_db = antenna_gain_dbi(&sector.antenna, sector.azimuth_deg, bearing);
    let pathloss = rma_pathloss_db(state, d2d, d3d, sector.position.z, user.position.z, params);
    CellGain {
        gain_db: antenna_db - pathloss + shadowing_db,
    }
}

/// One fully resolved sector-user link.
#[derive(Debug, Clone, Copy)]
pub struct LinkEntry {
    pub state: LinkState,
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    pub antenna_db: f64,
    pub gain_db: f64,
    /// Set when the NLOS expression was evaluated beyond its stated
    /// distance range.
    pub out_of_validity: bool,
}

/// Per-(sector, user) cell gains for one realization, with diagnostics.
#[derive(Debug, Clone)]
pub struct LinkGainTable {
    pub n_sectors: usize,
    pub n_users: usize,
    entries: Vec<LinkEntry>,
}

impl LinkGainTable {
    pub fn entry(&self, sector_id: usize, user_id: usize) -> &LinkEntry {
        &self.entries[sector_id * self.n_users + user_id]
    }

    pub fn gain_db(&self, sector_id: usize, user_id: usize) -> f64 {
        self.entry(sector_id, user_id).gain_db
    }

    /// Diagnostic CSV dump, one row per link.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sector_id,user_id,state,pathloss_db,shadowing_db,antenna_db,gain_db\n");
        for s in 0..self.n_sectors {
            for u in 0..self.n_users {
                let e = self.entry(s, u);
                out.push_str(&format!(
                    "{s},{u},{},{:.6},{:.6},{:.6},{:.6}\n",
                    e.state, e.pathloss_db, e.shadowing_db, e.antenna_db, e.gain_db
                ));
            }
        }
        out
    }
}

/// Switches controlling the stochastic parts of the channel.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSwitches {
    pub enable_shadowing: bool,
    pub force_los: bool,
}

/// Build the cell-gain table for one realization.
///
/// LOS state and shadowing are drawn once per (site, user) pair from a
/// stream keyed on `(prop_seed, site, user)` and shared by all sectors of
/// the site; only the antenna gain differs between co-site sectors.
pub fn build_link_gains(
    sectors: &[SectorInstance],
    users: &[UserSpec],
    params: &RmaParams,
    switches: ChannelSwitches,
    prop_seed: u64,
) -> LinkGainTable {
    let n_sites = sectors.iter().map(|s| s.site_index).max().map_or(0, |m| m + 1);
    let mut site_draws: Vec<Vec<(LinkState, f64)>> = Vec::with_capacity(n_sites);
    // Site positions are shared by their sectors; index by first sector seen.
    let mut site_position = vec![None; n_sites];
    for sector in sectors {
        if site_position[sector.site_index].is_none() {
            site_position[sector.site_index] = Some(sector.position);
        }
    }
    for site in 0..n_sites {
        let pos = site_position[site].expect("site with no sectors");
        let mut draws = Vec::with_capacity(users.len());
        for (u, user) in users.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix3(prop_seed, site as u64, u as u64));
            let dx = user.position.x - pos.x;
            let dy = user.position.y - pos.y;
            let d2d = (dx * dx + dy * dy).sqrt();
            let los_draw: f64 = rand::Rng::random(&mut rng);
            let state = if switches.force_los || los_draw < los_probability(d2d) {
                LinkState::Los
            } else {
                LinkState::Nlos
            };
            let beyond = d2d > breakpoint_distance_m(pos.z, user.position.z, params.carrier_ghz * 1e9);
            let shadow = sample_shadowing(state, beyond, &mut rng);
            let shadow = if switches.enable_shadowing { shadow } else { 0.0 };
            draws.push((state, shadow));
        }
        site_draws.push(draws);
    }

    let n_users = users.len();
    let mut entries = Vec::with_capacity(sectors.len() * n_users);
    for sector in sectors {
        for (u, user) in users.iter().enumerate() {
            let (state, shadowing_db) = site_draws[sector.site_index][u];
            let dx = user.position.x - sector.position.x;
            let dy = user.position.y - sector.position.y;
            let d2d = (dx * dx + dy * dy).sqrt();
            let dz = sector.position.z - user.position.z;
            let d3d = (d2d * d2d + dz * dz).sqrt();
            let bearing = dy.atan2(dx).to_degrees();
            let antenna_db = antenna_gain_dbi(&sector.antenna, sector.azimuth_deg, bearing);
            let pathloss_db =
                rma_pathloss_db(state, d2d, d3d, sector.position.z, user.position.z, params);
            entries.push(LinkEntry {
                state,
                pathloss_db,
                shadowing_db,
                antenna_db,
                gain_db: antenna_db - pathloss_db + shadowing_db,
                out_of_validity: state == LinkState::Nlos && d2d > NLOS_VALIDITY_LIMIT_M,
            });
        }
    }
    LinkGainTable {
        n_sectors: sectors.len(),
        n_users,
        entries,
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
