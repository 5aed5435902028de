//! Deployment scenarios: base stations, users, access policies, the four
//! built-in presets, and the rigid cluster translation used by the
//! distance sweep.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::AntennaConfig;
use crate::radio::{LinkRateModel, NoiseModel, UplinkPowerControl};

// ---------------------------------------------------------------------------
// Geometry and identity
// ---------------------------------------------------------------------------

/// A point in local east/north coordinates with height above ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn distance_2d(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Which network a base station belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkId {
    Public,
    Deployable,
}

impl std::fmt::Display for NetworkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NetworkId::Public => write!(f, "public"),
            NetworkId::Deployable => write!(f, "deployable"),
        }
    }
}

/// Base station hardware class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsKind {
    Macro,
    Truck,
    Uav,
}

impl BsKind {
    /// Sector count is fixed per hardware class.
    pub fn expected_sectors(self) -> usize {
        match self {
            BsKind::Macro | BsKind::Truck => 3,
            BsKind::Uav => 1,
        }
    }
}

/// One base station site.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BaseStationSpec {
    pub kind: BsKind,
    /// Site position; `z` is the antenna height above ground.
    pub site: Position,
    /// Transmit power per sector, dBm, over the full carrier bandwidth.
    pub tx_power_dbm: f64,
    pub n_sectors: usize,
    pub antenna: AntennaConfig,
    pub network: NetworkId,
    /// Rotation applied to the tri-sector azimuth set {0, 120, 240}.
    #[serde(default)]
    pub azimuth_offset_deg: f64,
}

/// One transmitting/receiving cell sector, expanded from a site.
#[derive(Debug, Clone, Copy)]
pub struct SectorInstance {
    /// Global sector index across the whole deployment.
    pub sector_id: usize,
    /// Index of the parent base station in `ScenarioConfig::base_stations`.
    pub site_index: usize,
    pub network: NetworkId,
    pub position: Position,
    /// Boresight bearing, degrees counterclockwise from +x.
    pub azimuth_deg: f64,
    pub tx_power_dbm: f64,
    pub antenna: AntennaConfig,
}

// ---------------------------------------------------------------------------
// Users and services
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserClass {
    Normal,
    Mc,
}

impl std::fmt::Display for UserClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UserClass::Normal => write!(f, "normal"),
            UserClass::Mc => write!(f, "mc"),
        }
    }
}

/// Requested traffic per direction, bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProfile {
    pub dl_req_bps: f64,
    pub ul_req_bps: f64,
}

/// One dropped user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub position: Position,
    pub class: UserClass,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub service: ServiceProfile,
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Networks a mission-critical user may attach to. Normal users are always
/// restricted to the public network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McAccess {
    DeployableOnly,
    AnyNetwork,
}

impl std::str::FromStr for McAccess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deployable-only" => Ok(McAccess::DeployableOnly),
            "any-network" => Ok(McAccess::AnyNetwork),
            other => Err(Error::InvalidConfig(format!(
                "unknown access policy '{other}' (expected 'deployable-only' or 'any-network')"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccessPolicy {
    pub mc_access: McAccess,
    /// Admission control that excludes every normal user before attachment.
    pub block_normal_users: bool,
}

impl Default for AccessPolicy {
    fn default() -> Self {
        Self {
            mc_access: McAccess::AnyNetwork,
            block_normal_users: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McArea {
    pub center: Position,
    pub radius_m: f64,
}

/// Channel model switches and environment parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    pub avg_building_height_m: f64,
    pub street_width_m: f64,
    /// Lognormal shadowing; off by default so that repeated runs reflect
    /// geometry rather than fading tails. The shadowing draw machinery is
    /// always exercised; this only zeroes the applied value.
    pub enable_shadowing: bool,
    /// Force every link to LOS instead of sampling the LOS probability.
    pub force_los: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            avg_building_height_m: 5.0,
            street_width_m: 20.0,
            enable_shadowing: false,
            force_los: false,
        }
    }
}

/// Full declarative description of one coexistence deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub base_stations: Vec<BaseStationSpec>,
    pub mc_area: McArea,
    pub n_mc_users: usize,
    pub n_normal_per_macro: usize,
    pub normal_user_radius_m: f64,
    pub policy: AccessPolicy,
    pub carrier_hz: f64,
    /// Bandwidth per direction (FDD).
    pub bandwidth_hz: f64,
    pub seed: u64,
    /// A direction whose SINR falls below this threshold is dropped.
    pub drop_sinr_threshold_db: f64,
    pub mc_service: ServiceProfile,
    pub normal_service: ServiceProfile,
    pub user_tx_power_dbm: f64,
    pub noise: NoiseModel,
    pub rate_model: LinkRateModel,
    pub power_control: UplinkPowerControl,
    pub propagation: PropagationConfig,
    /// Treat every interfering cell as fully loaded instead of weighting by
    /// its converged load.
    pub full_load_interference: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            base_stations: vec![
                macro_site(Position { x: -7_500.0, y: -7_500.0, z: MACRO_HEIGHT_M }),
                macro_site(Position { x: 7_500.0, y: 7_500.0, z: MACRO_HEIGHT_M }),
            ],
            mc_area: McArea {
                center: Position { x: 0.0, y: 0.0, z: 0.0 },
                radius_m: 900.0,
            },
            n_mc_users: 15,
            n_normal_per_macro: 50,
            normal_user_radius_m: 5_000.0,
            policy: AccessPolicy::default(),
            carrier_hz: 700e6,
            bandwidth_hz: 10e6,
            seed: 1,
            drop_sinr_threshold_db: -3.0,
            mc_service: ServiceProfile { dl_req_bps: 2e6, ul_req_bps: 0.5e6 },
            normal_service: ServiceProfile { dl_req_bps: 1e6, ul_req_bps: 0.5e6 },
            user_tx_power_dbm: 23.0,
            noise: NoiseModel::default(),
            rate_model: LinkRateModel::default(),
            power_control: UplinkPowerControl::default(),
            propagation: PropagationConfig::default(),
            full_load_interference: false,
        }
    }
}

pub const MACRO_HEIGHT_M: f64 = 32.0;
pub const TRUCK_HEIGHT_M: f64 = 20.0;
pub const UAV_HEIGHT_M: f64 = 25.0;

pub const MACRO_TX_DBM: f64 = 49.0;
pub const TRUCK_TX_DBM: f64 = 46.0;
pub const TRUCK_LOW_TX_DBM: f64 = 33.0;
pub const UAV_TX_DBM: f64 = 40.0;
pub const UAV_LOW_TX_DBM: f64 = 24.0;

pub const USER_HEIGHT_M: f64 = 1.5;

const MACRO_BORESIGHT_DBI: f64 = 15.0;
const TRUCK_BORESIGHT_DBI: f64 = 21.0;
const UAV_BORESIGHT_DBI: f64 = 12.0;
/// Truck sector rotation that splits the MC area evenly between two
/// sectors when the truck sits on the boundary facing the area center.
const TRUCK_AZIMUTH_OFFSET_DEG: f64 = -15.0;

fn macro_site(site: Position) -> BaseStationSpec {
    BaseStationSpec {
        kind: BsKind::Macro,
        site,
        tx_power_dbm: MACRO_TX_DBM,
        n_sectors: 3,
        antenna: AntennaConfig::tri_sector(MACRO_BORESIGHT_DBI),
        network: NetworkId::Public,
        azimuth_offset_deg: 0.0,
    }
}

impl ScenarioConfig {
    /// Expand base stations into the flat sector list used by the
    /// simulation. Tri-sector sites use azimuths {0, 120, 240} plus the
    /// site rotation; single-sector sites get one sector at the rotation.
    pub fn sectors(&self) -> Vec<SectorInstance> {
        let mut sectors = Vec::new();
        for (site_index, bs) in self.base_stations.iter().enumerate() {
            for k in 0..bs.n_sectors {
                sectors.push(SectorInstance {
                    sector_id: sectors.len(),
                    site_index,
                    network: bs.network,
                    position: bs.site,
                    azimuth_deg: bs.azimuth_offset_deg + 360.0 * k as f64 / bs.n_sectors as f64,
                    tx_power_dbm: bs.tx_power_dbm,
                    antenna: bs.antenna,
                });
            }
        }
        sectors
    }

    pub fn deployable_indices(&self) -> Vec<usize> {
        self.base_stations
            .iter()
            .enumerate()
            .filter(|(_, bs)| bs.network == NetworkId::Deployable)
            .map(|(i, _)| i)
            .collect()
    }

    /// Validate structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.base_stations.is_empty() {
            return Err(Error::InvalidConfig("no base stations".into()));
        }
        for (i, bs) in self.base_stations.iter().enumerate() {
            if bs.n_sectors != bs.kind.expected_sectors() {
                return Err(Error::InvalidConfig(format!(
                    "base station {i}: {:?} requires {} sectors, got {}",
                    bs.kind,
                    bs.kind.expected_sectors(),
                    bs.n_sectors
                )));
            }
            if !(bs.site.x.is_finite() && bs.site.y.is_finite() && bs.site.z.is_finite()) {
                return Err(Error::InvalidConfig(format!("base station {i}: non-finite position")));
            }
            if bs.site.z < 0.0 {
                return Err(Error::InvalidConfig(format!("base station {i}: negative height")));
            }
            if !bs.tx_power_dbm.is_finite() {
                return Err(Error::InvalidConfig(format!("base station {i}: non-finite tx power")));
            }
        }
        if self.carrier_hz <= 0.0 || self.bandwidth_hz <= 0.0 {
            return Err(Error::InvalidConfig("carrier and bandwidth must be positive".into()));
        }
        if self.mc_area.radius_m <= 0.0 && self.n_mc_users > 0 {
            return Err(Error::InvalidConfig(
                "mc_area.radius_m must be positive when MC users are requested".into(),
            ));
        }
        if self.normal_user_radius_m <= 0.0 && self.n_normal_per_macro > 0 {
            return Err(Error::InvalidConfig(
                "normal_user_radius_m must be positive when normal users are requested".into(),
            ));
        }
        if self.mc_service.dl_req_bps < 0.0
            || self.mc_service.ul_req_bps < 0.0
            || self.normal_service.dl_req_bps < 0.0
            || self.normal_service.ul_req_bps < 0.0
        {
            return Err(Error::InvalidConfig("traffic requirements must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// The four built-in coexistence scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioPreset {
    /// Two public macros only; everyone is served by the public network.
    MacroOnly,
    /// Two public macros with every normal user admission-blocked.
    MacroMc,
    /// Adds a cell-on-wheels at the MC-area edge nearest the first macro.
    MacroTruck,
    /// Adds a cell-on-wings above the MC-area center.
    MacroUav,
}

impl std::str::FromStr for ScenarioPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro-only" => Ok(ScenarioPreset::MacroOnly),
            "macro-mc" => Ok(ScenarioPreset::MacroMc),
            "macro-truck" => Ok(ScenarioPreset::MacroTruck),
            "macro-uav" => Ok(ScenarioPreset::MacroUav),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

impl ScenarioPreset {
    pub const ALL: [ScenarioPreset; 4] = [
        ScenarioPreset::MacroOnly,
        ScenarioPreset::MacroMc,
        ScenarioPreset::MacroTruck,
        ScenarioPreset::MacroUav,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioPreset::MacroOnly => "macro-only",
            ScenarioPreset::MacroMc => "macro-mc",
            ScenarioPreset::MacroTruck => "macro-truck",
            ScenarioPreset::MacroUav => "macro-uav",
        }
    }
}

/// Optional overrides applied on top of a preset.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOverrides {
    pub seed: Option<u64>,
    pub deployable_power_dbm: Option<f64>,
    pub mc_access: Option<McAccess>,
    pub mc_service: Option<ServiceProfile>,
}

/// Build one of the four preset scenarios.
pub fn build_preset(preset: ScenarioPreset, overrides: &ScenarioOverrides) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig::default();

    match preset {
        ScenarioPreset::MacroOnly => {}
        ScenarioPreset::MacroMc => {
            config.policy.block_normal_users = true;
        }
        ScenarioPreset::MacroTruck => {
            // On the MC-area boundary, toward the first macro.
            let center = config.mc_area.center;
            let anchor = config.base_stations[0].site;
            let dx = anchor.x - center.x;
            let dy = anchor.y - center.y;
            let norm = (dx * dx + dy * dy).sqrt();
            let r = config.mc_area.radius_m;
            config.base_stations.push(BaseStationSpec {
                kind: BsKind::Truck,
                site: Position {
                    x: center.x + r * dx / norm,
                    y: center.y + r * dy / norm,
                    z: TRUCK_HEIGHT_M,
                },
                tx_power_dbm: TRUCK_TX_DBM,
                n_sectors: 3,
                antenna: AntennaConfig::tri_sector(TRUCK_BORESIGHT_DBI),
                network: NetworkId::Deployable,
                azimuth_offset_deg: TRUCK_AZIMUTH_OFFSET_DEG,
            });
        }
        ScenarioPreset::MacroUav => {
            config.base_stations.push(BaseStationSpec {
                kind: BsKind::Uav,
                site: Position {
                    x: config.mc_area.center.x,
                    y: config.mc_area.center.y,
                    z: UAV_HEIGHT_M,
                },
                tx_power_dbm: UAV_TX_DBM,
                n_sectors: 1,
                antenna: AntennaConfig::omni(UAV_BORESIGHT_DBI),
                network: NetworkId::Deployable,
                azimuth_offset_deg: 0.0,
            });
        }
    }

    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(power) = overrides.deployable_power_dbm {
        for i in config.deployable_indices() {
            config.base_stations[i].tx_power_dbm = power;
        }
    }
    if let Some(access) = overrides.mc_access {
        config.policy.mc_access = access;
    }
    if let Some(service) = overrides.mc_service {
        config.mc_service = service;
    }

    config.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// User drops
// ---------------------------------------------------------------------------

fn uniform_in_disc(rng: &mut ChaCha8Rng, center: &Position, radius_m: f64) -> Position {
    let r = radius_m * rng.random::<f64>().sqrt();
    let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    Position {
        x: center.x + r * theta.cos(),
        y: center.y + r * theta.sin(),
        z: USER_HEIGHT_M,
    }
}

/// Drop users for one realization: MC users uniform in the MC-area disc,
/// then normal users uniform in a disc around each macro site. The list is
/// a pure function of `(config, seed)`; user ids are list indices.
pub fn drop_users(config: &ScenarioConfig, seed: u64) -> Result<Vec<UserSpec>> {
    if config.n_mc_users > 0 && config.mc_area.radius_m <= 0.0 {
        return Err(Error::InvalidConfig("zero-radius MC area with MC users".into()));
    }
    if config.n_normal_per_macro > 0 && config.normal_user_radius_m <= 0.0 {
        return Err(Error::InvalidConfig("zero-radius normal-user disc with normal users".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::new();
    for _ in 0..config.n_mc_users {
        users.push(UserSpec {
            position: uniform_in_disc(&mut rng, &config.mc_area.center, config.mc_area.radius_m),
            class: UserClass::Mc,
            tx_power_dbm: config.user_tx_power_dbm,
            noise_figure_db: config.noise.ue_noise_figure_db,
            service: config.mc_service,
        });
    }
    for bs in &config.base_stations {
        if bs.kind != BsKind::Macro {
            continue;
        }
        for _ in 0..config.n_normal_per_macro {
            users.push(UserSpec {
                position: uniform_in_disc(&mut rng, &bs.site, config.normal_user_radius_m),
                class: UserClass::Normal,
                tx_power_dbm: config.user_tx_power_dbm,
                noise_figure_db: config.noise.ue_noise_figure_db,
                service: config.normal_service,
            });
        }
    }
    Ok(users)
}

// ---------------------------------------------------------------------------
// Cluster translation
// ---------------------------------------------------------------------------

/// Rigidly translate the MC cluster (MC-area center, MC users, deployable
/// BS) so that the deployable sits on the ray from the reference macro
/// through the original MC-area center at `distance_m` from the macro.
///
/// The reference macro is the public macro nearest the deployable; ties go
/// to the lowest index. Macros and normal users stay fixed, and all
/// pairwise offsets within the cluster are preserved exactly.
pub fn translate_mc_cluster(
    config: &ScenarioConfig,
    users: &[UserSpec],
    distance_m: f64,
) -> Result<(ScenarioConfig, Vec<UserSpec>)> {
    if distance_m < 0.0 {
        return Err(Error::NegativeDistance(distance_m));
    }
    let deployables = config.deployable_indices();
    if deployables.len() != 1 {
        return Err(Error::DeployableCount(deployables.len()));
    }
    let deployable_index = deployables[0];
    let deployable_site = config.base_stations[deployable_index].site;

    let reference = config
        .base_stations
        .iter()
        .enumerate()
        .filter(|(_, bs)| bs.network == NetworkId::Public)
        .min_by(|(ia, a), (ib, b)| {
            let da = a.site.distance_2d(&deployable_site);
            let db = b.site.distance_2d(&deployable_site);
            da.total_cmp(&db).then(ia.cmp(ib))
        })
        .map(|(_, bs)| bs.site)
        .ok_or_else(|| Error::InvalidConfig("no public macro to sweep against".into()))?;

    let center = config.mc_area.center;
    let dir_x = center.x - reference.x;
    let dir_y = center.y - reference.y;
    let norm = (dir_x * dir_x + dir_y * dir_y).sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidConfig(
            "MC-area center coincides with the reference macro; translation direction undefined".into(),
        ));
    }
    let ux = dir_x / norm;
    let uy = dir_y / norm;

    let target_x = reference.x + distance_m * ux;
    let target_y = reference.y + distance_m * uy;
    let shift_x = target_x - deployable_site.x;
    let shift_y = target_y - deployable_site.y;

    let mut new_config = config.clone();
    new_config.base_stations[deployable_index].site.x += shift_x;
    new_config.base_stations[deployable_index].site.y += shift_y;
    new_config.mc_area.center.x += shift_x;
    new_config.mc_area.center.y += shift_y;

    let new_users = users
        .iter()
        .map(|u| {
            let mut user = u.clone();
            if user.class == UserClass::Mc {
                user.position.x += shift_x;
                user.position.y += shift_y;
            }
            user
        })
        .collect();

    Ok((new_config, new_users))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
