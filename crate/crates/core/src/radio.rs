//! Link-level arithmetic: noise power, DL/UL SINR under load-weighted
//! interference, uplink power control, and the SINR-to-rate mapping.

use serde::{Deserialize, Serialize};

use crate::units::{db_to_linear, dbm_to_mw, linear_to_db, mw_to_dbm, THERMAL_NOISE_DBM_HZ};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Receiver noise assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub thermal_density_dbm_hz: f64,
    pub ue_noise_figure_db: f64,
    pub bs_noise_figure_db: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            thermal_density_dbm_hz: THERMAL_NOISE_DBM_HZ,
            ue_noise_figure_db: 9.0,
            bs_noise_figure_db: 5.0,
        }
    }
}

/// Fraction of a cell's carrier bandwidth in use, per direction.
///
/// Interference from a cell is weighted by its load, which approximates
/// the probability that its transmissions overlap the victim's resources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellLoad(pub f64);

impl CellLoad {
    pub fn new(load: f64) -> Self {
        Self(load.clamp(0.0, 1.0))
    }
}

/// Mapping from SINR to deliverable rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkRateModel {
    /// Fraction of the nominal bandwidth usable for data.
    pub bandwidth_efficiency: f64,
    /// Spectral-efficiency ceiling, bits/s/Hz.
    pub se_cap_bps_hz: f64,
    /// Below this SINR the link carries nothing.
    pub min_sinr_db: f64,
}

impl Default for LinkRateModel {
    fn default() -> Self {
        Self {
            bandwidth_efficiency: 0.9,
            se_cap_bps_hz: 7.4,
            min_sinr_db: -10.0,
        }
    }
}

/// Uplink transmit power rule. The cap applies in every mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UplinkPowerControl {
    /// Use the full power cap regardless of pathloss.
    pub always_max_power: bool,
    /// Target received power per 180 kHz at full pathloss compensation, dBm.
    pub p0_dbm: f64,
    /// Fractional pathloss compensation exponent.
    pub alpha: f64,
}

impl Default for UplinkPowerControl {
    fn default() -> Self {
        Self {
            always_max_power: false,
            p0_dbm: -106.3,
            alpha: 1.0,
        }
    }
}

/// Reference bandwidth of the open-loop power-control target.
pub const PC_REFERENCE_BW_HZ: f64 = 180e3;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Thermal noise power over a bandwidth with a receiver noise figure, dBm.
pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Downlink SINR in dB.
///
/// `serving_rx_dbm` is the received power from the serving sector over the
/// full carrier; each interferer contributes its received power weighted
/// by its DL load.
pub fn dl_sinr_db(serving_rx_dbm: f64, interferers: &[(f64, f64)], noise_dbm: f64) -> f64 {
    let mut denom = dbm_to_mw(noise_dbm);
    for &(rx_dbm, load) in interferers {
        denom += load.clamp(0.0, 1.0) * dbm_to_mw(rx_dbm);
    }
    mw_to_dbm(dbm_to_mw(serving_rx_dbm)) - mw_to_dbm(denom)
}

/// Uplink transmit power, dBm, over an allocation.
///
/// Open-loop fractional power control referenced to 180 kHz, capped at the
/// device maximum: `min(max, P0 + alpha * PL + 10 log10(alloc/180 kHz))`.
/// `pathloss_db` is the coupling loss the control loop compensates.
pub fn ul_tx_power_dbm(
    pc: &UplinkPowerControl,
    pathloss_db: f64,
    alloc_bandwidth_hz: f64,
    max_power_dbm: f64,
) -> f64 {
    if pc.always_max_power {
        return max_power_dbm;
    }
    let open_loop =
        pc.p0_dbm + pc.alpha * pathloss_db + 10.0 * (alloc_bandwidth_hz / PC_REFERENCE_BW_HZ).log10();
    open_loop.min(max_power_dbm)
}

/// One uplink interferer, power-spectral-density referenced.
#[derive(Debug, Clone, Copy)]
pub struct UlInterferer {
    /// Transmit PSD of the interfering user, mW/Hz.
    pub tx_psd_mw_hz: f64,
    /// Cell gain from the interfering user to the victim's serving sector, dB.
    pub gain_db: f64,
    /// Co-scheduling weight: victim-cell UL load times interferer-cell UL load.
    pub load_overlap: f64,
}

/// Uplink SINR in dB, evaluated per Hz of the victim's allocation.
///
/// All powers are referenced to the victim's allocated bandwidth by
/// working in spectral density, so the ratio is allocation-invariant for a
/// fixed transmit PSD.
pub fn ul_sinr_db(
    signal_tx_psd_mw_hz: f64,
    serving_gain_db: f64,
    interferers: &[UlInterferer],
    noise_psd_dbm_hz: f64,
) -> f64 {
    let signal = signal_tx_psd_mw_hz * db_to_linear(serving_gain_db);
    let mut denom = dbm_to_mw(noise_psd_dbm_hz);
    for it in interferers {
        denom += it.load_overlap.clamp(0.0, 1.0) * it.tx_psd_mw_hz * db_to_linear(it.gain_db);
    }
    linear_to_db(signal / denom)
}

/// Achievable rate over an allocation, bits/s.
pub fn link_rate_bps(sinr_db: f64, alloc_bandwidth_hz: f64, model: &LinkRateModel) -> f64 {
    if sinr_db < model.min_sinr_db || alloc_bandwidth_hz <= 0.0 {
        return 0.0;
    }
    let se = (1.0 + db_to_linear(sinr_db)).log2().min(model.se_cap_bps_hz);
    model.bandwidth_efficiency * alloc_bandwidth_hz * se
}

/// Spectral efficiency at a SINR, bits/s/Hz, including overhead.
pub fn per_hz_rate_bps(sinr_db: f64, model: &LinkRateModel) -> f64 {
    link_rate_bps(sinr_db, 1.0, model)
}

/// Uplink transmit spectral density over an allocation, mW/Hz.
///
/// Below the power cap the open-loop rule scales transmit power with the
/// allocation, so the density is allocation-invariant; once the cap binds
/// the density dilutes as `1/alloc`.
pub fn ul_tx_psd_mw_hz(
    pc: &UplinkPowerControl,
    pathloss_db: f64,
    alloc_bandwidth_hz: f64,
    max_power_dbm: f64,
) -> f64 {
    let alloc = alloc_bandwidth_hz.max(1.0);
    crate::units::dbm_to_mw(ul_tx_power_dbm(pc, pathloss_db, alloc, max_power_dbm)) / alloc
}

/// Uplink rate over an allocation, accounting for the power cap: the
/// received density at the serving sector is `tx_psd * gain`, so SINR
/// falls once the cap dilutes the density.
pub fn ul_rate_bps(
    pc: &UplinkPowerControl,
    coupling_loss_db: f64,
    gain_db: f64,
    denom_psd_mw_hz: f64,
    alloc_bandwidth_hz: f64,
    max_power_dbm: f64,
    model: &LinkRateModel,
) -> f64 {
    if alloc_bandwidth_hz <= 0.0 {
        return 0.0;
    }
    let psd = ul_tx_psd_mw_hz(pc, coupling_loss_db, alloc_bandwidth_hz, max_power_dbm);
    let sinr_db = linear_to_db(psd * db_to_linear(gain_db) / denom_psd_mw_hz);
    link_rate_bps(sinr_db, alloc_bandwidth_hz, model)
}

/// Smallest allocation delivering `req_bps` on the uplink, or `None` when
/// no allocation up to `max_alloc_hz` suffices.
///
/// Up to the power cap the rate is linear in the allocation; beyond it
/// the rate still grows but saturates, so the boundary case is resolved
/// by bisection.
pub fn ul_demand_hz(
    pc: &UplinkPowerControl,
    coupling_loss_db: f64,
    gain_db: f64,
    denom_psd_mw_hz: f64,
    req_bps: f64,
    max_alloc_hz: f64,
    max_power_dbm: f64,
    model: &LinkRateModel,
) -> Option<f64> {
    if req_bps <= 0.0 {
        return Some(0.0);
    }
    let rate = |alloc: f64| {
        ul_rate_bps(pc, coupling_loss_db, gain_db, denom_psd_mw_hz, alloc, max_power_dbm, model)
    };

    // Densest feasible transmit PSD (at the reference bandwidth). If that
    // cannot clear the minimum SINR, no allocation can.
    let ref_psd = ul_tx_psd_mw_hz(pc, coupling_loss_db, PC_REFERENCE_BW_HZ, max_power_dbm);
    let ref_sinr_db = linear_to_db(ref_psd * db_to_linear(gain_db) / denom_psd_mw_hz);
    let per_hz = per_hz_rate_bps(ref_sinr_db, model);
    if per_hz <= 0.0 {
        return None;
    }

    // Below the power cap the PSD is allocation-invariant and the rate is
    // linear in the allocation.
    let linear_demand = req_bps / per_hz;
    if linear_demand <= max_alloc_hz && rate(linear_demand) >= req_bps * (1.0 - 1e-12) {
        return Some(linear_demand);
    }

    // Power-capped: the rate saturates with allocation and hits zero once
    // the diluted SINR falls below the floor, so restrict the search to
    // allocations that keep the SINR above it.
    let a_floor = dbm_to_mw(max_power_dbm) * db_to_linear(gain_db)
        / (denom_psd_mw_hz * db_to_linear(model.min_sinr_db));
    let hi_limit = max_alloc_hz.min(a_floor);
    if !(hi_limit > 0.0) || rate(hi_limit) < req_bps {
        return None;
    }
    let (mut lo, mut hi) = (0.0, hi_limit);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) >= req_bps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
