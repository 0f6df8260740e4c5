//! Synthetic measurement campaigns.
//!
//! Each record's ranging error is the sum of a linear environmental bias, a
//! fixed per-RP multipath offset, measurement noise and rare heavy outliers:
//!
//! ```text
//! measured = d + α·(T − T_ref) + β·(H − H_ref) + offset(rp) + noise [+ outlier]
//! ```
//!
//! In signal-level mode the noise term comes from a PN-correlation two-way
//! exchange (see [`crate::signal`]) at an SNR calibrated to `noise_std_m`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{Layout, Point2D};
use crate::signal::{self, LinkParams, PnCode, DEFAULT_CHIP_DURATION_S};
use crate::{derive_rng, Error, Result};

const MS_PER_HOUR: f64 = 3_600_000.0;
const MS_PER_DAY: f64 = 24.0 * MS_PER_HOUR;
const DRIFT_PERIOD_DAYS: f64 = 7.0;

const OFFSET_STREAM: u64 = 0;
const ENV_STREAM: u64 = 1;
const CALIBRATION_STREAM: u64 = 2;
const FIRST_RP_STREAM: u64 = 16;

/// Temperature and relative humidity at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub temperature_c: f64,
    pub humidity_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvProcessConfig {
    pub t_mean_c: f64,
    pub t_diurnal_amp_c: f64,
    /// Hour of day (0–24) at which the diurnal cycle peaks.
    pub t_diurnal_peak_hour: f64,
    pub t_drift_amp_c: f64,
    pub h_mean_pct: f64,
    /// Humidity drop per degree above the mean temperature.
    pub h_anticorr_gain: f64,
    pub noise_std_t: f64,
    pub noise_std_h: f64,
    pub duration_days: f64,
    pub t_min_c: f64,
    pub t_max_c: f64,
}

impl Default for EnvProcessConfig {
    fn default() -> Self {
        EnvProcessConfig {
            t_mean_c: 26.0,
            t_diurnal_amp_c: 8.0,
            t_diurnal_peak_hour: 14.0,
            t_drift_amp_c: 6.0,
            h_mean_pct: 70.0,
            h_anticorr_gain: 0.6,
            noise_std_t: 0.5,
            noise_std_h: 12.0,
            duration_days: 21.0,
            t_min_c: -20.0,
            t_max_c: 50.0,
        }
    }
}

impl EnvProcessConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("t_diurnal_amp_c", self.t_diurnal_amp_c),
            ("t_drift_amp_c", self.t_drift_amp_c),
            ("h_anticorr_gain", self.h_anticorr_gain),
            ("noise_std_t", self.noise_std_t),
            ("noise_std_h", self.noise_std_h),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("env.{name} must be >= 0, got {v}")));
            }
        }
        if !(self.duration_days > 0.0 && self.duration_days.is_finite()) {
            return Err(Error::invalid("env.duration_days must be positive"));
        }
        if !(self.t_min_c < self.t_max_c) {
            return Err(Error::invalid("env.t_min_c must be below env.t_max_c"));
        }
        for (name, v) in [
            ("t_mean_c", self.t_mean_c),
            ("h_mean_pct", self.h_mean_pct),
            ("t_diurnal_peak_hour", self.t_diurnal_peak_hour),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("env.{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn duration_ms(&self) -> u64 {
        (self.duration_days * MS_PER_DAY).round() as u64
    }
}

/// Environment at `t_ms` milliseconds after the campaign start.
///
/// Temperature is the mean plus a 24 h sinusoid peaking at
/// `t_diurnal_peak_hour`, a 7-day drift sinusoid and Gaussian noise. Humidity
/// is anti-correlated with temperature, plus its own noise, clamped to [0, 100].
pub fn sample_env<R: Rng + ?Sized>(
    config: &EnvProcessConfig,
    t_ms: u64,
    rng: &mut R,
) -> Result<EnvState> {
    if t_ms > config.duration_ms() {
        return Err(Error::invalid(format!(
            "time {t_ms} ms is past the campaign duration of {} ms",
            config.duration_ms()
        )));
    }
    let hours = t_ms as f64 / MS_PER_HOUR;
    let diurnal = config.t_diurnal_amp_c * (2.0 * PI * (hours - config.t_diurnal_peak_hour) / 24.0).cos();
    let drift = config.t_drift_amp_c * (2.0 * PI * hours / (24.0 * DRIFT_PERIOD_DAYS)).sin();
    let zt: f64 = rng.sample(StandardNormal);
    let zh: f64 = rng.sample(StandardNormal);
    let temperature_c = (config.t_mean_c + diurnal + drift + config.noise_std_t * zt)
        .clamp(config.t_min_c, config.t_max_c);
    let humidity_pct = (config.h_mean_pct
        - config.h_anticorr_gain * (temperature_c - config.t_mean_c)
        + config.noise_std_h * zh)
        .clamp(0.0, 100.0);
    Ok(EnvState {
        temperature_c,
        humidity_pct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModelConfig {
    pub alpha_m_per_c: f64,
    pub beta_m_per_pct: f64,
    pub t_ref_c: f64,
    pub h_ref_pct: f64,
    /// Explicit per-RP offsets in layout order; drawn from N(0, multipath_std_m²) when absent.
    pub multipath_offsets_m: Option<Vec<f64>>,
    pub multipath_std_m: f64,
    pub noise_std_m: f64,
    pub outlier_prob: f64,
    pub outlier_scale_m: f64,
}

impl Default for ErrorModelConfig {
    fn default() -> Self {
        ErrorModelConfig {
            alpha_m_per_c: 0.15,
            beta_m_per_pct: 0.05,
            t_ref_c: 10.0,
            h_ref_pct: 30.0,
            multipath_offsets_m: None,
            multipath_std_m: std::f64::consts::SQRT_2,
            noise_std_m: 2.8,
            outlier_prob: 0.005,
            outlier_scale_m: 25.0,
        }
    }
}

impl ErrorModelConfig {
    /// No bias, offsets, noise or outliers: measured distance equals ground truth.
    pub fn ideal() -> Self {
        ErrorModelConfig {
            alpha_m_per_c: 0.0,
            beta_m_per_pct: 0.0,
            multipath_offsets_m: None,
            multipath_std_m: 0.0,
            noise_std_m: 0.0,
            outlier_prob: 0.0,
            ..ErrorModelConfig::default()
        }
    }

    pub fn validate(&self, rp_count: usize) -> Result<()> {
        if !(self.noise_std_m >= 0.0 && self.noise_std_m.is_finite()) {
            return Err(Error::invalid("error_model.noise_std_m must be >= 0"));
        }
        if !(self.multipath_std_m >= 0.0 && self.multipath_std_m.is_finite()) {
            return Err(Error::invalid("error_model.multipath_std_m must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.outlier_prob) {
            return Err(Error::invalid("error_model.outlier_prob must be in [0, 1)"));
        }
        if !(self.outlier_scale_m >= 0.0 && self.outlier_scale_m.is_finite()) {
            return Err(Error::invalid("error_model.outlier_scale_m must be >= 0"));
        }
        for (name, v) in [
            ("alpha_m_per_c", self.alpha_m_per_c),
            ("beta_m_per_pct", self.beta_m_per_pct),
            ("t_ref_c", self.t_ref_c),
            ("h_ref_pct", self.h_ref_pct),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("error_model.{name} must be finite")));
            }
        }
        if let Some(offsets) = &self.multipath_offsets_m {
            if offsets.len() != rp_count {
                return Err(Error::invalid(format!(
                    "error_model.multipath_offsets_m has {} entries for {rp_count} reference points",
                    offsets.len()
                )));
            }
            if offsets.iter().any(|o| !o.is_finite()) {
                return Err(Error::invalid("error_model.multipath_offsets_m must be finite"));
            }
        }
        Ok(())
    }

    /// Deterministic part of the error at a given environment.
    pub fn env_bias(&self, env: &EnvState) -> f64 {
        self.alpha_m_per_c * (env.temperature_c - self.t_ref_c)
            + self.beta_m_per_pct * (env.humidity_pct - self.h_ref_pct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangingMode {
    ClosedForm,
    SignalLevel,
}

/// Waveform settings used in signal-level mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub pn_order: u32,
    pub oversampling: usize,
    pub chip_duration_s: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            pn_order: 7,
            oversampling: 4,
            chip_duration_s: DEFAULT_CHIP_DURATION_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub layout: Layout,
    pub records_per_rp: usize,
    /// Client nodes taking turns at each RP; ids run from 1.
    pub node_count: u8,
    pub env: EnvProcessConfig,
    pub error_model: ErrorModelConfig,
    pub mode: RangingMode,
    pub signal: SignalConfig,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            layout: Layout::default(),
            records_per_rp: 1000,
            node_count: 3,
            env: EnvProcessConfig::default(),
            error_model: ErrorModelConfig::default(),
            mode: RangingMode::ClosedForm,
            signal: SignalConfig::default(),
            seed: 42,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.records_per_rp == 0 {
            return Err(Error::invalid("records_per_rp must be at least 1"));
        }
        if self.node_count == 0 {
            return Err(Error::invalid("node_count must be at least 1"));
        }
        self.env.validate()?;
        self.error_model
            .validate(self.layout.reference_points().len())?;
        let total = self.records_per_rp as u64 * self.layout.reference_points().len() as u64;
        if self.env.duration_ms() < total {
            return Err(Error::invalid(format!(
                "campaign of {} ms cannot hold {total} distinct millisecond timestamps",
                self.env.duration_ms()
            )));
        }
        if self.mode == RangingMode::SignalLevel {
            if self.signal.oversampling == 0 {
                return Err(Error::invalid("signal.oversampling must be at least 1"));
            }
            if !(self.signal.chip_duration_s > 0.0) {
                return Err(Error::invalid("signal.chip_duration_s must be positive"));
            }
            signal::primitive_taps(self.signal.pn_order).ok_or_else(|| {
                Error::invalid(format!("signal.pn_order {} unsupported", self.signal.pn_order))
            })?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: CampaignConfig = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "campaign config".into(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }
}

/// One logged ranging measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingRecord {
    pub timestamp_ms: u64,
    pub node_id: u8,
    pub rp: Point2D,
    pub measured_distance_m: f64,
    pub env: EnvState,
}

/// Two-way PN ranging whose noise term has a prescribed standard deviation.
#[derive(Debug, Clone)]
struct SignalPath {
    code: PnCode,
    link: LinkParams,
}

impl SignalPath {
    fn new(config: &SignalConfig) -> Result<Self> {
        Ok(SignalPath {
            code: PnCode::maximal(config.pn_order)?,
            link: LinkParams {
                snr_db: f64::INFINITY,
                oversampling: config.oversampling,
                chip_duration_s: config.chip_duration_s,
            },
        })
    }

    /// Per-sample SNR at which the noise term at `distance_m` has std `noise_std_m`.
    ///
    /// The estimator's spread depends on where the delay falls within a
    /// sample, so the search runs at the actual distance. Above threshold the
    /// std scales as 10^(−SNR/20); two pilot rounds settle the SNR.
    fn calibrate_snr<R: Rng + ?Sized>(&self, distance_m: f64, noise_std_m: f64, rng: &mut R) -> Result<f64> {
        if noise_std_m == 0.0 {
            return Ok(f64::INFINITY);
        }
        let trials = 400;
        let mut snr_db = 10.0;
        for _ in 0..2 {
            let mut errors = Vec::with_capacity(trials);
            for _ in 0..trials {
                errors.push(self.noise_term(distance_m, snr_db, rng)?);
            }
            let mean = errors.iter().sum::<f64>() / trials as f64;
            let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
            snr_db = (snr_db + 20.0 * (std / noise_std_m).log10()).clamp(-30.0, 90.0);
        }
        Ok(snr_db)
    }

    /// Two-way estimate minus the noiseless estimate at the same distance.
    ///
    /// Subtracting the noiseless response removes the interpolation bias, the
    /// way a ranging engine's calibration table would.
    fn noise_term<R: Rng + ?Sized>(&self, distance_m: f64, snr_db: f64, rng: &mut R) -> Result<f64> {
        if snr_db == f64::INFINITY {
            return Ok(0.0);
        }
        let noisy_link = LinkParams { snr_db, ..self.link };
        let noisy = signal::two_way_range(distance_m, &self.code, &noisy_link, rng)?;
        let clean = signal::two_way_range(distance_m, &self.code, &self.link, rng)?;
        Ok(noisy.distance_m - clean.distance_m)
    }
}

/// A validated campaign with its per-RP offsets resolved.
#[derive(Debug, Clone)]
pub struct Campaign {
    config: CampaignConfig,
    offsets: Vec<f64>,
    signal_path: Option<SignalPath>,
    /// Calibrated per-RP SNR in signal-level mode, layout order.
    snr_db: Vec<f64>,
}

impl Campaign {
    pub fn new(config: CampaignConfig) -> Result<Self> {
        config.validate()?;
        let rp_count = config.layout.reference_points().len();
        let offsets = match &config.error_model.multipath_offsets_m {
            Some(explicit) => explicit.clone(),
            None => {
                let mut rng = derive_rng(config.seed, OFFSET_STREAM);
                (0..rp_count)
                    .map(|_| config.error_model.multipath_std_m * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        };
        let (signal_path, snr_db) = match config.mode {
            RangingMode::ClosedForm => (None, Vec::new()),
            RangingMode::SignalLevel => {
                let path = SignalPath::new(&config.signal)?;
                let mut rng = derive_rng(config.seed, CALIBRATION_STREAM);
                let snr = config
                    .layout
                    .reference_points()
                    .iter()
                    .map(|rp| {
                        let d = config.layout.distance_to_base(rp)?;
                        path.calibrate_snr(d, config.error_model.noise_std_m, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Some(path), snr)
            }
        };
        Ok(Campaign {
            config,
            offsets,
            signal_path,
            snr_db,
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    /// Multipath offsets in layout order.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Per-sample SNR chosen for each RP in signal-level mode; empty in closed-form mode.
    pub fn signal_snr_db(&self) -> &[f64] {
        &self.snr_db
    }

    /// Simulates one two-way ranging exchange at `rp` under `env`.
    pub fn measure_once<R: Rng + ?Sized>(
        &self,
        rp: &Point2D,
        env: EnvState,
        timestamp_ms: u64,
        node_id: u8,
        rng: &mut R,
    ) -> Result<RangingRecord> {
        let layout = &self.config.layout;
        let idx = layout
            .index_of(rp)
            .ok_or(Error::UnknownReferencePoint { x: rp.x, y: rp.y })?;
        let truth = layout.distance_to_base(rp)?;
        let model = &self.config.error_model;

        let noise = match &self.signal_path {
            None => model.noise_std_m * rng.sample::<f64, _>(StandardNormal),
            Some(path) => path.noise_term(truth, self.snr_db[idx], rng)?,
        };
        let outlier = if rng.random::<f64>() < model.outlier_prob {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * model.outlier_scale_m * (1.0 + rng.random::<f64>())
        } else {
            0.0
        };

        Ok(RangingRecord {
            timestamp_ms,
            node_id,
            rp: *rp,
            measured_distance_m: truth + model.env_bias(&env) + self.offsets[idx] + noise + outlier,
            env,
        })
    }

    /// Generates every record of the campaign in timestamp order.
    ///
    /// Measurement rounds visit each RP once; round `i` at RP `r` is global slot
    /// `i·R + r`, and slots are spread uniformly over the campaign duration.
    /// Nodes take turns per RP.
    pub fn run(&self) -> Result<Vec<RangingRecord>> {
        let cfg = &self.config;
        let rps = cfg.layout.reference_points();
        let total = (cfg.records_per_rp * rps.len()) as u64;
        let duration = cfg.env.duration_ms();
        let mut env_rng = derive_rng(cfg.seed, ENV_STREAM);
        let mut rp_rngs: Vec<_> = (0..rps.len())
            .map(|r| derive_rng(cfg.seed, FIRST_RP_STREAM + r as u64))
            .collect();

        let mut records = Vec::with_capacity(total as usize);
        for round in 0..cfg.records_per_rp {
            for (r, rp) in rps.iter().enumerate() {
                let slot = (round * rps.len() + r) as u64;
                let timestamp_ms = (slot as u128 * duration as u128 / total as u128) as u64;
                let node_id = (round % cfg.node_count as usize) as u8 + 1;
                let env = sample_env(&cfg.env, timestamp_ms, &mut env_rng)?;
                records.push(self.measure_once(rp, env, timestamp_ms, node_id, &mut rp_rngs[r])?);
            }
        }
        Ok(records)
    }
}

/// Builds the campaign described by `config` and generates all its records.
pub fn run_campaign(config: &CampaignConfig) -> Result<Vec<RangingRecord>> {
    Campaign::new(config.clone())?.run()
}

/// One-off measurement; prefer [`Campaign::measure_once`] in loops.
pub fn measure_once<R: Rng + ?Sized>(
    rp: &Point2D,
    config: &CampaignConfig,
    env: EnvState,
    rng: &mut R,
) -> Result<RangingRecord> {
    Campaign::new(config.clone())?.measure_once(rp, env, 0, 1, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn quiet_env() -> EnvProcessConfig {
        EnvProcessConfig {
            t_diurnal_amp_c: 0.0,
            t_drift_amp_c: 0.0,
            noise_std_t: 0.0,
            noise_std_h: 0.0,
            ..EnvProcessConfig::default()
        }
    }

    fn ideal_config() -> CampaignConfig {
        CampaignConfig {
            error_model: ErrorModelConfig::ideal(),
            records_per_rp: 50,
            ..CampaignConfig::default()
        }
    }

    #[test]
    fn constant_env_process() {
        let cfg = quiet_env();
        let mut rng = derive_rng(0, 0);
        for t in [0, 1, 123_456_789, cfg.duration_ms()] {
            let env = sample_env(&cfg, t, &mut rng).unwrap();
            assert_eq!(env.temperature_c, cfg.t_mean_c);
            assert_eq!(env.humidity_pct, cfg.h_mean_pct);
        }
        assert!(sample_env(&cfg, cfg.duration_ms() + 1, &mut rng).is_err());
    }

    #[test]
    fn diurnal_peak() {
        let cfg = EnvProcessConfig {
            t_diurnal_amp_c: 5.0,
            t_diurnal_peak_hour: 14.0,
            ..quiet_env()
        };
        let mut rng = derive_rng(0, 0);
        let env = sample_env(&cfg, 14 * 3_600_000, &mut rng).unwrap();
        assert_eq!(env.temperature_c, cfg.t_mean_c + 5.0);
        let next_day = sample_env(&cfg, 38 * 3_600_000, &mut rng).unwrap();
        assert!((next_day.temperature_c - (cfg.t_mean_c + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn env_is_deterministic_and_humidity_bounded() {
        let cfg = EnvProcessConfig {
            noise_std_h: 60.0,
            ..EnvProcessConfig::default()
        };
        let series = |seed| {
            let mut rng = derive_rng(seed, 0);
            (0..2000u64)
                .map(|i| sample_env(&cfg, i * 900_000, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = series(3);
        assert_eq!(a, series(3));
        assert!(a.iter().all(|e| (0.0..=100.0).contains(&e.humidity_pct)));
        assert!(a.iter().any(|e| e.humidity_pct == 100.0));
        assert!(a.iter().all(|e| (cfg.t_min_c..=cfg.t_max_c).contains(&e.temperature_c)));
    }

    #[test]
    fn ideal_measurement_is_ground_truth() {
        let campaign = Campaign::new(ideal_config()).unwrap();
        let env = EnvState { temperature_c: 35.0, humidity_pct: 90.0 };
        let mut rng = derive_rng(0, 0);
        for rp in Layout::default().reference_points() {
            let rec = campaign.measure_once(rp, env, 0, 1, &mut rng).unwrap();
            let truth = Layout::default().distance_to_base(rp).unwrap();
            assert!((rec.measured_distance_m - truth).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_temperature_bias() {
        let mut cfg = ideal_config();
        cfg.error_model.alpha_m_per_c = 0.1;
        let env = EnvState {
            temperature_c: cfg.error_model.t_ref_c + 10.0,
            humidity_pct: cfg.error_model.h_ref_pct,
        };
        let rp = Point2D { x: 0.0, y: 0.0 };
        let rec = measure_once(&rp, &cfg, env, &mut derive_rng(0, 0)).unwrap();
        assert!((rec.measured_distance_m - (200f64.sqrt() + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn forced_outliers() {
        let mut cfg = ideal_config();
        cfg.error_model.outlier_prob = 0.999_999_999;
        cfg.error_model.outlier_scale_m = 50.0;
        let env = EnvState {
            temperature_c: cfg.error_model.t_ref_c,
            humidity_pct: cfg.error_model.h_ref_pct,
        };
        let campaign = Campaign::new(cfg).unwrap();
        let mut rng = derive_rng(1, 0);
        let rp = Point2D { x: 10.0, y: 20.0 };
        let truth = Layout::default().distance_to_base(&rp).unwrap();
        let mut signs = (0, 0);
        for _ in 0..200 {
            let rec = campaign.measure_once(&rp, env, 0, 1, &mut rng).unwrap();
            let err = rec.measured_distance_m - truth;
            assert!(err.abs() >= 40.0, "{err}");
            if err > 0.0 { signs.0 += 1 } else { signs.1 += 1 }
        }
        assert!(signs.0 > 0 && signs.1 > 0);
    }

    #[test]
    fn unknown_rp_is_rejected() {
        let campaign = Campaign::new(ideal_config()).unwrap();
        let env = EnvState { temperature_c: 20.0, humidity_pct: 50.0 };
        let err = campaign
            .measure_once(&Point2D { x: 1.0, y: 1.0 }, env, 0, 1, &mut derive_rng(0, 0))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownReferencePoint { .. }));
    }

    #[test]
    fn campaign_shape_and_ordering() {
        let cfg = CampaignConfig {
            records_per_rp: 40,
            ..CampaignConfig::default()
        };
        let records = run_campaign(&cfg).unwrap();
        assert_eq!(records.len(), 9 * 40);
        let mut last: HashMap<u8, u64> = HashMap::new();
        let mut per_rp: HashMap<(i64, i64), usize> = HashMap::new();
        for r in &records {
            assert!((1..=3).contains(&r.node_id));
            if let Some(prev) = last.insert(r.node_id, r.timestamp_ms) {
                assert!(r.timestamp_ms > prev);
            }
            *per_rp.entry((r.rp.x as i64, r.rp.y as i64)).or_default() += 1;
            assert!((0.0..=100.0).contains(&r.env.humidity_pct));
            assert!(r.measured_distance_m.is_finite());
            assert!(r.timestamp_ms <= cfg.env.duration_ms());
        }
        assert_eq!(per_rp.len(), 9);
        assert!(per_rp.values().all(|&n| n == 40));
        assert!(records.windows(2).all(|w| w[0].timestamp_ms < w[1].timestamp_ms));
        assert_eq!(records, run_campaign(&cfg).unwrap());
    }

    #[test]
    fn single_record_campaign() {
        let cfg = CampaignConfig {
            layout: Layout::new(vec![Point2D { x: 1.0, y: 2.0 }], Point2D { x: 0.0, y: 0.0 }).unwrap(),
            records_per_rp: 1,
            ..CampaignConfig::default()
        };
        assert_eq!(run_campaign(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn sample_mean_matches_bias_at_fixed_env() {
        let mut cfg = CampaignConfig::default();
        cfg.error_model.outlier_prob = 0.0;
        cfg.error_model.multipath_offsets_m = Some(vec![0.0, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0]);
        let campaign = Campaign::new(cfg.clone()).unwrap();
        let env = EnvState { temperature_c: 31.0, humidity_pct: 55.0 };
        let n = 10_000;
        let sigma = cfg.error_model.noise_std_m;
        for idx in [1, 8] {
            let rp = cfg.layout.reference_points()[idx];
            let truth = cfg.layout.distance_to_base(&rp).unwrap();
            let mut rng = derive_rng(7, idx as u64);
            let mean = (0..n)
                .map(|_| campaign.measure_once(&rp, env, 0, 1, &mut rng).unwrap().measured_distance_m - truth)
                .sum::<f64>()
                / n as f64;
            let expected = cfg.error_model.env_bias(&env) + campaign.offsets()[idx];
            assert!((mean - expected).abs() < 3.0 * sigma / (n as f64).sqrt(), "{mean} vs {expected}");
        }
    }

    #[test]
    fn signal_level_matches_closed_form_bias() {
        let mut cfg = CampaignConfig::default();
        cfg.error_model.outlier_prob = 0.0;
        cfg.error_model.noise_std_m = 0.5;
        let env = EnvState { temperature_c: 30.0, humidity_pct: 60.0 };
        let rp = cfg.layout.reference_points()[4];
        let truth = cfg.layout.distance_to_base(&rp).unwrap();
        let trials = 1000;
        let mean_and_std = |mode| {
            let campaign = Campaign::new(CampaignConfig { mode, ..cfg.clone() }).unwrap();
            let mut rng = derive_rng(21, 0);
            let errs: Vec<f64> = (0..trials)
                .map(|_| campaign.measure_once(&rp, env, 0, 1, &mut rng).unwrap().measured_distance_m - truth)
                .collect();
            let mean = errs.iter().sum::<f64>() / trials as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            (mean, var.sqrt())
        };
        let (closed_mean, closed_std) = mean_and_std(RangingMode::ClosedForm);
        let (signal_mean, signal_std) = mean_and_std(RangingMode::SignalLevel);
        assert!((closed_mean - signal_mean).abs() < 0.1, "{closed_mean} vs {signal_mean}");
        assert!((signal_std / closed_std - 1.0).abs() < 0.25, "{signal_std} vs {closed_std}");
    }

    #[test]
    fn signal_level_without_noise_is_exact() {
        let cfg = CampaignConfig {
            mode: RangingMode::SignalLevel,
            ..ideal_config()
        };
        let campaign = Campaign::new(cfg).unwrap();
        assert!(campaign.signal_snr_db().iter().all(|&s| s == f64::INFINITY));
        let env = EnvState { temperature_c: 20.0, humidity_pct: 50.0 };
        let rp = Point2D { x: 20.0, y: 0.0 };
        let rec = campaign.measure_once(&rp, env, 0, 1, &mut derive_rng(0, 0)).unwrap();
        assert!((rec.measured_distance_m - Layout::default().distance_to_base(&rp).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut cfg = CampaignConfig::default();
        cfg.records_per_rp = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::default();
        cfg.error_model.outlier_prob = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::default();
        cfg.error_model.multipath_offsets_m = Some(vec![0.0; 3]);
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::default();
        cfg.env.t_diurnal_amp_c = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json() {
        let json = serde_json::to_string_pretty(&CampaignConfig::default()).unwrap();
        assert_eq!(CampaignConfig::from_json(&json).unwrap(), CampaignConfig::default());
        let partial = CampaignConfig::from_json(r#"{"records_per_rp": 5, "error_model": {"noise_std_m": 1.0}}"#).unwrap();
        assert_eq!(partial.records_per_rp, 5);
        assert_eq!(partial.error_model.noise_std_m, 1.0);
        assert_eq!(partial.error_model.alpha_m_per_c, 0.15);
        assert!(CampaignConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(CampaignConfig::from_json(r#"{"mode": "signal_level"}"#).is_ok());
    }
}
