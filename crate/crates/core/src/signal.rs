//! Time-of-flight estimation at signal level and at packet level.
//!
//! The signal-level path spreads a maximal-length PN code, delays it by a
//! fractional number of chips, adds white Gaussian noise and recovers the
//! delay from the peak of the circular cross-correlation. Correlating `N`
//! chips raises the effective SNR by a factor `N`, and parabolic refinement of
//! the peak resolves delays well below one sample.
//!
//! The packet-level baseline timestamps the round trip with a coarse clock and
//! is limited to `c·tick/2` of error no matter how the radio behaves.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result, SPEED_OF_LIGHT};

/// 1.62 Mchip/s, in the range of a 1.6 MHz LoRa ranging bandwidth.
pub const DEFAULT_CHIP_DURATION_S: f64 = 617.3e-9;

/// Half-width of the Hann-windowed sinc kernel; the kernel has 8 taps.
const SINC_HALF_WIDTH: i64 = 4;

/// Fibonacci LFSR tap masks for primitive polynomials of order 2..=20.
///
/// Bit `k - 1` of a mask selects the `x^k` term.
const PRIMITIVE_TAPS: [&[u32]; 19] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 11, 10, 4],
    &[13, 12, 11, 8],
    &[14, 13, 12, 2],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 18, 17, 14],
    &[20, 17],
];

/// Builds a tap mask from polynomial exponents, e.g. `[7, 6]` for x⁷+x⁶+1.
pub fn taps_from_exponents(exponents: &[u32]) -> u32 {
    exponents.iter().fold(0, |mask, &k| mask | 1 << (k - 1))
}

/// Tap mask of a known primitive polynomial for `order` in 2..=20.
pub fn primitive_taps(order: u32) -> Option<u32> {
    let idx = order.checked_sub(2)? as usize;
    PRIMITIVE_TAPS.get(idx).map(|e| taps_from_exponents(e))
}

/// A maximal-length ±1 sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PnCode {
    order: u32,
    chips: Vec<f64>,
}

impl PnCode {
    /// Code of the given order from the built-in primitive tap table, seed state 1.
    pub fn maximal(order: u32) -> Result<Self> {
        let taps = primitive_taps(order)
            .ok_or_else(|| Error::invalid(format!("no built-in taps for order {order}")))?;
        generate_pn(order, taps, 1)
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn chips(&self) -> &[f64] {
        &self.chips
    }

    /// Circular autocorrelation at `lag` chips.
    pub fn autocorrelation(&self, lag: usize) -> f64 {
        let n = self.chips.len();
        (0..n)
            .map(|i| self.chips[i] * self.chips[(i + lag) % n])
            .sum()
    }
}

/// Runs a Fibonacci LFSR and maps its output bits to chips (0 → +1, 1 → −1).
///
/// The register must return to `seed_state` after exactly `2^order − 1` steps;
/// any shorter period is reported as [`Error::NonMaximalTaps`].
pub fn generate_pn(order: u32, taps: u32, seed_state: u32) -> Result<PnCode> {
    if !(2..=20).contains(&order) {
        return Err(Error::invalid(format!(
            "LFSR order must be in 2..=20, got {order}"
        )));
    }
    let mask = (1u32 << order) - 1;
    if seed_state == 0 || seed_state & !mask != 0 {
        return Err(Error::invalid(format!(
            "seed state {seed_state:#x} must be non-zero and fit in {order} bits"
        )));
    }
    if taps & !mask != 0 || taps & (1 << (order - 1)) == 0 {
        return Err(Error::invalid(format!(
            "taps {taps:#x} must include x^{order} and no higher term"
        )));
    }

    // Feedback bit for the x^k term is register bit (order - k).
    let feedback_mask = (1..=order)
        .filter(|k| taps & (1 << (k - 1)) != 0)
        .fold(0u32, |m, k| m | 1 << (order - k));

    let expected = (1u64 << order) - 1;
    let mut state = seed_state;
    let mut chips = Vec::with_capacity(expected as usize);
    loop {
        chips.push(if state & 1 == 0 { 1.0 } else { -1.0 });
        let feedback = (state & feedback_mask).count_ones() & 1;
        state = (state >> 1) | (feedback << (order - 1));
        if state == seed_state {
            break;
        }
    }

    let period = chips.len() as u64;
    if period != expected {
        return Err(Error::NonMaximalTaps {
            order,
            taps,
            period,
            expected,
        });
    }
    Ok(PnCode { order, chips })
}

/// One-way channel: fractional delay plus white Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub delay_chips: f64,
    /// Per-sample SNR; `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub oversampling: usize,
}

impl ChannelParams {
    pub fn validate(&self, code_len: usize) -> Result<()> {
        if self.oversampling == 0 {
            return Err(Error::invalid("oversampling must be at least 1"));
        }
        if !(self.delay_chips >= 0.0 && self.delay_chips < code_len as f64) {
            return Err(Error::invalid(format!(
                "delay {} chips outside [0, {code_len})",
                self.delay_chips
            )));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("invalid SNR {} dB", self.snr_db)));
        }
        Ok(())
    }

    /// Standard deviation of the per-sample noise for unit-power chips.
    pub fn noise_std(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            10f64.powf(-self.snr_db / 20.0)
        }
    }
}

/// Repeats each chip `oversampling` times.
pub fn upsample(code: &PnCode, oversampling: usize) -> Vec<f64> {
    code.chips()
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, oversampling))
        .collect()
}

fn windowed_sinc(tau: f64) -> f64 {
    let half = SINC_HALF_WIDTH as f64;
    if tau.abs() >= half {
        return 0.0;
    }
    let sinc = if tau == 0.0 {
        1.0
    } else {
        (PI * tau).sin() / (PI * tau)
    };
    sinc * 0.5 * (1.0 + (PI * tau / half).cos())
}

/// Circularly delays `x` by `delay` samples with an 8-tap Hann-windowed sinc.
///
/// Integer delays are exact rotations.
fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    let m = x.len() as i64;
    let whole = delay.floor();
    let frac = delay - whole;
    let whole = whole as i64;
    if frac == 0.0 {
        return (0..m).map(|n| x[(n - whole).rem_euclid(m) as usize]).collect();
    }

    // Sample n reads x at t = n - delay; taps sit at floor(t) + k.
    let base_offset = -whole - 1;
    let t_frac = 1.0 - frac;
    let mut kernel = [0.0; 2 * SINC_HALF_WIDTH as usize];
    for (slot, k) in kernel.iter_mut().zip(1 - SINC_HALF_WIDTH..=SINC_HALF_WIDTH) {
        *slot = windowed_sinc(t_frac - k as f64);
    }
    let gain: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= gain);

    (0..m)
        .map(|n| {
            let floor_t = n + base_offset;
            kernel
                .iter()
                .zip(1 - SINC_HALF_WIDTH..=SINC_HALF_WIDTH)
                .map(|(w, k)| w * x[(floor_t + k).rem_euclid(m) as usize])
                .sum()
        })
        .collect()
}

/// Upsamples the code, delays it and adds noise at the per-sample SNR.
pub fn apply_channel<R: Rng + ?Sized>(
    code: &PnCode,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate(code.len())?;
    let upsampled = upsample(code, params.oversampling);
    let mut received =
        fractional_delay(&upsampled, params.delay_chips * params.oversampling as f64);
    let sigma = params.noise_std();
    if sigma > 0.0 {
        for s in &mut received {
            let z: f64 = rng.sample(StandardNormal);
            *s += sigma * z;
        }
    }
    Ok(received)
}

/// Circular cross-correlation of `received` against the upsampled code.
///
/// Entry `l` is `Σ_n received[n] · ref[(n − l) mod M]`.
pub fn correlate(received: &[f64], code: &PnCode, oversampling: usize) -> Result<Vec<f64>> {
    let m = code.len() * oversampling;
    if oversampling == 0 || received.len() != m {
        return Err(Error::Shape(format!(
            "received length {} != code length {} x oversampling {oversampling}",
            received.len(),
            code.len()
        )));
    }
    // The reference is constant over each chip, so box-filter the input once.
    let boxed: Vec<f64> = (0..m)
        .map(|start| (0..oversampling).map(|s| received[(start + s) % m]).sum())
        .collect();

    let corr = (0..m)
        .map(|lag| {
            code.chips()
                .iter()
                .enumerate()
                .map(|(j, c)| c * boxed[(j * oversampling + lag) % m])
                .sum()
        })
        .collect();
    Ok(corr)
}

/// Sub-sample offset of a peak from three neighbouring values, in [−0.5, 0.5].
pub fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * center + right;
    if curvature >= 0.0 || curvature.abs() < 1e-12 * center.abs().max(1.0) {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}

/// Result of one delay estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofEstimate {
    pub delay_chips: f64,
    pub peak_value: f64,
    pub distance_m: f64,
}

impl TofEstimate {
    pub fn from_delay(delay_chips: f64, peak_value: f64, chip_duration_s: f64) -> Self {
        TofEstimate {
            delay_chips,
            peak_value,
            distance_m: delay_chips * chip_duration_s * SPEED_OF_LIGHT,
        }
    }
}

/// Locates the correlation peak and refines it with a 3-point parabola.
///
/// The returned delay lies in `[0, code length)` chips.
pub fn correlate_estimate(
    received: &[f64],
    code: &PnCode,
    oversampling: usize,
    chip_duration_s: f64,
) -> Result<TofEstimate> {
    if received.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("received samples must be finite"));
    }
    let corr = correlate(received, code, oversampling)?;
    if received.iter().all(|&s| s == 0.0) {
        return Err(Error::NoPeak);
    }
    let m = corr.len();
    let (peak, &peak_value) = corr
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    let offset = parabolic_offset(corr[(peak + m - 1) % m], peak_value, corr[(peak + 1) % m]);
    let delay_samples = (peak as f64 + offset).rem_euclid(m as f64);
    Ok(TofEstimate::from_delay(
        delay_samples / oversampling as f64,
        peak_value,
        chip_duration_s,
    ))
}

/// Clock-quantized round-trip ranging, as done with packet timestamps.
///
/// The round trip `2d/c + turnaround + jitter` is rounded to the nearest
/// `clock_tick` and converted back to a one-way distance.
pub fn packet_level_estimate<R: Rng + ?Sized>(
    true_distance_m: f64,
    clock_tick_s: f64,
    turnaround_s: f64,
    jitter_std_s: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(clock_tick_s > 0.0 && clock_tick_s.is_finite()) {
        return Err(Error::invalid(format!(
            "clock tick must be positive, got {clock_tick_s}"
        )));
    }
    if !(jitter_std_s >= 0.0) {
        return Err(Error::invalid("jitter std must be non-negative"));
    }
    let jitter = if jitter_std_s > 0.0 {
        jitter_std_s * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let rtt = 2.0 * true_distance_m / SPEED_OF_LIGHT + turnaround_s + jitter;
    let quantized = (rtt / clock_tick_s).round() * clock_tick_s;
    Ok(SPEED_OF_LIGHT * (quantized - turnaround_s) / 2.0)
}

/// Link settings shared by both legs of a two-way exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub snr_db: f64,
    pub oversampling: usize,
    pub chip_duration_s: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            snr_db: f64::INFINITY,
            oversampling: 4,
            chip_duration_s: DEFAULT_CHIP_DURATION_S,
        }
    }
}

/// Master→slave and slave→master legs, each estimated independently and averaged.
pub fn two_way_range<R: Rng + ?Sized>(
    distance_m: f64,
    code: &PnCode,
    link: &LinkParams,
    rng: &mut R,
) -> Result<TofEstimate> {
    if !(link.chip_duration_s > 0.0) {
        return Err(Error::invalid("chip duration must be positive"));
    }
    if !(distance_m >= 0.0) {
        return Err(Error::invalid(format!(
            "distance must be non-negative, got {distance_m}"
        )));
    }
    let params = ChannelParams {
        delay_chips: distance_m / (SPEED_OF_LIGHT * link.chip_duration_s),
        snr_db: link.snr_db,
        oversampling: link.oversampling,
    };
    let n = code.len() as f64;
    let mut leg = || -> Result<TofEstimate> {
        let received = apply_channel(code, &params, rng)?;
        let mut est = correlate_estimate(&received, code, link.oversampling, link.chip_duration_s)?;
        // Short links sit near lag 0; map wrapped estimates to (−N/2, N/2].
        if est.delay_chips > n / 2.0 {
            est = TofEstimate::from_delay(est.delay_chips - n, est.peak_value, link.chip_duration_s);
        }
        Ok(est)
    };
    let forward = leg()?;
    let backward = leg()?;
    Ok(TofEstimate::from_delay(
        0.5 * (forward.delay_chips + backward.delay_chips),
        0.5 * (forward.peak_value + backward.peak_value),
        link.chip_duration_s,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive_rng;
    use proptest::prelude::*;

    /// Shift-register simulation written directly from the polynomial, used
    /// as an independent period oracle.
    fn brute_force_period(order: u32, exponents: &[u32], seed: u32) -> u64 {
        let n = order as usize;
        let mut reg: Vec<u8> = (0..n).map(|i| ((seed >> i) & 1) as u8).collect();
        let start = reg.clone();
        let mut steps = 0u64;
        loop {
            let fb = exponents.iter().fold(0u8, |acc, &k| acc ^ reg[n - k as usize]);
            reg.remove(0);
            reg.push(fb);
            steps += 1;
            if reg == start || steps > 1 << (order + 1) {
                return steps;
            }
        }
    }

    #[test]
    fn smallest_m_sequence() {
        let code = generate_pn(2, taps_from_exponents(&[2, 1]), 1).unwrap();
        assert_eq!(code.len(), 3);
        assert_eq!(code.autocorrelation(0), 3.0);
        assert_eq!(code.autocorrelation(1), -1.0);
        assert_eq!(code.autocorrelation(2), -1.0);
    }

    #[test]
    fn order_seven_code_has_two_valued_autocorrelation() {
        let code = generate_pn(7, taps_from_exponents(&[7, 6]), 1).unwrap();
        assert_eq!(code.len(), 127);
        assert_eq!(code.autocorrelation(0), 127.0);
        for lag in 1..127 {
            assert_eq!(code.autocorrelation(lag), -1.0, "lag {lag}");
        }
    }

    #[test]
    fn non_primitive_taps_report_period() {
        for exps in [&[7u32][..], &[7, 1, 2, 3, 4, 5, 6], &[7, 4, 3]] {
            let expected = brute_force_period(7, exps, 1);
            assert!(expected < 127);
            match generate_pn(7, taps_from_exponents(exps), 1) {
                Err(Error::NonMaximalTaps { period, .. }) => assert_eq!(period, expected),
                other => panic!("expected non-maximal error for {exps:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn table_taps_match_brute_force_oracle() {
        for order in 2..=16u32 {
            let exps = PRIMITIVE_TAPS[order as usize - 2];
            assert_eq!(brute_force_period(order, exps, 1), (1 << order) - 1, "order {order}");
            assert_eq!(PnCode::maximal(order).unwrap().len(), (1 << order) - 1);
        }
    }

    #[test]
    fn generate_rejects_bad_arguments() {
        let taps = taps_from_exponents(&[7, 6]);
        assert!(matches!(generate_pn(7, taps, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_pn(7, taps, 1 << 7), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_pn(1, 1, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_pn(21, 1, 1), Err(Error::InvalidArgument(_))));
        // Missing the x^order term.
        assert!(matches!(generate_pn(7, taps_from_exponents(&[6]), 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn noiseless_channel_is_a_rotation() {
        let code = PnCode::maximal(5).unwrap();
        let mut rng = derive_rng(1, 0);
        let up = upsample(&code, 3);
        let params = ChannelParams { delay_chips: 0.0, snr_db: f64::INFINITY, oversampling: 3 };
        assert_eq!(apply_channel(&code, &params, &mut rng).unwrap(), up);

        let params = ChannelParams { delay_chips: 5.0, ..params };
        let out = apply_channel(&code, &params, &mut rng).unwrap();
        let m = up.len();
        for n in 0..m {
            assert_eq!(out[n], up[(n + m - 15) % m]);
        }
    }

    #[test]
    fn channel_is_deterministic_under_seed() {
        let code = PnCode::maximal(7).unwrap();
        let params = ChannelParams { delay_chips: 3.3, snr_db: 0.0, oversampling: 4 };
        let a = apply_channel(&code, &params, &mut derive_rng(9, 2)).unwrap();
        let b = apply_channel(&code, &params, &mut derive_rng(9, 2)).unwrap();
        assert_eq!(a, b);
        let c = apply_channel(&code, &params, &mut derive_rng(9, 3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn channel_validates_params() {
        let code = PnCode::maximal(3).unwrap();
        let mut rng = derive_rng(0, 0);
        let bad = [
            ChannelParams { delay_chips: 0.0, snr_db: 10.0, oversampling: 0 },
            ChannelParams { delay_chips: 7.0, snr_db: 10.0, oversampling: 1 },
            ChannelParams { delay_chips: -0.5, snr_db: 10.0, oversampling: 1 },
            ChannelParams { delay_chips: 1.0, snr_db: f64::NAN, oversampling: 1 },
        ];
        for p in bad {
            assert!(apply_channel(&code, &p, &mut rng).is_err(), "{p:?}");
        }
    }

    #[test]
    fn integer_delay_is_exact() {
        let code = PnCode::maximal(7).unwrap();
        let params = ChannelParams { delay_chips: 5.0, snr_db: f64::INFINITY, oversampling: 4 };
        let rx = apply_channel(&code, &params, &mut derive_rng(0, 0)).unwrap();
        let est = correlate_estimate(&rx, &code, 4, DEFAULT_CHIP_DURATION_S).unwrap();
        assert!((est.delay_chips - 5.0).abs() < 1e-9, "{}", est.delay_chips);
        assert_eq!(est.peak_value, 508.0);
        let expected_m = 5.0 * DEFAULT_CHIP_DURATION_S * SPEED_OF_LIGHT;
        assert!((est.distance_m - expected_m).abs() < 1e-6);
    }

    /// Dense search over candidate delays for the one whose noiseless replica
    /// best matches the received samples.
    fn grid_search_delay(received: &[f64], code: &PnCode, os: usize, lo: f64, hi: f64) -> f64 {
        let mut rng = derive_rng(0, 0);
        let steps = 2000;
        (0..=steps)
            .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
            .map(|tau| {
                let p = ChannelParams { delay_chips: tau, snr_db: f64::INFINITY, oversampling: os };
                let replica = apply_channel(code, &p, &mut rng).unwrap();
                let score: f64 = replica.iter().zip(received).map(|(a, b)| a * b).sum();
                (tau, score)
            })
            .fold((lo, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    #[test]
    fn fractional_delay_matches_grid_search() {
        let code = PnCode::maximal(7).unwrap();
        let params = ChannelParams { delay_chips: 5.25, snr_db: f64::INFINITY, oversampling: 4 };
        let rx = apply_channel(&code, &params, &mut derive_rng(0, 0)).unwrap();
        let oracle = grid_search_delay(&rx, &code, 4, 4.5, 6.0);
        assert!((oracle - 5.25).abs() < 1e-3, "oracle {oracle}");
        let est = correlate_estimate(&rx, &code, 4, DEFAULT_CHIP_DURATION_S).unwrap();
        assert!((est.delay_chips - 5.25).abs() < 0.05, "{}", est.delay_chips);
        assert!((est.delay_chips - oracle).abs() < 0.05);
    }

    #[test]
    fn zero_input_has_no_peak() {
        let code = PnCode::maximal(4).unwrap();
        let rx = vec![0.0; code.len() * 2];
        assert!(matches!(correlate_estimate(&rx, &code, 2, 1e-6), Err(Error::NoPeak)));
        assert!(matches!(correlate_estimate(&rx[1..], &code, 2, 1e-6), Err(Error::Shape(_))));
    }

    #[test]
    fn correlation_gain_is_code_length() {
        // Oversampling 1: peak N, noise variance N·σ², so output SNR = N·SNR_in.
        let code = PnCode::maximal(7).unwrap();
        let snr_in_db = -3.0;
        let params = ChannelParams { delay_chips: 10.0, snr_db: snr_in_db, oversampling: 1 };
        let mut rng = derive_rng(77, 0);
        let trials = 1000;
        let peaks: Vec<f64> = (0..trials)
            .map(|_| {
                let rx = apply_channel(&code, &params, &mut rng).unwrap();
                correlate(&rx, &code, 1).unwrap()[10]
            })
            .collect();
        let mean = peaks.iter().sum::<f64>() / trials as f64;
        let var = peaks.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let out_db = 10.0 * (mean * mean / var).log10();
        let expected_db = snr_in_db + 10.0 * (code.len() as f64).log10();
        assert!((out_db - expected_db).abs() < 1.0, "out {out_db} dB, expected {expected_db} dB");
    }

    #[test]
    fn estimator_bias_is_small_at_high_post_gain_snr() {
        // 127 chips x 4 samples is ~27 dB of gain; -5 dB in gives ~22 dB out.
        let code = PnCode::maximal(7).unwrap();
        for delay in [3.0, 3.25, 3.5, 3.8] {
            let params = ChannelParams { delay_chips: delay, snr_db: -5.0, oversampling: 4 };
            let mut rng = derive_rng(5, 0);
            let trials = 5000;
            let bias = (0..trials)
                .map(|_| {
                    let rx = apply_channel(&code, &params, &mut rng).unwrap();
                    correlate_estimate(&rx, &code, 4, 1.0).unwrap().delay_chips - delay
                })
                .sum::<f64>()
                / trials as f64;
            assert!(bias.abs() < 0.02, "delay {delay}: bias {bias}");
        }
    }

    #[test]
    fn packet_level_examples() {
        let mut rng = derive_rng(0, 0);
        let d = packet_level_estimate(300.0, 1e-6, 0.0, 0.0, &mut rng).unwrap();
        assert!((d - SPEED_OF_LIGHT * 1e-6).abs() < 1e-9);
        assert!((d - 299.792458).abs() < 1e-9);

        let fine = packet_level_estimate(123.456, 1e-12, 0.0, 0.0, &mut rng).unwrap();
        assert!((fine - 123.456).abs() < 1e-3);

        assert!(packet_level_estimate(10.0, 0.0, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn two_way_noiseless_recovers_distance() {
        let code = PnCode::maximal(7).unwrap();
        let link = LinkParams::default();
        let tolerance = 0.05 * link.chip_duration_s * SPEED_OF_LIGHT;
        for d in [0.0, 14.142, 42.43, 150.0, 1000.0] {
            let est = two_way_range(d, &code, &link, &mut derive_rng(1, 0)).unwrap();
            assert!((est.distance_m - d).abs() < tolerance, "{d}: {}", est.distance_m);
        }
    }

    #[test]
    fn two_way_is_deterministic() {
        let code = PnCode::maximal(7).unwrap();
        let link = LinkParams { snr_db: 0.0, ..LinkParams::default() };
        let a = two_way_range(30.0, &code, &link, &mut derive_rng(3, 1)).unwrap();
        let b = two_way_range(30.0, &code, &link, &mut derive_rng(3, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_way_halves_variance() {
        let code = PnCode::maximal(7).unwrap();
        let link = LinkParams { snr_db: -5.0, ..LinkParams::default() };
        let d = 500.0;
        let trials = 2000;
        let params = ChannelParams {
            delay_chips: d / (SPEED_OF_LIGHT * link.chip_duration_s),
            snr_db: link.snr_db,
            oversampling: link.oversampling,
        };
        let variance = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let mut rng = derive_rng(11, 0);
        let one_way: Vec<f64> = (0..trials)
            .map(|_| {
                let rx = apply_channel(&code, &params, &mut rng).unwrap();
                correlate_estimate(&rx, &code, link.oversampling, link.chip_duration_s)
                    .unwrap()
                    .distance_m
            })
            .collect();
        let mut rng = derive_rng(11, 1);
        let two_way: Vec<f64> = (0..trials)
            .map(|_| two_way_range(d, &code, &link, &mut rng).unwrap().distance_m)
            .collect();
        let ratio = variance(&two_way) / variance(&one_way);
        assert!((ratio - 0.5).abs() <= 0.1, "variance ratio {ratio}");
    }

    proptest! {
        #[test]
        fn every_maximal_code_is_two_valued(order in 2u32..=11, seed in 1u32..2048) {
            let taps = primitive_taps(order).unwrap();
            let seed = seed & ((1 << order) - 1);
            prop_assume!(seed != 0);
            let code = generate_pn(order, taps, seed).unwrap();
            prop_assert_eq!(code.autocorrelation(0), code.len() as f64);
            for lag in 1..code.len() {
                prop_assert_eq!(code.autocorrelation(lag), -1.0);
            }
        }

        #[test]
        fn packet_level_error_is_bounded(d in 0.0..5000.0f64, turnaround in 0.0..1e-3f64) {
            let mut rng = derive_rng(0, 0);
            let est = packet_level_estimate(d, 1e-6, turnaround, 0.0, &mut rng).unwrap();
            prop_assert!((est - d).abs() <= SPEED_OF_LIGHT * 1e-6 / 2.0);
        }

        #[test]
        fn noiseless_integer_delays_are_exact(delay in 0usize..127, os in 1usize..6) {
            let code = PnCode::maximal(7).unwrap();
            let params = ChannelParams { delay_chips: delay as f64, snr_db: f64::INFINITY, oversampling: os };
            let rx = apply_channel(&code, &params, &mut derive_rng(0, 0)).unwrap();
            let est = correlate_estimate(&rx, &code, os, 1.0).unwrap();
            prop_assert!((est.delay_chips - delay as f64).abs() < 1e-9);
        }

        #[test]
        fn noiseless_fractional_delays_within_tolerance(delay in 0.0..120.0f64, os in 4usize..8) {
            let code = PnCode::maximal(7).unwrap();
            let params = ChannelParams { delay_chips: delay, snr_db: f64::INFINITY, oversampling: os };
            let rx = apply_channel(&code, &params, &mut derive_rng(0, 0)).unwrap();
            let est = correlate_estimate(&rx, &code, os, 1.0).unwrap();
            prop_assert!((est.delay_chips - delay).abs() < 0.05, "{} vs {}", est.delay_chips, delay);
        }
    }
}
