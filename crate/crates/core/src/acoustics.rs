//! Underwater acoustic propagation: Thorp absorption, spreading loss,
//! ambient noise, SINR, Shannon rate and slot timing.
//!
//! Distances are in meters everywhere. The spreading term uses meters and the
//! absorption exponent uses kilometers, because Thorp's formula is per km.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest carrier frequency (kHz) for which Thorp's formula is used.
pub const THORP_MIN_FREQ_KHZ: f64 = 0.4;

/// Source level of a 1 W omnidirectional projector, dB re 1 µPa @ 1 m.
///
/// Noise spectra are tabulated in dB re µPa²/Hz while transmit powers are in
/// watts. Dividing integrated noise intensity by this reference puts noise on
/// the same "watts at 1 m" scale as `p / A(d, f)`.
pub const SOURCE_LEVEL_REF_DB: f64 = 170.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcousticsError {
    #[error("{name} out of domain: {value}")]
    Domain { name: &'static str, value: f64 },
    #[error("sinr undefined: zero interference and noise with non-zero signal")]
    ZeroDenominator,
}

fn domain(name: &'static str, value: f64) -> AcousticsError {
    AcousticsError::Domain { name, value }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseConfig {
    /// Fixed noise power on the watts-equivalent scale.
    ConstantPower { watts: f64 },
    /// Four-source ambient spectrum (turbulence, shipping, waves, thermal).
    SpectralModel { shipping: f64, wind_speed_mps: f64 },
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::SpectralModel {
            shipping: 0.5,
            wind_speed_mps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_freq_khz: f64,
    pub bandwidth_hz: f64,
    pub spreading_factor_k: f64,
    pub norm_const_a0: f64,
    pub sound_speed_mps: f64,
    pub ambient_noise: NoiseConfig,
    pub transducer_eff: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_freq_khz: 8.0,
            bandwidth_hz: 3000.0,
            spreading_factor_k: 1.5,
            norm_const_a0: 1.0,
            sound_speed_mps: 1500.0,
            ambient_noise: NoiseConfig::default(),
            transducer_eff: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), AcousticsError> {
        let finite_pos = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(domain(name, v))
            }
        };
        if !(self.carrier_freq_khz.is_finite() && self.carrier_freq_khz > THORP_MIN_FREQ_KHZ) {
            return Err(domain("carrier_freq_khz", self.carrier_freq_khz));
        }
        finite_pos("bandwidth_hz", self.bandwidth_hz)?;
        finite_pos("norm_const_a0", self.norm_const_a0)?;
        finite_pos("sound_speed_mps", self.sound_speed_mps)?;
        if !(self.spreading_factor_k.is_finite() && self.spreading_factor_k >= 1.0) {
            return Err(domain("spreading_factor_k", self.spreading_factor_k));
        }
        if !(self.transducer_eff > 0.0 && self.transducer_eff <= 1.0) {
            return Err(domain("transducer_eff", self.transducer_eff));
        }
        if self.bandwidth_hz / 2.0 >= self.carrier_freq_khz * 1000.0 {
            return Err(domain("bandwidth_hz", self.bandwidth_hz));
        }
        match self.ambient_noise {
            NoiseConfig::ConstantPower { watts } => {
                if !(watts.is_finite() && watts >= 0.0) {
                    return Err(domain("ambient_noise.watts", watts));
                }
            }
            NoiseConfig::SpectralModel {
                shipping,
                wind_speed_mps,
            } => {
                if !(0.0..=1.0).contains(&shipping) {
                    return Err(domain("ambient_noise.shipping", shipping));
                }
                if !(wind_speed_mps.is_finite() && wind_speed_mps >= 0.0) {
                    return Err(domain("ambient_noise.wind_speed_mps", wind_speed_mps));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    distance_m: f64,
}

impl LinkGeometry {
    pub fn new(distance_m: f64) -> Result<Self, AcousticsError> {
        if distance_m.is_finite() && distance_m > 0.0 {
            Ok(Self { distance_m })
        } else {
            Err(domain("distance_m", distance_m))
        }
    }

    /// Geometry between two points. Coincident points are clamped to 1 m,
    /// the reference distance of the source level.
    pub fn between(a: &[f64; 3], b: &[f64; 3]) -> Self {
        Self {
            distance_m: distance(a, b).max(1.0),
        }
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Thorp absorption coefficient in dB/km, `f_khz` in kHz.
pub fn thorp_absorption_db_per_km(f_khz: f64) -> Result<f64, AcousticsError> {
    if !(f_khz.is_finite() && f_khz > 0.0) {
        return Err(domain("f_khz", f_khz));
    }
    let f2 = f_khz * f_khz;
    Ok(0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003)
}

/// Linear attenuation `A(d, f) = A0 · d^k · a(f)^(d/1000)`.
pub fn attenuation(geom: LinkGeometry, ch: &ChannelParams) -> f64 {
    // carrier frequency is validated with the channel; fall back to the
    // constant term for out-of-range values instead of panicking.
    let alpha_db = thorp_absorption_db_per_km(ch.carrier_freq_khz).unwrap_or(0.003);
    let d = geom.distance_m;
    ch.norm_const_a0 * d.powf(ch.spreading_factor_k) * 10f64.powf(alpha_db * d / 1000.0 / 10.0)
}

/// Ambient noise power spectral density, dB re µPa²/Hz, at `f_khz`.
pub fn noise_psd_db(f_khz: f64, shipping: f64, wind_speed_mps: f64) -> f64 {
    let lf = f_khz.log10();
    let turbulence = 17.0 - 30.0 * lf;
    let ships = 40.0 + 20.0 * (shipping - 0.5) + 26.0 * lf - 60.0 * (f_khz + 0.03).log10();
    let waves = 50.0 + 7.5 * wind_speed_mps.sqrt() + 20.0 * lf - 40.0 * (f_khz + 0.4).log10();
    let thermal = -15.0 + 20.0 * lf;
    linear_to_db(
        db_to_linear(turbulence) + db_to_linear(ships) + db_to_linear(waves) + db_to_linear(thermal),
    )
}

const NOISE_SIMPSON_PANELS: usize = 512;

/// Ambient noise `I_a` on the watts-equivalent scale.
///
/// The spectral model integrates the psd over `[f - B/2, f + B/2]` with
/// composite Simpson's rule and divides by [`SOURCE_LEVEL_REF_DB`].
pub fn ambient_noise_power(ch: &ChannelParams) -> f64 {
    match ch.ambient_noise {
        NoiseConfig::ConstantPower { watts } => watts,
        NoiseConfig::SpectralModel {
            shipping,
            wind_speed_mps,
        } => {
            let lo = ch.carrier_freq_khz * 1000.0 - ch.bandwidth_hz / 2.0;
            let h = ch.bandwidth_hz / NOISE_SIMPSON_PANELS as f64;
            let psd = |hz: f64| db_to_linear(noise_psd_db(hz / 1000.0, shipping, wind_speed_mps));
            let mut acc = psd(lo) + psd(lo + ch.bandwidth_hz);
            for i in 1..NOISE_SIMPSON_PANELS {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * psd(lo + i as f64 * h);
            }
            let upa2 = acc * h / 3.0;
            upa2 / db_to_linear(SOURCE_LEVEL_REF_DB)
        }
    }
}

/// Received power from a transmitter of `power_w` over `link`.
pub fn received_power(power_w: f64, link: LinkGeometry, ch: &ChannelParams) -> f64 {
    ch.transducer_eff * power_w / attenuation(link, ch)
}

/// SINR at a receiver.
///
/// `interferers` are concurrent same-network senders; `external_noise_w` is
/// the already attenuated contribution of external acoustic entities (`I_s`).
pub fn sinr(
    tx_power_w: f64,
    link: LinkGeometry,
    interferers: &[(f64, LinkGeometry)],
    ch: &ChannelParams,
    external_noise_w: f64,
) -> Result<f64, AcousticsError> {
    sinr_with_noise(
        tx_power_w,
        link,
        interferers,
        ch,
        external_noise_w,
        ambient_noise_power(ch),
    )
}

/// Same as [`sinr`] with a precomputed ambient noise term.
pub fn sinr_with_noise(
    tx_power_w: f64,
    link: LinkGeometry,
    interferers: &[(f64, LinkGeometry)],
    ch: &ChannelParams,
    external_noise_w: f64,
    ambient_w: f64,
) -> Result<f64, AcousticsError> {
    if !(tx_power_w >= 0.0) {
        return Err(domain("tx_power_w", tx_power_w));
    }
    if !(external_noise_w >= 0.0) {
        return Err(domain("external_noise_w", external_noise_w));
    }
    let mut interference = 0.0;
    for &(p, g) in interferers {
        if !(p >= 0.0) {
            return Err(domain("interferer power_w", p));
        }
        interference += p / attenuation(g, ch);
    }
    let denom = ch.transducer_eff * interference + external_noise_w + ambient_w;
    let num = ch.transducer_eff * tx_power_w / attenuation(link, ch);
    if tx_power_w == 0.0 {
        return Ok(0.0);
    }
    if denom == 0.0 {
        return Err(AcousticsError::ZeroDenominator);
    }
    Ok(num / denom)
}

/// Shannon rate in bps when the link clears `gamma_th`, else 0. Both ratios
/// are linear.
pub fn achievable_rate(gamma: f64, ch: &ChannelParams, gamma_th: f64) -> f64 {
    if gamma >= gamma_th {
        ch.bandwidth_hz * (1.0 + gamma).log2()
    } else {
        0.0
    }
}

/// `T_slot = T_tran + d_max / c + T_guard`.
pub fn slot_duration(t_tran_s: f64, max_pair_distance_m: f64, t_guard_s: f64, ch: &ChannelParams) -> f64 {
    t_tran_s + max_pair_distance_m / ch.sound_speed_mps + t_guard_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quiet() -> ChannelParams {
        ChannelParams {
            ambient_noise: NoiseConfig::ConstantPower { watts: 1e-9 },
            ..ChannelParams::default()
        }
    }

    #[test]
    fn thorp_values() {
        // 0.11·64/65 + 44·64/4164 + 2.75e-4·64 + 0.003
        let f8 = thorp_absorption_db_per_km(8.0).unwrap();
        assert!((f8 - 0.805_181).abs() < 1e-5, "{f8}");
        let f1 = thorp_absorption_db_per_km(1.0).unwrap();
        assert!((f1 - (0.055 + 44.0 / 4101.0 + 2.75e-4 + 0.003)).abs() < 1e-15);
        assert!((f1 - 0.0690).abs() < 1e-4);
        let tiny = thorp_absorption_db_per_km(1e-6).unwrap();
        assert!((tiny - 0.003).abs() < 1e-9);
        assert!(thorp_absorption_db_per_km(0.0).is_err());
        assert!(thorp_absorption_db_per_km(-1.0).is_err());
    }

    #[test]
    fn attenuation_reference_points() {
        let ch = quiet();
        let one = attenuation(LinkGeometry::new(1.0).unwrap(), &ch);
        assert!((one - 1.0).abs() < 1e-3);
        let km = attenuation(LinkGeometry::new(1000.0).unwrap(), &ch);
        let expect = 1000f64.powf(1.5) * 10f64.powf(0.080_518_1);
        assert!((km / expect - 1.0).abs() < 1e-6);
        assert!((km - 3.80e4).abs() < 100.0);
    }

    #[test]
    fn noise_constant_passthrough_and_wind() {
        assert_eq!(ambient_noise_power(&quiet()), 1e-9);
        let calm = ChannelParams::default();
        let windy = ChannelParams {
            ambient_noise: NoiseConfig::SpectralModel {
                shipping: 0.5,
                wind_speed_mps: 10.0,
            },
            ..calm
        };
        assert!(ambient_noise_power(&windy) > ambient_noise_power(&calm));
    }

    #[test]
    fn sinr_edge_cases() {
        let ch = quiet();
        let link = LinkGeometry::new(1000.0).unwrap();
        assert_eq!(sinr(0.0, link, &[], &ch, 0.0).unwrap(), 0.0);
        let g1 = sinr(4.0, link, &[], &ch, 0.0).unwrap();
        let g2 = sinr(8.0, link, &[], &ch, 0.0).unwrap();
        assert!((g2 / g1 - 2.0).abs() < 1e-12);
        let silent = ChannelParams {
            ambient_noise: NoiseConfig::ConstantPower { watts: 0.0 },
            ..ch
        };
        assert_eq!(
            sinr(1.0, link, &[], &silent, 0.0),
            Err(AcousticsError::ZeroDenominator)
        );
        assert!(sinr(-1.0, link, &[], &ch, 0.0).is_err());
    }

    #[test]
    fn mirrored_links_are_symmetric() {
        let ch = quiet();
        let tx = [[-500.0, 0.0, 0.0], [500.0, 0.0, 0.0]];
        let rx = [[-500.0, 0.0, 900.0], [500.0, 0.0, 900.0]];
        let g = |i: usize, j: usize| {
            sinr(
                8.0,
                LinkGeometry::between(&tx[i], &rx[i]),
                &[(8.0, LinkGeometry::between(&tx[j], &rx[i]))],
                &ch,
                0.0,
            )
            .unwrap()
        };
        assert_eq!(g(0, 1), g(1, 0));
    }

    #[test]
    fn rate_threshold_branch() {
        let ch = ChannelParams::default();
        let r = achievable_rate(10.0, &ch, 10.0);
        assert!((r - 3000.0 * 11f64.log2()).abs() < 1e-9);
        assert!((r - 10378.0).abs() < 1.0);
        assert_eq!(achievable_rate(10.0 - 1e-12, &ch, 10.0), 0.0);
        assert_eq!(achievable_rate(1.0, &ch, 0.0), 3000.0);
    }

    #[test]
    fn slot_duration_cases() {
        let ch = ChannelParams::default();
        assert!((slot_duration(3.0, 0.0, 0.1, &ch) - 3.1).abs() < 1e-12);
        let diag = (8000f64.powi(2) + 1000f64.powi(2)).sqrt();
        let t = slot_duration(3.0, diag, 0.1, &ch);
        assert!((t - 8.475).abs() < 1e-3, "{t}");
        let t2 = slot_duration(3.0, 2.0 * diag, 0.1, &ch);
        assert!((t2 - t - diag / 1500.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(ChannelParams::default().validate().is_ok());
        let low = ChannelParams {
            carrier_freq_khz: 0.3,
            ..ChannelParams::default()
        };
        assert!(low.validate().is_err());
        let eff = ChannelParams {
            transducer_eff: 1.2,
            ..ChannelParams::default()
        };
        assert!(eff.validate().is_err());
        assert!(LinkGeometry::new(0.0).is_err());
        assert!(LinkGeometry::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn attenuation_increasing(d in 1.0f64..20_000.0, k in 1.0f64..2.0, f in 0.5f64..50.0) {
            let ch = ChannelParams { carrier_freq_khz: f, spreading_factor_k: k, ..quiet() };
            let a = attenuation(LinkGeometry::new(d).unwrap(), &ch);
            let a2 = attenuation(LinkGeometry::new(2.0 * d).unwrap(), &ch);
            prop_assert!(a2 / a > 2f64.powf(k));
            let hi = ChannelParams { carrier_freq_khz: f * 1.1, ..ch };
            prop_assert!(attenuation(LinkGeometry::new(d).unwrap(), &hi) > a);
        }

        #[test]
        fn sinr_scale_invariant(p in 0.1f64..64.0, q in 0.0f64..64.0, s in 1e-3f64..1e3,
                                d1 in 10.0f64..5000.0, d2 in 10.0f64..5000.0, is in 0.0f64..1e-6) {
            let ch = quiet();
            let link = LinkGeometry::new(d1).unwrap();
            let other = LinkGeometry::new(d2).unwrap();
            let ia = ambient_noise_power(&ch);
            let g = sinr_with_noise(p, link, &[(q, other)], &ch, is, ia).unwrap();
            let gs = sinr_with_noise(p * s, link, &[(q * s, other)], &ch, is * s, ia * s).unwrap();
            prop_assert!((g - gs).abs() <= 1e-9 * g.abs().max(1e-300));
        }

        #[test]
        fn rate_monotone(g1 in 0.0f64..1e4, dg in 0.0f64..1e3, th in 0.0f64..100.0) {
            let ch = ChannelParams::default();
            prop_assert!(achievable_rate(g1 + dg, &ch, th) >= achievable_rate(g1, &ch, th));
            if g1 < th { prop_assert_eq!(achievable_rate(g1, &ch, th), 0.0); }
        }
    }
}
