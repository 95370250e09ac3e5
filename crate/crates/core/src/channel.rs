//! Seeded channel realizations: Rayleigh small-scale fading, single
//! knife-edge obstruction loss and power-law path loss.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::topology::{ScTopology, VehicleRef};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("path loss is undefined at zero distance")]
    ZeroDistance,
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("invalid power configuration: {0}")]
    InvalidPower(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Small-scale fading model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    /// Circularly symmetric complex Gaussian with unit variance.
    Rayleigh,
    /// Fading coefficient fixed to 1. Deterministic fixtures only.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub carrier_freq_hz: f64,
    pub path_loss_exponent: f64,
    pub knife_edge_enabled: bool,
    pub fading: Fading,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 5.9e9,
            path_loss_exponent: 2.7,
            knife_edge_enabled: true,
            fading: Fading::Rayleigh,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.carrier_freq_hz > 0.0) {
            return Err(ChannelError::InvalidParams(
                "carrier frequency must be positive".into(),
            ));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(ChannelError::InvalidParams(
                "path loss exponent must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }
}

/// Transmit power budget and noise. `W = 1 Hz` normalizes rates to bps/Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    pub p_max: f64,
    pub noise_psd: f64,
    pub bandwidth_hz: f64,
}

impl PowerConfig {
    pub fn new(p_max: f64, noise_psd: f64, bandwidth_hz: f64) -> Result<Self, ChannelError> {
        if !(p_max > 0.0 && noise_psd > 0.0 && bandwidth_hz > 0.0) {
            return Err(ChannelError::InvalidPower(
                "p_max, noise_psd and bandwidth must be positive".into(),
            ));
        }
        Ok(Self {
            p_max,
            noise_psd,
            bandwidth_hz,
        })
    }

    /// `P_max = 1`, `W = 1 Hz` and `N_0` chosen so `P_max / (N_0 W)` is the
    /// requested transmit SNR.
    pub fn from_snr_db(snr_db: f64) -> Self {
        Self {
            p_max: 1.0,
            noise_psd: 10f64.powf(-snr_db / 10.0),
            bandwidth_hz: 1.0,
        }
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.p_max / (self.noise_psd * self.bandwidth_hz)).log10()
    }

    /// Noise power over the full band, `N_0 W`.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.bandwidth_hz
    }
}

/// Amplitude factor `d^(-lambda/2)`.
pub fn path_loss_amplitude(distance_m: f64, exponent: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::ZeroDistance);
    }
    Ok(distance_m.powf(-exponent / 2.0))
}

/// Fresnel-Kirchhoff diffraction parameter of a single edge.
pub fn fresnel_parameter(clearance_m: f64, d_tx_m: f64, d_rx_m: f64, wavelength_m: f64) -> f64 {
    clearance_m * (2.0 * (d_tx_m + d_rx_m) / (wavelength_m * d_tx_m * d_rx_m)).sqrt()
}

/// Single knife-edge loss `J(nu)` in dB from the standard approximation.
pub fn knife_edge_loss_from_nu(nu: f64) -> f64 {
    if nu <= -0.78 {
        0.0
    } else {
        let t = nu - 0.1;
        6.9 + 20.0 * ((t * t + 1.0).sqrt() + t).log10()
    }
}

pub fn knife_edge_loss_db(clearance_m: f64, d_tx_m: f64, d_rx_m: f64, wavelength_m: f64) -> f64 {
    knife_edge_loss_from_nu(fresnel_parameter(clearance_m, d_tx_m, d_rx_m, wavelength_m))
}

/// Deterministic large-scale amplitude of every vehicle pair. Computed once
/// per topology and reused across fading realizations.
#[derive(Debug, Clone)]
pub struct LargeScale {
    n: usize,
    amplitude: Vec<f64>,
    obstruction_loss_db: Vec<f64>,
}

impl LargeScale {
    pub fn new(topology: &ScTopology, params: &ChannelParams) -> Result<Self, ChannelError> {
        params.validate()?;
        let n = topology.num_vehicles();
        let vehicles: Vec<VehicleRef> = topology.all_vehicles().collect();
        let wavelength = params.wavelength_m();
        let mut amplitude = vec![0.0; n * n];
        let mut obstruction_loss_db = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let d = topology.distance(vehicles[a], vehicles[b]);
                let pl = path_loss_amplitude(d, params.path_loss_exponent)?;
                let loss_db = if params.knife_edge_enabled {
                    topology
                        .obstructors(vehicles[a], vehicles[b])
                        .iter()
                        .map(|o| {
                            knife_edge_loss_db(
                                o.clearance_m,
                                o.distance_from_tx_m,
                                d - o.distance_from_tx_m,
                                wavelength,
                            )
                        })
                        .fold(0.0, f64::max)
                } else {
                    0.0
                };
                let amp = pl * 10f64.powf(-loss_db / 20.0);
                for (i, j) in [(a, b), (b, a)] {
                    amplitude[i * n + j] = amp;
                    obstruction_loss_db[i * n + j] = loss_db;
                }
            }
        }
        Ok(Self {
            n,
            amplitude,
            obstruction_loss_db,
        })
    }

    pub fn amplitude(&self, a: usize, b: usize) -> f64 {
        self.amplitude[a * self.n + b]
    }

    pub fn obstruction_loss_db(&self, a: usize, b: usize) -> f64 {
        self.obstruction_loss_db[a * self.n + b]
    }

    /// Draws one fading realization. Pairs are visited in `(a < b)` row-major
    /// order so the result depends only on the seed.
    pub fn sample(&self, fading: Fading, seed: u64) -> ChannelMatrix {
        let n = self.n;
        let mut gains = vec![Complex64::new(0.0, 0.0); n * n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid sigma");
        for a in 0..n {
            for b in (a + 1)..n {
                let small = match fading {
                    Fading::Rayleigh => {
                        Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
                    }
                    Fading::Unit => Complex64::new(1.0, 0.0),
                };
                let h = small * self.amplitude(a, b);
                gains[a * n + b] = h;
                gains[b * n + a] = h;
            }
        }
        ChannelMatrix { n, gains, seed }
    }
}

/// Complex gain of every ordered vehicle pair, indexed by flat vehicle id.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n: usize,
    gains: Vec<Complex64>,
    pub seed: u64,
}

impl ChannelMatrix {
    /// Builds a matrix from explicit gains; `gain(a, b)` is queried for
    /// `a < b` and mirrored.
    pub fn from_fn(n: usize, mut gain: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut gains = vec![Complex64::new(0.0, 0.0); n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let h = gain(a, b);
                gains[a * n + b] = h;
                gains[b * n + a] = h;
            }
        }
        Self { n, gains, seed: 0 }
    }

    pub fn num_vehicles(&self) -> usize {
        self.n
    }

    pub fn gain(&self, tx: usize, rx: usize) -> Complex64 {
        self.gains[tx * self.n + rx]
    }

    /// `|h|^2` between two flat vehicle ids.
    pub fn gain_power(&self, tx: usize, rx: usize) -> f64 {
        self.gain(tx, rx).norm_sqr()
    }

    /// Writes `tx_id,rx_id,re,im` for every ordered off-diagonal pair.
    pub fn write_csv(&self, path: &Path) -> Result<(), ChannelError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "tx_id,rx_id,re,im")?;
        for tx in 0..self.n {
            for rx in 0..self.n {
                if tx != rx {
                    let h = self.gain(tx, rx);
                    writeln!(out, "{tx},{rx},{:.12e},{:.12e}", h.re, h.im)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn sample_channel(
    topology: &ScTopology,
    params: &ChannelParams,
    seed: u64,
) -> Result<ChannelMatrix, ChannelError> {
    Ok(LargeScale::new(topology, params)?.sample(params.fading, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_aligned_topology;
    use approx::assert_relative_eq;

    #[test]
    fn path_loss_values() {
        assert_eq!(path_loss_amplitude(1.0, 2.7).unwrap(), 1.0);
        assert_relative_eq!(path_loss_amplitude(10.0, 2.7).unwrap(), 10f64.powf(-1.35));
        assert_relative_eq!(
            path_loss_amplitude(10.0, 2.7).unwrap(),
            0.044668,
            epsilon = 1e-6
        );
        assert!(matches!(
            path_loss_amplitude(0.0, 2.7),
            Err(ChannelError::ZeroDistance)
        ));
    }

    #[test]
    fn knife_edge_values() {
        assert_eq!(knife_edge_loss_from_nu(-0.78), 0.0);
        assert_eq!(knife_edge_loss_from_nu(-3.0), 0.0);
        let grazing = 6.9 + 20.0 * (1.01f64.sqrt() - 0.1).log10();
        assert_relative_eq!(knife_edge_loss_from_nu(0.0), grazing, epsilon = 1e-12);
        assert_relative_eq!(knife_edge_loss_from_nu(0.0), 6.03, epsilon = 0.01);
        // sqrt(2.3^2 + 1) + 2.3 = 4.8080
        assert_relative_eq!(knife_edge_loss_from_nu(2.4), 20.539, epsilon = 1e-3);
        // zero clearance is grazing regardless of geometry
        assert_relative_eq!(
            knife_edge_loss_db(0.0, 3.0, 7.0, 0.05),
            grazing,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unit_fading_without_obstruction_is_pure_path_loss() {
        let topo = build_aligned_topology(4, 6, 5.0).unwrap();
        let params = ChannelParams {
            knife_edge_enabled: false,
            fading: Fading::Unit,
            ..Default::default()
        };
        let m = sample_channel(&topo, &params, 9).unwrap();
        let a = VehicleRef::new(0, 0);
        let b = VehicleRef::new(2, 3);
        let d = topo.distance(a, b);
        let g = m.gain_power(topo.flat_index(a), topo.flat_index(b));
        assert_relative_eq!(g, d.powf(-2.7), max_relative = 1e-12);
    }

    #[test]
    fn deterministic_and_reciprocal() {
        let topo = build_aligned_topology(3, 4, 5.0).unwrap();
        let params = ChannelParams::default();
        let a = sample_channel(&topo, &params, 42).unwrap();
        let b = sample_channel(&topo, &params, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_channel(&topo, &params, 43).unwrap();
        assert_ne!(a, c);
        for i in 0..a.num_vehicles() {
            for j in 0..a.num_vehicles() {
                assert_eq!(a.gain(i, j), a.gain(j, i));
                assert!(a.gain(i, j).re.is_finite());
            }
        }
    }

    #[test]
    fn gain_power_magnitude() {
        let m = ChannelMatrix::from_fn(3, |a, b| match (a, b) {
            (0, 1) => Complex64::new(3.0, 4.0),
            _ => Complex64::new(0.0, 0.0),
        });
        assert_eq!(m.gain_power(0, 1), 25.0);
        assert_eq!(m.gain_power(1, 0), 25.0);
        assert_eq!(m.gain_power(0, 2), 0.0);
    }

    #[test]
    fn obstructed_pair_carries_grazing_loss() {
        let topo = build_aligned_topology(4, 6, 5.0).unwrap();
        let ls = LargeScale::new(&topo, &ChannelParams::default()).unwrap();
        let a = topo.flat_index(VehicleRef::new(0, 0));
        let b = topo.flat_index(VehicleRef::new(0, 2));
        let c = topo.flat_index(VehicleRef::new(0, 1));
        assert_relative_eq!(ls.obstruction_loss_db(a, b), knife_edge_loss_from_nu(0.0));
        assert_eq!(ls.obstruction_loss_db(a, c), 0.0);
    }

    #[test]
    fn snr_round_trip() {
        let p = PowerConfig::from_snr_db(50.0);
        assert_relative_eq!(p.snr_db(), 50.0, epsilon = 1e-9);
        assert_relative_eq!(p.noise_power(), 1e-5, max_relative = 1e-12);
        assert!(PowerConfig::new(0.0, 1.0, 1.0).is_err());
    }
}
