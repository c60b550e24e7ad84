//! RQSM physical layer: QAM constellation, bit-to-frame mapping, RIS phase
//! configuration, received-signal synthesis and joint ML detection.
//!
//! A frame carries `log2(M)` symbol bits followed by `log2(N_S)` bits for the
//! in-phase antenna and `log2(N_S)` bits for the quadrature antenna. The
//! real part of the QAM symbol reaches the in-phase antenna through the first
//! RIS half and the imaginary part reaches the quadrature antenna through the
//! second half. Each half is phase-aligned to its target antenna.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::SelectedChannel;
use crate::error::{Error, Result};

/// Link parameters shared by the transmitter and the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// QAM order `M`.
    pub mod_order: usize,
    /// RIS reflector count `N` (even).
    pub n_reflectors: usize,
    /// Candidate receive antennas `N_R`.
    pub n_rx: usize,
    /// Selected receive antennas `N_S`.
    pub n_sel: usize,
    /// Symbol energy `E_s`.
    pub symbol_energy: f64,
    /// Noise variance `N_0`.
    pub noise_variance: f64,
}

impl SystemConfig {
    pub fn new(mod_order: usize, n_reflectors: usize, n_rx: usize, n_sel: usize) -> Self {
        SystemConfig {
            mod_order,
            n_reflectors,
            n_rx,
            n_sel,
            symbol_energy: 1.0,
            noise_variance: 0.0,
        }
    }

    pub fn with_noise_variance(mut self, n0: f64) -> Self {
        self.noise_variance = n0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mod_order < 4 || !self.mod_order.is_power_of_two() {
            return Err(Error::config(format!(
                "modulation order must be a power of two >= 4, got {}",
                self.mod_order
            )));
        }
        if self.n_reflectors == 0 || !self.n_reflectors.is_multiple_of(2) {
            return Err(Error::config(format!(
                "reflector count must be even and positive, got {}",
                self.n_reflectors
            )));
        }
        if self.n_sel == 0 || !self.n_sel.is_power_of_two() {
            return Err(Error::config(format!(
                "selected antenna count must be a power of two, got {}",
                self.n_sel
            )));
        }
        if self.n_sel > self.n_rx {
            return Err(Error::config(format!(
                "cannot select {} of {} antennas",
                self.n_sel, self.n_rx
            )));
        }
        if !(self.symbol_energy >= 0.0 && self.symbol_energy.is_finite()) {
            return Err(Error::config("symbol energy must be finite and nonnegative"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::config("noise variance must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Bits per channel use.
    pub fn bits_per_frame(&self) -> usize {
        log2_exact(self.mod_order) + 2 * log2_exact(self.n_sel)
    }
}

fn log2_exact(v: usize) -> usize {
    v.trailing_zeros() as usize
}

/// Spectral efficiency `log2(M) + 2·log2(N_S)` in bits per channel use.
pub fn spectral_efficiency(mod_order: usize, n_sel: usize) -> Result<usize> {
    if mod_order == 0 || !mod_order.is_power_of_two() || n_sel == 0 || !n_sel.is_power_of_two() {
        return Err(Error::config(format!(
            "M = {mod_order} and N_S = {n_sel} must both be powers of two"
        )));
    }
    Ok(log2_exact(mod_order) + 2 * log2_exact(n_sel))
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = 0;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

/// Gray-coded square or rectangular QAM with unit average energy.
///
/// Symbol index `k` is the bit pattern read MSB first. The leading
/// `ceil(log2 M / 2)` bits pick the in-phase level and the rest pick the
/// quadrature level, each through a binary-reflected Gray code, so `M = 8`
/// is the 4×2 rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    bits: usize,
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        if order < 4 || !order.is_power_of_two() {
            return Err(Error::config(format!(
                "QAM order must be a power of two >= 4, got {order}"
            )));
        }
        let bits = log2_exact(order);
        let q_bits = bits / 2;
        let i_bits = bits - q_bits;
        let (li, lq) = (1usize << i_bits, 1usize << q_bits);
        // mean square of the PAM alphabet {±1, ±3, ...} with L levels is (L²-1)/3
        let energy = ((li * li - 1) + (lq * lq - 1)) as f64 / 3.0;
        let scale = energy.sqrt().recip();
        let level = |gray: usize, levels: usize| (2 * gray_decode(gray)) as f64 - (levels - 1) as f64;
        let points = (0..order)
            .map(|k| {
                let gi = k >> q_bits;
                let gq = k & (lq - 1);
                Complex64::new(level(gi, li) * scale, level(gq, lq) * scale)
            })
            .collect();
        Ok(Constellation { bits, points })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Maps `log2(M)` bits (MSB first) to a constellation point.
    pub fn modulate(&self, bits: &[u8]) -> Result<Complex64> {
        if bits.len() != self.bits {
            return Err(Error::arg(format!(
                "{}-QAM takes {} bits, got {}",
                self.order(),
                self.bits,
                bits.len()
            )));
        }
        Ok(self.points[bits_to_index(bits)?])
    }

    /// Bits of symbol `index`, MSB first.
    pub fn symbol_bits(&self, index: usize) -> Vec<u8> {
        index_to_bits(index, self.bits)
    }
}

fn bits_to_index(bits: &[u8]) -> Result<usize> {
    bits.iter().try_fold(0usize, |acc, &b| match b {
        0 | 1 => Ok((acc << 1) | b as usize),
        _ => Err(Error::arg(format!("bit value {b} is not 0 or 1"))),
    })
}

fn index_to_bits(index: usize, width: usize) -> Vec<u8> {
    (0..width).rev().map(|i| ((index >> i) & 1) as u8).collect()
}

/// One transmission: the bits and what they select.
#[derive(Debug, Clone, PartialEq)]
pub struct RqsmFrame {
    pub bits: Vec<u8>,
    pub symbol_index: usize,
    pub symbol: Complex64,
    /// In-phase target antenna, 1-based position within the selected subset.
    pub l_re: usize,
    /// Quadrature target antenna, 1-based position within the selected subset.
    pub l_im: usize,
}

/// RIS phase per reflector, radians in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(pub Vec<f64>);

impl PhaseVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Received amplitudes at the selected antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedVector(pub Vec<Complex64>);

impl ReceivedVector {
    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }
}

/// Outcome of ML detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub l_re: usize,
    pub l_im: usize,
    pub symbol_index: usize,
    /// Squared Euclidean distance of the winning hypothesis.
    pub metric: f64,
}

/// Bit mapper, demapper and detector for one [`SystemConfig`].
#[derive(Debug, Clone)]
pub struct Modem {
    config: SystemConfig,
    constellation: Constellation,
    index_bits: usize,
}

impl Modem {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let constellation = Constellation::new(config.mod_order)?;
        let index_bits = log2_exact(config.n_sel);
        Ok(Modem {
            config,
            constellation,
            index_bits,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn bits_per_frame(&self) -> usize {
        self.constellation.bits_per_symbol() + 2 * self.index_bits
    }

    /// Splits `[symbol bits | l_re bits | l_im bits]` into a frame.
    pub fn map_bits(&self, bits: &[u8]) -> Result<RqsmFrame> {
        if bits.len() != self.bits_per_frame() {
            return Err(Error::arg(format!(
                "frame takes {} bits, got {}",
                self.bits_per_frame(),
                bits.len()
            )));
        }
        let sb = self.constellation.bits_per_symbol();
        let symbol_index = bits_to_index(&bits[..sb])?;
        let l_re = bits_to_index(&bits[sb..sb + self.index_bits])? + 1;
        let l_im = bits_to_index(&bits[sb + self.index_bits..])? + 1;
        Ok(RqsmFrame {
            bits: bits.to_vec(),
            symbol_index,
            symbol: self.constellation.point(symbol_index),
            l_re,
            l_im,
        })
    }

    /// Inverse of [`Modem::map_bits`].
    pub fn demap_bits(&self, l_re: usize, l_im: usize, symbol_index: usize) -> Vec<u8> {
        let mut bits = self.constellation.symbol_bits(symbol_index);
        bits.extend(index_to_bits(l_re - 1, self.index_bits));
        bits.extend(index_to_bits(l_im - 1, self.index_bits));
        bits
    }

    /// Draws `η` uniform bits.
    pub fn random_bits<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        (0..self.bits_per_frame()).map(|_| rng.random::<bool>() as u8).collect()
    }

    /// Synthesizes the received vector, including `CN(0, N_0)` noise.
    ///
    /// Noise is always drawn (real then imaginary part per antenna) so the
    /// random stream advances identically whatever `N_0` is.
    pub fn transmit_receive<R: Rng + ?Sized>(
        &self,
        sel: &SelectedChannel,
        frame: &RqsmFrame,
        phases: &PhaseVector,
        rng: &mut R,
    ) -> Result<ReceivedVector> {
        self.check_channel(sel)?;
        if phases.0.len() != sel.n_reflectors() {
            return Err(Error::arg(format!(
                "{} phases for {} reflectors",
                phases.0.len(),
                sel.n_reflectors()
            )));
        }
        let half = sel.n_reflectors() / 2;
        let rot: Vec<Complex64> = phases.0.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        let amp = self.config.symbol_energy.sqrt();
        let sigma = (self.config.noise_variance / 2.0).sqrt();
        let y = (0..sel.n_sel())
            .map(|l| {
                let g_i = combine(sel.i_column(l), &rot[..half]);
                let g_q = combine(sel.q_column(l), &rot[half..]);
                let clean = amp * superpose(g_i, g_q, frame.symbol);
                let nr: f64 = rng.sample(StandardNormal);
                let ni: f64 = rng.sample(StandardNormal);
                clean + Complex64::new(nr * sigma, ni * sigma)
            })
            .collect();
        Ok(ReceivedVector(y))
    }

    /// Joint ML search over all `N_S² · M` hypotheses `(l_re, l_im, symbol)`.
    ///
    /// Hypotheses are enumerated with `l_re` outermost and the symbol index
    /// innermost; the first minimum in that order wins.
    pub fn ml_detect(&self, y: &ReceivedVector, sel: &SelectedChannel) -> Result<Detection> {
        self.check_channel(sel)?;
        let ns = sel.n_sel();
        if y.0.len() != ns {
            return Err(Error::arg(format!("{} received samples for {ns} antennas", y.0.len())));
        }
        let half = sel.n_reflectors() / 2;

        // Effective gains: g_i[a][l] is what antenna l sees from the first RIS
        // half when that half is aligned to antenna a; likewise g_q.
        let mut g_i = vec![Complex64::default(); ns * ns];
        let mut g_q = vec![Complex64::default(); ns * ns];
        for a in 0..ns {
            let phases = ris_phases(sel, a + 1, a + 1)?;
            let rot: Vec<Complex64> = phases.0.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
            for l in 0..ns {
                g_i[a * ns + l] = combine(sel.i_column(l), &rot[..half]);
                g_q[a * ns + l] = combine(sel.q_column(l), &rot[half..]);
            }
        }

        let amp = self.config.symbol_energy.sqrt();
        let points = self.constellation.points();
        let mut best = Detection {
            l_re: 1,
            l_im: 1,
            symbol_index: 0,
            metric: f64::INFINITY,
        };
        for a in 0..ns {
            for b in 0..ns {
                for (k, &x) in points.iter().enumerate() {
                    let metric: f64 = (0..ns)
                        .map(|l| (y.0[l] - amp * superpose(g_i[a * ns + l], g_q[b * ns + l], x)).norm_sqr())
                        .sum();
                    if metric < best.metric {
                        best = Detection {
                            l_re: a + 1,
                            l_im: b + 1,
                            symbol_index: k,
                            metric,
                        };
                    }
                }
            }
        }
        Ok(best)
    }

    fn check_channel(&self, sel: &SelectedChannel) -> Result<()> {
        if sel.n_sel() != self.config.n_sel || sel.n_reflectors() != self.config.n_reflectors {
            return Err(Error::arg(format!(
                "selected channel is {}x{}, configuration expects {}x{}",
                sel.n_reflectors(),
                sel.n_sel(),
                self.config.n_reflectors,
                self.config.n_sel
            )));
        }
        Ok(())
    }
}

/// `Σ_s h_s · e^{jφ_s}`.
fn combine(h: &[Complex64], rot: &[Complex64]) -> Complex64 {
    h.iter().zip(rot).map(|(h, r)| h * r).sum()
}

/// `g_i·x_re + j·g_q·x_im`.
fn superpose(g_i: Complex64, g_q: Complex64, x: Complex64) -> Complex64 {
    g_i * x.re + Complex64::i() * g_q * x.im
}

/// RIS phases that co-phase the first half with in-phase antenna `l_re` and
/// the second half with quadrature antenna `l_im` (1-based subset
/// positions).
///
/// With `h = α·e^{-jθ}`, each reflector gets `φ = θ`, so `h·e^{jφ} = α`.
pub fn ris_phases(sel: &SelectedChannel, l_re: usize, l_im: usize) -> Result<PhaseVector> {
    let ns = sel.n_sel();
    if !(1..=ns).contains(&l_re) || !(1..=ns).contains(&l_im) {
        return Err(Error::arg(format!(
            "antenna positions ({l_re}, {l_im}) outside 1..={ns}"
        )));
    }
    let conj_angle = |h: &Complex64| (-h.arg()).rem_euclid(TAU);
    let phases = sel
        .i_column(l_re - 1)
        .iter()
        .chain(sel.q_column(l_im - 1))
        .map(conj_angle)
        // rem_euclid can round up to exactly TAU for tiny negative inputs
        .map(|p| if p >= TAU { 0.0 } else { p })
        .collect();
    Ok(PhaseVector(phases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{coas_select, AntennaSubset, ChannelMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_bit_patterns(width: usize) -> impl Iterator<Item = Vec<u8>> {
        (0..1usize << width).map(move |v| index_to_bits(v, width))
    }

    fn random_selected(n: usize, n_rx: usize, n_s: usize, seed: u64) -> SelectedChannel {
        let h = ChannelMatrix::sample(n, n_rx, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        coas_select(&h, n_s).unwrap()
    }

    #[test]
    fn spectral_efficiency_values() {
        assert_eq!(spectral_efficiency(4, 2).unwrap(), 4);
        assert_eq!(spectral_efficiency(16, 2).unwrap(), 6);
        assert_eq!(spectral_efficiency(8, 4).unwrap(), 7);
        assert!(spectral_efficiency(6, 2).is_err());
        assert!(spectral_efficiency(8, 3).is_err());
    }

    #[test]
    fn constellations_have_unit_energy_and_distinct_points() {
        for m in [4, 8, 16, 32, 64] {
            let c = Constellation::new(m).unwrap();
            let energy: f64 = c.points().iter().map(Complex64::norm_sqr).sum::<f64>() / m as f64;
            assert!((energy - 1.0).abs() < 1e-12, "M={m}: {energy}");
            for (i, a) in c.points().iter().enumerate() {
                for b in &c.points()[i + 1..] {
                    assert!((a - b).norm() > 1e-6);
                }
            }
        }
        let q8 = Constellation::new(8).unwrap();
        let mut re: Vec<f64> = q8.points().iter().map(|p| p.re).collect();
        re.sort_by(f64::total_cmp);
        re.dedup();
        assert_eq!(re.len(), 4, "8-QAM is a 4x2 grid");
        assert!(Constellation::new(2).is_err());
        assert!(Constellation::new(12).is_err());
    }

    #[test]
    fn qpsk_points() {
        let c = Constellation::new(4).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.modulate(&[0, 0]).unwrap() - Complex64::new(-s, -s)).norm() < 1e-15);
        assert!((c.modulate(&[1, 1]).unwrap() - Complex64::new(s, s)).norm() < 1e-15);
        assert!(c.modulate(&[1]).is_err());
        assert!(c.modulate(&[1, 2]).is_err());
    }

    #[test]
    fn nearest_neighbours_differ_in_one_bit() {
        for m in [4, 8, 16, 64] {
            let c = Constellation::new(m).unwrap();
            let pts = c.points();
            let dmin = pts
                .iter()
                .enumerate()
                .flat_map(|(i, a)| pts[i + 1..].iter().map(move |b| (a - b).norm()))
                .fold(f64::INFINITY, f64::min);
            let mut pairs = 0;
            for i in 0..m {
                for j in i + 1..m {
                    if (pts[i] - pts[j]).norm() < dmin + 1e-9 {
                        pairs += 1;
                        assert_eq!((i ^ j).count_ones(), 1, "M={m}: {i} vs {j}");
                    }
                }
            }
            assert!(pairs > 0);
        }
    }

    #[test]
    fn map_bits_segment_order() {
        let modem = Modem::new(SystemConfig::new(4, 4, 4, 2)).unwrap();
        let f = modem.map_bits(&[0, 0, 0, 0]).unwrap();
        assert_eq!((f.symbol_index, f.l_re, f.l_im), (0, 1, 1));
        assert_eq!(f.symbol, modem.constellation().point(0));
        let f = modem.map_bits(&[0, 0, 1, 1]).unwrap();
        assert_eq!((f.symbol_index, f.l_re, f.l_im), (0, 2, 2));
        let f = modem.map_bits(&[1, 0, 0, 1]).unwrap();
        assert_eq!((f.symbol_index, f.l_re, f.l_im), (2, 1, 2));
        assert!(modem.map_bits(&[0, 0, 0]).is_err());
        assert_eq!(modem.demap_bits(1, 1, 0), vec![0, 0, 0, 0]);
    }

    #[test]
    fn map_demap_round_trip_exhaustive() {
        for (m, ns) in [(4, 1), (4, 2), (8, 2), (16, 2), (16, 4), (64, 2)] {
            let modem = Modem::new(SystemConfig::new(m, 4, 4, ns)).unwrap();
            let eta = modem.bits_per_frame();
            assert_eq!(eta, spectral_efficiency(m, ns).unwrap());
            for bits in all_bit_patterns(eta) {
                let f = modem.map_bits(&bits).unwrap();
                assert_eq!(modem.demap_bits(f.l_re, f.l_im, f.symbol_index), bits);
            }
        }
    }

    #[test]
    fn antenna_error_touches_only_its_segment() {
        let modem = Modem::new(SystemConfig::new(16, 4, 8, 4)).unwrap();
        let base = modem.demap_bits(2, 3, 9);
        let wrong_re = modem.demap_bits(4, 3, 9);
        let wrong_im = modem.demap_bits(2, 1, 9);
        let diff = |a: &[u8], b: &[u8]| a.iter().zip(b).enumerate().filter(|(_, (x, y))| x != y).map(|(i, _)| i).collect::<Vec<_>>();
        assert!(diff(&base, &wrong_re).iter().all(|i| (4..6).contains(i)));
        assert!(diff(&base, &wrong_im).iter().all(|i| (6..8).contains(i)));
        assert!(!diff(&base, &wrong_re).is_empty());
    }

    #[test]
    fn phases_for_real_positive_channel_are_zero() {
        let h = ChannelMatrix::from_rows(&vec![vec![Complex64::new(0.7, 0.0); 2]; 4]).unwrap();
        let sel = SelectedChannel::from_subset(&h, AntennaSubset::new(vec![1, 2], 2).unwrap()).unwrap();
        assert!(ris_phases(&sel, 1, 2).unwrap().0.iter().all(|&p| p == 0.0));
        assert!(ris_phases(&sel, 0, 1).is_err());
        assert!(ris_phases(&sel, 1, 3).is_err());
    }

    #[test]
    fn single_entry_phase_is_conjugate_angle() {
        let h0 = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_3);
        let h = ChannelMatrix::from_rows(&[vec![h0], vec![Complex64::new(1.0, 0.0)]]).unwrap();
        let sel = SelectedChannel::from_subset(&h, AntennaSubset::new(vec![1], 1).unwrap()).unwrap();
        let p = ris_phases(&sel, 1, 1).unwrap();
        assert!((p.0[0] - std::f64::consts::FRAC_PI_3).abs() < 1e-15);
        let product = h0 * Complex64::from_polar(1.0, p.0[0]);
        assert!((product - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn coherent_combining_dominates_other_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..50 {
            let sel = random_selected(16, 4, 2, seed);
            let phases = ris_phases(&sel, 2, 1).unwrap();
            let rot: Vec<Complex64> = phases.0.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
            let gain = combine(sel.i_column(1), &rot[..8]);
            let alpha_sum: f64 = sel.i_column(1).iter().map(|h| h.norm()).sum();
            assert!((gain.re - alpha_sum).abs() < 1e-12 && gain.im.abs() < 1e-12);
            let q_gain = combine(sel.q_column(0), &rot[8..]);
            assert!(q_gain.re > 0.0 && q_gain.im.abs() < 1e-12);
            for _ in 0..20 {
                let other: Vec<Complex64> = (0..8).map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * TAU)).collect();
                assert!(combine(sel.i_column(1), &other).norm() <= alpha_sum + 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_unit_channel_passes_symbol_through() {
        let one = Complex64::new(1.0, 0.0);
        let h = ChannelMatrix::from_rows(&[vec![one], vec![one]]).unwrap();
        let sel = SelectedChannel::from_subset(&h, AntennaSubset::new(vec![1], 1).unwrap()).unwrap();
        let mut cfg = SystemConfig::new(4, 2, 1, 1);
        cfg.symbol_energy = 4.0;
        let modem = Modem::new(cfg).unwrap();
        let frame = RqsmFrame {
            bits: vec![],
            symbol_index: 0,
            symbol: one,
            l_re: 1,
            l_im: 1,
        };
        let y = modem
            .transmit_receive(&sel, &frame, &PhaseVector(vec![0.0, 0.0]), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(y.0[0], Complex64::new(2.0, 0.0));
    }

    #[test]
    fn noiseless_loopback_recovers_every_message() {
        for (m, n, n_rx, ns) in [(4, 4, 4, 2), (8, 2, 4, 2), (16, 8, 4, 2), (4, 8, 8, 4), (8, 16, 2, 1)] {
            let modem = Modem::new(SystemConfig::new(m, n, n_rx, ns)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(m as u64 * 31 + n as u64);
            for trial in 0..3 {
                let sel = random_selected(n, n_rx, ns, trial);
                for bits in all_bit_patterns(modem.bits_per_frame()) {
                    let frame = modem.map_bits(&bits).unwrap();
                    let phases = ris_phases(&sel, frame.l_re, frame.l_im).unwrap();
                    let y = modem.transmit_receive(&sel, &frame, &phases, &mut rng).unwrap();
                    let d = modem.ml_detect(&y, &sel).unwrap();
                    assert_eq!(modem.demap_bits(d.l_re, d.l_im, d.symbol_index), bits);
                    assert_eq!(d.metric, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_energy_gives_pure_noise() {
        let mut cfg = SystemConfig::new(4, 4, 4, 2).with_noise_variance(0.3);
        cfg.symbol_energy = 0.0;
        let modem = Modem::new(cfg).unwrap();
        let sel = random_selected(4, 4, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frame = modem.map_bits(&[1, 0, 1, 0]).unwrap();
        let phases = ris_phases(&sel, frame.l_re, frame.l_im).unwrap();
        let mut power = 0.0;
        let trials = 50_000;
        for _ in 0..trials {
            let y = modem.transmit_receive(&sel, &frame, &phases, &mut rng).unwrap();
            power += y.0.iter().map(Complex64::norm_sqr).sum::<f64>();
        }
        let var = power / (2 * trials) as f64;
        assert!((var - 0.3).abs() < 0.01, "{var}");
    }

    #[test]
    fn detector_output_is_argmin() {
        let modem = Modem::new(SystemConfig::new(8, 4, 4, 2).with_noise_variance(0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..200 {
            let sel = random_selected(4, 4, 2, seed);
            let frame = modem.map_bits(&modem.random_bits(&mut rng)).unwrap();
            let phases = ris_phases(&sel, frame.l_re, frame.l_im).unwrap();
            let y = modem.transmit_receive(&sel, &frame, &phases, &mut rng).unwrap();
            let d = modem.ml_detect(&y, &sel).unwrap();
            // every other hypothesis re-evaluated from scratch
            for a in 1..=2 {
                for b in 1..=2 {
                    let p = ris_phases(&sel, a, b).unwrap();
                    for k in 0..8 {
                        let f = RqsmFrame { bits: vec![], symbol_index: k, symbol: modem.constellation().point(k), l_re: a, l_im: b };
                        let noiseless = Modem::new(SystemConfig::new(8, 4, 4, 2)).unwrap();
                        let yy = noiseless.transmit_receive(&sel, &f, &p, &mut rng).unwrap();
                        let metric: f64 = y.0.iter().zip(&yy.0).map(|(u, v)| (u - v).norm_sqr()).sum();
                        assert!(d.metric <= metric + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn random_guessing_limit_at_extreme_noise() {
        let mut cfg = SystemConfig::new(4, 4, 4, 2).with_noise_variance(1e6);
        cfg.symbol_energy = 1.0;
        let modem = Modem::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut errors, mut total) = (0usize, 0usize);
        for _ in 0..20_000 {
            let h = ChannelMatrix::sample(4, 4, &mut rng).unwrap();
            let sel = coas_select(&h, 2).unwrap();
            let bits = modem.random_bits(&mut rng);
            let frame = modem.map_bits(&bits).unwrap();
            let phases = ris_phases(&sel, frame.l_re, frame.l_im).unwrap();
            let y = modem.transmit_receive(&sel, &frame, &phases, &mut rng).unwrap();
            let d = modem.ml_detect(&y, &sel).unwrap();
            let out = modem.demap_bits(d.l_re, d.l_im, d.symbol_index);
            errors += bits.iter().zip(&out).filter(|(a, b)| a != b).count();
            total += bits.len();
        }
        let ber = errors as f64 / total as f64;
        assert!((ber - 0.5).abs() < 0.05, "{ber}");
    }

    #[test]
    fn invalid_configs() {
        assert!(Modem::new(SystemConfig::new(2, 4, 4, 2)).is_err());
        assert!(Modem::new(SystemConfig::new(8, 5, 4, 2)).is_err());
        assert!(Modem::new(SystemConfig::new(8, 4, 4, 3)).is_err());
        assert!(Modem::new(SystemConfig::new(8, 4, 2, 4)).is_err());
        assert!(Modem::new(SystemConfig::new(8, 4, 4, 2).with_noise_variance(-1.0)).is_err());
    }
}
