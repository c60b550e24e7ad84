//! Rayleigh channel realizations, capacity-optimized antenna selection
//! (COAS), subset labelling, and the real-valued feature vector fed to the
//! learned selector.
//!
//! Antenna indices and labels are 1-based throughout the public API, matching
//! the way subsets are usually written down (`{1, 3}` is label 2 for four
//! antennas choose two). Matrix entry accessors are 0-based.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Complex gains between every RIS reflector (rows) and every candidate
/// receive antenna (columns).
///
/// Entries are stored column-major, so a column is one antenna's channel
/// vector and the storage order is exactly the `vec(H)` ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n_reflectors: usize,
    n_rx: usize,
    entries: Vec<Complex64>,
}

impl ChannelMatrix {
    /// Draws an `n_reflectors × n_rx` matrix of i.i.d. `CN(0, 1)` gains.
    ///
    /// The real and imaginary parts of each entry are drawn in that order,
    /// column by column, so the consumed stream is fixed by the dimensions.
    pub fn sample<R: Rng + ?Sized>(n_reflectors: usize, n_rx: usize, rng: &mut R) -> Result<Self> {
        check_dims(n_reflectors, n_rx)?;
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let entries = (0..n_reflectors * n_rx)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * scale, im * scale)
            })
            .collect();
        Ok(ChannelMatrix {
            n_reflectors,
            n_rx,
            entries,
        })
    }

    /// Builds a matrix from column-major entries.
    pub fn from_column_major(n_reflectors: usize, n_rx: usize, entries: Vec<Complex64>) -> Result<Self> {
        check_dims(n_reflectors, n_rx)?;
        if entries.len() != n_reflectors * n_rx {
            return Err(Error::arg(format!(
                "expected {} entries for a {n_reflectors}x{n_rx} matrix, got {}",
                n_reflectors * n_rx,
                entries.len()
            )));
        }
        if entries.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(Error::arg("channel entries must be finite"));
        }
        Ok(ChannelMatrix {
            n_reflectors,
            n_rx,
            entries,
        })
    }

    /// Builds a matrix from row slices (`rows[s][r]`), the way matrices are
    /// usually written down.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n_reflectors = rows.len();
        let n_rx = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != n_rx) {
            return Err(Error::arg("ragged rows"));
        }
        let entries = (0..n_rx)
            .flat_map(|r| rows.iter().map(move |row| row[r]))
            .collect();
        Self::from_column_major(n_reflectors, n_rx, entries)
    }

    /// Inverse of [`feature_vector`]: rebuilds the matrix from the stacked
    /// real and imaginary parts.
    pub fn from_features(n_reflectors: usize, n_rx: usize, features: &[f64]) -> Result<Self> {
        let len = n_reflectors * n_rx;
        if features.len() != 2 * len {
            return Err(Error::arg(format!(
                "feature length {} does not match 2*{n_reflectors}*{n_rx}",
                features.len()
            )));
        }
        let (re, im) = features.split_at(len);
        let entries = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        Self::from_column_major(n_reflectors, n_rx, entries)
    }

    pub fn n_reflectors(&self) -> usize {
        self.n_reflectors
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    /// Entry for reflector `s` and antenna `r`, both 0-based.
    pub fn get(&self, s: usize, r: usize) -> Complex64 {
        self.entries[r * self.n_reflectors + s]
    }

    /// Channel vector of antenna column `r` (0-based).
    pub fn column(&self, r: usize) -> &[Complex64] {
        let n = self.n_reflectors;
        &self.entries[r * n..(r + 1) * n]
    }

    /// Column-major entries, i.e. `vec(H)`.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Squared Euclidean norm of antenna column `r` (0-based).
    pub fn column_norm_sqr(&self, r: usize) -> f64 {
        self.column(r).iter().map(Complex64::norm_sqr).sum()
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.entries.iter().map(Complex64::norm_sqr).sum()
    }
}

fn check_dims(n_reflectors: usize, n_rx: usize) -> Result<()> {
    if n_reflectors == 0 || !n_reflectors.is_multiple_of(2) {
        return Err(Error::config(format!(
            "reflector count must be even and positive (I/Q halves), got {n_reflectors}"
        )));
    }
    if n_rx == 0 {
        return Err(Error::config("at least one receive antenna is required"));
    }
    Ok(())
}

/// `C(n, k)`, exact. Returns 0 when `k > n`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = acc * (n - i) as u128 / (i as u128 + 1);
    }
    u64::try_from(acc).expect("binomial coefficient overflows u64")
}

/// A sorted set of selected antennas together with its class label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AntennaSubset {
    indices: Vec<usize>,
    n_rx: usize,
    label: usize,
}

impl AntennaSubset {
    /// Validates `indices` (1-based, strictly increasing, within `1..=n_rx`)
    /// and computes the label.
    pub fn new(indices: Vec<usize>, n_rx: usize) -> Result<Self> {
        let label = subset_label(&indices, n_rx, indices.len())?;
        Ok(AntennaSubset {
            indices,
            n_rx,
            label,
        })
    }

    pub fn from_label(label: usize, n_rx: usize, n_s: usize) -> Result<Self> {
        let indices = label_to_subset(label, n_rx, n_s)?;
        Ok(AntennaSubset {
            indices,
            n_rx,
            label,
        })
    }

    /// 1-based antenna indices, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// 1-based lexicographic rank among all `C(n_rx, n_s)` subsets.
    pub fn label(&self) -> usize {
        self.label
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// 1-based lexicographic rank of a sorted subset among all `C(n_rx, n_s)`
/// sorted subsets. For four antennas choose two, `{1,2} → 1`, `{1,3} → 2`,
/// ..., `{3,4} → 6`.
pub fn subset_label(indices: &[usize], n_rx: usize, n_s: usize) -> Result<usize> {
    if indices.len() != n_s || n_s == 0 || n_s > n_rx {
        return Err(Error::arg(format!(
            "subset {indices:?} is not a {n_s}-subset of 1..={n_rx}"
        )));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg(format!("subset {indices:?} is not strictly increasing")));
    }
    if indices[0] < 1 || indices[n_s - 1] > n_rx {
        return Err(Error::arg(format!("subset {indices:?} is out of range 1..={n_rx}")));
    }

    // Count the subsets that precede this one: at position i, every value v
    // strictly between the previous pick and indices[i] leaves
    // C(n_rx - v, n_s - i - 1) completions.
    let mut rank: u64 = 0;
    let mut prev = 0;
    for (i, &c) in indices.iter().enumerate() {
        for v in prev + 1..c {
            rank += binomial(n_rx - v, n_s - i - 1);
        }
        prev = c;
    }
    Ok(rank as usize + 1)
}

/// Inverse of [`subset_label`].
pub fn label_to_subset(label: usize, n_rx: usize, n_s: usize) -> Result<Vec<usize>> {
    if n_s == 0 || n_s > n_rx {
        return Err(Error::arg(format!("cannot choose {n_s} of {n_rx} antennas")));
    }
    let total = binomial(n_rx, n_s);
    if label == 0 || label as u64 > total {
        return Err(Error::arg(format!("label {label} outside 1..={total}")));
    }
    let mut remaining = label as u64 - 1;
    let mut out = Vec::with_capacity(n_s);
    let mut v = 1;
    for i in 0..n_s {
        loop {
            let block = binomial(n_rx - v, n_s - i - 1);
            if remaining < block {
                break;
            }
            remaining -= block;
            v += 1;
        }
        out.push(v);
        v += 1;
    }
    Ok(out)
}

/// The `N × N_S` sub-matrix of the selected antennas.
///
/// Rows `0..N/2` (the first RIS half) carry the in-phase branch and rows
/// `N/2..N` the quadrature branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedChannel {
    matrix: ChannelMatrix,
    subset: AntennaSubset,
}

impl SelectedChannel {
    /// Extracts the subset's columns from `h`.
    pub fn from_subset(h: &ChannelMatrix, subset: AntennaSubset) -> Result<Self> {
        if subset.n_rx() != h.n_rx() {
            return Err(Error::arg(format!(
                "subset drawn from {} antennas applied to a channel with {}",
                subset.n_rx(),
                h.n_rx()
            )));
        }
        let entries = subset
            .indices()
            .iter()
            .flat_map(|&r| h.column(r - 1).iter().copied())
            .collect();
        let matrix = ChannelMatrix {
            n_reflectors: h.n_reflectors(),
            n_rx: subset.len(),
            entries,
        };
        Ok(SelectedChannel { matrix, subset })
    }

    pub fn matrix(&self) -> &ChannelMatrix {
        &self.matrix
    }

    pub fn subset(&self) -> &AntennaSubset {
        &self.subset
    }

    pub fn n_reflectors(&self) -> usize {
        self.matrix.n_reflectors
    }

    /// Number of selected antennas `N_S`.
    pub fn n_sel(&self) -> usize {
        self.matrix.n_rx
    }

    /// In-phase half (`H_S^Re`) of selected column `l` (0-based).
    pub fn i_column(&self, l: usize) -> &[Complex64] {
        let col = self.matrix.column(l);
        &col[..col.len() / 2]
    }

    /// Quadrature half (`H_S^Im`) of selected column `l` (0-based).
    pub fn q_column(&self, l: usize) -> &[Complex64] {
        let col = self.matrix.column(l);
        &col[col.len() / 2..]
    }
}

/// Capacity-optimized antenna selection: keeps the `n_s` columns with the
/// largest squared norms.
///
/// Equal norms prefer the lower antenna index. The returned subset is sorted
/// ascending whatever the norm ranking was.
pub fn coas_select(h: &ChannelMatrix, n_s: usize) -> Result<SelectedChannel> {
    if n_s == 0 || !n_s.is_power_of_two() {
        return Err(Error::config(format!(
            "selected antenna count must be a power of two, got {n_s}"
        )));
    }
    if n_s > h.n_rx() {
        return Err(Error::config(format!(
            "cannot select {n_s} of {} antennas",
            h.n_rx()
        )));
    }
    let norms: Vec<f64> = (0..h.n_rx()).map(|r| h.column_norm_sqr(r)).collect();
    let mut order: Vec<usize> = (0..h.n_rx()).collect();
    // Stable sort keeps lower indices first among equal norms.
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut chosen: Vec<usize> = order[..n_s].iter().map(|&r| r + 1).collect();
    chosen.sort_unstable();
    let subset = AntennaSubset::new(chosen, h.n_rx())?;
    SelectedChannel::from_subset(h, subset)
}

/// Real input vector for the learned selector: `[Re vec(H); Im vec(H)]`,
/// length `2·N·N_R`. The whole matrix is used, not the selected part, since
/// the selector must see every candidate antenna.
pub fn feature_vector(h: &ChannelMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * h.entries.len());
    out.extend(h.entries.iter().map(|z| z.re));
    out.extend(h.entries.iter().map(|z| z.im));
    out
}
