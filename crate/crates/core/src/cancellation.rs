//! Least-squares disturbance cancellation.
//!
//! A dictionary gathers delay/Doppler-shifted copies of the direct-path
//! reference; cancellation projects the received matrix onto the orthogonal
//! complement of the dictionary span by solving `min_W ||X - Y W||^2` per
//! antenna and subtracting the reconstruction.
//!
//! Trimmed-window dictionaries (delayed reference longer than the data) model
//! the classic batch canceller; circulant dictionaries keep reference and data
//! windows the same length so zero-Doppler clutter and integer-Hz disturbance
//! bins are annihilated exactly. The same machinery removes already-detected
//! strong targets so weaker echoes masked by their sidelobes become visible.
//!
//! Shift-structured dictionaries are solved through their Gram system, which
//! is assembled exactly with FFT-length correlations instead of materialising
//! the tall column matrix; explicit matrices go through a rank-revealing SVD
//! least-squares solve. Both routes are cross-checked in the test suite.

use crate::beamform::DirectPathEstimate;
use crate::detection::Detection;
use crate::error::{invalid, mismatch, Error, Result};
use crate::fft::FftPair;
use crate::scenario::ArrayData;
use ndarray::{Array2, ShapeBuilder};
use ndarray_linalg::{Cholesky, Eigh, LeastSquaresSvd, UPLO};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

/// Dictionary sizing for the trimmed-window (classic) canceller.
#[derive(Debug, Clone)]
pub struct EcaConfig {
    /// Number of delay taps Q.
    pub delay_taps: usize,
    /// One-sided Doppler bin count P; the dictionary carries 2P+1 Doppler blocks.
    pub doppler_bins: usize,
    /// R: the reference signal is R-1 samples longer than the usable data.
    pub extra_reference: usize,
}

impl EcaConfig {
    pub fn column_count(&self) -> usize {
        (2 * self.doppler_bins + 1) * self.delay_taps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    Eca,
    Meca,
    StrongTarget,
}

/// Delay-tap coverage of the strong-target canceller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrongDelaySpan {
    /// Shifts 0..=r_k + r_0, spanning every range bin up to the detection.
    FromZero,
    /// Shifts r_k - r_0 ..= r_k + r_0 only.
    Windowed,
}

/// One Doppler-modulated group of delayed reference columns.
#[derive(Debug, Clone)]
struct DopplerBlock {
    /// Integer Doppler bin over the dictionary's row count.
    bin: i64,
    /// Delay taps, ascending.
    shifts: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Columns {
    /// Circular shifts of a reference whose length equals the row count.
    Circulant {
        reference: Arc<Vec<Complex64>>,
        blocks: Vec<DopplerBlock>,
    },
    /// Linear delays of a longer reference, trimmed to its last `rows` samples.
    Trimmed {
        reference: Arc<Vec<Complex64>>,
        blocks: Vec<DopplerBlock>,
    },
    /// Arbitrary explicit column matrix.
    Explicit { matrix: Array2<Complex64> },
}

/// Disturbance dictionary: a tall implicit or explicit matrix of delay- and
/// Doppler-shifted reference copies, plus its bin metadata.
#[derive(Debug, Clone)]
pub struct Dictionary {
    kind: DictionaryKind,
    rows: usize,
    delay_bins: Vec<usize>,
    doppler_hz: Vec<f64>,
    columns: Columns,
}

impl Dictionary {
    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Unique delay taps covered by the dictionary, ascending.
    pub fn delay_bins(&self) -> &[usize] {
        &self.delay_bins
    }

    /// Unique Doppler frequencies covered by the dictionary, ascending, in Hz.
    pub fn doppler_bins_hz(&self) -> &[f64] {
        &self.doppler_hz
    }

    pub fn column_count(&self) -> usize {
        match &self.columns {
            Columns::Circulant { blocks, .. } | Columns::Trimmed { blocks, .. } => {
                blocks.iter().map(|b| b.shifts.len()).sum()
            }
            Columns::Explicit { matrix } => matrix.ncols(),
        }
    }

    /// Wrap an explicit column matrix (used for generic subspaces and tests).
    pub fn from_matrix(
        matrix: Array2<Complex64>,
        delay_bins: Vec<usize>,
        doppler_hz: Vec<f64>,
        kind: DictionaryKind,
    ) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(invalid("dictionary matrix must be non-empty"));
        }
        Ok(Dictionary {
            kind,
            rows: matrix.nrows(),
            delay_bins,
            doppler_hz,
            columns: Columns::Explicit { matrix },
        })
    }

    /// Materialise the full column matrix. Intended for diagnostics and tests;
    /// the solvers never need it for shift-structured dictionaries.
    pub fn matrix(&self) -> Array2<Complex64> {
        match &self.columns {
            Columns::Explicit { matrix } => matrix.clone(),
            Columns::Circulant { reference, blocks } => {
                let n = self.rows;
                let mut y = Array2::zeros((n, self.column_count()).f());
                let mut col = 0;
                for b in blocks {
                    for &q in &b.shifts {
                        for t in 0..n {
                            let w = 2.0 * PI * b.bin as f64 * t as f64 / n as f64;
                            y[[t, col]] =
                                reference[(t + n - q) % n] * Complex64::from_polar(1.0, w);
                        }
                        col += 1;
                    }
                }
                y
            }
            Columns::Trimmed { reference, blocks } => {
                let n = self.rows;
                let off = reference.len() - n;
                let mut y = Array2::zeros((n, self.column_count()).f());
                let mut col = 0;
                for b in blocks {
                    for &q in &b.shifts {
                        for t in 0..n {
                            let w = 2.0 * PI * b.bin as f64 * t as f64 / n as f64;
                            y[[t, col]] =
                                reference[off + t - q] * Complex64::from_polar(1.0, w);
                        }
                        col += 1;
                    }
                }
                y
            }
        }
    }

    /// Concatenate the columns of two circulant dictionaries built over the
    /// same reference window, e.g. to project onto the joint span of the
    /// disturbance dictionary and the strong-target blocks.
    pub fn concat(&self, other: &Dictionary) -> Result<Dictionary> {
        let (ra, ba) = match &self.columns {
            Columns::Circulant { reference, blocks } => (reference, blocks),
            _ => return Err(invalid("concat requires circulant dictionaries")),
        };
        let (rb, bb) = match &other.columns {
            Columns::Circulant { reference, blocks } => (reference, blocks),
            _ => return Err(invalid("concat requires circulant dictionaries")),
        };
        if self.rows != other.rows || (!Arc::ptr_eq(ra, rb) && ra.as_ref() != rb.as_ref()) {
            return Err(mismatch(
                "dictionaries must share the same reference window".to_string(),
            ));
        }
        let blocks =
            merge_duplicate_columns(ba.iter().chain(bb.iter()).cloned().collect());
        let delay_bins = unique_sorted_shifts(&blocks);
        let mut doppler_hz: Vec<f64> = self
            .doppler_hz
            .iter()
            .chain(other.doppler_hz.iter())
            .copied()
            .collect();
        doppler_hz.sort_by(|a, b| a.partial_cmp(b).unwrap());
        doppler_hz.dedup();
        Ok(Dictionary {
            kind: DictionaryKind::StrongTarget,
            rows: self.rows,
            delay_bins,
            doppler_hz,
            columns: Columns::Circulant {
                reference: ra.clone(),
                blocks,
            },
        })
    }
}

/// Outcome of a least-squares cancellation.
#[derive(Debug, Clone)]
pub struct CancellationResult {
    pub cleaned: ArrayData,
    /// Mean |x|^2 of each cleaned antenna column.
    pub residual_power_per_antenna: Vec<f64>,
    /// The fitted weights, one column per antenna (diagnostic).
    pub weights: Array2<Complex64>,
}

/// Overlapping detections would emit identical (Doppler bin, shift) columns,
/// which make the Gram system exactly singular; each column is kept once.
fn merge_duplicate_columns(blocks: Vec<DopplerBlock>) -> Vec<DopplerBlock> {
    let mut seen: BTreeMap<i64, std::collections::BTreeSet<usize>> = BTreeMap::new();
    let mut out: Vec<DopplerBlock> = Vec::new();
    for b in blocks {
        let taken = seen.entry(b.bin).or_default();
        let fresh: Vec<usize> = b
            .shifts
            .into_iter()
            .filter(|q| taken.insert(*q))
            .collect();
        if fresh.is_empty() {
            continue;
        }
        if let Some(last) = out.iter_mut().find(|ob| ob.bin == b.bin) {
            last.shifts.extend(fresh);
            last.shifts.sort_unstable();
        } else {
            out.push(DopplerBlock {
                bin: b.bin,
                shifts: fresh,
            });
        }
    }
    out
}

fn unique_sorted_shifts(blocks: &[DopplerBlock]) -> Vec<usize> {
    let mut v: Vec<usize> = blocks.iter().flat_map(|b| b.shifts.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn bins_to_hz(blocks: &[DopplerBlock], rows: usize, sample_rate: f64) -> Vec<f64> {
    let step = sample_rate / rows as f64;
    let mut bins: Vec<i64> = blocks.iter().map(|b| b.bin).collect();
    bins.sort_unstable();
    bins.dedup();
    bins.into_iter().map(|b| b as f64 * step).collect()
}

/// Build the trimmed-window dictionary: delayed reference copies with Doppler
/// phase ramps over the trimmed row count, keeping only the last `data_rows`
/// rows of each shifted copy. Requires the reference to be exactly R-1 samples
/// longer than the data; the first R-1 received rows must be discarded by the
/// caller before cancelling.
pub fn build_eca_dictionary(
    s_dp: &DirectPathEstimate,
    cfg: &EcaConfig,
    data_rows: usize,
) -> Result<Dictionary> {
    if cfg.delay_taps < 1 {
        return Err(invalid("need at least one delay tap"));
    }
    if data_rows == 0 {
        return Err(invalid("data window is empty"));
    }
    let l_ref = s_dp.len();
    if cfg.extra_reference < 1 || l_ref != data_rows + cfg.extra_reference - 1 {
        return Err(invalid(format!(
            "reference length {l_ref} must equal data_rows {data_rows} + R - 1 \
             (R = {})",
            cfg.extra_reference
        )));
    }
    if cfg.delay_taps > cfg.extra_reference {
        // delayed columns would reach past the start of the reference — the
        // trimmed-window canceller fundamentally needs R >= Q
        return Err(invalid(format!(
            "delay taps {} exceed the {} extra reference samples",
            cfg.delay_taps, cfg.extra_reference
        )));
    }
    let p = cfg.doppler_bins as i64;
    let blocks: Vec<DopplerBlock> = (-p..=p)
        .map(|bin| DopplerBlock {
            bin,
            shifts: (0..cfg.delay_taps).collect(),
        })
        .collect();
    let delay_bins = unique_sorted_shifts(&blocks);
    let doppler_hz = bins_to_hz(&blocks, data_rows, s_dp.signal.sample_rate);
    Ok(Dictionary {
        kind: DictionaryKind::Eca,
        rows: data_rows,
        delay_bins,
        doppler_hz,
        columns: Columns::Trimmed {
            reference: Arc::new(s_dp.signal.samples.clone()),
            blocks,
        },
    })
}

/// The circulant reference matrix: column q (0-based) is the reference
/// circularly delayed by q samples, so row 0 of column 1 holds the window's
/// last sample.
pub fn build_meca_reference(s_dp: &DirectPathEstimate, q_bar: usize) -> Result<Array2<Complex64>> {
    let n = s_dp.len();
    if q_bar < 1 || q_bar > n {
        return Err(invalid(format!(
            "delay tap count {q_bar} must lie in 1..={n}"
        )));
    }
    let mut m = Array2::zeros((n, q_bar).f());
    for q in 0..q_bar {
        for t in 0..n {
            m[[t, q]] = s_dp.signal.samples[(t + n - q) % n];
        }
    }
    Ok(m)
}

/// Build the equal-length-window dictionary: circular shift columns with
/// Doppler blocks on the window's natural 1/T grid, so disturbance bins land
/// on integer multiples of 1/T Hz.
pub fn build_meca_dictionary(
    s_dp: &DirectPathEstimate,
    q_bar: usize,
    doppler_bins: usize,
) -> Result<Dictionary> {
    let n = s_dp.len();
    if q_bar < 1 || q_bar > n {
        return Err(invalid(format!(
            "delay tap count {q_bar} must lie in 1..={n}"
        )));
    }
    let p = doppler_bins as i64;
    let blocks: Vec<DopplerBlock> = (-p..=p)
        .map(|bin| DopplerBlock {
            bin,
            shifts: (0..q_bar).collect(),
        })
        .collect();
    let delay_bins = unique_sorted_shifts(&blocks);
    let doppler_hz = bins_to_hz(&blocks, n, s_dp.signal.sample_rate);
    Ok(Dictionary {
        kind: DictionaryKind::Meca,
        rows: n,
        delay_bins,
        doppler_hz,
        columns: Columns::Circulant {
            reference: Arc::new(s_dp.signal.samples.clone()),
            blocks,
        },
    })
}

/// Build the dictionary that spans already-detected strong targets: for each
/// detection, circular delay shifts covering its range bin (plus an r_0
/// margin) under Doppler blocks at the detection's bin +/- f_0 grid steps.
/// Doppler values are quantised to the window's resolution grid.
pub fn build_strong_target_dictionary(
    s_dp: &DirectPathEstimate,
    detections: &[Detection],
    r_0: usize,
    f_0: usize,
    doppler_step_hz: f64,
    span: StrongDelaySpan,
) -> Result<Dictionary> {
    if detections.is_empty() {
        return Err(invalid("no detections to cancel"));
    }
    let n = s_dp.len();
    let fs = s_dp.signal.sample_rate;
    let natural = fs / n as f64;
    if !(doppler_step_hz > 0.0) || (doppler_step_hz - natural).abs() > 1e-6 * natural {
        return Err(invalid(format!(
            "Doppler step {doppler_step_hz} Hz must match the window resolution {natural} Hz"
        )));
    }
    let mut blocks = Vec::new();
    for det in detections {
        let max_shift = det.range_bin + r_0;
        if max_shift >= n {
            return Err(invalid(format!(
                "range bin {} + margin {r_0} exceeds the {n}-sample window",
                det.range_bin
            )));
        }
        let shifts: Vec<usize> = match span {
            StrongDelaySpan::FromZero => (0..=max_shift).collect(),
            StrongDelaySpan::Windowed => {
                (det.range_bin.saturating_sub(r_0)..=max_shift).collect()
            }
        };
        let center = (det.doppler_hz / doppler_step_hz).round() as i64;
        for db in -(f_0 as i64)..=(f_0 as i64) {
            let bin = center + db;
            let hz = bin as f64 * doppler_step_hz;
            if hz.abs() > fs / 2.0 {
                return Err(invalid(format!(
                    "quantised Doppler bin {hz} Hz exceeds Nyquist {} Hz",
                    fs / 2.0
                )));
            }
            blocks.push(DopplerBlock {
                bin,
                shifts: shifts.clone(),
            });
        }
    }
    let blocks = merge_duplicate_columns(blocks);
    let delay_bins = unique_sorted_shifts(&blocks);
    let doppler_hz = bins_to_hz(&blocks, n, fs);
    Ok(Dictionary {
        kind: DictionaryKind::StrongTarget,
        rows: n,
        delay_bins,
        doppler_hz,
        columns: Columns::Circulant {
            reference: Arc::new(s_dp.signal.samples.clone()),
            blocks,
        },
    })
}

/// Least-squares cancellation: fit `W = argmin ||X - Y W||^2` column-wise and
/// return `X - Y W` together with the residual power per antenna.
///
/// Shift-structured dictionaries are solved through their exactly-assembled
/// Gram system; explicit matrices go through an SVD least-squares solve.
/// Rank-deficient dictionaries are solved in the least-norm sense and logged
/// as a warning, never silently.
pub fn ls_cancel(x: &ArrayData, y: &Dictionary) -> Result<CancellationResult> {
    if x.rows() != y.rows() {
        return Err(mismatch(format!(
            "data has {} rows but dictionary has {} (trim the data first for \
             trimmed-window cancellation)",
            x.rows(),
            y.rows()
        )));
    }
    let m = y.column_count();
    if m == 0 {
        return Err(invalid("dictionary has no columns"));
    }
    if m >= x.rows() {
        return Err(invalid(format!(
            "dictionary with {m} columns is not overdetermined over {} rows",
            x.rows()
        )));
    }

    let weights = match &y.columns {
        Columns::Explicit { matrix } => solve_dense(matrix, x)?,
        Columns::Circulant { reference, blocks } => {
            solve_structured(x, reference, blocks, true)?
        }
        Columns::Trimmed { reference, blocks } => {
            solve_structured(x, reference, blocks, false)?
        }
    };

    let mut cleaned = x.clone();
    subtract_reconstruction(&mut cleaned, y, &weights);
    let residual_power_per_antenna = cleaned.power_per_antenna();
    Ok(CancellationResult {
        cleaned,
        residual_power_per_antenna,
        weights,
    })
}

/// Project already-detected strong targets out of the cancelled data so the
/// next detection pass can see what their sidelobes were masking.
pub fn cancel_strong_targets(x_clean: &ArrayData, y_s: &Dictionary) -> Result<ArrayData> {
    Ok(ls_cancel(x_clean, y_s)?.cleaned)
}

// --- dense route -----------------------------------------------------------

fn solve_dense(matrix: &Array2<Complex64>, x: &ArrayData) -> Result<Array2<Complex64>> {
    let rhs = x.matrix.to_owned();
    let sol = matrix
        .least_squares(&rhs)
        .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;
    let m = matrix.ncols();
    if (sol.rank as usize) < m {
        log::warn!(
            "dictionary is rank-deficient ({} of {m}); using the least-norm solution",
            sol.rank
        );
    }
    Ok(sol.solution)
}

// --- shift-structured route --------------------------------------------------

/// Correlation spectra of the reference against its own shifted copies:
/// `B(d, m) = sum_u conj(s[u]) s[(u+d) mod N] e^{j 2 pi m u / N}` for every
/// requested shift difference d and Doppler-bin difference m.
struct AmbiguityTable {
    values: Vec<Complex64>, // [d * n_dp + dp_idx]
    dp_index: BTreeMap<i64, usize>,
    n_dp: usize,
}

impl AmbiguityTable {
    fn get(&self, d: usize, dp: i64) -> Complex64 {
        self.values[d * self.n_dp + self.dp_index[&dp]]
    }
}

fn circular_ambiguity_table(
    reference: &[Complex64],
    max_shift: usize,
    dp_set: &[i64],
    fft: &FftPair,
    scratch: &mut [Complex64],
) -> AmbiguityTable {
    let n = reference.len();
    let dp_index: BTreeMap<i64, usize> =
        dp_set.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let n_dp = dp_set.len();
    let mut values = vec![Complex64::ZERO; (max_shift + 1) * n_dp];
    let mut buf = vec![Complex64::ZERO; n];
    for d in 0..=max_shift {
        for u in 0..n {
            buf[u] = reference[u].conj() * reference[(u + d) % n];
        }
        fft.forward(&mut buf, scratch);
        for (&dp, &i) in &dp_index {
            let k = (-dp).rem_euclid(n as i64) as usize;
            values[d * n_dp + i] = buf[k];
        }
    }
    AmbiguityTable {
        values,
        dp_index,
        n_dp,
    }
}

/// Windowed correlation sums for the trimmed-window dictionary. For each shift
/// difference d and bin difference dp, accumulates
/// `c[T] = sum_{s<T} conj(ref[s]) ref[s+d] e^{j 2 pi dp s / rows}` and records
/// it at the window boundaries actually needed by the Gram entries.
struct TrimmedTable {
    // keyed by (d, dp) -> checkpoint sums at offsets off-q and off-q+rows
    sums: BTreeMap<(usize, i64), BTreeMap<usize, Complex64>>,
}

fn trimmed_correlation_table(
    reference: &[Complex64],
    rows: usize,
    max_shift: usize,
    dp_set: &[i64],
) -> TrimmedTable {
    let l_ref = reference.len();
    let off = l_ref - rows;
    let mut checkpoints: Vec<usize> = (0..=max_shift)
        .flat_map(|q| [off - q, off - q + rows])
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let mut sums = BTreeMap::new();
    for d in 0..=max_shift {
        for &dp in dp_set {
            let step = Complex64::from_polar(1.0, 2.0 * PI * dp as f64 / rows as f64);
            let mut rot = Complex64::new(1.0, 0.0);
            let mut acc = Complex64::ZERO;
            let mut recorded = BTreeMap::new();
            let mut next = 0usize;
            for s in 0..l_ref {
                while next < checkpoints.len() && checkpoints[next] == s {
                    recorded.insert(s, acc);
                    next += 1;
                }
                if s + d < l_ref {
                    acc += reference[s].conj() * reference[s + d] * rot;
                }
                rot *= step;
            }
            while next < checkpoints.len() {
                recorded.insert(checkpoints[next], acc);
                next += 1;
            }
            sums.insert((d, dp), recorded);
        }
    }
    TrimmedTable { sums }
}

fn solve_structured(
    x: &ArrayData,
    reference: &Arc<Vec<Complex64>>,
    blocks: &[DopplerBlock],
    circular: bool,
) -> Result<Array2<Complex64>> {
    let rows = x.rows();
    let n_ref = reference.len();
    let labels: Vec<(i64, usize)> = blocks
        .iter()
        .flat_map(|b| b.shifts.iter().map(move |&q| (b.bin, q)))
        .collect();
    let m = labels.len();
    let max_shift = labels.iter().map(|&(_, q)| q).max().unwrap_or(0);

    // every Doppler-bin difference that can appear in the Gram matrix
    let mut dp_set: Vec<i64> = Vec::new();
    for &(bi, _) in &labels {
        for &(bj, _) in &labels {
            dp_set.push(bj - bi);
        }
    }
    dp_set.sort_unstable();
    dp_set.dedup();

    // Gram matrix from exact correlation identities
    let mut gram = Array2::<Complex64>::zeros((m, m));
    if circular {
        let fft = FftPair::new(rows);
        let mut scratch = fft.scratch();
        let table =
            circular_ambiguity_table(reference, max_shift, &dp_set, &fft, &mut scratch);
        for ci in 0..m {
            let (bi, qi) = labels[ci];
            for cj in ci..m {
                let (bj, qj) = labels[cj];
                let dp = bj - bi;
                let d = qi as i64 - qj as i64;
                let v = if d >= 0 {
                    let ph = 2.0 * PI * dp as f64 * qi as f64 / rows as f64;
                    Complex64::from_polar(1.0, ph) * table.get(d as usize, dp)
                } else {
                    let ph = 2.0 * PI * (-dp) as f64 * qj as f64 / rows as f64;
                    (Complex64::from_polar(1.0, ph) * table.get((-d) as usize, -dp)).conj()
                };
                gram[[ci, cj]] = v;
                gram[[cj, ci]] = v.conj();
            }
        }
    } else {
        let off = n_ref - rows;
        let table = trimmed_correlation_table(reference, rows, max_shift, &dp_set);
        for ci in 0..m {
            let (bi, qi) = labels[ci];
            for cj in ci..m {
                let (bj, qj) = labels[cj];
                let dp = bj - bi;
                // <v_i, v_j> = sum_t conj(ref[off+t-qi]) ref[off+t-qj] e^{j2pi dp t/rows}
                //            = e^{-j2pi dp (off-qi)/rows} (c[off-qi+rows] - c[off-qi])
                // with the lag table at d = qi - qj >= 0, else the conjugate pair.
                let v = if qi >= qj {
                    let d = qi - qj;
                    let cps = &table.sums[&(d, dp)];
                    let sum = cps[&(off - qi + rows)] - cps[&(off - qi)];
                    let ph = -2.0 * PI * dp as f64 * (off - qi) as f64 / rows as f64;
                    Complex64::from_polar(1.0, ph) * sum
                } else {
                    let d = qj - qi;
                    let cps = &table.sums[&(d, -dp)];
                    let sum = cps[&(off - qj + rows)] - cps[&(off - qj)];
                    let ph = -2.0 * PI * (-dp) as f64 * (off - qj) as f64 / rows as f64;
                    (Complex64::from_polar(1.0, ph) * sum).conj()
                };
                gram[[ci, cj]] = v;
                gram[[cj, ci]] = v.conj();
            }
        }
    }

    // right-hand side Y^H X
    let la = x.num_antennas();
    let mut rhs = Array2::<Complex64>::zeros((m, la));
    // group column indices by Doppler bin to share work per (antenna, bin)
    let mut by_bin: BTreeMap<i64, Vec<(usize, usize)>> = BTreeMap::new();
    for (c, &(b, q)) in labels.iter().enumerate() {
        by_bin.entry(b).or_default().push((q, c));
    }

    if circular {
        let fft = FftPair::new(rows);
        let mut scratch = fft.scratch();
        let mut ref_hat = reference.as_ref().clone();
        fft.forward(&mut ref_hat, &mut scratch);
        let mut z = vec![Complex64::ZERO; rows];
        for l in 0..la {
            let col = x.antenna(l);
            for (&bin, cols) in &by_bin {
                let step = Complex64::from_polar(1.0, -2.0 * PI * bin as f64 / rows as f64);
                let mut rot = Complex64::new(1.0, 0.0);
                for t in 0..rows {
                    z[t] = col[t] * rot;
                    rot *= step;
                }
                fft.forward(&mut z, &mut scratch);
                for (zv, rv) in z.iter_mut().zip(&ref_hat) {
                    *zv *= rv.conj();
                }
                fft.inverse(&mut z, &mut scratch);
                for &(q, c) in cols {
                    rhs[[c, l]] = z[q];
                }
            }
        }
    } else {
        let off = n_ref - rows;
        let mut z = vec![Complex64::ZERO; rows];
        for l in 0..la {
            let col = x.antenna(l);
            for (&bin, cols) in &by_bin {
                let step = Complex64::from_polar(1.0, -2.0 * PI * bin as f64 / rows as f64);
                let mut rot = Complex64::new(1.0, 0.0);
                for t in 0..rows {
                    z[t] = col[t] * rot;
                    rot *= step;
                }
                for &(q, c) in cols {
                    let base = off - q;
                    let mut acc = Complex64::ZERO;
                    for t in 0..rows {
                        acc += reference[base + t].conj() * z[t];
                    }
                    rhs[[c, l]] = acc;
                }
            }
        }
    }

    solve_hermitian(gram, &rhs)
}

/// Solve the Hermitian positive (semi-)definite system G W = B. Uses a
/// Cholesky factorisation, falling back to an eigenvalue-filtered least-norm
/// solve with a warning when the dictionary is numerically rank-deficient.
fn solve_hermitian(gram: Array2<Complex64>, rhs: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let m = gram.nrows();
    match gram.cholesky(UPLO::Lower) {
        Ok(l) if cholesky_is_well_conditioned(&l) => {
            let mut w = rhs.to_owned();
            for mut col in w.columns_mut() {
                // forward substitution L y = b
                for i in 0..m {
                    let mut v = col[i];
                    for k in 0..i {
                        v -= l[[i, k]] * col[k];
                    }
                    col[i] = v / l[[i, i]];
                }
                // back substitution L^H w = y
                for i in (0..m).rev() {
                    let mut v = col[i];
                    for k in i + 1..m {
                        v -= l[[k, i]].conj() * col[k];
                    }
                    col[i] = v / l[[i, i]];
                }
            }
            Ok(w)
        }
        _ => {
            let (vals, vecs) = gram
                .eigh(UPLO::Lower)
                .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e}")))?;
            let vmax = vals.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
            let cutoff = vmax * m as f64 * f64::EPSILON;
            let rank = vals.iter().filter(|v| v.abs() > cutoff).count();
            log::warn!(
                "dictionary Gram matrix is rank-deficient ({rank} of {m}); \
                 using an eigenvalue-filtered least-norm solution"
            );
            // W = V diag(1/lambda) V^H B over the retained spectrum
            let vh_b = vecs.t().mapv(|v| v.conj()).dot(rhs);
            let mut scaled = vh_b;
            for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
                let lam = vals[i];
                let inv = if lam.abs() > cutoff { 1.0 / lam } else { 0.0 };
                for v in row.iter_mut() {
                    *v *= inv;
                }
            }
            Ok(vecs.dot(&scaled))
        }
    }
}

/// A factor with a tiny pivot means the Gram matrix is numerically singular;
/// back-substituting through it would amplify rounding noise into the weights.
fn cholesky_is_well_conditioned(l: &Array2<Complex64>) -> bool {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for i in 0..l.nrows() {
        let d = l[[i, i]].norm();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    lo > hi * 1e-7
}

/// cleaned -= Y * W, using the dictionary structure instead of the matrix.
fn subtract_reconstruction(cleaned: &mut ArrayData, y: &Dictionary, w: &Array2<Complex64>) {
    let rows = y.rows;
    match &y.columns {
        Columns::Explicit { matrix } => {
            let recon = matrix.dot(w);
            cleaned.matrix -= &recon;
        }
        Columns::Circulant { reference, blocks } => {
            let labels: Vec<(i64, usize)> = blocks
                .iter()
                .flat_map(|b| b.shifts.iter().map(move |&q| (b.bin, q)))
                .collect();
            let mut by_bin: BTreeMap<i64, Vec<(usize, usize)>> = BTreeMap::new();
            for (c, &(b, q)) in labels.iter().enumerate() {
                by_bin.entry(b).or_default().push((q, c));
            }
            let fft = FftPair::new(rows);
            let mut scratch = fft.scratch();
            let mut ref_hat = reference.as_ref().clone();
            fft.forward(&mut ref_hat, &mut scratch);
            let mut wv = vec![Complex64::ZERO; rows];
            for l in 0..cleaned.num_antennas() {
                for (&bin, cols) in &by_bin {
                    for v in wv.iter_mut() {
                        *v = Complex64::ZERO;
                    }
                    for &(q, c) in cols {
                        wv[q] += w[[c, l]];
                    }
                    fft.forward(&mut wv, &mut scratch);
                    for (v, rv) in wv.iter_mut().zip(&ref_hat) {
                        *v *= rv;
                    }
                    fft.inverse(&mut wv, &mut scratch);
                    let step =
                        Complex64::from_polar(1.0, 2.0 * PI * bin as f64 / rows as f64);
                    let mut rot = Complex64::new(1.0, 0.0);
                    let mut col = cleaned.matrix.column_mut(l);
                    for t in 0..rows {
                        col[t] -= wv[t] * rot;
                        rot *= step;
                    }
                }
            }
        }
        Columns::Trimmed { reference, blocks } => {
            let off = reference.len() - rows;
            let labels: Vec<(i64, usize)> = blocks
                .iter()
                .flat_map(|b| b.shifts.iter().map(move |&q| (b.bin, q)))
                .collect();
            let mut by_bin: BTreeMap<i64, Vec<(usize, usize)>> = BTreeMap::new();
            for (c, &(b, q)) in labels.iter().enumerate() {
                by_bin.entry(b).or_default().push((q, c));
            }
            for l in 0..cleaned.num_antennas() {
                for (&bin, cols) in &by_bin {
                    let step =
                        Complex64::from_polar(1.0, 2.0 * PI * bin as f64 / rows as f64);
                    let mut rot = Complex64::new(1.0, 0.0);
                    let mut col = cleaned.matrix.column_mut(l);
                    for t in 0..rows {
                        let mut acc = Complex64::ZERO;
                        for &(q, c) in cols {
                            acc += w[[c, l]] * reference[off + t - q];
                        }
                        col[t] -= acc * rot;
                        rot *= step;
                    }
                }
            }
        }
    }
}
