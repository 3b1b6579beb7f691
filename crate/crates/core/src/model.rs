//! Time and frequency grids, the real transfer matrix and the data containers
//! of the linear model `Y = A X + noise`.
//!
//! The transfer matrix has `2M + 1` columns: a column of ones followed by the
//! cosine columns `cos(2π f_m t_k)` and the negated sine columns
//! `-sin(2π f_m t_k)` for `m = 1..=M`, i.e. the real and imaginary parts of
//! `exp(-i 2π f_m t_k)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const EQUIDISTANT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    frame_rate: f64,
}

impl TimeGrid {
    /// Equidistant grid `t_k = k / frame_rate`, `k = 0..n`.
    pub fn new(n: usize, frame_rate: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("time grid needs at least one frame"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::validation(format!(
                "frame rate must be positive and finite, got {frame_rate}"
            )));
        }
        let times = (0..n).map(|k| k as f64 / frame_rate).collect();
        Ok(Self { times, frame_rate })
    }

    /// Accepts explicit times, checking that they are strictly increasing and
    /// spaced by `1 / frame_rate`.
    pub fn from_times(times: Vec<f64>, frame_rate: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::validation("time grid needs at least one frame"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::validation(format!(
                "frame rate must be positive and finite, got {frame_rate}"
            )));
        }
        let step = 1.0 / frame_rate;
        for (k, w) in times.windows(2).enumerate() {
            let dt = w[1] - w[0];
            if !(dt > 0.0) {
                return Err(Error::validation(format!(
                    "times must be strictly increasing (index {})",
                    k + 1
                )));
            }
            if ((dt - step) / step).abs() > EQUIDISTANT_RTOL {
                return Err(Error::validation(format!(
                    "times are not equidistant at index {}: step {dt} vs {step}",
                    k + 1
                )));
            }
        }
        Ok(Self { times, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    frequencies: Vec<f64>,
}

impl FrequencyGrid {
    /// Uniform grid `f_m = m * spacing` for `m = 0..=m_max`.
    pub fn uniform(m_max: usize, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::validation(format!(
                "frequency spacing must be positive and finite, got {spacing}"
            )));
        }
        Ok(Self {
            frequencies: (0..=m_max).map(|m| m as f64 * spacing).collect(),
        })
    }

    /// Custom grid. The first entry must be the DC frequency 0 and the rest
    /// strictly increasing.
    pub fn from_frequencies(frequencies: Vec<f64>) -> Result<Self> {
        match frequencies.first() {
            Some(&0.0) => {}
            Some(f0) => {
                return Err(Error::validation(format!(
                    "first frequency must be 0 (DC), got {f0}"
                )))
            }
            None => return Err(Error::validation("frequency grid is empty")),
        }
        if frequencies.iter().any(|f| !f.is_finite()) {
            return Err(Error::validation("frequencies must be finite"));
        }
        if frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("frequencies must be strictly increasing"));
        }
        Ok(Self { frequencies })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Number of oscillatory frequencies `M` (excludes DC).
    pub fn m(&self) -> usize {
        self.frequencies.len() - 1
    }

    /// Sub-grid with the given frequency indices; index 0 is always kept.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut freqs = vec![0.0];
        for &m in indices {
            if m == 0 {
                continue;
            }
            let f = *self.frequencies.get(m).ok_or_else(|| {
                Error::validation(format!("frequency index {m} out of range"))
            })?;
            freqs.push(f);
        }
        Self::from_frequencies(freqs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    entries: DMatrix<f64>,
    time_grid: TimeGrid,
    freq_grid: FrequencyGrid,
}

impl TransferMatrix {
    pub fn new(time_grid: &TimeGrid, freq_grid: &FrequencyGrid) -> Self {
        let n = time_grid.len();
        let m = freq_grid.m();
        let mut entries = DMatrix::zeros(n, 2 * m + 1);
        for (k, &t) in time_grid.times().iter().enumerate() {
            entries[(k, 0)] = 1.0;
            for (j, &f) in freq_grid.frequencies().iter().enumerate().skip(1) {
                let phase = 2.0 * PI * f * t;
                entries[(k, j)] = phase.cos();
                entries[(k, j + m)] = -phase.sin();
            }
        }
        Self {
            entries,
            time_grid: time_grid.clone(),
            freq_grid: freq_grid.clone(),
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn freq_grid(&self) -> &FrequencyGrid {
        &self.freq_grid
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn m(&self) -> usize {
        self.freq_grid.m()
    }

    /// Keeps the DC column plus the cosine/sine pair of every listed
    /// frequency index (`1..=M`, ascending).
    pub fn select_frequencies(&self, kept: &[usize]) -> Result<TransferMatrix> {
        let m = self.m();
        let mut cols = vec![0];
        let oscillating: Vec<usize> = kept.iter().copied().filter(|&k| k != 0).collect();
        if let Some(&bad) = oscillating.iter().find(|&&k| k > m) {
            return Err(Error::validation(format!("frequency index {bad} out of range")));
        }
        cols.extend(oscillating.iter().copied());
        cols.extend(oscillating.iter().map(|&k| k + m));
        Ok(TransferMatrix {
            entries: self.entries.select_columns(&cols),
            time_grid: self.time_grid.clone(),
            freq_grid: self.freq_grid.select(&oscillating)?,
        })
    }

    /// Rows `J[0], J[1], ...` of `A`, in label-set order.
    pub fn restrict_rows(&self, labels: &LabelSet) -> Result<DMatrix<f64>> {
        restrict_rows(&self.entries, labels)
    }
}

pub fn build_time_grid(n: usize, frame_rate: f64) -> Result<TimeGrid> {
    TimeGrid::new(n, frame_rate)
}

pub fn build_frequency_grid(m_max: usize, spacing: f64) -> Result<FrequencyGrid> {
    FrequencyGrid::uniform(m_max, spacing)
}

pub fn build_transfer_matrix(tg: &TimeGrid, fg: &FrequencyGrid) -> TransferMatrix {
    TransferMatrix::new(tg, fg)
}

/// Row selection `A_J`; stands in for the zeroing projector `P_J`.
pub fn restrict_rows(a: &DMatrix<f64>, labels: &LabelSet) -> Result<DMatrix<f64>> {
    if let Some(&bad) = labels.indices().iter().find(|&&i| i >= a.nrows()) {
        return Err(Error::validation(format!(
            "label index {bad} out of range for {} rows",
            a.nrows()
        )));
    }
    Ok(a.select_rows(labels.indices()))
}

/// Observed series: one column per slice, all on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    time_grid: TimeGrid,
    slice_ids: Vec<String>,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>, time_grid: TimeGrid, slice_ids: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::validation("dataset needs at least one slice"));
        }
        if values.nrows() != time_grid.len() {
            return Err(Error::validation(format!(
                "dataset has {} rows but the time grid has {} frames",
                values.nrows(),
                time_grid.len()
            )));
        }
        if slice_ids.len() != values.ncols() {
            return Err(Error::validation(format!(
                "{} slice ids for {} slices",
                slice_ids.len(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::validation(format!(
                "non-finite value at frame {r}, slice {}",
                slice_ids[c]
            )));
        }
        Ok(Self {
            values,
            time_grid,
            slice_ids,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn slice_ids(&self) -> &[String] {
        &self.slice_ids
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn slice_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn slice(&self, l: usize) -> Vec<f64> {
        self.values.column(l).iter().copied().collect()
    }

    /// Dataset with slice `l` removed.
    pub fn without_slice(&self, l: usize) -> Result<Self> {
        if l >= self.slice_count() {
            return Err(Error::validation(format!("slice {l} out of range")));
        }
        let values = self.values.clone().remove_column(l);
        let mut ids = self.slice_ids.clone();
        ids.remove(l);
        Self::new(values, self.time_grid.clone(), ids)
    }

    /// Dataset with columns reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let values = self.values.select_columns(order);
        let ids = order.iter().map(|&i| self.slice_ids[i].clone()).collect();
        Self::new(values, self.time_grid.clone(), ids)
    }
}

/// Ordered set of distinct time indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    indices: Vec<usize>,
}

impl LabelSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Checks distinctness and that every index is below `n`.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::validation(format!(
                    "label index {i} out of range for {n} frames"
                )));
            }
            if seen[i] {
                return Err(Error::validation(format!("duplicate label index {i}")));
            }
            seen[i] = true;
        }
        Ok(Self { indices })
    }

    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }

    /// Appends `i`; callers guarantee `i` is new and in range.
    pub(crate) fn push_unchecked(&mut self, i: usize) {
        debug_assert!(!self.indices.contains(&i));
        self.indices.push(i);
    }

    /// `self` followed by the elements of `other` not already present.
    pub fn union(&self, other: &LabelSet) -> LabelSet {
        let mut indices = self.indices.clone();
        for &i in &other.indices {
            if !indices.contains(&i) {
                indices.push(i);
            }
        }
        LabelSet { indices }
    }

    /// Indices in `0..n` that are not in the set, ascending.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        let mut mark = vec![false; n];
        for &i in &self.indices {
            if i < n {
                mark[i] = true;
            }
        }
        (0..n).filter(|&i| !mark[i]).collect()
    }
}
