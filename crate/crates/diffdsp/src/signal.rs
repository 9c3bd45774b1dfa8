//! Core value types: audio signals, frame-rate control signals, and per-sample
//! filter coefficient trajectories. Everything is 64-bit; gradient vectors use
//! the same containers as the signals they correspond to.

use crate::error::FilterError;

/// A uniformly sampled mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Signal {
    /// Wraps samples at the given rate. Fails on an empty buffer or a
    /// non-positive rate; non-finite samples are rejected so instabilities are
    /// caught at the boundary where a signal enters the system.
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, FilterError> {
        if samples.is_empty() {
            return Err(FilterError::BadArgument("empty signal".into()));
        }
        if !(sample_rate > 0.0) {
            return Err(FilterError::BadArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(FilterError::NonFiniteOutput { index });
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// A frame-rate control sequence: one value per frame, frames `hop` audio
/// samples apart, frame `k` aligned to audio sample `k * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    frames: Vec<f64>,
    hop: usize,
}

impl ControlSignal {
    pub fn new(frames: Vec<f64>, hop: usize) -> Result<Self, FilterError> {
        if frames.is_empty() {
            return Err(FilterError::BadArgument("empty control signal".into()));
        }
        if hop == 0 {
            return Err(FilterError::BadArgument("control hop must be >= 1".into()));
        }
        Ok(Self { frames, hop })
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-sample filter coefficients, stored row-major: row `n` holds the
/// coefficients active at sample `n`.
///
/// For the recursive (all-pole) side, column `i` is the feedback coefficient at
/// lag `i + 1`; for feed-forward trajectories the same container is used with
/// column `i` at lag `i` (the lag-0 tap included). Functions document which
/// convention they take.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTrajectory {
    data: Vec<f64>,
    cols: usize,
}

impl CoeffTrajectory {
    /// Builds a trajectory from row-major data with `cols` coefficients per row.
    pub fn from_rows(data: Vec<f64>, cols: usize) -> Result<Self, FilterError> {
        if cols == 0 {
            return Err(FilterError::BadArgument("coefficient order must be >= 1".into()));
        }
        if data.is_empty() || data.len() % cols != 0 {
            return Err(FilterError::ShapeMismatch(format!(
                "coefficient data length {} is not a positive multiple of {} columns",
                data.len(),
                cols
            )));
        }
        Ok(Self { data, cols })
    }

    /// A trajectory that repeats the same coefficient row for `rows` samples.
    pub fn constant(row: &[f64], rows: usize) -> Result<Self, FilterError> {
        if rows == 0 {
            return Err(FilterError::BadArgument("trajectory must have >= 1 row".into()));
        }
        let mut data = Vec::with_capacity(row.len() * rows);
        for _ in 0..rows {
            data.extend_from_slice(row);
        }
        Self::from_rows(data, row.len())
    }

    /// Builds a trajectory column-wise: `columns[i]` holds coefficient `i` for
    /// every sample. All columns must share one length.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self, FilterError> {
        let cols = columns.len();
        if cols == 0 {
            return Err(FilterError::BadArgument("coefficient order must be >= 1".into()));
        }
        let rows = columns[0].as_ref().len();
        if rows == 0 {
            return Err(FilterError::BadArgument("trajectory must have >= 1 row".into()));
        }
        if columns.iter().any(|c| c.as_ref().len() != rows) {
            return Err(FilterError::ShapeMismatch("coefficient columns differ in length".into()));
        }
        let mut data = vec![0.0; rows * cols];
        for (i, col) in columns.iter().enumerate() {
            for (n, &v) in col.as_ref().iter().enumerate() {
                data[n * cols + i] = v;
            }
        }
        Ok(Self { data, cols })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    /// Number of coefficients per row.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Coefficient `col` at sample `row`.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// The full row active at sample `row`.
    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Extracts one column as a contiguous vector.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows()).map(|n| self.at(n, col)).collect()
    }
}
