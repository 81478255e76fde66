//! Deterministic piecewise closed-form controls.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{ensure_finite, ensure_finite_vec, matrix_exponential, RealMatrix, RealVector};

/// Closed form of one control segment.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentForm {
    Constant(RealVector),
    /// `t ↦ P · exp((t − t_ref) G) · w`.
    ExpProfile {
        projection: RealMatrix,
        generator: RealMatrix,
        t_ref: f64,
        weight: RealVector,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub form: SegmentForm,
}

impl Segment {
    fn eval(&self, t: f64) -> RealVector {
        match &self.form {
            SegmentForm::Constant(w) => w.clone(),
            SegmentForm::ExpProfile {
                projection,
                generator,
                t_ref,
                weight,
            } => {
                let e = matrix_exponential(generator, t - t_ref).expect("segment validated at construction");
                projection * (e * weight)
            }
        }
    }

    fn output_dim(&self) -> usize {
        match &self.form {
            SegmentForm::Constant(w) => w.len(),
            SegmentForm::ExpProfile { projection, .. } => projection.nrows(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite() && self.start < self.end) {
            return Err(invalid(format!(
                "segment [{}, {}) is empty or not finite",
                self.start, self.end
            )));
        }
        match &self.form {
            SegmentForm::Constant(w) => ensure_finite_vec(w, "segment value"),
            SegmentForm::ExpProfile {
                projection,
                generator,
                t_ref,
                weight,
            } => {
                ensure_finite(projection, "segment projection")?;
                ensure_finite(generator, "segment generator")?;
                ensure_finite_vec(weight, "segment weight")?;
                if !t_ref.is_finite() {
                    return Err(invalid("segment reference time must be finite"));
                }
                if !generator.is_square() || generator.nrows() != weight.len() || projection.ncols() != weight.len() {
                    return Err(invalid(format!(
                        "exponential segment shapes do not chain: P {}×{}, G {}×{}, w {}",
                        projection.nrows(),
                        projection.ncols(),
                        generator.nrows(),
                        generator.ncols(),
                        weight.len()
                    )));
                }
                // Both ends must be representable.
                matrix_exponential(generator, self.start - t_ref)?;
                matrix_exponential(generator, self.end - t_ref)?;
                Ok(())
            }
        }
    }
}

/// Piecewise closed-form control tiling `[t0, T]`.
///
/// Segments are half-open `[start, end)`; the final end point belongs to the last segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    dim: usize,
    segments: Vec<Segment>,
}

impl ControlSignal {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| invalid("a control needs at least one segment"))?;
        let dim = first.output_dim();
        for (k, s) in segments.iter().enumerate() {
            s.validate()?;
            if s.output_dim() != dim {
                return Err(invalid(format!(
                    "segment {k} has dimension {} but segment 0 has {dim}",
                    s.output_dim()
                )));
            }
            if k > 0 && segments[k - 1].end != s.start {
                return Err(invalid(format!(
                    "segments {} and {k} do not abut ({} vs {})",
                    k - 1,
                    segments[k - 1].end,
                    s.start
                )));
            }
        }
        Ok(Self { dim, segments })
    }

    pub fn constant(value: RealVector, t0: f64, t1: f64) -> Result<Self> {
        Self::new(vec![Segment {
            start: t0,
            end: t1,
            form: SegmentForm::Constant(value),
        }])
    }

    pub fn zero(dim: usize, horizon: f64) -> Result<Self> {
        Self::constant(RealVector::zeros(dim), 0.0, horizon)
    }

    /// Piecewise-constant control with values `values[k]` on `[breaks[k], breaks[k+1])`.
    pub fn piecewise_constant(breaks: &[f64], values: Vec<RealVector>) -> Result<Self> {
        if breaks.len() != values.len() + 1 {
            return Err(invalid("need one more break point than values"));
        }
        let segments = values
            .into_iter()
            .enumerate()
            .map(|(k, w)| Segment {
                start: breaks[k],
                end: breaks[k + 1],
                form: SegmentForm::Constant(w),
            })
            .collect();
        Self::new(segments)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].end
    }

    /// Segment boundaries, including both end points.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.segments.iter().map(|s| s.start).collect();
        out.push(self.end());
        out
    }

    fn segment_index(&self, t: f64) -> usize {
        // First segment whose end lies beyond t; the final end point maps to the last segment.
        let idx = self.segments.partition_point(|s| s.end <= t);
        idx.min(self.segments.len() - 1)
    }

    /// Value at `t`; times outside the horizon are clamped onto it.
    pub fn eval(&self, t: f64) -> RealVector {
        let t = t.clamp(self.start(), self.end());
        self.segments[self.segment_index(t)].eval(t)
    }

    /// Values at each of `times` (a sampled table).
    pub fn sample(&self, times: &[f64]) -> Vec<RealVector> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    /// Pointwise scaling by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                start: s.start,
                end: s.end,
                form: match &s.form {
                    SegmentForm::Constant(w) => SegmentForm::Constant(w * factor),
                    SegmentForm::ExpProfile {
                        projection,
                        generator,
                        t_ref,
                        weight,
                    } => SegmentForm::ExpProfile {
                        projection: projection.clone(),
                        generator: generator.clone(),
                        t_ref: *t_ref,
                        weight: weight * factor,
                    },
                },
            })
            .collect();
        Self {
            dim: self.dim,
            segments,
        }
    }

    pub fn to_document(&self) -> ControlDocument {
        ControlDocument {
            dim: self.dim,
            segments: self.segments.iter().map(SegmentDocument::from).collect(),
        }
    }

    pub fn from_document(doc: &ControlDocument) -> Result<Self> {
        let segments = doc
            .segments
            .iter()
            .map(SegmentDocument::to_segment)
            .collect::<Result<Vec<_>>>()?;
        let sig = Self::new(segments)?;
        if sig.dim != doc.dim {
            return Err(invalid(format!(
                "document declares dimension {} but segments have {}",
                doc.dim, sig.dim
            )));
        }
        Ok(sig)
    }
}

/// Serializable form of a [`ControlSignal`]; matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDocument {
    pub dim: usize,
    pub segments: Vec<SegmentDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SegmentDocument {
    Constant {
        start: f64,
        end: f64,
        value: Vec<f64>,
    },
    ExpProfile {
        start: f64,
        end: f64,
        projection: Vec<Vec<f64>>,
        generator: Vec<Vec<f64>>,
        t_ref: f64,
        weight: Vec<f64>,
    },
}

pub fn matrix_to_rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<RealMatrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(format!("{name}: rows have unequal lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(RealMatrix::from_row_slice(nrows, ncols, &flat))
}

impl From<&Segment> for SegmentDocument {
    fn from(s: &Segment) -> Self {
        match &s.form {
            SegmentForm::Constant(w) => SegmentDocument::Constant {
                start: s.start,
                end: s.end,
                value: w.iter().copied().collect(),
            },
            SegmentForm::ExpProfile {
                projection,
                generator,
                t_ref,
                weight,
            } => SegmentDocument::ExpProfile {
                start: s.start,
                end: s.end,
                projection: matrix_to_rows(projection),
                generator: matrix_to_rows(generator),
                t_ref: *t_ref,
                weight: weight.iter().copied().collect(),
            },
        }
    }
}

impl SegmentDocument {
    fn to_segment(&self) -> Result<Segment> {
        Ok(match self {
            SegmentDocument::Constant { start, end, value } => Segment {
                start: *start,
                end: *end,
                form: SegmentForm::Constant(RealVector::from_column_slice(value)),
            },
            SegmentDocument::ExpProfile {
                start,
                end,
                projection,
                generator,
                t_ref,
                weight,
            } => Segment {
                start: *start,
                end: *end,
                form: SegmentForm::ExpProfile {
                    projection: rows_to_matrix(projection, "projection")?,
                    generator: rows_to_matrix(generator, "generator")?,
                    t_ref: *t_ref,
                    weight: RealVector::from_column_slice(weight),
                },
            },
        })
    }
}
