//! The discretised search domain shared by every built-in planner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{DataValue, ParamKind, ParameterSpec, Record};

/// Upper bound on the number of grid points in a campaign space.
pub const MAX_GRID_SIZE: u128 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("flat index {index} outside a grid of {size} points")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("dimension {0} cannot be discretised")]
    Ungriddable(String),
    #[error("grid of {0} points exceeds the limit")]
    TooLarge(u128),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ParameterSpace {
    pub dimensions: Vec<ParameterSpec>,
}

impl ParameterSpace {
    pub fn new(dimensions: Vec<ParameterSpec>) -> Self {
        Self { dimensions }
    }

    /// Number of grid positions along one dimension, if it can be gridded.
    pub fn axis_len(spec: &ParameterSpec) -> Option<u64> {
        match spec.kind {
            ParamKind::Real | ParamKind::Integer => {
                spec.min?;
                spec.max?;
                spec.grid_steps.filter(|&s| s > 0)
            }
            ParamKind::Enum => spec.choices.as_ref().map(|c| c.len() as u64).filter(|&n| n > 0),
            ParamKind::Boolean => Some(2),
            ParamKind::Text | ParamKind::List => None,
        }
    }

    pub fn axis_lens(&self) -> Result<Vec<u64>, SpaceError> {
        self.dimensions
            .iter()
            .map(|d| Self::axis_len(d).ok_or_else(|| SpaceError::Ungriddable(d.name.clone())))
            .collect()
    }

    /// Product of the axis lengths, unbounded.
    pub fn grid_size_exact(&self) -> Result<u128, SpaceError> {
        let mut size: u128 = 1;
        for len in self.axis_lens()? {
            size = size.saturating_mul(len as u128);
        }
        Ok(size)
    }

    /// Grid size, checked against [`MAX_GRID_SIZE`].
    pub fn grid_size(&self) -> Result<u64, SpaceError> {
        let size = self.grid_size_exact()?;
        if size > MAX_GRID_SIZE {
            return Err(SpaceError::TooLarge(size));
        }
        Ok(size as u64)
    }

    /// Value at `index` along one axis: `min + index * (max - min) / (steps - 1)`.
    ///
    /// A one-step axis yields `min`. Results are clamped into `[min, max]`
    /// so rounding never leaves the declared bounds.
    pub fn axis_value(spec: &ParameterSpec, index: u64) -> DataValue {
        match spec.kind {
            ParamKind::Real | ParamKind::Integer => {
                let (lo, hi) = (spec.min.unwrap_or(0.0), spec.max.unwrap_or(0.0));
                let steps = spec.grid_steps.unwrap_or(1);
                let v =
                    if steps <= 1 { lo } else { (lo + index as f64 * ((hi - lo) / (steps - 1) as f64)).clamp(lo, hi) };
                if spec.kind == ParamKind::Integer {
                    DataValue::Int(v.round().clamp(lo, hi) as i64)
                } else {
                    DataValue::Real(v)
                }
            }
            ParamKind::Enum => {
                let choices = spec.choices.as_deref().unwrap_or_default();
                DataValue::Text(choices[index as usize].clone())
            }
            ParamKind::Boolean => DataValue::Bool(index == 1),
            ParamKind::Text | ParamKind::List => DataValue::Null,
        }
    }

    /// Nearest grid index for a value along one axis.
    pub fn axis_index(spec: &ParameterSpec, value: &DataValue) -> Option<u64> {
        let len = Self::axis_len(spec)?;
        match spec.kind {
            ParamKind::Real | ParamKind::Integer => {
                let v = value.as_f64()?;
                let (lo, hi) = (spec.min?, spec.max?);
                if len == 1 || hi == lo {
                    return Some(0);
                }
                let pos = ((v - lo) / (hi - lo) * (len - 1) as f64).round();
                Some(pos.clamp(0.0, (len - 1) as f64) as u64)
            }
            ParamKind::Enum => {
                let s = value.as_text()?;
                spec.choices.as_ref()?.iter().position(|c| c == s).map(|p| p as u64)
            }
            ParamKind::Boolean => value.as_bool().map(u64::from),
            ParamKind::Text | ParamKind::List => None,
        }
    }

    pub fn params_at(&self, indices: &[u64]) -> Record {
        self.dimensions.iter().zip(indices).map(|(d, &i)| (d.name.clone(), Self::axis_value(d, i))).collect()
    }

    pub fn indices_of(&self, params: &Record) -> Option<Vec<u64>> {
        self.dimensions.iter().map(|d| Self::axis_index(d, params.get(&d.name)?)).collect()
    }

    /// Splits a flat row-major index (last dimension fastest) into per-axis indices.
    pub fn unflatten(&self, flat: u64) -> Result<Vec<u64>, SpaceError> {
        let lens = self.axis_lens()?;
        let size = self.grid_size()?;
        if flat >= size {
            return Err(SpaceError::IndexOutOfRange { index: flat, size });
        }
        let mut rest = flat;
        let mut out = vec![0; lens.len()];
        for (slot, len) in out.iter_mut().zip(&lens).rev() {
            *slot = rest % len;
            rest /= len;
        }
        Ok(out)
    }
}

/// Parameters at a flat grid index.
pub fn grid_point(space: &ParameterSpace, flat_index: u64) -> Result<Record, SpaceError> {
    Ok(space.params_at(&space.unflatten(flat_index)?))
}
