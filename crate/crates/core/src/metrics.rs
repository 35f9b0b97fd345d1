//! MSE and PSNR on 8-bit luma frames.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::pixels::Frame;

const PEAK: f64 = 255.0;

/// Peak signal-to-noise ratio in decibels.
///
/// Identical inputs produce [`PsnrValue::Infinite`]; it is never capped to
/// a finite number so that averages can skip it explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsnrValue {
    Finite(f64),
    Infinite,
}

impl PsnrValue {
    pub fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            PsnrValue::Infinite
        } else {
            PsnrValue::Finite(10.0 * (PEAK * PEAK / mse).log10())
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            PsnrValue::Finite(db) => Some(db),
            PsnrValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, PsnrValue::Infinite)
    }
}

impl fmt::Display for PsnrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsnrValue::Finite(db) => write!(f, "{db:.4}"),
            PsnrValue::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for PsnrValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PsnrValue::Finite(db) => s.serialize_f64(*db),
            PsnrValue::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Mean of finite PSNR values; `None` when every value is infinite.
pub fn mean_finite(values: &[PsnrValue]) -> Option<f64> {
    let finite: Vec<f64> = values.iter().filter_map(|v| v.finite()).collect();
    if finite.is_empty() {
        None
    } else {
        Some(finite.iter().sum::<f64>() / finite.len() as f64)
    }
}

fn check_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Sum of squared pixel differences, exact in integer arithmetic.
pub fn squared_error(a: &Frame, b: &Frame) -> Result<u64> {
    check_dims(a, b)?;
    Ok(a.luma()
        .iter()
        .zip(b.luma())
        .map(|(&x, &y)| {
            let d = i64::from(x) - i64::from(y);
            (d * d) as u64
        })
        .sum())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    let sse = squared_error(a, b)?;
    Ok(sse as f64 / a.luma().len() as f64)
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<PsnrValue> {
    Ok(PsnrValue::from_mse(mse(a, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let a = Frame::new(2, 1, vec![0, 0], 0).unwrap();
        let b = Frame::new(2, 1, vec![3, 4], 0).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 12.5);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let c = Frame::filled(5, 3, 10, 0).unwrap();
        let d = Frame::filled(5, 3, 11, 0).unwrap();
        assert_eq!(mse(&c, &d).unwrap(), 1.0);
    }

    #[test]
    fn psnr_examples() {
        let black = Frame::filled(4, 4, 0, 0).unwrap();
        let white = Frame::filled(4, 4, 255, 0).unwrap();
        assert_eq!(psnr(&black, &black).unwrap(), PsnrValue::Infinite);
        assert_eq!(psnr(&black, &white).unwrap(), PsnrValue::Finite(0.0));
        let one = Frame::filled(4, 4, 1, 0).unwrap();
        let db = psnr(&black, &one).unwrap().finite().unwrap();
        assert!((db - 48.1308).abs() < 1e-4, "{db}");
    }

    #[test]
    fn infinite_renders_as_inf() {
        assert_eq!(PsnrValue::Infinite.to_string(), "inf");
        assert_eq!(mean_finite(&[PsnrValue::Infinite, PsnrValue::Finite(30.0)]), Some(30.0));
        assert_eq!(mean_finite(&[PsnrValue::Infinite]), None);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Frame::filled(2, 2, 0, 0).unwrap();
        let b = Frame::filled(2, 3, 0, 0).unwrap();
        assert!(matches!(mse(&a, &b), Err(Error::InvalidArgument(_))));
        assert!(psnr(&a, &b).is_err());
    }
}
