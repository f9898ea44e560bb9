//! Floating-point scalar abstraction shared by the network, Grad-CAM and
//! ensemble code.

use std::fmt;
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Float type the numeric parts of the crate are generic over.
///
/// Implemented for `f32` (training default) and `f64` (oracles and
/// high-precision checks).
pub trait Scalar:
    NdFloat
    + FromPrimitive
    + ToPrimitive
    + Default
    + Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Serialize
    + DeserializeOwned
{
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 converts to every Scalar")
    }

    fn from_count(value: usize) -> Self {
        Self::from_f64_lossy(value as f64)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
