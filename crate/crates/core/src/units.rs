//! Unit constants shared by every module.
//!
//! Inside the kernels speed is m/s and acceleration m/s². Distances leave the
//! crate in miles, rates are g/mile and reported masses are million metric
//! tons.

pub const METERS_PER_MILE: f64 = 1609.344;

/// Grams in one million metric tons.
pub const GRAMS_PER_MEGATONNE: f64 = 1.0e12;

pub const MILLION: f64 = 1.0e6;

pub fn meters_to_miles(m: f64) -> f64 {
    m / METERS_PER_MILE
}

pub fn grams_to_megatonnes(g: f64) -> f64 {
    g / GRAMS_PER_MEGATONNE
}
