//! Unit conversions shared across the crate.

/// mg/dL per mmol/L of glucose (molar mass 180.16 g/mol).
pub const MGDL_PER_MMOL: f64 = 18.016;

/// Molar mass of glucose expressed as g per mmol, used to turn grams of
/// carbohydrate into mmol of glucose.
pub const GLUCOSE_G_PER_MMOL: f64 = 0.180_16;

pub const MINUTES_PER_DAY: f64 = 1440.0;

#[inline]
pub fn mmol_to_mgdl(mmol_per_l: f64) -> f64 {
    mmol_per_l * MGDL_PER_MMOL
}

#[inline]
pub fn mgdl_to_mmol(mg_per_dl: f64) -> f64 {
    mg_per_dl / MGDL_PER_MMOL
}
