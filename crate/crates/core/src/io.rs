//! Plain-text output helpers shared by every artifact writer.

/// Fixed 17-significant-digit scientific notation; round-trips every `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses a value written by [`fmt17`].
pub fn parse17(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}
