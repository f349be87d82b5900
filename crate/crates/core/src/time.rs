//! Clock helpers. All times are minutes since midnight as `f64`.

use crate::error::{Error, Result};

pub type Minutes = f64;

/// Parses `H:MM[:SS]` into minutes of day. `24:00:00` is accepted.
pub fn parse_hms(text: &str) -> Result<Minutes> {
    let bad = || Error::Config(format!("bad time {text:?}, expected HH:MM:SS"));
    let mut parts = text.trim().split(':');
    let h: u32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let m: u32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let s: u32 = match parts.next() {
        Some(p) => p.parse().map_err(|_| bad())?,
        None => 0,
    };
    if parts.next().is_some() || m >= 60 || s >= 60 || h > 24 || (h == 24 && (m > 0 || s > 0)) {
        return Err(bad());
    }
    Ok(h as f64 * 60.0 + m as f64 + s as f64 / 60.0)
}

pub fn format_hms(minutes: Minutes) -> String {
    let total = (minutes * 60.0).round() as i64;
    let (h, rem) = (total / 3600, total % 3600);
    format!("{:02}:{:02}:{:02}", h, rem / 60, rem % 60)
}
