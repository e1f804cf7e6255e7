//! UTC timestamps and the fixed time units used throughout the pipeline.
//!
//! Dump files carry ISO-8601 timestamps with fractional seconds and no zone
//! (the dump convention is UTC). A timestamp is stored as milliseconds since
//! the Unix epoch so that binary snapshots round-trip bit-exactly.

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// Days per month used for fractional month arithmetic. Fixed so that age
/// features are independent of calendar irregularities.
pub const DAYS_PER_MONTH: f64 = 30.44;

pub const MILLIS_PER_MINUTE: i64 = 60_000;
pub const MILLIS_PER_DAY: i64 = 86_400_000;

/// Milliseconds in one nominal month.
pub fn month_millis() -> f64 {
    DAYS_PER_MONTH * MILLIS_PER_DAY as f64
}

/// A UTC instant with millisecond precision.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    /// Parse an ISO-8601 timestamp. Accepts `YYYY-MM-DD`,
    /// `YYYY-MM-DDTHH:MM:SS` with optional fractional seconds, and RFC 3339
    /// with an explicit offset. A missing zone is taken as UTC.
    pub fn parse(s: &str) -> Result<Self, TimestampParseError> {
        let s = s.trim();
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f") {
            return Ok(Timestamp(dt.and_utc().timestamp_millis()));
        }
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            let dt = d.and_hms_opt(0, 0, 0).unwrap();
            return Ok(Timestamp(dt.and_utc().timestamp_millis()));
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp(dt.with_timezone(&Utc).timestamp_millis()));
        }
        Err(TimestampParseError(s.to_string()))
    }

    /// Canonical dump form: `2018-03-01T00:00:00.000`.
    pub fn to_iso(self) -> String {
        self.as_datetime().format("%Y-%m-%dT%H:%M:%S%.3f").to_string()
    }

    /// Colon-free form usable as a directory name.
    pub fn to_path_component(self) -> String {
        self.as_datetime().format("%Y-%m-%dT%H-%M-%S").to_string()
    }

    fn as_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0).single().expect("timestamp in range")
    }

    /// Signed difference `self - earlier` in fractional months.
    pub fn months_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / month_millis()
    }

    /// Signed difference `self - earlier` in fractional days.
    pub fn days_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / MILLIS_PER_DAY as f64
    }

    /// Signed difference `self - earlier` in fractional minutes.
    pub fn minutes_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / MILLIS_PER_MINUTE as f64
    }

    /// The instant `months` nominal months before this one.
    pub fn minus_months(self, months: f64) -> Timestamp {
        Timestamp(self.0 - (months * month_millis()).round() as i64)
    }

    pub fn plus_millis(self, ms: i64) -> Timestamp {
        Timestamp(self.0 + ms)
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({})", self.to_iso())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_iso())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_iso())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampParseError(pub String);

impl fmt::Display for TimestampParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unparseable timestamp {:?}", self.0)
    }
}

impl std::error::Error for TimestampParseError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dump_format() {
        let t = Timestamp::parse("2008-07-31T21:42:52.667").unwrap();
        assert_eq!(t.to_iso(), "2008-07-31T21:42:52.667");
    }

    #[test]
    fn parses_date_only() {
        let t = Timestamp::parse("2018-03-01").unwrap();
        assert_eq!(t.to_iso(), "2018-03-01T00:00:00.000");
    }

    #[test]
    fn parses_explicit_zone() {
        let t = Timestamp::parse("2018-03-01T02:00:00+02:00").unwrap();
        assert_eq!(t.to_iso(), "2018-03-01T00:00:00.000");
    }

    #[test]
    fn rejects_garbage() {
        assert!(Timestamp::parse("not a time").is_err());
        assert!(Timestamp::parse("2018-13-01").is_err());
    }

    #[test]
    fn month_arithmetic() {
        let a = Timestamp::parse("2018-01-01").unwrap();
        let b = a.plus_millis((30.44 * MILLIS_PER_DAY as f64) as i64);
        assert!((b.months_since(a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iso_roundtrip() {
        let t = Timestamp::from_millis(1_530_000_123_456);
        assert_eq!(Timestamp::parse(&t.to_iso()).unwrap(), t);
    }
}
