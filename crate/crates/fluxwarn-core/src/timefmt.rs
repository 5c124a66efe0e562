//! Timestamp parsing and formatting shared by the file formats.
//!
//! All instants are UTC. Input accepts RFC-3339 with or without a seconds
//! field (`2018-01-01T06:10Z` and `2018-01-01T06:10:00Z` are equivalent);
//! output always writes seconds, `%Y-%m-%dT%H:%M:%SZ`.

use chrono::{DateTime, NaiveDateTime, SecondsFormat, TimeZone, Timelike, Utc};

/// Parse an RFC-3339 UTC instant, tolerating a missing seconds field.
pub fn parse_instant(text: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.with_timezone(&Utc));
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%MZ") {
        return Ok(Utc.from_utc_datetime(&naive));
    }
    Err(format!(
        "invalid timestamp {text:?} (expected RFC-3339 UTC)"
    ))
}

/// Format an instant as RFC-3339 UTC with seconds.
pub fn format_instant(instant: DateTime<Utc>) -> String {
    instant.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// True if the instant sits exactly on a 10-minute boundary.
pub fn is_ten_min_aligned(instant: DateTime<Utc>) -> bool {
    instant.minute().is_multiple_of(10) && instant.second() == 0 && instant.nanosecond() == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_seconds() {
        let a = parse_instant("2018-01-01T00:00Z").unwrap();
        let b = parse_instant("2018-01-01T00:00:00Z").unwrap();
        assert_eq!(a, b);
        assert_eq!(format_instant(a), "2018-01-01T00:00:00Z");
    }

    #[test]
    fn converts_offsets_to_utc() {
        let a = parse_instant("2018-01-01T01:00:00+01:00").unwrap();
        assert_eq!(format_instant(a), "2018-01-01T00:00:00Z");
    }

    #[test]
    fn alignment_check() {
        assert!(is_ten_min_aligned(
            parse_instant("2018-01-01T00:10Z").unwrap()
        ));
        assert!(!is_ten_min_aligned(
            parse_instant("2018-01-01T00:03Z").unwrap()
        ));
        assert!(!is_ten_min_aligned(
            parse_instant("2018-01-01T00:10:30Z").unwrap()
        ));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_instant("yesterday").is_err());
        assert!(parse_instant("2018-13-01T00:00Z").is_err());
    }
}
