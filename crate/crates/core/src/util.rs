//! Small shared helpers.

use chrono::{DateTime, Utc};

/// Current time as RFC 3339 (second precision).
///
/// Honors the standard `SOURCE_DATE_EPOCH` environment variable so that
/// otherwise-deterministic outputs can be made byte-identical across runs;
/// an unset or malformed value falls back to the wall clock.
pub fn now_rfc3339() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}
