//! Semantic versions, update classification and publication timelines.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VersionError {
    #[error("invalid semantic version {input:?}: {reason}")]
    Parse { input: String, reason: &'static str },
    #[error("version {0} is not in the timeline")]
    UnknownVersion(String),
    #[error("negative interval between {prev} and {next}")]
    NegativeInterval { prev: f64, next: f64 },
    #[error("invalid timestamp {0:?}")]
    Timestamp(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Identifier {
    Numeric(u64),
    Alpha(String),
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identifier::Numeric(n) => write!(f, "{n}"),
            Identifier::Alpha(s) => f.write_str(s),
        }
    }
}

impl Ord for Identifier {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Identifier::Numeric(a), Identifier::Numeric(b)) => a.cmp(b),
            (Identifier::Numeric(_), Identifier::Alpha(_)) => Ordering::Less,
            (Identifier::Alpha(_), Identifier::Numeric(_)) => Ordering::Greater,
            (Identifier::Alpha(a), Identifier::Alpha(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for Identifier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemVer {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
    pub prerelease: Vec<Identifier>,
    /// Build metadata identifiers, kept verbatim.
    pub build: Vec<String>,
}

impl SemVer {
    pub fn new(major: u64, minor: u64, patch: u64) -> Self {
        Self {
            major,
            minor,
            patch,
            prerelease: Vec::new(),
            build: Vec::new(),
        }
    }

    pub fn parse(input: &str) -> Result<Self, VersionError> {
        let err = |reason| VersionError::Parse {
            input: input.to_string(),
            reason,
        };
        let (rest, build) = match input.split_once('+') {
            Some((r, b)) => (r, Some(b)),
            None => (input, None),
        };
        let (core, pre) = match rest.split_once('-') {
            Some((c, p)) => (c, Some(p)),
            None => (rest, None),
        };
        let parts: Vec<&str> = core.split('.').collect();
        if parts.len() != 3 {
            return Err(err("expected MAJOR.MINOR.PATCH"));
        }
        let mut nums = [0u64; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = parse_numeric(part).ok_or_else(|| err("invalid numeric component"))?;
        }

        let prerelease = match pre {
            None => Vec::new(),
            Some(p) => p
                .split('.')
                .map(|id| {
                    if !valid_identifier(id) {
                        return Err(err("invalid pre-release identifier"));
                    }
                    if id.bytes().all(|b| b.is_ascii_digit()) {
                        parse_numeric(id)
                            .map(Identifier::Numeric)
                            .ok_or_else(|| err("numeric pre-release identifier has a leading zero"))
                    } else {
                        Ok(Identifier::Alpha(id.to_string()))
                    }
                })
                .collect::<Result<_, _>>()?,
        };
        let build = match build {
            None => Vec::new(),
            Some(b) => b
                .split('.')
                .map(|id| {
                    if valid_identifier(id) {
                        Ok(id.to_string())
                    } else {
                        Err(err("invalid build identifier"))
                    }
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(Self {
            major: nums[0],
            minor: nums[1],
            patch: nums[2],
            prerelease,
            build,
        })
    }

    pub fn core(&self) -> (u64, u64, u64) {
        (self.major, self.minor, self.patch)
    }

    /// Precedence ordering; build metadata is ignored.
    pub fn precedence(&self, other: &Self) -> Ordering {
        self.core().cmp(&other.core()).then_with(|| {
            match (self.prerelease.is_empty(), other.prerelease.is_empty()) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Greater,
                (false, true) => Ordering::Less,
                (false, false) => self.prerelease.cmp(&other.prerelease),
            }
        })
    }
}

fn parse_numeric(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

impl FromStr for SemVer {
    type Err = VersionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SemVer::parse(s)
    }
}

impl fmt::Display for SemVer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)?;
        if !self.prerelease.is_empty() {
            let ids: Vec<String> = self.prerelease.iter().map(ToString::to_string).collect();
            write!(f, "-{}", ids.join("."))?;
        }
        if !self.build.is_empty() {
            write!(f, "+{}", self.build.join("."))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateType {
    Major,
    Minor,
    Patch,
    Prerelease,
    Build,
    First,
}

impl UpdateType {
    /// One-hot column order used by the encoders.
    pub const ALL: [UpdateType; 6] = [
        UpdateType::Major,
        UpdateType::Minor,
        UpdateType::Patch,
        UpdateType::Prerelease,
        UpdateType::Build,
        UpdateType::First,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UpdateType::Major => "major",
            UpdateType::Minor => "minor",
            UpdateType::Patch => "patch",
            UpdateType::Prerelease => "prerelease",
            UpdateType::Build => "build",
            UpdateType::First => "first",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for UpdateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifies the update from `prev` to `next`. Never returns `First`.
pub fn classify_update(prev: &SemVer, next: &SemVer) -> UpdateType {
    if !next.prerelease.is_empty() {
        UpdateType::Prerelease
    } else if prev.major != next.major {
        UpdateType::Major
    } else if prev.minor != next.minor {
        UpdateType::Minor
    } else if prev.patch != next.patch {
        UpdateType::Patch
    } else if prev.build != next.build {
        UpdateType::Build
    } else {
        if prev == next {
            log::warn!("version {next} republished with an identical version string");
        }
        UpdateType::Patch
    }
}

/// Seconds elapsed between two publication times.
pub fn time_between(prev_ts: f64, next_ts: f64) -> Result<f64, VersionError> {
    if next_ts < prev_ts {
        return Err(VersionError::NegativeInterval {
            prev: prev_ts,
            next: next_ts,
        });
    }
    Ok(next_ts - prev_ts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub version: String,
    /// Publication time in UTC seconds since the epoch.
    pub published: f64,
}

/// A package's published versions in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionTimeline {
    pub package: String,
    pub entries: Vec<TimelineEntry>,
}

impl VersionTimeline {
    /// Sorts by timestamp; ties broken by semver precedence, then by the
    /// version string.
    pub fn new(package: impl Into<String>, entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        let mut entries: Vec<TimelineEntry> = entries
            .into_iter()
            .map(|(version, published)| TimelineEntry { version, published })
            .collect();
        entries.sort_by(|a, b| {
            a.published
                .total_cmp(&b.published)
                .then_with(|| match (SemVer::parse(&a.version), SemVer::parse(&b.version)) {
                    (Ok(x), Ok(y)) => x.precedence(&y),
                    _ => Ordering::Equal,
                })
                .then_with(|| a.version.cmp(&b.version))
        });
        Self {
            package: package.into(),
            entries,
        }
    }

    /// Builds a timeline from a registry `time` map of ISO-8601 strings.
    /// The `created` and `modified` keys are skipped.
    pub fn from_time_map<'a>(
        package: impl Into<String>,
        time: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, VersionError> {
        let mut entries = Vec::new();
        for (version, stamp) in time {
            if version == "created" || version == "modified" {
                continue;
            }
            entries.push((version.to_string(), parse_timestamp(stamp)?));
        }
        Ok(Self::new(package, entries))
    }

    fn position(&self, version: &str) -> Result<usize, VersionError> {
        self.entries
            .iter()
            .position(|e| e.version == version)
            .ok_or_else(|| VersionError::UnknownVersion(version.to_string()))
    }

    pub fn published(&self, version: &str) -> Result<f64, VersionError> {
        Ok(self.entries[self.position(version)?].published)
    }

    pub fn previous_version(&self, version: &str) -> Result<Option<&TimelineEntry>, VersionError> {
        let i = self.position(version)?;
        Ok(i.checked_sub(1).map(|j| &self.entries[j]))
    }

    pub fn contains(&self, version: &str) -> bool {
        self.position(version).is_ok()
    }
}

/// Parses an RFC 3339 timestamp into UTC seconds with sub-second precision.
pub fn parse_timestamp(stamp: &str) -> Result<f64, VersionError> {
    let dt = chrono::DateTime::parse_from_rfc3339(stamp)
        .map_err(|_| VersionError::Timestamp(stamp.to_string()))?;
    Ok(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) / 1e9)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> SemVer {
        SemVer::parse(s).unwrap()
    }

    #[test]
    fn parse_and_print() {
        let x = v("1.0.0-alpha.1+build.5");
        assert_eq!(x.prerelease, vec![Identifier::Alpha("alpha".into()), Identifier::Numeric(1)]);
        assert_eq!(x.build, vec!["build", "5"]);
        assert_eq!(x.to_string(), "1.0.0-alpha.1+build.5");
        for bad in ["1.0", "01.0.0", "1.0.0-", "1.0.0-01", "1.0.0+", "a.b.c", "1.0.0-a..b", "", "1.2.3.4"] {
            assert!(SemVer::parse(bad).is_err(), "{bad}");
        }
        assert!(SemVer::parse("1.0.0-0a").is_ok());
    }

    #[test]
    fn precedence_follows_semver() {
        let order = [
            "1.0.0-alpha", "1.0.0-alpha.1", "1.0.0-alpha.beta", "1.0.0-beta", "1.0.0-beta.2",
            "1.0.0-beta.11", "1.0.0-rc.1", "1.0.0",
        ];
        for w in order.windows(2) {
            assert_eq!(v(w[0]).precedence(&v(w[1])), Ordering::Less, "{w:?}");
        }
        assert_eq!(v("1.0.0+a").precedence(&v("1.0.0+b")), Ordering::Equal);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_update(&v("3.1.8"), &v("3.1.9")), UpdateType::Patch);
        assert_eq!(classify_update(&v("1.4.0"), &v("2.0.0")), UpdateType::Major);
        assert_eq!(classify_update(&v("1.0.0"), &v("1.0.1-beta.1")), UpdateType::Prerelease);
        assert_eq!(classify_update(&v("1.0.0+a"), &v("1.0.0+b")), UpdateType::Build);
        assert_eq!(classify_update(&v("1.0.0"), &v("1.0.0")), UpdateType::Patch);
    }

    #[test]
    fn previous_is_chronological() {
        let t = VersionTimeline::new(
            "jasmin",
            [("0.0.3".to_string(), 30.0), ("0.0.1".to_string(), 10.0), ("0.0.2".to_string(), 20.0)],
        );
        let p = t.previous_version("0.0.3").unwrap().unwrap();
        assert_eq!((p.version.as_str(), p.published), ("0.0.2", 20.0));
        assert!(t.previous_version("0.0.1").unwrap().is_none());
        assert_eq!(
            t.previous_version("9.9.9"),
            Err(VersionError::UnknownVersion("9.9.9".into()))
        );

        // a backport published after a newer major line
        let t = VersionTimeline::new(
            "p",
            [("2.0.0".to_string(), 1.0), ("1.9.1".to_string(), 2.0)],
        );
        assert_eq!(t.previous_version("1.9.1").unwrap().unwrap().version, "2.0.0");
    }

    #[test]
    fn sub_millisecond_pair_from_time_map() {
        let t = VersionTimeline::from_time_map(
            "mogodb",
            [
                ("created", "2019-08-01T10:00:00.000Z"),
                ("3.1.9", "2019-08-01T10:00:00.4005Z"),
                ("3.1.8", "2019-08-01T10:00:00.4000Z"),
                ("modified", "2019-08-01T10:05:00.000Z"),
            ],
        )
        .unwrap();
        assert_eq!(t.entries.len(), 2);
        let prev = t.previous_version("3.1.9").unwrap().unwrap();
        assert_eq!(prev.version, "3.1.8");
        let dt = time_between(prev.published, t.published("3.1.9").unwrap()).unwrap();
        assert!((0.0..1e-3).contains(&dt), "{dt}");
    }

    #[test]
    fn ties_fall_back_to_semver_then_string() {
        let t = VersionTimeline::new(
            "p",
            [("1.0.1".to_string(), 5.0), ("1.0.0".to_string(), 5.0), ("1.0.0+b".to_string(), 5.0)],
        );
        let order: Vec<_> = t.entries.iter().map(|e| e.version.as_str()).collect();
        assert_eq!(order, ["1.0.0", "1.0.0+b", "1.0.1"]);
    }

    #[test]
    fn intervals() {
        assert!((time_between(1000.0, 1007.02).unwrap() - 7.02).abs() < 1e-9);
        assert_eq!(time_between(5.0, 5.0).unwrap(), 0.0);
        assert!(matches!(time_between(2.0, 1.0), Err(VersionError::NegativeInterval { .. })));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn ident() -> impl Strategy<Value = String> {
            prop_oneof!["[1-9][0-9]{0,3}", "0", "[a-zA-Z-][a-zA-Z0-9-]{0,5}"]
        }

        fn version() -> impl Strategy<Value = String> {
            (
                0u64..50,
                0u64..50,
                0u64..50,
                proptest::collection::vec(ident(), 0..3),
                proptest::collection::vec("[a-zA-Z0-9-]{1,5}", 0..3),
            )
                .prop_map(|(a, b, c, pre, build)| {
                    let mut s = format!("{a}.{b}.{c}");
                    if !pre.is_empty() {
                        s.push('-');
                        s.push_str(&pre.join("."));
                    }
                    if !build.is_empty() {
                        s.push('+');
                        s.push_str(&build.join("."));
                    }
                    s
                })
        }

        proptest! {
            #[test]
            fn parse_print_roundtrip(s in version()) {
                prop_assert_eq!(SemVer::parse(&s).unwrap().to_string(), s);
            }

            #[test]
            fn classify_never_first(a in version(), b in version()) {
                let t = classify_update(&SemVer::parse(&a).unwrap(), &SemVer::parse(&b).unwrap());
                prop_assert_ne!(t, UpdateType::First);
            }

            #[test]
            fn predecessor_chain_has_one_root(stamps in proptest::collection::vec(0u32..20, 1..15)) {
                let entries: Vec<(String, f64)> = stamps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (format!("1.0.{i}"), f64::from(*s)))
                    .collect();
                let t = VersionTimeline::new("p", entries);
                let roots = t
                    .entries
                    .iter()
                    .filter(|e| t.previous_version(&e.version).unwrap().is_none())
                    .count();
                prop_assert_eq!(roots, 1);
                for w in t.entries.windows(2) {
                    prop_assert!(w[0].published <= w[1].published);
                }
            }
        }
    }
}
