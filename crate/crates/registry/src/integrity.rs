use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha1::Sha1;
use sha2::{Digest, Sha256, Sha512};

/// Result of checking bytes against a declared digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntegrityCheck {
    Verified,
    /// The document declared nothing we can check.
    Absent,
    Mismatch { expected: String, actual: String },
}

fn sri(algorithm: &str, bytes: &[u8]) -> Option<String> {
    let digest = match algorithm {
        "sha512" => Sha512::digest(bytes).to_vec(),
        "sha384" => sha2::Sha384::digest(bytes).to_vec(),
        "sha256" => Sha256::digest(bytes).to_vec(),
        "sha1" => Sha1::digest(bytes).to_vec(),
        _ => return None,
    };
    Some(format!("{algorithm}-{}", STANDARD.encode(digest)))
}

const STRENGTH: [&str; 4] = ["sha512", "sha384", "sha256", "sha1"];

/// Checks an SRI string (strongest supported algorithm wins), falling back
/// to a hex SHA-1 `shasum`.
pub fn verify(bytes: &[u8], integrity: Option<&str>, shasum: Option<&str>) -> IntegrityCheck {
    if let Some(integrity) = integrity {
        let entries: Vec<(&str, &str)> = integrity
            .split_whitespace()
            .filter_map(|e| e.split_once('-'))
            .collect();
        for algorithm in STRENGTH {
            let declared: Vec<&str> = entries
                .iter()
                .filter(|(a, _)| *a == algorithm)
                .map(|(_, v)| v.split('?').next().unwrap_or(v))
                .collect();
            if declared.is_empty() {
                continue;
            }
            let actual = sri(algorithm, bytes).expect("supported algorithm");
            let value = &actual[algorithm.len() + 1..];
            return if declared.contains(&value) {
                IntegrityCheck::Verified
            } else {
                IntegrityCheck::Mismatch {
                    expected: format!("{algorithm}-{}", declared[0]),
                    actual,
                }
            };
        }
    }
    if let Some(hex_sum) = shasum.filter(|s| !s.is_empty()) {
        let actual = hex::encode(Sha1::digest(bytes));
        return if actual.eq_ignore_ascii_case(hex_sum) {
            IntegrityCheck::Verified
        } else {
            IntegrityCheck::Mismatch {
                expected: hex_sum.to_owned(),
                actual,
            }
        };
    }
    IntegrityCheck::Absent
}

/// SRI string and hex SHA-1 for freshly built tarballs.
pub fn describe(bytes: &[u8]) -> (String, String) {
    (sri("sha512", bytes).expect("sha512"), hex::encode(Sha1::digest(bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sri_and_shasum() {
        let (integrity, shasum) = describe(b"abc");
        assert_eq!(shasum, "a9993e364706816aba3e25717850c26c9cd0d89d");
        assert_eq!(verify(b"abc", Some(&integrity), None), IntegrityCheck::Verified);
        assert_eq!(verify(b"abc", None, Some(&shasum.to_uppercase())), IntegrityCheck::Verified);
        assert!(matches!(verify(b"abd", Some(&integrity), None), IntegrityCheck::Mismatch { .. }));
        assert!(matches!(verify(b"abd", None, Some(&shasum)), IntegrityCheck::Mismatch { .. }));
        assert_eq!(verify(b"abc", None, None), IntegrityCheck::Absent);
        assert_eq!(verify(b"abc", Some("md5-xxxx"), None), IntegrityCheck::Absent);
    }

    #[test]
    fn strongest_algorithm_decides() {
        let sha1 = sri("sha1", b"abc").unwrap();
        let bad512 = "sha512-AAAA";
        let both = format!("{sha1} {bad512}");
        assert!(matches!(verify(b"abc", Some(&both), None), IntegrityCheck::Mismatch { .. }));
        let good = format!("{} {sha1}", sri("sha512", b"abc").unwrap());
        assert_eq!(verify(b"abc", Some(&good), None), IntegrityCheck::Verified);
    }
}
