//! Pattern rules mapping token-level constructs onto count features.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexer::{tokenize, Token};
use crate::package::DEFAULT_SOURCE_EXTENSIONS;

/// The count features computed by syntactic pattern matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternFeature {
    PiiAccess,
    FsAccess,
    ProcessCreation,
    NetworkAccess,
    CryptoApi,
    DataEncoding,
    DynamicCode,
}

impl PatternFeature {
    pub const ALL: [PatternFeature; 7] = [
        PatternFeature::PiiAccess,
        PatternFeature::FsAccess,
        PatternFeature::ProcessCreation,
        PatternFeature::NetworkAccess,
        PatternFeature::CryptoApi,
        PatternFeature::DataEncoding,
        PatternFeature::DynamicCode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternFeature::PiiAccess => "pii_access",
            PatternFeature::FsAccess => "fs_access",
            PatternFeature::ProcessCreation => "process_creation",
            PatternFeature::NetworkAccess => "network_access",
            PatternFeature::CryptoApi => "crypto_api",
            PatternFeature::DataEncoding => "data_encoding",
            PatternFeature::DynamicCode => "dynamic_code",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PatternFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PatternRule {
    /// `require("m")`, `import ... from "m"`, `import("m")`, `export ... from "m"`.
    /// A `node:` scheme on the specifier is ignored.
    ImportOf(String),
    /// A call whose callee (or last member of the callee) is the given name,
    /// including `new Name(...)`.
    CallOf(String),
    /// A string literal containing the keyword, case-insensitively.
    StringLiteralContaining(String),
    /// A dotted member path such as `document.cookie`, or a bare identifier.
    PropertyAccessOf(String),
    /// `require(expr)` or `import(expr)` with a non-literal argument.
    DynamicImport,
}

#[derive(Debug, Error)]
pub enum PatternTableError {
    #[error("cannot read pattern table: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pattern table: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("feature {0} has no rules")]
    EmptyFeature(PatternFeature),
    #[error("invalid rule for {feature}: {reason}")]
    InvalidRule {
        feature: PatternFeature,
        reason: String,
    },
}

/// Rules per count feature plus the file extensions that are scanned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTable {
    pub features: BTreeMap<PatternFeature, Vec<PatternRule>>,
    #[serde(default = "default_extensions")]
    pub source_extensions: Vec<String>,
}

fn default_extensions() -> Vec<String> {
    DEFAULT_SOURCE_EXTENSIONS.iter().map(|s| s.to_string()).collect()
}

impl Default for PatternTable {
    fn default() -> Self {
        use PatternFeature::*;
        use PatternRule::*;
        let s = |v: &str| v.to_string();
        let mut features = BTreeMap::new();

        let mut pii: Vec<PatternRule> = ["password", "passwd", "creditcard", "credit_card", "cvv", "cookie"]
            .into_iter()
            .map(|k| StringLiteralContaining(s(k)))
            .collect();
        pii.push(PropertyAccessOf(s("document.cookie")));
        features.insert(PiiAccess, pii);

        let mut fs: Vec<PatternRule> = vec![ImportOf(s("fs")), ImportOf(s("fs/promises"))];
        fs.extend(
            ["readFile", "readFileSync", "writeFile", "writeFileSync"]
                .into_iter()
                .map(|c| CallOf(s(c))),
        );
        features.insert(FsAccess, fs);

        let mut proc_rules = vec![ImportOf(s("child_process"))];
        proc_rules.extend(
            ["exec", "execSync", "spawn", "spawnSync", "fork"]
                .into_iter()
                .map(|c| CallOf(s(c))),
        );
        features.insert(ProcessCreation, proc_rules);

        let mut net: Vec<PatternRule> = ["http", "https", "net", "dns", "request", "axios", "node-fetch"]
            .into_iter()
            .map(|m| ImportOf(s(m)))
            .collect();
        net.push(CallOf(s("fetch")));
        net.push(PropertyAccessOf(s("XMLHttpRequest")));
        features.insert(NetworkAccess, net);

        let mut crypto = vec![ImportOf(s("crypto"))];
        crypto.extend(
            ["createCipher", "createHash", "createDecipheriv"]
                .into_iter()
                .map(|c| CallOf(s(c))),
        );
        features.insert(CryptoApi, crypto);

        let mut enc: Vec<PatternRule> = ["encodeURIComponent", "decodeURIComponent", "btoa", "atob"]
            .into_iter()
            .map(|c| CallOf(s(c)))
            .collect();
        enc.push(PropertyAccessOf(s("Buffer.from")));
        enc.push(StringLiteralContaining(s("base64")));
        features.insert(DataEncoding, enc);

        features.insert(
            DynamicCode,
            vec![CallOf(s("eval")), CallOf(s("Function")), DynamicImport],
        );

        Self {
            features,
            source_extensions: default_extensions(),
        }
    }
}

impl PatternTable {
    pub fn from_json(text: &str) -> Result<Self, PatternTableError> {
        let table: PatternTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, PatternTableError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern table serializes")
    }

    pub fn validate(&self) -> Result<(), PatternTableError> {
        for feature in PatternFeature::ALL {
            let rules = self
                .features
                .get(&feature)
                .filter(|r| !r.is_empty())
                .ok_or(PatternTableError::EmptyFeature(feature))?;
            for rule in rules {
                let value = match rule {
                    PatternRule::ImportOf(v)
                    | PatternRule::CallOf(v)
                    | PatternRule::StringLiteralContaining(v)
                    | PatternRule::PropertyAccessOf(v) => v,
                    PatternRule::DynamicImport => continue,
                };
                if value.trim().is_empty() {
                    return Err(PatternTableError::InvalidRule {
                        feature,
                        reason: "empty rule value".into(),
                    });
                }
                if let PatternRule::PropertyAccessOf(path) = rule {
                    if path.split('.').any(str::is_empty) {
                        return Err(PatternTableError::InvalidRule {
                            feature,
                            reason: format!("bad member path {path:?}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn rules(&self, feature: PatternFeature) -> &[PatternRule] {
        self.features.get(&feature).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Counts rule matches per feature in one source text.
    pub fn count_matches(&self, source: &str) -> [u64; 7] {
        let scan = TokenScan::new(tokenize(source));
        let mut counts = [0u64; 7];
        for feature in PatternFeature::ALL {
            counts[feature.index()] = self
                .rules(feature)
                .iter()
                .map(|rule| scan.count(rule))
                .sum();
        }
        counts
    }
}

/// Pre-computed views over a token stream shared by all rules.
struct TokenScan {
    tokens: Vec<Token>,
    imports: Vec<String>,
    dynamic_imports: u64,
    lowered_strings: Vec<String>,
}

impl TokenScan {
    fn new(tokens: Vec<Token>) -> Self {
        let (imports, dynamic_imports) = collect_imports(&tokens);
        let lowered_strings = tokens
            .iter()
            .filter_map(|t| match t {
                Token::Str(s) => Some(s.value.to_lowercase()),
                _ => None,
            })
            .collect();
        Self {
            tokens,
            imports,
            dynamic_imports,
            lowered_strings,
        }
    }

    fn count(&self, rule: &PatternRule) -> u64 {
        match rule {
            PatternRule::ImportOf(module) => {
                self.imports.iter().filter(|m| *m == module).count() as u64
            }
            PatternRule::CallOf(name) => self.count_calls(name),
            PatternRule::StringLiteralContaining(keyword) => {
                let keyword = keyword.to_lowercase();
                self.lowered_strings
                    .iter()
                    .filter(|s| s.contains(&keyword))
                    .count() as u64
            }
            PatternRule::PropertyAccessOf(path) => self.count_member_path(path),
            PatternRule::DynamicImport => self.dynamic_imports,
        }
    }

    fn count_calls(&self, name: &str) -> u64 {
        let t = &self.tokens;
        let mut n = 0;
        for i in 0..t.len() {
            if !t[i].is_ident(name) || !t.get(i + 1).is_some_and(|x| x.is_punct("(")) {
                continue;
            }
            if i > 0 && t[i - 1].is_ident("function") {
                continue;
            }
            // `name(...) {` is a method definition, not a call
            if let Some(close) = matching_paren(t, i + 1) {
                if t.get(close + 1).is_some_and(|x| x.is_punct("{")) {
                    continue;
                }
            }
            n += 1;
        }
        n
    }

    fn count_member_path(&self, path: &str) -> u64 {
        let segments: Vec<&str> = path.split('.').collect();
        let t = &self.tokens;
        let mut n = 0;
        'outer: for start in 0..t.len() {
            if !t[start].is_ident(segments[0]) {
                continue;
            }
            let mut pos = start + 1;
            for seg in &segments[1..] {
                match (t.get(pos), t.get(pos + 1), t.get(pos + 2)) {
                    (Some(dot), Some(Token::Ident(name)), _)
                        if (dot.is_punct(".") || dot.is_punct("?.")) && name == seg =>
                    {
                        pos += 2;
                    }
                    (Some(open), Some(key), Some(close))
                        if open.is_punct("[")
                            && key.plain_str() == Some(seg)
                            && close.is_punct("]") =>
                    {
                        pos += 3;
                    }
                    _ => continue 'outer,
                }
            }
            n += 1;
        }
        n
    }
}

fn matching_paren(tokens: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, tok) in tokens.iter().enumerate().skip(open) {
        if tok.is_punct("(") {
            depth += 1;
        } else if tok.is_punct(")") {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn module_name(spec: &str) -> String {
    spec.strip_prefix("node:").unwrap_or(spec).to_string()
}

/// Returns static module specifiers and the number of non-literal loads.
fn collect_imports(t: &[Token]) -> (Vec<String>, u64) {
    let mut modules = Vec::new();
    let mut dynamic = 0;
    let call_arg = |i: usize| -> Option<Result<String, ()>> {
        if !t.get(i + 1)?.is_punct("(") {
            return None;
        }
        match (t.get(i + 2).and_then(Token::plain_str), t.get(i + 3)) {
            (Some(spec), Some(close)) if close.is_punct(")") || close.is_punct(",") => {
                Some(Ok(module_name(spec)))
            }
            _ => Some(Err(())),
        }
    };

    let mut i = 0;
    while i < t.len() {
        let prev_is_decl = i > 0 && (t[i - 1].is_ident("function") || t[i - 1].is_punct("."));
        if t[i].is_ident("require") && !(i > 0 && t[i - 1].is_ident("function")) {
            match call_arg(i) {
                Some(Ok(m)) => modules.push(m),
                Some(Err(())) => dynamic += 1,
                None => {}
            }
        } else if t[i].is_ident("import") && !prev_is_decl {
            if t.get(i + 1).is_some_and(|x| x.is_punct(".")) {
                // import.meta
            } else if let Some(arg) = call_arg(i) {
                match arg {
                    Ok(m) => modules.push(m),
                    Err(()) => dynamic += 1,
                }
            } else if let Some(m) = t.get(i + 1).and_then(Token::plain_str) {
                modules.push(module_name(m));
            } else if let Some(m) = scan_from_clause(t, i + 1) {
                modules.push(m);
            }
        } else if t[i].is_ident("export") && !prev_is_decl {
            if let Some(m) = scan_from_clause(t, i + 1) {
                modules.push(m);
            }
        }
        i += 1;
    }
    (modules, dynamic)
}

/// Looks for `from "m"` before the statement ends.
fn scan_from_clause(t: &[Token], start: usize) -> Option<String> {
    let mut depth = 0i32;
    for i in start..t.len().min(start + 512) {
        match &t[i] {
            Token::Punct("{") => depth += 1,
            Token::Punct("}") => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            Token::Punct(";") if depth == 0 => return None,
            Token::Punct("=") | Token::Punct("(") if depth == 0 => return None,
            Token::Ident(w) if w == "from" && depth == 0 => {
                return t.get(i + 1).and_then(Token::plain_str).map(module_name);
            }
            Token::Ident(w) if depth == 0 && (w == "import" || w == "export") => return None,
            _ => {}
        }
    }
    None
}
