//! Column schemas and label vocabularies.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Nominal,
    Label,
    /// Present in the file but not used (record ids, difficulty scores, duplicate labels).
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column {
            name: name.into(),
            kind,
        }
    }
}

/// Normal class name, attack categories, and raw label aliases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelVocabulary {
    pub normal: String,
    pub categories: Vec<String>,
    /// Raw label → category name. Matching ignores case, surrounding
    /// whitespace and a trailing period.
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSpec {
    /// `"nsl-kdd"` or `"unsw-nb15"`.
    Builtin(String),
    Custom(LabelVocabulary),
}

impl LabelSpec {
    pub fn vocabulary(&self) -> Result<LabelVocabulary> {
        match self {
            LabelSpec::Custom(v) => Ok(v.clone()),
            LabelSpec::Builtin(name) => match name.as_str() {
                "nsl-kdd" => Ok(nsl_kdd_labels()),
                "unsw-nb15" => Ok(unsw_nb15_labels()),
                other => Err(Error::Config(format!(
                    "unknown label vocabulary {other:?} (expected nsl-kdd or unsw-nb15)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<Column>,
    #[serde(default)]
    pub has_header: bool,
    pub labels: LabelSpec,
}

impl Schema {
    pub fn new(columns: Vec<Column>, has_header: bool, labels: LabelSpec) -> Result<Self> {
        let s = Schema {
            columns,
            has_header,
            labels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let labels = self.columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::Config(format!("schema needs exactly one label column, found {labels}")));
        }
        if self.feature_columns().next().is_none() {
            return Err(Error::Config("schema has no feature columns".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate column name {:?}", c.name)));
            }
        }
        self.labels.vocabulary()?;
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a schema file, or a built-in schema when `path` is `nsl-kdd`,
    /// `nsl-kdd-41` or `unsw-nb15`.
    pub fn load(path: &Path) -> Result<Self> {
        if let Some(s) = path.to_str().and_then(Self::builtin) {
            return Ok(s);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "nsl-kdd" => Some(nsl_kdd_schema(true)),
            "nsl-kdd-41" => Some(nsl_kdd_schema(false)),
            "unsw-nb15" => Some(unsw_nb15_schema()),
            _ => None,
        }
    }

    /// Feature columns (numeric and nominal) in file order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Numeric | ColumnKind::Nominal))
    }

    pub fn label_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Label)
            .expect("validated schema has a label column")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// normal → 0, any attack → 1.
    #[default]
    Binary,
    /// normal → 0, attack category `i` → `i + 1`.
    Multiclass,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Task::Binary),
            "multiclass" | "multi" => Ok(Task::Multiclass),
            other => Err(Error::Config(format!("unknown task {other:?} (expected binary or multiclass)"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
        })
    }
}

fn normalise(label: &str) -> String {
    label.trim().trim_end_matches('.').trim().to_lowercase()
}

/// Raw label strings → class indices for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub task: Task,
    /// Class names; index 0 is the normal class.
    pub classes: Vec<String>,
    /// Normalised raw label → category index (0 = normal).
    lookup: BTreeMap<String, usize>,
}

impl LabelMap {
    pub fn new(vocab: &LabelVocabulary, task: Task) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        lookup.insert(normalise(&vocab.normal), 0);
        for (i, c) in vocab.categories.iter().enumerate() {
            if lookup.insert(normalise(c), i + 1).is_some() {
                return Err(Error::Config(format!("label category {c:?} listed twice")));
            }
        }
        for (raw, target) in &vocab.aliases {
            let idx = *lookup
                .get(&normalise(target))
                .ok_or_else(|| Error::Config(format!("alias {raw:?} points at unknown category {target:?}")))?;
            lookup.entry(normalise(raw)).or_insert(idx);
        }
        let classes = match task {
            Task::Binary => vec![vocab.normal.clone(), "attack".to_string()],
            Task::Multiclass => std::iter::once(vocab.normal.clone())
                .chain(vocab.categories.iter().cloned())
                .collect(),
        };
        Ok(LabelMap { task, classes, lookup })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class index for a raw label string. Class names of this map are accepted too.
    pub fn map(&self, raw: &str) -> Result<usize> {
        let key = normalise(raw);
        if let Some(&cat) = self.lookup.get(&key) {
            return Ok(match self.task {
                Task::Binary => usize::from(cat != 0),
                Task::Multiclass => cat,
            });
        }
        self.classes
            .iter()
            .position(|c| normalise(c) == key)
            .ok_or_else(|| Error::UnknownLabel(raw.trim().to_string()))
    }
}

pub fn nsl_kdd_labels() -> LabelVocabulary {
    let groups: [(&str, &[&str]); 4] = [
        (
            "DoS",
            &["back", "land", "neptune", "pod", "smurf", "teardrop", "apache2", "mailbomb", "processtable", "udpstorm", "worm"],
        ),
        ("Probe", &["ipsweep", "nmap", "portsweep", "satan", "mscan", "saint"]),
        (
            "R2L",
            &[
                "ftp_write", "guess_passwd", "imap", "multihop", "phf", "spy", "warezclient", "warezmaster",
                "sendmail", "named", "snmpgetattack", "snmpguess", "xlock", "xsnoop", "httptunnel",
            ],
        ),
        ("U2R", &["buffer_overflow", "loadmodule", "perl", "rootkit", "ps", "sqlattack", "xterm"]),
    ];
    let mut aliases = BTreeMap::new();
    for (cat, names) in groups {
        for n in names {
            aliases.insert(n.to_string(), cat.to_string());
        }
    }
    LabelVocabulary {
        normal: "normal".into(),
        categories: groups.iter().map(|(c, _)| c.to_string()).collect(),
        aliases,
    }
}

pub fn unsw_nb15_labels() -> LabelVocabulary {
    let categories = [
        "Generic", "Exploits", "Fuzzers", "Reconnaissance", "DoS", "Shellcode", "Backdoors", "Analysis", "Worms",
    ];
    LabelVocabulary {
        normal: "Normal".into(),
        categories: categories.iter().map(|s| s.to_string()).collect(),
        aliases: [("Backdoor", "Backdoors")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
    }
}

pub const NSL_KDD_FEATURES: [&str; 41] = [
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land", "wrong_fragment", "urgent",
    "hot", "num_failed_logins", "logged_in", "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login",
    "count", "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate",
    "diff_srv_rate", "srv_diff_host_rate", "dst_host_count", "dst_host_srv_count", "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate", "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
];

pub const UNSW_NB15_FEATURES: [&str; 42] = [
    "dur", "proto", "service", "state", "spkts", "dpkts", "sbytes", "dbytes", "rate", "sttl", "dttl", "sload",
    "dload", "sloss", "dloss", "sinpkt", "dinpkt", "sjit", "djit", "swin", "stcpb", "dtcpb", "dwin", "tcprtt",
    "synack", "ackdat", "smean", "dmean", "trans_depth", "response_body_len", "ct_srv_src", "ct_state_ttl",
    "ct_dst_ltm", "ct_src_dport_ltm", "ct_dst_sport_ltm", "ct_dst_src_ltm", "is_ftp_login", "ct_ftp_cmd",
    "ct_flw_http_mthd", "ct_src_ltm", "ct_srv_dst", "is_sm_ips_ports",
];

fn feature_columns(names: &[&str], nominal: &[&str]) -> Vec<Column> {
    names
        .iter()
        .map(|n| {
            let kind = if nominal.contains(n) {
                ColumnKind::Nominal
            } else {
                ColumnKind::Numeric
            };
            Column::new(*n, kind)
        })
        .collect()
}

/// Headerless `KDDTrain+.txt` layout; `with_difficulty` adds the trailing score column.
pub fn nsl_kdd_schema(with_difficulty: bool) -> Schema {
    let mut columns = feature_columns(&NSL_KDD_FEATURES, &["protocol_type", "service", "flag"]);
    columns.push(Column::new("label", ColumnKind::Label));
    if with_difficulty {
        columns.push(Column::new("difficulty", ColumnKind::Ignore));
    }
    Schema::new(columns, false, LabelSpec::Builtin("nsl-kdd".into())).expect("builtin schema")
}

/// `UNSW_NB15_training-set.csv` layout with header.
pub fn unsw_nb15_schema() -> Schema {
    let mut columns = vec![Column::new("id", ColumnKind::Ignore)];
    columns.extend(feature_columns(&UNSW_NB15_FEATURES, &["proto", "service", "state"]));
    columns.push(Column::new("attack_cat", ColumnKind::Label));
    columns.push(Column::new("label", ColumnKind::Ignore));
    Schema::new(columns, true, LabelSpec::Builtin("unsw-nb15".into())).expect("builtin schema")
}
