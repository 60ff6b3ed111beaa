use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Feature names of a KDDCup99 connection record, in file order.
pub const KDD_COLUMNS: [&str; 41] = [
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
];

/// Features plus the label.
pub const KDD_FIELD_COUNT: usize = 42;

pub(crate) const KDD_CATEGORICAL: [&str; 3] = ["protocol_type", "service", "flag"];

/// Attack labels kept as anomalies: the r2l and u2r families plus two probes.
pub const RETAINED_ATTACKS: [&str; 14] = [
    // r2l
    "ftp_write",
    "guess_passwd",
    "imap",
    "multihop",
    "phf",
    "spy",
    "warezclient",
    "warezmaster",
    // u2r
    "buffer_overflow",
    "loadmodule",
    "perl",
    "rootkit",
    // probe
    "ipsweep",
    "nmap",
];

/// Known labels that are dropped (denial-of-service and the other probes).
const DROPPED_ATTACKS: [&str; 8] = [
    "back",
    "land",
    "neptune",
    "pod",
    "smurf",
    "teardrop",
    "portsweep",
    "satan",
];

/// Reference counts for the filtered full dataset.
pub const KDD_PAPER_TOTAL: usize = 605_803;
pub const KDD_PAPER_NORMALS: usize = 595_797;
pub const KDD_PAPER_ANOMALIES: usize = 10_006;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldValue {
    Numeric(f64),
    Categorical(String),
}

impl FieldValue {
    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            FieldValue::Numeric(v) => Some(*v),
            FieldValue::Categorical(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            FieldValue::Categorical(s) => Some(s),
            FieldValue::Numeric(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub values: Vec<FieldValue>,
    pub label: String,
}

impl RawRecord {
    /// Label with the trailing dot of the distributed files removed.
    pub fn label_name(&self) -> &str {
        self.label.strip_suffix('.').unwrap_or(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub msg: String,
}

/// Parsed records plus the lines that were rejected.
#[derive(Debug, Clone, Default)]
pub struct KddParse {
    pub records: Vec<RawRecord>,
    pub rejected: Vec<LineError>,
}

fn parse_line(line: &str) -> std::result::Result<RawRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != KDD_FIELD_COUNT {
        return Err(format!(
            "expected {KDD_FIELD_COUNT} fields, found {}",
            fields.len()
        ));
    }
    let mut values = Vec::with_capacity(KDD_COLUMNS.len());
    for (name, raw) in KDD_COLUMNS.iter().zip(&fields) {
        if KDD_CATEGORICAL.contains(name) {
            values.push(FieldValue::Categorical(raw.to_string()));
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| format!("column `{name}`: not a number: `{raw}`"))?;
            if !v.is_finite() {
                return Err(format!("column `{name}`: non-finite value"));
            }
            values.push(FieldValue::Numeric(v));
        }
    }
    Ok(RawRecord {
        values,
        label: fields[KDD_FIELD_COUNT - 1].to_string(),
    })
}

/// Parses KDDCup99 text; malformed lines are reported, not fatal.
pub fn parse_kdd_str(text: &str) -> KddParse {
    let mut out = KddParse::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(r) => out.records.push(r),
            Err(msg) => out.rejected.push(LineError { line: i + 1, msg }),
        }
    }
    out
}

/// Reads a headerless, comma-separated KDDCup99 file.
pub fn parse_kdd_csv(path: &Path) -> Result<KddParse> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_kdd_str(&text);
    if let Some(first) = parsed.rejected.first() {
        log::warn!(
            "{}: {} malformed line(s), first at line {}: {}",
            path.display(),
            parsed.rejected.len(),
            first.line,
            first.msg
        );
    }
    Ok(parsed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLabelPolicy {
    /// Drop the record and log a warning.
    #[default]
    Drop,
    Error,
}

/// Result of label filtering.
#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub records: Vec<RawRecord>,
    /// Parallel to `records`; `true` for retained attacks.
    pub anomalies: Vec<bool>,
    pub kept_per_label: BTreeMap<String, usize>,
    pub dropped_per_label: BTreeMap<String, usize>,
    pub unknown_per_label: BTreeMap<String, usize>,
}

impl FilterOutcome {
    pub fn anomaly_count(&self) -> usize {
        self.anomalies.iter().filter(|&&a| a).count()
    }

    pub fn normal_count(&self) -> usize {
        self.records.len() - self.anomaly_count()
    }
}

/// Keeps normal traffic and the retained attack labels.
pub fn filter_labels(records: Vec<RawRecord>, policy: UnknownLabelPolicy) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for r in records {
        let name = r.label_name().to_string();
        let anomaly = if name == "normal" {
            false
        } else if RETAINED_ATTACKS.contains(&name.as_str()) {
            true
        } else if DROPPED_ATTACKS.contains(&name.as_str()) {
            *out.dropped_per_label.entry(name).or_default() += 1;
            continue;
        } else {
            if policy == UnknownLabelPolicy::Error {
                return Err(Error::Data(format!("unknown label `{}`", r.label)));
            }
            *out.unknown_per_label.entry(name).or_default() += 1;
            continue;
        };
        *out.kept_per_label.entry(name).or_default() += 1;
        out.records.push(r);
        out.anomalies.push(anomaly);
    }
    for (label, n) in &out.unknown_per_label {
        log::warn!("dropped {n} record(s) with unknown label `{label}`");
    }
    Ok(out)
}
