//! Report serialization.
//!
//! A report is JSON lines: a header `{"schema":1,"kind":"header",...}`
//! followed by one object per record, each carrying `"schema":1` and a
//! `"kind"`. Everything except the header's `generated_at` is a function of
//! the inputs, so reports from identical runs compare equal byte for byte
//! once the header line is dropped.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::echo::EchoClass;
use crate::error::{Error, Result};
use crate::harness::VerificationRecord;

pub const SCHEMA_VERSION: u32 = 1;

/// Accumulates the lines of one JSON-lines report.
#[derive(Debug, Clone, Default)]
pub struct JsonLines {
    lines: Vec<String>,
}

impl JsonLines {
    /// Starts a report with its header. `generated_at` defaults to the
    /// current Unix time.
    pub fn new(command: &str, generated_at: Option<u64>) -> Self {
        let at = generated_at.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        let header = json!({
            "schema": SCHEMA_VERSION,
            "kind": "header",
            "command": command,
            "generated_at": at,
        });
        Self {
            lines: vec![header.to_string()],
        }
    }

    /// Appends `record` as an object tagged with `kind`. Non-object values are
    /// wrapped under `"value"`.
    pub fn push<T: Serialize>(&mut self, kind: &str, record: &T) -> Result<()> {
        let value = serde_json::to_value(record).map_err(|e| Error::Numeric {
            context: format!("serializing a `{kind}` record: {e}"),
        })?;
        let mut obj = Map::new();
        obj.insert("schema".into(), json!(SCHEMA_VERSION));
        obj.insert("kind".into(), json!(kind));
        match value {
            Value::Object(fields) => obj.extend(fields),
            other => {
                obj.insert("value".into(), other);
            }
        }
        self.lines.push(Value::Object(obj).to_string());
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn render(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

/// Drops the header line of a rendered report.
pub fn strip_header(report: &str) -> String {
    report
        .lines()
        .filter(|l| {
            serde_json::from_str::<Value>(l)
                .map(|v| v.get("kind") != Some(&json!("header")))
                .unwrap_or(true)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV row per record of a suite.
pub fn suite_csv(records: &[VerificationRecord]) -> String {
    let mut out = String::from(
        "trial,seed,dim,echo_class,weighted,p,r,resolution,lhs,rhs,ratio,admissible_constant,drift,pass,rejection\n",
    );
    for r in records {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:e},{:e},{:e},{:e},{},{},{}",
            opt(r.trial.map(|t| t.to_string())),
            opt(r.seed.map(|s| s.to_string())),
            r.instance.dim(),
            match r.echo_class {
                EchoClass::Periodic => "periodic",
                EchoClass::Shear => "shear",
            },
            r.instance.is_weighted(),
            csv_field(&r.instance.p.to_string()),
            csv_field(&r.instance.r.to_string()),
            r.resolution,
            r.lhs,
            r.rhs,
            r.ratio,
            r.admissible_constant,
            opt(r.refined.as_ref().map(|x| format!("{:e}", x.drift))),
            r.passed(),
            csv_field(r.rejection.as_deref().unwrap_or("")),
        );
    }
    out
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{hand_instance, verify_spec};

    #[test]
    fn records_carry_schema_and_kind() {
        let mut rep = JsonLines::new("verify", Some(7));
        let rec = verify_spec(&hand_instance(), 8, 0.05, false);
        rep.push("verification", &rec).unwrap();
        rep.push("note", &1.5).unwrap();
        let lines: Vec<Value> = rep.lines().iter().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["kind"], "header");
        assert_eq!(lines[0]["generated_at"], 7);
        assert_eq!(lines[1]["schema"], 1);
        assert_eq!(lines[1]["kind"], "verification");
        assert_eq!(lines[1]["lhs"], 2.0);
        assert_eq!(lines[1]["instance"]["p"], "2");
        assert_eq!(lines[2]["value"], 1.5);
    }

    #[test]
    fn header_is_the_only_varying_line() {
        let a = JsonLines::new("x", Some(1)).render();
        let b = JsonLines::new("x", Some(2)).render();
        assert_ne!(a, b);
        assert_eq!(strip_header(&a), strip_header(&b));
    }

    #[test]
    fn csv_quotes_commas() {
        let rec = verify_spec(&hand_instance(), 8, 0.05, false);
        let csv = suite_csv(&[rec]);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("trial,seed"));
        let row = lines.next().unwrap();
        assert!(row.contains(",1,periodic,false,2,1,8,"), "{row}");
        assert!(csv_field("1,2").starts_with('"'));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("mixedconv-report-{}", std::process::id()));
        let path = dir.join("r.jsonl");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        fs::remove_dir_all(dir).unwrap();
    }
}
