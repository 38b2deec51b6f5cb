//! Line-delimited JSON run log. Timestamps appear here and nowhere else.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use tadlab_core::Result;

pub struct JsonLog {
    out: Option<Mutex<BufWriter<File>>>,
}

impl JsonLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: Some(Mutex::new(BufWriter::new(File::create(path)?))),
        })
    }

    pub fn disabled() -> Self {
        Self { out: None }
    }

    /// Writes `{"ts": ..., "stage": ..., **fields}`. Logging failures are
    /// ignored; they never abort a run.
    pub fn event(&self, stage: &str, fields: Value) {
        let Some(out) = &self.out else { return };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let mut rec = json!({ "ts": ts, "stage": stage });
        if let (Some(m), Value::Object(f)) = (rec.as_object_mut(), fields) {
            m.extend(f);
        }
        if let Ok(mut w) = out.lock() {
            let _ = writeln!(w, "{rec}");
            let _ = w.flush();
        }
    }
}
