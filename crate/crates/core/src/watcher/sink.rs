//! Alert destinations.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use super::Alert;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Sink {
    #[default]
    Stdout,
    /// JSON lines appended to a file.
    File(PathBuf),
    /// Each alert POSTed as JSON.
    Webhook(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad sink {0:?}: expected stdout, file:PATH or webhook:URL")]
pub struct SinkParseError(String);

#[derive(Debug, Error)]
#[error("sink {sink} failed: {message}")]
pub struct SinkError {
    pub sink: String,
    pub message: String,
}

impl FromStr for Sink {
    type Err = SinkParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "stdout" || s == "-" {
            return Ok(Sink::Stdout);
        }
        if let Some(p) = s.strip_prefix("file:").filter(|p| !p.is_empty()) {
            return Ok(Sink::File(PathBuf::from(p)));
        }
        if let Some(u) = s.strip_prefix("webhook:").filter(|u| u.starts_with("http://") || u.starts_with("https://")) {
            return Ok(Sink::Webhook(u.to_string()));
        }
        Err(SinkParseError(s.to_string()))
    }
}

impl fmt::Display for Sink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sink::Stdout => f.write_str("stdout"),
            Sink::File(p) => write!(f, "file:{}", p.display()),
            Sink::Webhook(u) => write!(f, "webhook:{u}"),
        }
    }
}

impl Sink {
    pub fn deliver(&self, alert: &Alert) -> Result<(), SinkError> {
        let line = serde_json::to_string(alert).expect("alert serialises");
        let fail = |message: String| SinkError { sink: self.to_string(), message };
        match self {
            Sink::Stdout => {
                let mut out = std::io::stdout().lock();
                writeln!(out, "{line}").and_then(|_| out.flush()).map_err(|e| fail(e.to_string()))
            }
            Sink::File(path) => {
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| fail(e.to_string()))?;
                f.write_all(format!("{line}\n").as_bytes()).map_err(|e| fail(e.to_string()))
            }
            Sink::Webhook(url) => ureq::post(url)
                .timeout(Duration::from_secs(10))
                .set("Content-Type", "application/json")
                .send_string(&line)
                .map(|_| ())
                .map_err(|e| fail(e.to_string())),
        }
    }
}
