//! Semantic oracles: the component that answers rendered prompts.
//!
//! * `mock` hashes `(seed, prompt)` and thresholds it at a per-predicate
//!   target selectivity, so answers are stable across runs and processes.
//! * `recorded` replays answers from a JSON object `{prompt: answer}`.
//! * `remote` (feature `remote`) posts chat-completions requests to an HTTP
//!   endpoint.
//!
//! Oracles are described on the command line as `mode:key=value,...`, e.g.
//! `mock:seed=42,sel=0.2,latency_ms=10`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use semplan_core::ir::{OutputType, SemanticPredicate};
use semplan_core::oracle::{mock_answer, mock_boolean};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("no recorded answer for prompt `{0}`")]
    NotRecorded(String),
    #[error("oracle request failed after {attempts} attempts: {message}")]
    Failed { attempts: u32, message: String },
    #[error("invalid oracle description `{text}`: {message}")]
    BadSpec { text: String, message: String },
    #[error("{0}")]
    Io(String),
}

/// Answers one rendered prompt with raw text; typed parsing happens in the
/// executor.
pub trait SemanticOracle: Send + Sync {
    fn ask(&self, predicate: &SemanticPredicate, prompt: &str) -> Result<String, OracleError>;
}

/// Deterministic stand-in for a language model.
#[derive(Clone, Debug, PartialEq)]
pub struct MockOracle {
    pub seed: u64,
    /// Target acceptance rate for boolean predicates without an override.
    pub selectivity: f64,
    /// Target acceptance rate keyed by predicate template.
    pub per_template: BTreeMap<String, f64>,
    /// Sleep per answered prompt.
    pub latency: Duration,
}

impl MockOracle {
    pub fn new(seed: u64, selectivity: f64) -> Self {
        MockOracle {
            seed,
            selectivity,
            per_template: BTreeMap::new(),
            latency: Duration::ZERO,
        }
    }

    pub fn with_template(mut self, template: impl Into<String>, selectivity: f64) -> Self {
        self.per_template.insert(template.into(), selectivity);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn selectivity_for(&self, template: &str) -> f64 {
        self.per_template.get(template).copied().unwrap_or(self.selectivity)
    }
}

impl SemanticOracle for MockOracle {
    fn ask(&self, predicate: &SemanticPredicate, prompt: &str) -> Result<String, OracleError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let sel = self.selectivity_for(&predicate.template);
        Ok(match predicate.output {
            OutputType::Boolean => mock_boolean(self.seed, prompt, sel).to_string(),
            other => mock_answer(self.seed, prompt, other, sel),
        })
    }
}

/// Replays answers captured earlier.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordedOracle {
    pub answers: BTreeMap<String, String>,
}

impl RecordedOracle {
    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path).map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))?;
        let answers = serde_json::from_str(&text).map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))?;
        Ok(RecordedOracle { answers })
    }
}

impl SemanticOracle for RecordedOracle {
    fn ask(&self, _predicate: &SemanticPredicate, prompt: &str) -> Result<String, OracleError> {
        self.answers
            .get(prompt)
            .cloned()
            .ok_or_else(|| OracleError::NotRecorded(prompt.to_string()))
    }
}

/// Wraps an oracle and remembers every answer, for later replay.
pub struct Recorder<'a> {
    inner: &'a dyn SemanticOracle,
    seen: Mutex<BTreeMap<String, String>>,
}

impl<'a> Recorder<'a> {
    pub fn new(inner: &'a dyn SemanticOracle) -> Self {
        Recorder {
            inner,
            seen: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn into_recorded(self) -> RecordedOracle {
        RecordedOracle {
            answers: self.seen.into_inner().unwrap_or_else(|e| e.into_inner()),
        }
    }

    pub fn save(self, path: &Path) -> Result<(), OracleError> {
        let rec = self.into_recorded();
        let text = serde_json::to_string_pretty(&rec.answers).map_err(|e| OracleError::Io(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))
    }
}

impl SemanticOracle for Recorder<'_> {
    fn ask(&self, predicate: &SemanticPredicate, prompt: &str) -> Result<String, OracleError> {
        let answer = self.inner.ask(predicate, prompt)?;
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(prompt.to_string(), answer.clone());
        Ok(answer)
    }
}

#[cfg(feature = "remote")]
pub use remote::RemoteOracle;

#[cfg(feature = "remote")]
mod remote {
    use super::*;

    /// Environment variable holding the chat-completions URL.
    pub const ENDPOINT_VAR: &str = "SEMPLAN_ORACLE_ENDPOINT";
    pub const MODEL_VAR: &str = "SEMPLAN_ORACLE_MODEL";
    pub const KEY_VAR: &str = "SEMPLAN_ORACLE_API_KEY";

    const ATTEMPTS: u32 = 3;

    #[derive(Clone, Debug)]
    pub struct RemoteOracle {
        pub endpoint: String,
        pub model: String,
        pub api_key: Option<String>,
        pub timeout: Duration,
    }

    impl RemoteOracle {
        pub fn from_env(timeout: Duration) -> Result<Self, OracleError> {
            let endpoint = std::env::var(ENDPOINT_VAR).map_err(|_| OracleError::BadSpec {
                text: "remote".into(),
                message: format!("{ENDPOINT_VAR} is not set"),
            })?;
            Ok(RemoteOracle {
                endpoint,
                model: std::env::var(MODEL_VAR).unwrap_or_else(|_| "gpt-4o-mini".into()),
                api_key: std::env::var(KEY_VAR).ok(),
                timeout,
            })
        }

        fn instruction(output: OutputType) -> &'static str {
            match output {
                OutputType::Boolean => "Answer with exactly `true` or `false`.",
                OutputType::Integer => "Answer with a single non-negative integer and nothing else.",
                OutputType::Text => "Answer concisely.",
            }
        }

        fn request(&self, predicate: &SemanticPredicate, prompt: &str) -> Result<String, String> {
            let body = serde_json::json!({
                "model": self.model,
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": Self::instruction(predicate.output)},
                    {"role": "user", "content": prompt},
                ],
            });
            let mut req = ureq::post(&self.endpoint).timeout(self.timeout);
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            let resp: serde_json::Value = req
                .send_json(body)
                .map_err(|e| e.to_string())?
                .into_json()
                .map_err(|e| e.to_string())?;
            resp["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("unexpected response shape: {resp}"))
        }
    }

    impl SemanticOracle for RemoteOracle {
        fn ask(&self, predicate: &SemanticPredicate, prompt: &str) -> Result<String, OracleError> {
            let mut delay = Duration::from_millis(200);
            let mut last = String::new();
            for attempt in 1..=ATTEMPTS {
                match self.request(predicate, prompt) {
                    Ok(text) => return Ok(text),
                    Err(e) => {
                        log::warn!("oracle attempt {attempt} failed: {e}");
                        last = e;
                    }
                }
                if attempt < ATTEMPTS {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
            Err(OracleError::Failed {
                attempts: ATTEMPTS,
                message: last,
            })
        }
    }
}

/// Parsed `mode:key=value,...` oracle description.
#[derive(Clone, Debug, PartialEq)]
pub enum OracleSpec {
    Mock(MockOracle),
    Recorded(PathBuf),
    Remote { timeout: Duration },
}

impl OracleSpec {
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        let bad = |message: String| OracleError::BadSpec {
            text: text.to_string(),
            message,
        };
        let (mode, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut params = BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => {
                    params.insert(k.trim().to_string(), v.trim().to_string());
                }
                None if mode == "recorded" => {
                    params.insert("path".to_string(), part.to_string());
                }
                None => return Err(bad(format!("expected key=value, found `{part}`"))),
            }
        }
        let num = |key: &str, default: f64| -> Result<f64, OracleError> {
            params
                .get(key)
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("`{key}` is not a number"))))
                .unwrap_or(Ok(default))
        };
        let known = |allowed: &[&str]| -> Result<(), OracleError> {
            match params.keys().find(|k| !allowed.contains(&k.as_str())) {
                Some(k) => Err(bad(format!("unknown parameter `{k}`"))),
                None => Ok(()),
            }
        };
        match mode {
            "mock" => {
                known(&["seed", "sel", "latency_ms"])?;
                let seed = params
                    .get("seed")
                    .map(|v| v.parse::<u64>().map_err(|_| bad("`seed` is not an integer".into())))
                    .unwrap_or(Ok(42))?;
                let sel = num("sel", 0.2)?;
                if !(0.0..=1.0).contains(&sel) {
                    return Err(bad("`sel` must be within [0, 1]".into()));
                }
                let latency = num("latency_ms", 0.0)?;
                if latency < 0.0 {
                    return Err(bad("`latency_ms` must be non-negative".into()));
                }
                Ok(OracleSpec::Mock(
                    MockOracle::new(seed, sel).with_latency(Duration::from_secs_f64(latency / 1000.0)),
                ))
            }
            "recorded" => {
                known(&["path"])?;
                let path = params.get("path").ok_or_else(|| bad("missing `path`".into()))?;
                Ok(OracleSpec::Recorded(PathBuf::from(path)))
            }
            "remote" => {
                known(&["timeout_ms"])?;
                Ok(OracleSpec::Remote {
                    timeout: Duration::from_secs_f64(num("timeout_ms", 30_000.0)? / 1000.0),
                })
            }
            other => Err(bad(format!(
                "unknown mode `{other}` (expected mock, recorded or remote)"
            ))),
        }
    }

    /// Builds the oracle. Remote mode requires the `remote` feature.
    pub fn build(&self) -> Result<Box<dyn SemanticOracle>, OracleError> {
        match self {
            OracleSpec::Mock(m) => Ok(Box::new(m.clone())),
            OracleSpec::Recorded(path) => Ok(Box::new(RecordedOracle::load(path)?)),
            #[cfg(feature = "remote")]
            OracleSpec::Remote { timeout } => Ok(Box::new(RemoteOracle::from_env(*timeout)?)),
            #[cfg(not(feature = "remote"))]
            OracleSpec::Remote { .. } => Err(OracleError::BadSpec {
                text: "remote".into(),
                message: "this build has no remote oracle (enable the `remote` feature)".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred() -> SemanticPredicate {
        SemanticPredicate::from_template("{t.x} ok?", OutputType::Boolean).unwrap()
    }

    #[test]
    fn parses_mock_description() {
        let OracleSpec::Mock(m) = OracleSpec::parse("mock:seed=7,sel=0.3,latency_ms=10").unwrap() else {
            panic!()
        };
        assert_eq!((m.seed, m.selectivity), (7, 0.3));
        assert_eq!(m.latency, Duration::from_millis(10));
        assert!(OracleSpec::parse("mock:sel=2").is_err());
        assert!(OracleSpec::parse("mock:colour=red").is_err());
        assert!(OracleSpec::parse("magic").is_err());
        assert_eq!(
            OracleSpec::parse("recorded:answers.json").unwrap(),
            OracleSpec::Recorded("answers.json".into())
        );
    }

    #[test]
    fn per_template_selectivity_overrides_default() {
        let m = MockOracle::new(1, 0.0).with_template("{t.x} ok?", 1.0);
        assert_eq!(m.ask(&pred(), "a ok?").unwrap(), "true");
        let other = SemanticPredicate::from_template("{t.x} bad?", OutputType::Boolean).unwrap();
        assert_eq!(m.ask(&other, "a bad?").unwrap(), "false");
    }

    #[test]
    fn recorder_replays() {
        let m = MockOracle::new(3, 0.5);
        let rec = Recorder::new(&m);
        let answers: Vec<String> = (0..20)
            .map(|i| rec.ask(&pred(), &format!("{i} ok?")).unwrap())
            .collect();
        let replay = rec.into_recorded();
        for (i, a) in answers.iter().enumerate() {
            assert_eq!(&replay.ask(&pred(), &format!("{i} ok?")).unwrap(), a);
        }
        assert!(matches!(
            replay.ask(&pred(), "new ok?"),
            Err(OracleError::NotRecorded(_))
        ));
    }
}
