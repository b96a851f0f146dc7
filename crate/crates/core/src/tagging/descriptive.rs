//! Descriptive tags: ingestion from records and the external tagger client.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DescriptiveMap, DescriptiveValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionKind {
    /// At most one value; a documented closed domain.
    Single(&'static [&'static str]),
    /// Any number of values; open vocabulary.
    Multi,
    /// Only presence is recorded, as an unvalued tag.
    Presence,
}

pub const DESCRIPTIVE_DIMENSIONS: [(&str, DimensionKind); 8] = [
    ("subject_of_expertise", DimensionKind::Multi),
    (
        "expertise_level",
        DimensionKind::Single(&[
            "general_public",
            "basic_domain_knowledge",
            "expert_domain_knowledge",
        ]),
    ),
    ("languages", DimensionKind::Multi),
    (
        "open_endedness",
        DimensionKind::Single(&["low", "moderate", "high", "no"]),
    ),
    (
        "safety_concern",
        DimensionKind::Single(&["safe", "low", "moderate", "high"]),
    ),
    (
        "complexity_of_intents",
        DimensionKind::Single(&["simple", "moderate", "complex"]),
    ),
    ("type_of_in_context_material", DimensionKind::Presence),
    ("format_constraints", DimensionKind::Presence),
];

pub fn dimension_kind(name: &str) -> Option<DimensionKind> {
    DESCRIPTIVE_DIMENSIONS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, k)| *k)
}

/// Lowercase, with every run of non-alphanumeric characters collapsed to `_`.
pub fn normalize_key(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending = false;
    for c in s.trim().chars() {
        if c.is_alphanumeric() {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.extend(c.to_lowercase());
        } else {
            pending = true;
        }
    }
    out
}

/// A descriptive tag and the dimension it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DescriptiveTag {
    pub tag: String,
    pub dimension: String,
}

/// Tags for one descriptive map; warnings are appended to `warnings`.
pub fn ingest_descriptive_tags(
    instance_id: &str,
    map: &DescriptiveMap,
    warnings: &mut Vec<String>,
) -> Vec<DescriptiveTag> {
    let mut out = Vec::new();
    for (raw_dim, value) in map {
        let dim = normalize_key(raw_dim);
        if dim.is_empty() {
            continue;
        }
        let kind = dimension_kind(&dim).unwrap_or_else(|| {
            warnings.push(format!(
                "instance {instance_id:?}: unknown descriptive dimension {raw_dim:?}, kept as multi-valued"
            ));
            DimensionKind::Multi
        });
        match kind {
            DimensionKind::Presence => {
                if value.is_present() {
                    out.push(DescriptiveTag {
                        tag: dim.clone(),
                        dimension: dim.clone(),
                    });
                }
            }
            DimensionKind::Single(domain) => {
                let values = value.values();
                if values.len() > 1 {
                    warnings.push(format!(
                        "instance {instance_id:?}: {dim} is single-valued, keeping {:?} of {} values",
                        values[0],
                        values.len()
                    ));
                }
                if let Some(v) = values.first() {
                    let v = normalize_key(v);
                    if !domain.contains(&v.as_str()) {
                        warnings.push(format!(
                            "instance {instance_id:?}: {dim} value {v:?} outside documented domain"
                        ));
                    }
                    out.push(DescriptiveTag {
                        tag: format!("{dim}:{v}"),
                        dimension: dim.clone(),
                    });
                }
            }
            DimensionKind::Multi => {
                for v in value.values() {
                    let tag = format!("{dim}:{}", normalize_key(v));
                    if !out.iter().any(|t: &DescriptiveTag| t.tag == tag) {
                        out.push(DescriptiveTag {
                            tag,
                            dimension: dim.clone(),
                        });
                    }
                }
            }
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaggerError {
    /// Worth retrying: network failure, timeout, server error.
    #[error("transient: {0}")]
    Transient(String),
    /// The service answered but the payload could not be understood.
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Black-box service mapping a prompt to its descriptive dimensions.
pub trait DescriptiveTagger: Send + Sync {
    fn request(&self, prompt: &str) -> std::result::Result<DescriptiveMap, TaggerError>;
}

/// An instance whose descriptive tags could not be fetched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerFailure {
    pub id: String,
    pub attempts: usize,
    pub reason: String,
}

/// Calls the tagger, retrying transient failures up to `retries` extra times.
pub fn request_descriptive_tags(
    client: &dyn DescriptiveTagger,
    prompt: &str,
    retries: usize,
) -> std::result::Result<DescriptiveMap, (usize, TaggerError)> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.request(prompt) {
            Ok(m) => return Ok(m),
            Err(TaggerError::Transient(_)) if attempt <= retries => continue,
            Err(e) => return Err((attempt, e)),
        }
    }
}

/// Tags many prompts with at most `max_in_flight` concurrent requests.
/// Results are returned in input order.
pub fn request_many(
    client: &dyn DescriptiveTagger,
    items: &[(&str, &str)],
    retries: usize,
    max_in_flight: usize,
) -> Vec<std::result::Result<DescriptiveMap, TaggerFailure>> {
    let workers = max_in_flight.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<_>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let (id, prompt) = items[i];
                let r =
                    request_descriptive_tags(client, prompt, retries).map_err(|(attempts, e)| {
                        TaggerFailure {
                            id: id.to_string(),
                            attempts,
                            reason: e.to_string(),
                        }
                    });
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("filled"))
        .collect()
}

/// How the tagger service replies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ResponseFormat {
    /// A JSON object of dimension → value(s), optionally nested under `field`.
    Json {
        #[serde(default)]
        field: Option<String>,
    },
    /// Plain text, one `dimension: value[, value…]` per line.
    Lines,
}

impl Default for ResponseFormat {
    fn default() -> Self {
        ResponseFormat::Json { field: None }
    }
}

pub fn parse_response(
    body: &str,
    format: &ResponseFormat,
) -> std::result::Result<DescriptiveMap, TaggerError> {
    match format {
        ResponseFormat::Json { field } => {
            let mut v: serde_json::Value =
                serde_json::from_str(body).map_err(|e| TaggerError::Malformed(e.to_string()))?;
            if let Some(f) = field {
                v = v
                    .get_mut(f)
                    .map(serde_json::Value::take)
                    .ok_or_else(|| TaggerError::Malformed(format!("missing field {f:?}")))?;
            }
            serde_json::from_value(v).map_err(|e| TaggerError::Malformed(e.to_string()))
        }
        ResponseFormat::Lines => {
            let mut map = DescriptiveMap::new();
            for line in body.lines().filter(|l| !l.trim().is_empty()) {
                let (k, v) = line
                    .split_once(':')
                    .ok_or_else(|| TaggerError::Malformed(format!("line without ':' {line:?}")))?;
                let vals: Vec<String> = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                map.insert(k.trim().to_string(), DescriptiveValue::Many(vals));
            }
            Ok(map)
        }
    }
}

/// Endpoint settings for [`HttpTagger`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerEndpoint {
    pub base_url: String,
    /// Request text; `{prompt}` is replaced by the instance prompt.
    pub template: String,
    pub timeout_secs: f64,
    pub retries: usize,
    pub max_in_flight: usize,
    pub response: ResponseFormat,
    /// Environment variable holding a bearer credential, if any.
    pub credential_env: Option<String>,
}

impl Default for TaggerEndpoint {
    fn default() -> Self {
        TaggerEndpoint {
            base_url: String::new(),
            template: DEFAULT_TAGGER_TEMPLATE.to_string(),
            timeout_secs: 30.0,
            retries: 2,
            max_in_flight: 4,
            response: ResponseFormat::default(),
            credential_env: Some("PREFROUTE_TAGGER_TOKEN".into()),
        }
    }
}

pub const DEFAULT_TAGGER_TEMPLATE: &str = include_str!("../../assets/tagger_request.txt");

/// Tagger backed by an HTTP endpoint that accepts `{"input": "<text>"}`.
pub struct HttpTagger {
    endpoint: TaggerEndpoint,
    agent: ureq::Agent,
    credential: Option<String>,
}

impl HttpTagger {
    pub fn new(endpoint: TaggerEndpoint) -> Result<Self> {
        if endpoint.base_url.is_empty() {
            return Err(Error::Config("tagger endpoint base_url is empty".into()));
        }
        let credential = endpoint
            .credential_env
            .as_deref()
            .and_then(|k| std::env::var(k).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTagger {
            endpoint,
            agent,
            credential,
        })
    }

    pub fn endpoint(&self) -> &TaggerEndpoint {
        &self.endpoint
    }
}

impl DescriptiveTagger for HttpTagger {
    fn request(&self, prompt: &str) -> std::result::Result<DescriptiveMap, TaggerError> {
        let body =
            serde_json::json!({ "input": self.endpoint.template.replace("{prompt}", prompt) });
        let mut req = self.agent.post(&self.endpoint.base_url);
        if let Some(c) = &self.credential {
            req = req.header("Authorization", &format!("Bearer {c}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| TaggerError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TaggerError::Transient(e.to_string()))?;
        match status {
            200..=299 => parse_response(&text, &self.endpoint.response),
            429 | 500..=599 => Err(TaggerError::Transient(format!("HTTP {status}"))),
            _ => Err(TaggerError::Malformed(format!("HTTP {status}: {text}"))),
        }
    }
}
