use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use super::HarnessError;
use crate::connector::agent;

/// Status and JSON body of one hub response. Non-JSON bodies become a
/// string value.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn expect_ok(&self) -> Result<&Value, HarnessError> {
        if self.ok() {
            Ok(&self.body)
        } else {
            Err(HarnessError::Http(format!("status {}: {}", self.status, self.body)))
        }
    }

    /// The `error` code of an error body.
    pub fn error_code(&self) -> Option<&str> {
        self.body.get("error")?.as_str()
    }
}

/// Minimal blocking client for the hub API.
#[derive(Debug, Clone)]
pub struct HubClient {
    agent: Agent,
    base: String,
}

fn http(e: ureq::Error) -> HarnessError {
    HarnessError::Http(e.to_string())
}

fn reply(mut resp: ureq::http::Response<ureq::Body>) -> Result<Reply, HarnessError> {
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .with_config()
        .limit(256 << 20)
        .read_to_string()
        .map_err(http)?;
    let body = if text.is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or(Value::String(text))
    };
    Ok(Reply { status, body })
}

impl HubClient {
    pub fn new(base: &str) -> Self {
        Self { agent: agent(Duration::from_secs(60)), base: base.trim_end_matches('/').to_string() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> Result<Reply, HarnessError> {
        let mut req = self.agent.get(self.url(path));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        reply(req.call().map_err(http)?)
    }

    pub fn post(&self, path: &str, token: Option<&str>, body: &Value) -> Result<Reply, HarnessError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        reply(req.send_json(body).map_err(http)?)
    }

    pub fn put(&self, path: &str, token: Option<&str>, body: &Value) -> Result<Reply, HarnessError> {
        let mut req = self.agent.put(self.url(path));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        reply(req.send_json(body).map_err(http)?)
    }

    /// Downloads an absolute URL, streaming the body and returning only its
    /// length and SHA-256.
    pub fn download(&self, url: &str) -> Result<(u16, u64, String), HarnessError> {
        use sha2::{Digest, Sha256};
        use std::io::Read;

        let mut resp = self.agent.get(url).call().map_err(http)?;
        let status = resp.status().as_u16();
        let mut reader = resp.body_mut().as_reader();
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        let mut total = 0u64;
        loop {
            let n = reader.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            total += n as u64;
        }
        Ok((status, total, hex::encode(hasher.finalize())))
    }
}
