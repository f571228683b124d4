use super::{BackendConfig, ChatRequest, GenerationBackend, RequestContext, TransportError};
use std::time::Duration;

/// Chat-completions endpoint over HTTP. 408, 429 and 5xx responses and
/// connection failures are transient; other non-2xx statuses are permanent.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_in_flight: usize,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, String> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or("http backend needs an endpoint")?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            endpoint,
            model: config.model.clone(),
            api_key,
            max_in_flight: config.max_in_flight.max(1),
        })
    }
}

fn is_transient(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl GenerationBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.endpoint
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn send(
        &self,
        body: &str,
        _request: &ChatRequest,
        _ctx: &RequestContext<'_>,
    ) -> Result<String, TransportError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            s if is_transient(s) => Err(TransportError::Transient(format!("HTTP {s}: {text}"))),
            s => Err(TransportError::Permanent {
                status: s,
                body: text,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classes() {
        assert!(is_transient(503));
        assert!(is_transient(429));
        assert!(!is_transient(404));
    }

    #[test]
    fn missing_key_env_is_an_error() {
        let cfg = BackendConfig {
            endpoint: Some("http://127.0.0.1:9/v1/chat/completions".into()),
            api_key_env: Some("ESG_FORGE_TEST_UNSET_KEY".into()),
            ..Default::default()
        };
        assert!(HttpBackend::new(&cfg).is_err());
    }

    #[test]
    fn refused_connection_is_transient() {
        let cfg = BackendConfig {
            endpoint: Some("http://127.0.0.1:9/v1/chat/completions".into()),
            timeout_s: 2,
            ..Default::default()
        };
        let b = HttpBackend::new(&cfg).unwrap();
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![],
            temperature: 0.0,
            max_tokens: 1,
            tools: None,
        };
        let ctx = RequestContext {
            item_id: "x",
            reference: None,
        };
        assert!(matches!(
            b.send("{}", &req, &ctx),
            Err(TransportError::Transient(_))
        ));
    }
}
