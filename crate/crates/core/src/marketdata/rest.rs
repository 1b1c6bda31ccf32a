//! Paginated REST adapter for a Polygon-style market-data feed.
//!
//! Endpoints:
//!   `GET {base}/v3/trades/{instrument}?from={ns}&to={ns}`
//!   `GET {base}/v3/quotes/{instrument}?from={ns}&to={ns}`
//!
//! Responses are JSON pages `{"results": [...], "next_url": "..."}`; the
//! cursor is followed until `next_url` is absent. Result objects use the same
//! field names as the file schemas. The authentication header name is
//! configurable; the token, when set, is attached to every request including
//! cursor follow-ups.
//!
//! This adapter is exercised against local fixture servers only — there are
//! no live-network tests, and TLS is not enabled for this crate's build of
//! the HTTP client.

use serde::Deserialize;

use super::parse::{validate_quote, validate_trade};
use super::{MarketDataError, QuoteTick, TradeTick};

/// Hard stop on cursor following, to fail loudly on a cyclic feed.
const MAX_PAGES: usize = 10_000;

#[derive(Debug, Clone)]
pub struct RestConfig {
    /// e.g. `http://127.0.0.1:8080`, no trailing slash.
    pub base_url: String,
    /// Header used to carry the credential, default `Authorization`.
    pub auth_header: String,
    pub auth_token: Option<String>,
}

impl RestConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            auth_header: "Authorization".into(),
            auth_token: None,
        }
    }
}

pub struct RestClient {
    agent: ureq::Agent,
    config: RestConfig,
}

#[derive(Deserialize)]
struct Page<T> {
    results: Vec<T>,
    #[serde(default)]
    next_url: Option<String>,
}

impl RestClient {
    pub fn new(config: RestConfig) -> Self {
        Self {
            agent: ureq::Agent::new_with_defaults(),
            config,
        }
    }

    pub fn fetch_trades(
        &self,
        instrument_id: &str,
        from_ns: i64,
        to_ns: i64,
    ) -> Result<Vec<TradeTick>, MarketDataError> {
        let records: Vec<TradeTick> = self.paginate(&format!(
            "{}/v3/trades/{}?from={}&to={}",
            self.config.base_url, instrument_id, from_ns, to_ns
        ))?;
        for (i, t) in records.iter().enumerate() {
            validate_trade(t)
                .map_err(|e| MarketDataError::Rest(format!("trade record {i}: {e}")))?;
        }
        Ok(records)
    }

    pub fn fetch_quotes(
        &self,
        instrument_id: &str,
        from_ns: i64,
        to_ns: i64,
    ) -> Result<Vec<QuoteTick>, MarketDataError> {
        let records: Vec<QuoteTick> = self.paginate(&format!(
            "{}/v3/quotes/{}?from={}&to={}",
            self.config.base_url, instrument_id, from_ns, to_ns
        ))?;
        for (i, q) in records.iter().enumerate() {
            validate_quote(q)
                .map_err(|e| MarketDataError::Rest(format!("quote record {i}: {e}")))?;
        }
        Ok(records)
    }

    fn paginate<T: serde::de::DeserializeOwned>(
        &self,
        first_url: &str,
    ) -> Result<Vec<T>, MarketDataError> {
        let mut out = Vec::new();
        let mut url = first_url.to_string();
        for _ in 0..MAX_PAGES {
            let body = self.get(&url)?;
            let page: Page<T> = serde_json::from_str(&body)
                .map_err(|e| MarketDataError::Rest(format!("bad page from {url}: {e}")))?;
            out.extend(page.results);
            match page.next_url {
                Some(next) if next.starts_with('/') => {
                    url = format!("{}{}", self.config.base_url, next);
                }
                Some(next) => url = next,
                None => return Ok(out),
            }
        }
        Err(MarketDataError::Rest(format!(
            "pagination did not terminate after {MAX_PAGES} pages"
        )))
    }

    fn get(&self, url: &str) -> Result<String, MarketDataError> {
        let mut request = self.agent.get(url);
        if let Some(token) = &self.config.auth_token {
            request = request.header(&self.config.auth_header, token);
        }
        let mut response = request
            .call()
            .map_err(|e| MarketDataError::Rest(format!("GET {url}: {e}")))?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| MarketDataError::Rest(format!("reading body of {url}: {e}")))
    }
}
