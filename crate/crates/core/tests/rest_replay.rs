//! REST adapter replay tests against a local fixture server.
//!
//! The fixture server is a minimal HTTP/1.1 responder on a loopback socket:
//! it answers a scripted sequence of GETs and records the request line and
//! headers it saw. No live network is involved.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use residual_flow::marketdata::rest::{RestClient, RestConfig};
use residual_flow::marketdata::MarketDataError;

struct SeenRequest {
    path: String,
    headers: Vec<String>,
}

/// Serves `pages` responses in order, then closes; reports each request.
fn fixture_server(pages: Vec<String>) -> (String, mpsc::Receiver<SeenRequest>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for body in pages {
            let (stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                return;
            }
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() {
                    return;
                }
                let trimmed = line.trim_end().to_string();
                if trimmed.is_empty() {
                    break;
                }
                headers.push(trimmed);
            }
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or_default()
                .to_string();
            let _ = tx.send(SeenRequest { path, headers });

            let mut stream = reader.into_inner();
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), rx)
}

#[test]
fn follows_next_url_cursor_across_pages() {
    let page1 = r#"{
        "results": [
            {"ts_ns": 100, "instrument_id": "OPT", "price": 3.5, "size": 2, "venue": "X"},
            {"ts_ns": 200, "instrument_id": "OPT", "price": 3.6, "size": 1}
        ],
        "next_url": "/v3/trades/OPT?cursor=abc"
    }"#;
    let page2 = r#"{
        "results": [
            {"ts_ns": 300, "instrument_id": "OPT", "price": 3.7, "size": 4}
        ]
    }"#;
    let (base_url, seen) = fixture_server(vec![page1.into(), page2.into()]);

    let client = RestClient::new(RestConfig {
        base_url: base_url.clone(),
        auth_header: "X-Feed-Key".into(),
        auth_token: Some("secret-token".into()),
    });
    let trades = client.fetch_trades("OPT", 0, 1_000).unwrap();
    assert_eq!(trades.len(), 3);
    assert_eq!(trades[0].ts_ns, 100);
    assert_eq!(trades[2].price, 3.7);
    assert_eq!(trades[2].venue, None);

    let first = seen.recv().unwrap();
    assert_eq!(first.path, "/v3/trades/OPT?from=0&to=1000");
    assert!(
        first
            .headers
            .iter()
            .any(|h| h.eq_ignore_ascii_case("x-feed-key: secret-token")),
        "auth header missing: {:?}",
        first.headers
    );
    let second = seen.recv().unwrap();
    assert_eq!(second.path, "/v3/trades/OPT?cursor=abc");
    assert!(second
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("x-feed-key: secret-token")));
}

#[test]
fn fetches_quotes_and_validates_records() {
    let page = r#"{
        "results": [
            {"ts_ns": 10, "instrument_id": "OPT", "bid": 9.9, "ask": 10.1},
            {"ts_ns": 20, "instrument_id": "OPT", "bid": 10.0, "ask": 10.2}
        ]
    }"#;
    let (base_url, _seen) = fixture_server(vec![page.into()]);
    let client = RestClient::new(RestConfig::new(base_url));
    let quotes = client.fetch_quotes("OPT", 0, 100).unwrap();
    assert_eq!(quotes.len(), 2);
    assert_eq!(quotes[1].bid, 10.0);
}

#[test]
fn crossed_quote_from_feed_is_an_error() {
    let page = r#"{
        "results": [
            {"ts_ns": 10, "instrument_id": "OPT", "bid": 10.3, "ask": 10.1}
        ]
    }"#;
    let (base_url, _seen) = fixture_server(vec![page.into()]);
    let client = RestClient::new(RestConfig::new(base_url));
    let err = client.fetch_quotes("OPT", 0, 100).unwrap_err();
    match err {
        MarketDataError::Rest(message) => assert!(message.contains("crossed")),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn malformed_page_is_an_error() {
    let (base_url, _seen) = fixture_server(vec!["not json at all".into()]);
    let client = RestClient::new(RestConfig::new(base_url));
    let err = client.fetch_trades("OPT", 0, 100).unwrap_err();
    assert!(matches!(err, MarketDataError::Rest(_)));
}
