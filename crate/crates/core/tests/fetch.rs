//! Downloads against a local HTTP stub.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use marf::fetch::{fetch, FetchOptions, FetchStatus};

/// Serves fixed bodies; `/flaky*` answers 503 to its first GET.
struct Stub {
    base: String,
    gets: Arc<Mutex<HashMap<String, usize>>>,
}

fn body_for(path: &str) -> Option<Vec<u8>> {
    match path {
        "/a.png" => Some(vec![7u8; 1000]),
        "/b.png" => Some((0..500u32).map(|i| i as u8).collect()),
        "/flaky.png" => Some(vec![1u8; 64]),
        _ => None,
    }
}

impl Stub {
    fn start() -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let gets: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
        let counter = Arc::clone(&gets);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request = String::new();
                if reader.read_line(&mut request).is_err() {
                    continue;
                }
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                }
                let mut parts = request.split_whitespace();
                let method = parts.next().unwrap_or("").to_string();
                let path = parts.next().unwrap_or("").to_string();
                let seen = if method == "GET" {
                    let mut g = counter.lock().unwrap();
                    let n = g.entry(path.clone()).or_insert(0);
                    *n += 1;
                    *n
                } else {
                    0
                };
                let (status, body) = match body_for(&path) {
                    Some(_) if path.starts_with("/flaky") && seen == 1 => ("503 Service Unavailable", Vec::new()),
                    Some(b) => ("200 OK", b),
                    None => ("404 Not Found", Vec::new()),
                };
                let head = format!(
                    "HTTP/1.1 {status}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    body.len()
                );
                let _ = stream.write_all(head.as_bytes());
                if method != "HEAD" {
                    let _ = stream.write_all(&body);
                }
            }
        });
        Stub { base, gets }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn gets(&self, path: &str) -> usize {
        self.gets.lock().unwrap().get(path).copied().unwrap_or(0)
    }
}

fn quick() -> FetchOptions {
    FetchOptions {
        initial_backoff: Duration::from_millis(10),
        timeout: Duration::from_secs(10),
        ..FetchOptions::default()
    }
}

#[test]
fn fetches_skips_and_reports_missing_files() {
    let stub = Stub::start();
    let dir = tempfile::tempdir().unwrap();
    let urls = vec![stub.url("/a.png"), stub.url("/missing.png"), stub.url("/b.png")];

    let report = fetch(&urls, dir.path(), &quick()).unwrap();
    assert_eq!(report.entries[0].status, FetchStatus::Fetched { bytes: 1000 });
    assert!(matches!(
        report.entries[1].status,
        FetchStatus::Failed { attempts: 1, permanent: true, .. }
    ));
    assert_eq!(report.entries[2].status, FetchStatus::Fetched { bytes: 500 });
    assert_eq!(report.failed(), 1);
    assert!(!report.all_failed());
    assert_eq!(std::fs::read(dir.path().join("b.png")).unwrap(), body_for("/b.png").unwrap());
    assert!(!dir.path().join("missing.png").exists());
    assert!(report.to_table().contains("failed-permanent"));

    let again = fetch(&urls, dir.path(), &quick()).unwrap();
    assert_eq!(again.entries[0].status, FetchStatus::Skipped { bytes: 1000 });
    assert_eq!(again.entries[2].status, FetchStatus::Skipped { bytes: 500 });
    assert_eq!(stub.gets("/a.png"), 1);
}

#[test]
fn truncated_local_copy_is_downloaded_again() {
    let stub = Stub::start();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.png"), [0u8; 10]).unwrap();
    let report = fetch(&[stub.url("/a.png")], dir.path(), &quick()).unwrap();
    assert_eq!(report.entries[0].status, FetchStatus::Fetched { bytes: 1000 });
    assert_eq!(std::fs::metadata(dir.path().join("a.png")).unwrap().len(), 1000);
}

#[test]
fn transient_errors_are_retried() {
    let stub = Stub::start();
    let dir = tempfile::tempdir().unwrap();
    let report = fetch(&[stub.url("/flaky.png")], dir.path(), &quick()).unwrap();
    assert_eq!(report.entries[0].status, FetchStatus::Fetched { bytes: 64 });
    assert_eq!(stub.gets("/flaky.png"), 2);
}

#[test]
fn all_failures_are_flagged() {
    let stub = Stub::start();
    let dir = tempfile::tempdir().unwrap();
    let urls = vec![stub.url("/x.png"), stub.url("/y.png")];
    let report = fetch(&urls, dir.path(), &quick()).unwrap();
    assert!(report.all_failed());

    // nothing listens on a closed port: transient, retried to the limit
    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let report = fetch(&[format!("http://{closed}/z.png")], dir.path(), &quick()).unwrap();
    assert!(matches!(
        report.entries[0].status,
        FetchStatus::Failed { attempts: 3, permanent: false, .. }
    ));
}
