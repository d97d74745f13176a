//! Corpus download from an explicit URL manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOptions {
    pub concurrency: usize,
    pub attempts: u32,
    /// Delay before the second attempt; doubles after every failure.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            concurrency: 4,
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchStatus {
    Fetched { bytes: u64 },
    /// Present locally with the size the server reports.
    Skipped { bytes: u64 },
    Failed { attempts: u32, permanent: bool, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchEntry {
    pub url: String,
    pub path: PathBuf,
    pub status: FetchStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchReport {
    pub entries: Vec<FetchEntry>,
}

impl FetchReport {
    pub fn failed(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.status, FetchStatus::Failed { .. }))
            .count()
    }

    /// True when there was something to fetch and nothing succeeded.
    pub fn all_failed(&self) -> bool {
        !self.entries.is_empty() && self.failed() == self.entries.len()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let status = match &e.status {
                FetchStatus::Fetched { bytes } => format!("fetched\t{bytes}"),
                FetchStatus::Skipped { bytes } => format!("skipped\t{bytes}"),
                FetchStatus::Failed {
                    attempts,
                    permanent,
                    message,
                } => {
                    let kind = if *permanent { "failed-permanent" } else { "failed-transient" };
                    format!("{kind}\t-\t{attempts} attempts: {message}")
                }
            };
            let _ = writeln!(out, "{}\t{status}", e.url);
        }
        out
    }
}

/// Absolute URLs, one per line; blank lines and `#` comments are skipped.
pub fn read_url_manifest(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut urls = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !(line.starts_with("http://") || line.starts_with("https://")) {
            return Err(Error::Config(format!(
                "{}:{}: `{line}` is not an absolute http(s) URL",
                path.display(),
                i + 1
            )));
        }
        urls.push(line.to_string());
    }
    Ok(urls)
}

/// Last path segment of the URL, without query or fragment.
pub fn url_basename(url: &str) -> Option<&str> {
    let url = url.split(['?', '#']).next()?;
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    let (_, path) = rest.split_once('/')?;
    path.rsplit('/').next().filter(|b| !b.is_empty() && *b != "." && *b != "..")
}

enum Failure {
    Transient(String),
    Permanent(String),
}

/// Downloads every URL into `dest`, keeping basenames. Per-URL outcomes are
/// reported in manifest order; only I/O on `dest` itself is an error.
pub fn fetch(urls: &[String], dest: &Path, options: &FetchOptions) -> Result<FetchReport> {
    std::fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(options.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let slots: Vec<Mutex<Option<FetchEntry>>> = urls.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = options.concurrency.clamp(1, urls.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(url) = urls.get(i) else { break };
                let entry = fetch_one(&agent, url, dest, options);
                *slots[i].lock().expect("slot lock") = Some(entry);
            });
        }
    });
    let entries = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every url visited"))
        .collect();
    Ok(FetchReport { entries })
}

fn fetch_one(agent: &ureq::Agent, url: &str, dest: &Path, options: &FetchOptions) -> FetchEntry {
    let Some(name) = url_basename(url) else {
        return FetchEntry {
            url: url.to_string(),
            path: dest.to_path_buf(),
            status: FetchStatus::Failed {
                attempts: 0,
                permanent: true,
                message: "URL has no file name".into(),
            },
        };
    };
    let path = dest.join(name);
    let mut delay = options.initial_backoff;
    let attempts = options.attempts.max(1);
    let mut status = None;
    for attempt in 1..=attempts {
        match try_fetch(agent, url, &path) {
            Ok(s) => {
                status = Some(s);
                break;
            }
            Err(Failure::Permanent(message)) => {
                status = Some(FetchStatus::Failed {
                    attempts: attempt,
                    permanent: true,
                    message,
                });
                break;
            }
            Err(Failure::Transient(message)) => {
                log::warn!("{url}: attempt {attempt} failed: {message}");
                if attempt == attempts {
                    status = Some(FetchStatus::Failed {
                        attempts,
                        permanent: false,
                        message,
                    });
                } else {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
    FetchEntry {
        url: url.to_string(),
        path,
        status: status.expect("at least one attempt"),
    }
}

fn classify(code: u16) -> Failure {
    let message = format!("HTTP {code}");
    if code == 408 || code == 429 || code >= 500 {
        Failure::Transient(message)
    } else {
        Failure::Permanent(message)
    }
}

fn try_fetch(agent: &ureq::Agent, url: &str, path: &Path) -> std::result::Result<FetchStatus, Failure> {
    if let Ok(meta) = std::fs::metadata(path) {
        let head = agent
            .head(url)
            .call()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let code = head.status().as_u16();
        if !(200..300).contains(&code) {
            return Err(classify(code));
        }
        let remote = head
            .headers()
            .get("content-length")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<u64>().ok());
        if remote == Some(meta.len()) {
            return Ok(FetchStatus::Skipped { bytes: meta.len() });
        }
    }
    let mut response = agent
        .get(url)
        .call()
        .map_err(|e| Failure::Transient(e.to_string()))?;
    let code = response.status().as_u16();
    if !(200..300).contains(&code) {
        return Err(classify(code));
    }
    let partial = path.with_extension("part");
    let mut file = std::fs::File::create(&partial)
        .map_err(|e| Failure::Permanent(format!("{}: {e}", partial.display())))?;
    let copied = std::io::copy(&mut response.body_mut().as_reader(), &mut file);
    let bytes = match copied {
        Ok(n) => n,
        Err(e) => {
            let _ = std::fs::remove_file(&partial);
            return Err(Failure::Transient(e.to_string()));
        }
    };
    drop(file);
    std::fs::rename(&partial, path).map_err(|e| Failure::Permanent(format!("{}: {e}", path.display())))?;
    Ok(FetchStatus::Fetched { bytes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basenames() {
        assert_eq!(url_basename("https://pds.example/a/b/FRAME_01.IMG"), Some("FRAME_01.IMG"));
        assert_eq!(url_basename("http://h/x.png?sig=1#top"), Some("x.png"));
        assert_eq!(url_basename("http://h/dir/"), None);
        assert_eq!(url_basename("http://h"), None);
        assert_eq!(url_basename("http://h/.."), None);
    }

    #[test]
    fn manifest_rejects_relative_urls() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("urls.txt");
        std::fs::write(&p, "# corpus\n\nhttp://a/b.png\n  https://c/d.jpg  \n").unwrap();
        assert_eq!(read_url_manifest(&p).unwrap(), vec!["http://a/b.png", "https://c/d.jpg"]);
        std::fs::write(&p, "b.png\n").unwrap();
        assert!(matches!(read_url_manifest(&p), Err(Error::Config(_))));
    }

    #[test]
    fn empty_manifest_is_an_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let report = fetch(&[], dir.path(), &FetchOptions::default()).unwrap();
        assert!(report.entries.is_empty());
        assert!(!report.all_failed());
    }

    #[test]
    fn status_classification() {
        assert!(matches!(classify(404), Failure::Permanent(_)));
        assert!(matches!(classify(503), Failure::Transient(_)));
        assert!(matches!(classify(429), Failure::Transient(_)));
    }
}
