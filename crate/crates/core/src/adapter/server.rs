//! Exposes an [`Adapter`] over the wire protocol. Used by `serve-mock` so an
//! external model server can be checked against the same client validators.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{
    AnswerRequest, AnswerResponse, EmbedRequest, EmbedResponse, ErrorBody, JudgeResponse,
    PathsRequest, ScoresResponse, WireAnswer,
};
use super::{Adapter, Embedder, EP_ANSWER, EP_EMBED, EP_HEALTH, EP_JUDGE, EP_SCORE_PATHS};

const WORKERS: usize = 4;

pub struct AdapterServer {
    adapter: Arc<dyn Adapter>,
    embedder: Option<Arc<dyn Embedder>>,
    auth_token: Option<String>,
}

/// Running server; stops and joins its workers on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> url::Url {
        url::Url::parse(&format!("http://{}/", self.addr)).expect("valid socket address url")
    }

    /// Blocks until the workers exit (i.e. forever, unless stopped elsewhere).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).expect("serializable body");
    Response::from_data(bytes)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn error_response(status: u16, msg: impl Into<String>) -> Response<std::io::Cursor<Vec<u8>>> {
    json_response(status, &ErrorBody { error: msg.into() })
}

impl AdapterServer {
    pub fn new(adapter: Arc<dyn Adapter>) -> Self {
        Self {
            adapter,
            embedder: None,
            auth_token: None,
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_auth_token(mut self, token: Option<String>) -> Self {
        self.auth_token = token;
        self
    }

    pub fn start(self, addr: &str) -> std::io::Result<ServerHandle> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let stop = Arc::new(AtomicBool::new(false));
        let this = Arc::new(self);
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let stop = Arc::clone(&stop);
                let this = Arc::clone(&this);
                std::thread::spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(req)) => this.handle(req),
                            Ok(None) => {}
                            Err(_) => break,
                        }
                    }
                })
            })
            .collect();
        Ok(ServerHandle {
            addr,
            stop,
            workers,
        })
    }

    fn authorized(&self, req: &Request) -> bool {
        let Some(token) = &self.auth_token else {
            return true;
        };
        let expected = format!("Bearer {token}");
        req.headers()
            .iter()
            .any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected)
    }

    fn handle(&self, mut req: Request) {
        let response = if !self.authorized(&req) {
            error_response(401, "missing or invalid bearer token")
        } else {
            let mut body = String::new();
            match req.as_reader().read_to_string(&mut body) {
                Ok(_) => self.route(req.method(), req.url(), &body),
                Err(e) => error_response(400, format!("unreadable body: {e}")),
            }
        };
        let _ = req.respond(response);
    }

    fn route(&self, method: &Method, url: &str, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
        macro_rules! parse {
            ($t:ty) => {
                match serde_json::from_str::<$t>(body) {
                    Ok(v) => v,
                    Err(e) => return error_response(400, format!("bad request body: {e}")),
                }
            };
        }
        let path = url.split('?').next().unwrap_or(url);
        match (method, path) {
            (Method::Get, EP_HEALTH) => match self.adapter.health() {
                Ok(h) => json_response(200, &h),
                Err(e) => error_response(500, e.to_string()),
            },
            (Method::Post, EP_SCORE_PATHS) => {
                let r = parse!(PathsRequest);
                match self.adapter.score_paths(&r.question, &r.paths) {
                    Ok(scores) => json_response(200, &ScoresResponse { scores }),
                    Err(e) => error_response(500, e.to_string()),
                }
            }
            (Method::Post, EP_JUDGE) => {
                let r = parse!(PathsRequest);
                match self.adapter.judge(&r.question, &r.paths) {
                    Ok(j) => json_response(
                        200,
                        &JudgeResponse {
                            selected: j.selected,
                        },
                    ),
                    Err(e) => error_response(500, e.to_string()),
                }
            }
            (Method::Post, EP_ANSWER) => {
                let r = parse!(AnswerRequest);
                match self.adapter.answer(&r.prompt, r.max_new_tokens) {
                    Ok(a) => json_response(
                        200,
                        &AnswerResponse {
                            answers: a
                                .answers
                                .into_iter()
                                .map(|c| WireAnswer {
                                    text: c.text,
                                    confidence: c.confidence,
                                })
                                .collect(),
                            raw_text: a.raw_text,
                        },
                    ),
                    Err(e) => error_response(500, e.to_string()),
                }
            }
            (Method::Post, EP_EMBED) => {
                let Some(embedder) = &self.embedder else {
                    return error_response(404, "embedding not served");
                };
                let r = parse!(EmbedRequest);
                match embedder.embed(&r.texts) {
                    Ok(embeddings) => json_response(200, &EmbedResponse { embeddings }),
                    Err(e) => error_response(500, e.to_string()),
                }
            }
            _ => error_response(404, format!("no route for {method} {path}")),
        }
    }
}
