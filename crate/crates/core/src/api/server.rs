use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Api, ApiError, ApiRequest, ApiResponse, MAX_BODY_BYTES};

/// HTTP listener with a fixed pool of worker threads.
pub struct ApiServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ApiServer {
    pub fn start(api: Arc<Api>, bind: &str, threads: usize) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(bind).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..threads.max(1))
            .map(|i| {
                let (server, api, stop) = (server.clone(), api.clone(), stop.clone());
                std::thread::Builder::new()
                    .name(format!("api-{i}"))
                    .spawn(move || worker(&server, &api, &stop))
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        log::info!("api listening on {addr}");
        Ok(Self { addr, stop, workers })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn worker(server: &tiny_http::Server, api: &Api, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        match server.recv_timeout(Duration::from_millis(100)) {
            Ok(Some(rq)) => serve(api, rq),
            Ok(None) => {}
            Err(e) => log::warn!("api accept failed: {e}"),
        }
    }
}

fn serve(api: &Api, mut rq: tiny_http::Request) {
    let mut req = ApiRequest::new(rq.method().as_str(), rq.url());
    req.headers = rq
        .headers()
        .iter()
        .map(|h| (h.field.as_str().to_string(), h.value.as_str().to_string()))
        .collect();
    let resp = if rq.body_length().is_some_and(|n| n > MAX_BODY_BYTES) {
        ApiResponse::error(&ApiError::new(
            413,
            "payload_too_large",
            format!("body exceeds {MAX_BODY_BYTES} bytes"),
        ))
    } else {
        let mut body = Vec::new();
        match rq.as_reader().take(MAX_BODY_BYTES as u64 + 1).read_to_end(&mut body) {
            Ok(_) => {
                req.body = body;
                api.handle(&req)
            }
            Err(e) => ApiResponse::error(&ApiError::new(400, "bad_request", format!("reading body: {e}"))),
        }
    };
    log::debug!("{} {} -> {}", req.method, req.url, resp.status);
    let mut out = tiny_http::Response::from_data(resp.body).with_status_code(resp.status);
    if let Some(ct) = resp.content_type {
        out = out.with_header(header("Content-Type", &ct));
    }
    for (k, v) in &resp.headers {
        out = out.with_header(header(k, v));
    }
    if let Err(e) = rq.respond(out) {
        log::debug!("api response not delivered: {e}");
    }
}

fn header(k: &str, v: &str) -> tiny_http::Header {
    tiny_http::Header::from_bytes(k.as_bytes(), v.as_bytes()).expect("ascii header")
}
