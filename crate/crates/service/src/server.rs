//! tiny_http front end: a fixed pool of workers pulling from one listener.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

use crate::{ApiError, ApiRequest, ApiResponse, Service};

pub struct ServerHandle {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until every worker exits.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        self.join();
    }
}

/// Binds `addr` (port 0 picks a free port) and starts serving.
pub fn serve(service: Arc<Service>, addr: &str) -> std::io::Result<ServerHandle> {
    let server = Arc::new(Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("listener has no IP address"))?;
    let workers = (0..service.config().workers.max(1))
        .map(|_| {
            let (server, service) = (Arc::clone(&server), Arc::clone(&service));
            std::thread::spawn(move || {
                while let Ok(mut request) = server.recv() {
                    let reply = to_api(&mut request, service.config().max_body_bytes)
                        .map(|r| service.handle(&r));
                    let reply = reply.unwrap_or_else(|e| ApiResponse::error(&e));
                    let header = Header::from_bytes("Content-Type", reply.content_type)
                        .expect("static header");
                    let _ = request.respond(
                        Response::from_data(reply.body)
                            .with_status_code(reply.status)
                            .with_header(header),
                    );
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        server,
        workers,
        addr,
    })
}

fn to_api(request: &mut tiny_http::Request, limit: usize) -> Result<ApiRequest, ApiError> {
    let content_type = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Content-Type"))
        .map(|h| h.value.as_str().to_string());
    let mut body = Vec::new();
    request
        .as_reader()
        .take(limit as u64 + 1)
        .read_to_end(&mut body)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if body.len() > limit {
        return Err(ApiError::TooLarge(limit));
    }
    Ok(ApiRequest {
        method: request.method().as_str().to_string(),
        url: request.url().to_string(),
        content_type,
        body,
    })
}
