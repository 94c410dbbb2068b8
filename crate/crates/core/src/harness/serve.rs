use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::HarnessError;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::establishment::PlatformManifest;
use crate::package::InstanceId;
use crate::registration::{
    fetch_pck_certificate, AddRequest, MembershipCertificate, PckCertificate, RegistrationService,
    ServicePublicKey,
};

/// Largest frame either side will accept.
pub const MAX_FRAME: usize = 1 << 20;
const IO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceRequest {
    Register {
        manifest: PlatformManifest,
        tcb_levels: Vec<u32>,
    },
    FetchPck {
        instance: InstanceId,
        tcb_level: u32,
    },
    ApproveAdd(AddRequest),
    Deregister(InstanceId),
    PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceResponse {
    Certificates(Vec<PckCertificate>),
    Certificate(PckCertificate),
    Membership(MembershipCertificate),
    Done,
    PublicKey(ServicePublicKey),
    Error(String),
}

impl ServiceRequest {
    const MAGIC: &'static [u8; 4] = b"MPRQ";
}

impl ServiceResponse {
    const MAGIC: &'static [u8; 4] = b"MPRS";
}

impl Canonical for ServiceRequest {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(Self::MAGIC);
        match self {
            ServiceRequest::Register {
                manifest,
                tcb_levels,
            } => {
                enc.u8(1).item(manifest).seq(tcb_levels, |e, t| {
                    e.u32(*t);
                });
            }
            ServiceRequest::FetchPck {
                instance,
                tcb_level,
            } => {
                enc.u8(2).item(instance).u32(*tcb_level);
            }
            ServiceRequest::ApproveAdd(req) => {
                enc.u8(3).item(req);
            }
            ServiceRequest::Deregister(instance) => {
                enc.u8(4).item(instance);
            }
            ServiceRequest::PublicKey => {
                enc.u8(5);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.magic(Self::MAGIC, "service request")?;
        Ok(match dec.u8("request kind")? {
            1 => ServiceRequest::Register {
                manifest: dec.item()?,
                tcb_levels: dec.seq("tcb levels", |d| d.u32("tcb level"))?,
            },
            2 => ServiceRequest::FetchPck {
                instance: dec.item()?,
                tcb_level: dec.u32("tcb level")?,
            },
            3 => ServiceRequest::ApproveAdd(dec.item()?),
            4 => ServiceRequest::Deregister(dec.item()?),
            5 => ServiceRequest::PublicKey,
            k => {
                return Err(DecodeError::InvalidValue {
                    field: "request kind",
                    value: k as u64,
                })
            }
        })
    }
}

impl Canonical for ServiceResponse {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(Self::MAGIC);
        match self {
            ServiceResponse::Certificates(certs) => {
                enc.u8(1).seq(certs, |e, c| {
                    e.item(c);
                });
            }
            ServiceResponse::Certificate(c) => {
                enc.u8(2).item(c);
            }
            ServiceResponse::Membership(c) => {
                enc.u8(3).item(c);
            }
            ServiceResponse::Done => {
                enc.u8(4);
            }
            ServiceResponse::PublicKey(k) => {
                enc.u8(5).item(k);
            }
            ServiceResponse::Error(msg) => {
                enc.u8(6).str(msg);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.magic(Self::MAGIC, "service response")?;
        Ok(match dec.u8("response kind")? {
            1 => ServiceResponse::Certificates(dec.seq("certificates", |d| d.item())?),
            2 => ServiceResponse::Certificate(dec.item()?),
            3 => ServiceResponse::Membership(dec.item()?),
            4 => ServiceResponse::Done,
            5 => ServiceResponse::PublicKey(dec.item()?),
            6 => ServiceResponse::Error(dec.str("error")?),
            k => {
                return Err(DecodeError::InvalidValue {
                    field: "response kind",
                    value: k as u64,
                })
            }
        })
    }
}

fn dispatch(service: &RegistrationService, req: ServiceRequest) -> ServiceResponse {
    let res = match req {
        ServiceRequest::Register {
            manifest,
            tcb_levels,
        } => service
            .register_platform(&manifest, &tcb_levels)
            .map(ServiceResponse::Certificates),
        ServiceRequest::FetchPck {
            instance,
            tcb_level,
        } => fetch_pck_certificate(service.cache(), &instance, tcb_level)
            .map(ServiceResponse::Certificate),
        ServiceRequest::ApproveAdd(req) => service
            .approve_add_request(&req)
            .map(ServiceResponse::Membership),
        ServiceRequest::Deregister(instance) => service
            .deregister_platform(&instance)
            .map(|()| ServiceResponse::Done),
        ServiceRequest::PublicKey => Ok(ServiceResponse::PublicKey(service.public_key().clone())),
    };
    res.unwrap_or_else(|e| ServiceResponse::Error(e.to_string()))
}

/// Answer one encoded request. Malformed input yields an error response.
pub fn handle_request(service: &RegistrationService, bytes: &[u8]) -> Vec<u8> {
    let resp = match ServiceRequest::from_canonical_bytes(bytes) {
        Ok(req) => dispatch(service, req),
        Err(e) => ServiceResponse::Error(format!("malformed request: {e}")),
    };
    resp.to_canonical_bytes()
}

fn write_frame(stream: &mut TcpStream, bytes: &[u8]) -> std::io::Result<()> {
    stream.write_all(&(bytes.len() as u32).to_le_bytes())?;
    stream.write_all(bytes)?;
    stream.flush()
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "frame too large",
        ));
    }
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

fn serve_connection(service: &RegistrationService, mut stream: TcpStream) -> std::io::Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let reply = match read_frame(&mut stream) {
        Ok(req) => handle_request(service, &req),
        Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
            ServiceResponse::Error(e.to_string()).to_canonical_bytes()
        }
        Err(e) => return Err(e),
    };
    write_frame(&mut stream, &reply)
}

/// A running registration service. Dropping it shuts the service down.
#[derive(Debug)]
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting, wait for in-flight connections to finish.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        let Some(acceptor) = self.acceptor.take() else {
            return;
        };
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        let _ = acceptor.join();
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Listen on `listen` (for example `127.0.0.1:0`) and answer one framed
/// request per connection, each on its own thread.
pub fn serve_registration(
    listen: &str,
    service: Arc<RegistrationService>,
) -> Result<ServiceHandle, HarnessError> {
    let listener = TcpListener::bind(listen)
        .map_err(|e| HarnessError::BindFailure(format!("{listen}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| HarnessError::BindFailure(format!("{listen}: {e}")))?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let acceptor = std::thread::spawn(move || {
        let mut workers = Vec::new();
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let service = service.clone();
            workers.push(std::thread::spawn(move || {
                if let Err(e) = serve_connection(&service, stream) {
                    log::debug!("registration connection: {e}");
                }
            }));
            workers.retain(|w| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
        log::info!("registration service on {addr} stopped");
    });
    log::info!("registration service listening on {addr}");
    Ok(ServiceHandle {
        addr,
        stop,
        acceptor: Some(acceptor),
    })
}

/// Client side of the framed socket protocol.
#[derive(Debug, Clone)]
pub struct RegistrationClient {
    addr: SocketAddr,
}

impl RegistrationClient {
    pub fn new(addr: SocketAddr) -> Self {
        Self { addr }
    }

    fn transport(e: std::io::Error) -> HarnessError {
        HarnessError::Transport(e.to_string())
    }

    /// Send raw bytes as one request frame and return the raw reply.
    pub fn call_raw(&self, request: &[u8]) -> Result<Vec<u8>, HarnessError> {
        let mut stream = TcpStream::connect(self.addr).map_err(Self::transport)?;
        stream
            .set_read_timeout(Some(IO_TIMEOUT))
            .map_err(Self::transport)?;
        write_frame(&mut stream, request).map_err(Self::transport)?;
        read_frame(&mut stream).map_err(Self::transport)
    }

    pub fn call(&self, request: &ServiceRequest) -> Result<ServiceResponse, HarnessError> {
        let reply = self.call_raw(&request.to_canonical_bytes())?;
        ServiceResponse::from_canonical_bytes(&reply)
            .map_err(|e| HarnessError::Transport(e.to_string()))
    }

    pub fn fetch_pck(
        &self,
        instance: InstanceId,
        tcb_level: u32,
    ) -> Result<ServiceResponse, HarnessError> {
        self.call(&ServiceRequest::FetchPck {
            instance,
            tcb_level,
        })
    }
}
