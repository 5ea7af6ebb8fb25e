//! Length-prefixed JSON framing of the queue protocol over a local stream
//! socket.
//!
//! Each frame is a 4-byte big-endian length followed by that many bytes of
//! JSON. Requests are `{"type":"register|push|close|pull", "sender"|"receiver":
//! .., "payload"?: ..}`; payload bytes travel base64-encoded. Replies are
//! `{"type":"ack"}`, `{"type":"data","payload":..}`, `{"type":"wait"}`,
//! `{"type":"empty"}` or `{"type":"error","message":..}`.

use std::io::{ErrorKind, Read, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{Payload, PullResult, QueueHandle, SharedQueue};
use crate::{Error, Result};

const MAX_FRAME: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Register { sender: String },
    Push { sender: String, payload: String },
    Close { sender: String },
    Pull { receiver: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Ack,
    Data { payload: String },
    Wait,
    Empty,
    Error { message: String },
}

fn wire_err(e: std::io::Error) -> Error {
    Error::Protocol(format!("socket: {e}"))
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<()> {
    let body = serde_json::to_vec(msg)?;
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME)
        .ok_or_else(|| Error::Protocol(format!("frame of {} bytes is too large", body.len())))?;
    w.write_all(&len.to_be_bytes()).map_err(wire_err)?;
    w.write_all(&body).map_err(wire_err)?;
    w.flush().map_err(wire_err)
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<Option<T>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(wire_err(e)),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {len} bytes is too large")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(wire_err)?;
    Ok(Some(serde_json::from_slice(&body)?))
}

fn decode_payload(b64: &str) -> Result<Payload> {
    STANDARD
        .decode(b64)
        .map_err(|e| Error::Protocol(format!("payload is not base64: {e}")))
}

/// Applies one request to `queue`.
pub fn handle_request<Q: QueueHandle<Payload> + ?Sized>(queue: &Q, req: Request) -> Response {
    let result = match req {
        Request::Register { sender } => queue.register(&sender).map(|_| Response::Ack),
        Request::Push { sender, payload } => decode_payload(&payload)
            .and_then(|p| queue.push(&sender, p))
            .map(|_| Response::Ack),
        Request::Close { sender } => queue.close(&sender).map(|_| Response::Ack),
        Request::Pull { receiver } => queue.pull(&receiver).map(|r| match r {
            PullResult::Data(p) => Response::Data {
                payload: STANDARD.encode(p),
            },
            PullResult::Wait => Response::Wait,
            PullResult::Empty => Response::Empty,
        }),
    };
    result.unwrap_or_else(|e| Response::Error {
        message: e.to_string(),
    })
}

/// Serves requests from one connection until it closes.
pub fn serve_stream<S: Read + Write, Q: QueueHandle<Payload> + ?Sized>(
    stream: &mut S,
    queue: &Q,
) -> Result<()> {
    while let Some(req) = read_frame::<_, Request>(stream)? {
        let resp = handle_request(queue, req);
        write_frame(stream, &resp)?;
    }
    Ok(())
}

/// A [`SharedQueue`] exposed on a Unix domain socket, one thread per
/// connection.
pub struct QueueServer {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl QueueServer {
    pub fn bind(path: &Path, queue: SharedQueue<Payload>) -> Result<Self> {
        let listener = UnixListener::bind(path).map_err(|e| Error::io(path, e))?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(mut conn) = conn else { continue };
                    let queue = queue.clone();
                    std::thread::spawn(move || {
                        if let Err(e) = serve_stream(&mut conn, &queue) {
                            log::warn!("queue connection ended with error: {e}");
                        }
                    });
                }
            })
        };
        Ok(QueueServer {
            path: path.to_owned(),
            stop,
            accept: Some(accept),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for QueueServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it sees the flag.
        let _ = UnixStream::connect(&self.path);
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Client side of a [`QueueServer`].
pub struct RemoteQueue {
    stream: Mutex<UnixStream>,
}

impl RemoteQueue {
    pub fn connect(path: &Path) -> Result<Self> {
        let stream = UnixStream::connect(path).map_err(|e| Error::io(path, e))?;
        Ok(RemoteQueue {
            stream: Mutex::new(stream),
        })
    }

    fn call(&self, req: &Request) -> Result<Response> {
        let mut stream = self.stream.lock().expect("socket lock poisoned");
        write_frame(&mut *stream, req)?;
        match read_frame(&mut *stream)? {
            Some(Response::Error { message }) => Err(Error::Protocol(message)),
            Some(resp) => Ok(resp),
            None => Err(Error::Protocol("server closed the connection".into())),
        }
    }

    fn expect_ack(&self, req: Request) -> Result<()> {
        match self.call(&req)? {
            Response::Ack => Ok(()),
            other => Err(Error::Protocol(format!("expected ack, got {other:?}"))),
        }
    }
}

impl QueueHandle<Payload> for RemoteQueue {
    fn register(&self, sender: &str) -> Result<()> {
        self.expect_ack(Request::Register {
            sender: sender.into(),
        })
    }

    fn push(&self, sender: &str, payload: Payload) -> Result<()> {
        self.expect_ack(Request::Push {
            sender: sender.into(),
            payload: STANDARD.encode(payload),
        })
    }

    fn close(&self, sender: &str) -> Result<()> {
        self.expect_ack(Request::Close {
            sender: sender.into(),
        })
    }

    fn pull(&self, receiver: &str) -> Result<PullResult<Payload>> {
        match self.call(&Request::Pull {
            receiver: receiver.into(),
        })? {
            Response::Data { payload } => Ok(PullResult::Data(decode_payload(&payload)?)),
            Response::Wait => Ok(PullResult::Wait),
            Response::Empty => Ok(PullResult::Empty),
            other => Err(Error::Protocol(format!("unexpected reply to pull: {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{receive_loop, RealClock};

    #[test]
    fn request_json_shape() {
        let json = serde_json::to_string(&Request::Push {
            sender: "s1".into(),
            payload: STANDARD.encode(b"hi"),
        })
        .unwrap();
        assert_eq!(json, r#"{"type":"push","sender":"s1","payload":"aGk="}"#);
        let pull: Request = serde_json::from_str(r#"{"type":"pull","receiver":"r"}"#).unwrap();
        assert_eq!(pull, Request::Pull { receiver: "r".into() });
    }

    #[test]
    fn frames_round_trip_through_a_buffer() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Response::Wait).unwrap();
        write_frame(&mut buf, &Response::Empty).unwrap();
        assert_eq!(&buf[..4], &(br#"{"type":"wait"}"#.len() as u32).to_be_bytes());
        let mut r = buf.as_slice();
        assert_eq!(read_frame::<_, Response>(&mut r).unwrap(), Some(Response::Wait));
        assert_eq!(read_frame::<_, Response>(&mut r).unwrap(), Some(Response::Empty));
        assert_eq!(read_frame::<_, Response>(&mut r).unwrap(), None);
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut bytes = (MAX_FRAME + 1).to_be_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert!(read_frame::<_, Response>(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn protocol_errors_travel_as_error_frames() {
        let q = SharedQueue::new("q");
        let resp = handle_request(
            &q,
            Request::Push {
                sender: "ghost".into(),
                payload: String::new(),
            },
        );
        assert!(matches!(resp, Response::Error { .. }));
    }

    #[test]
    fn remote_queue_over_socket() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.sock");
        let queue = SharedQueue::new("q");
        let _server = QueueServer::bind(&path, queue.clone()).unwrap();

        let sender = RemoteQueue::connect(&path).unwrap();
        sender.register("s").unwrap();
        assert!(sender.register("s").is_err());
        for i in 0..10u8 {
            sender.push("s", vec![i, i]).unwrap();
        }
        let receiver = RemoteQueue::connect(&path).unwrap();
        assert_eq!(receiver.pull("r").unwrap(), PullResult::Data(vec![0, 0]));
        sender.close("s").unwrap();

        let mut got = Vec::new();
        let report = receive_loop(
            &receiver,
            "r",
            |p: Payload| {
                got.push(p[0]);
                Ok::<_, String>(())
            },
            0.01,
            &RealClock::new(),
        )
        .unwrap();
        assert_eq!(report.processed, 9);
        assert_eq!(got, (1..10).collect::<Vec<_>>());
        assert!(queue.is_empty());
    }
}
