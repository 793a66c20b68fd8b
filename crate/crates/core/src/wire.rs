//! Wire format for push and fetch exchanges.
//!
//! A frame is a 4-byte big-endian body length followed by a compact JSON
//! body with lexicographically sorted keys, so equal messages always encode
//! to identical bytes:
//!
//! ```text
//! {"kind":"PUSH_REQ","payloads":[{"delta":{..},"end_version":"..",
//!   "start_version":"..","type_name":"Ship"}],"sender":"bot"}
//! ```
//!
//! Payloads are sorted by type name and carry at most one squashed delta
//! each. Responses add a per-payload `status`.

use std::io::{Read, Write};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::object::{Delta, TypeRegistry};
use crate::version::VersionId;

/// Upper bound on a frame body, to reject garbage length prefixes early.
pub const MAX_FRAME_LEN: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    FetchReq,
    FetchResp,
    PushReq,
    PushResp,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::FetchReq => "FETCH_REQ",
            MessageKind::FetchResp => "FETCH_RESP",
            MessageKind::PushReq => "PUSH_REQ",
            MessageKind::PushResp => "PUSH_RESP",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "FETCH_REQ" => MessageKind::FetchReq,
            "FETCH_RESP" => MessageKind::FetchResp,
            "PUSH_REQ" => MessageKind::PushReq,
            "PUSH_RESP" => MessageKind::PushResp,
            _ => return None,
        })
    }

    pub fn is_response(self) -> bool {
        matches!(self, MessageKind::FetchResp | MessageKind::PushResp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    UnknownVersion,
    /// The receiver could not apply the payload (resolver fault, bad chain).
    Rejected,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::UnknownVersion => "UNKNOWN_VERSION",
            Status::Rejected => "REJECTED",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "OK" => Status::Ok,
            "UNKNOWN_VERSION" => Status::UnknownVersion,
            "REJECTED" => Status::Rejected,
            _ => return None,
        })
    }
}

/// Per-type section of a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub type_name: String,
    pub start_version: VersionId,
    pub end_version: Option<VersionId>,
    pub delta: Option<Delta>,
    pub status: Option<Status>,
}

impl Payload {
    pub fn fetch_request(type_name: impl Into<String>, start: VersionId) -> Self {
        Payload {
            type_name: type_name.into(),
            start_version: start,
            end_version: None,
            delta: None,
            status: None,
        }
    }

    pub fn changes(type_name: impl Into<String>, start: VersionId, end: VersionId, delta: Delta) -> Self {
        Payload {
            type_name: type_name.into(),
            start_version: start,
            end_version: Some(end),
            delta: Some(delta),
            status: None,
        }
    }

    pub fn with_status(mut self, status: Status) -> Self {
        self.status = Some(status);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: String,
    pub payloads: Vec<Payload>,
}

impl Message {
    pub fn new(kind: MessageKind, sender: impl Into<String>) -> Self {
        Message {
            kind,
            sender: sender.into(),
            payloads: Vec::new(),
        }
    }

    pub fn payload(&self, type_name: &str) -> Option<&Payload> {
        self.payloads.iter().find(|p| p.type_name == type_name)
    }

    /// Bytes of canonical delta JSON carried, summed over payloads.
    pub fn delta_bytes(&self) -> usize {
        self.payloads
            .iter()
            .filter_map(|p| p.delta.as_ref())
            .map(delta_size)
            .sum()
    }
}

/// Size of a delta's canonical JSON body.
pub fn delta_size(delta: &Delta) -> usize {
    delta.to_json().map(|v| v.to_string().len()).unwrap_or(0)
}

fn body(msg: &Message) -> Result<Value> {
    let mut payloads: Vec<&Payload> = msg.payloads.iter().collect();
    payloads.sort_by(|a, b| a.type_name.cmp(&b.type_name));
    let mut list = Vec::with_capacity(payloads.len());
    for p in payloads {
        let mut obj = Map::new();
        obj.insert("type_name".into(), Value::String(p.type_name.clone()));
        obj.insert("start_version".into(), Value::String(p.start_version.to_string()));
        if let Some(end) = p.end_version {
            obj.insert("end_version".into(), Value::String(end.to_string()));
        }
        if let Some(delta) = &p.delta {
            let json = delta.to_json().ok_or_else(|| {
                Error::InvalidValue(format!("non-finite float in `{}` payload", p.type_name))
            })?;
            obj.insert("delta".into(), json);
        }
        if let Some(status) = p.status {
            obj.insert("status".into(), Value::String(status.as_str().into()));
        }
        list.push(Value::Object(obj));
    }
    let mut root = Map::new();
    root.insert("kind".into(), Value::String(msg.kind.as_str().into()));
    root.insert("sender".into(), Value::String(msg.sender.clone()));
    root.insert("payloads".into(), Value::Array(list));
    Ok(Value::Object(root))
}

/// Length-prefixed canonical frame.
///
/// Fails only when a delta holds a non-finite float, which snapshots never
/// stage.
pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let text = body(msg)?.to_string();
    let mut out = Vec::with_capacity(text.len() + 4);
    out.extend_from_slice(&(text.len() as u32).to_be_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::MalformedFrame(reason.into())
}

fn version_field(obj: &Map<String, Value>, key: &str) -> Result<Option<VersionId>> {
    match obj.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => s
            .parse()
            .map(Some)
            .map_err(|_| malformed(format!("bad version in `{key}`"))),
        Some(_) => Err(malformed(format!("`{key}` must be a string"))),
    }
}

fn decode_payload(kind: MessageKind, value: &Value, registry: &TypeRegistry) -> Result<Payload> {
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("payload must be an object"))?;
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "type_name" | "start_version" | "end_version" | "delta" | "status"
        ) {
            return Err(malformed(format!("unexpected payload field `{key}`")));
        }
    }
    let type_name = obj
        .get("type_name")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("payload without type_name"))?;
    if !registry.contains(type_name) {
        return Err(malformed(format!("unregistered type `{type_name}`")));
    }
    let start_version =
        version_field(obj, "start_version")?.ok_or_else(|| malformed("payload without start_version"))?;
    let end_version = version_field(obj, "end_version")?;
    let delta = match obj.get("delta") {
        None => None,
        Some(v) => {
            let d = Delta::from_json(v, registry)?;
            if d.ids().any(|id| id.type_name != type_name) {
                return Err(malformed(format!("delta in `{type_name}` payload crosses types")));
            }
            Some(d)
        }
    };
    let status = match obj.get("status") {
        None => None,
        Some(v) => Some(
            v.as_str()
                .and_then(Status::parse)
                .ok_or_else(|| malformed("bad status"))?,
        ),
    };

    let ok = status == Some(Status::Ok);
    let shape_ok = match kind {
        MessageKind::FetchReq => end_version.is_none() && delta.is_none() && status.is_none(),
        MessageKind::PushReq => end_version.is_some() && delta.is_some() && status.is_none(),
        MessageKind::FetchResp => {
            status.is_some() && (!ok || (end_version.is_some() && delta.is_some()))
        }
        MessageKind::PushResp => status.is_some() && delta.is_none() && (!ok || end_version.is_some()),
    };
    if !shape_ok {
        return Err(malformed(format!(
            "payload shape does not match {}",
            kind.as_str()
        )));
    }
    Ok(Payload {
        type_name: type_name.to_string(),
        start_version,
        end_version,
        delta,
        status,
    })
}

/// Parses a complete frame. Every payload type must be in `registry`.
pub fn decode(bytes: &[u8], registry: &TypeRegistry) -> Result<Message> {
    if bytes.len() < 4 {
        return Err(malformed("frame shorter than its length prefix"));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if bytes.len() - 4 != len {
        return Err(malformed(format!(
            "length prefix says {len} bytes, frame carries {}",
            bytes.len() - 4
        )));
    }
    let value: Value =
        serde_json::from_slice(&bytes[4..]).map_err(|e| malformed(format!("bad JSON: {e}")))?;
    let root = value
        .as_object()
        .ok_or_else(|| malformed("body must be an object"))?;
    if root.len() != 3 {
        return Err(malformed("body must hold exactly kind, sender and payloads"));
    }
    let kind = root
        .get("kind")
        .and_then(Value::as_str)
        .and_then(MessageKind::parse)
        .ok_or_else(|| malformed("unknown message kind"))?;
    let sender = root
        .get("sender")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing sender"))?
        .to_string();
    let list = root
        .get("payloads")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing payloads"))?;
    let mut payloads = Vec::with_capacity(list.len());
    for p in list {
        let p = decode_payload(kind, p, registry)?;
        if payloads.iter().any(|q: &Payload| q.type_name == p.type_name) {
            return Err(malformed(format!("duplicate payload for `{}`", p.type_name)));
        }
        payloads.push(p);
    }
    Ok(Message {
        kind,
        sender,
        payloads,
    })
}

/// Reads one frame (prefix included) from a byte stream.
pub fn read_frame(reader: &mut impl Read) -> Result<Vec<u8>> {
    let mut prefix = [0u8; 4];
    reader.read_exact(&mut prefix)?;
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(malformed(format!("frame of {len} bytes exceeds limit")));
    }
    let mut frame = vec![0u8; len + 4];
    frame[..4].copy_from_slice(&prefix);
    reader.read_exact(&mut frame[4..])?;
    Ok(frame)
}

pub fn write_frame(writer: &mut impl Write, frame: &[u8]) -> Result<()> {
    writer.write_all(frame)?;
    writer.flush()?;
    Ok(())
}

/// Parses `got://host:port[/path]` (or a bare `host:port`) into host and port.
pub fn parse_address(address: &str) -> Result<(String, u16)> {
    let rest = address.strip_prefix("got://").unwrap_or(address);
    let authority = rest.split('/').next().unwrap_or_default();
    let (host, port) = authority
        .rsplit_once(':')
        .ok_or_else(|| Error::Config(format!("address `{address}` has no port")))?;
    let host = host.trim_start_matches('[').trim_end_matches(']');
    if host.is_empty() {
        return Err(Error::Config(format!("address `{address}` has no host")));
    }
    let port = port
        .parse()
        .map_err(|_| Error::Config(format!("bad port in `{address}`")))?;
    Ok((host.to_string(), port))
}
