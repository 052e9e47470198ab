//! Datagram codec for the multicast transport.
//!
//! ```text
//! "MBBT" | version u8 = 1 | kind u8 | ns_len u16 | ns | topic_len u16 | topic
//!        | sample version u64 | payload_len u32 | payload
//! ```
//!
//! All integers are big-endian. Publish payloads are the JSON encoding of a
//! [`Value`]; announce and bye carry an empty topic and payload.

use std::net::{Ipv4Addr, SocketAddrV4};

use super::value::Value;

pub const MAGIC: &[u8; 4] = b"MBBT";
pub const PROTOCOL_VERSION: u8 = 1;
pub const DEFAULT_GROUP: SocketAddrV4 = SocketAddrV4::new(Ipv4Addr::new(239, 255, 42, 1), 7447);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Announce = 0,
    Publish = 1,
    Bye = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datagram {
    pub kind: MessageKind,
    pub namespace: String,
    pub topic: String,
    pub version: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unknown message kind {0}")]
    Kind(u8),
    #[error("datagram truncated")]
    Truncated,
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("field is not valid UTF-8")]
    Utf8,
    #[error("field of {0} bytes does not fit its length prefix")]
    TooLong(usize),
    #[error("payload is not a valid value: {0}")]
    Payload(String),
}

impl Datagram {
    pub fn announce(namespace: &str) -> Self {
        Self { kind: MessageKind::Announce, namespace: namespace.into(), topic: String::new(), version: 0, payload: Vec::new() }
    }

    pub fn bye(namespace: &str) -> Self {
        Self { kind: MessageKind::Bye, ..Self::announce(namespace) }
    }

    pub fn publish(namespace: &str, topic: &str, version: u64, value: &Value) -> Self {
        Self {
            kind: MessageKind::Publish,
            namespace: namespace.into(),
            topic: topic.into(),
            version,
            payload: serde_json::to_vec(value).expect("values always serialize"),
        }
    }

    pub fn value(&self) -> Result<Value, WireError> {
        serde_json::from_slice(&self.payload).map_err(|e| WireError::Payload(e.to_string()))
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let ns = self.namespace.as_bytes();
        let topic = self.topic.as_bytes();
        let ns_len = u16::try_from(ns.len()).map_err(|_| WireError::TooLong(ns.len()))?;
        let topic_len = u16::try_from(topic.len()).map_err(|_| WireError::TooLong(topic.len()))?;
        let payload_len =
            u32::try_from(self.payload.len()).map_err(|_| WireError::TooLong(self.payload.len()))?;
        let mut out = Vec::with_capacity(22 + ns.len() + topic.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(PROTOCOL_VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&ns_len.to_be_bytes());
        out.extend_from_slice(ns);
        out.extend_from_slice(&topic_len.to_be_bytes());
        out.extend_from_slice(topic);
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&payload_len.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(WireError::BadMagic);
        }
        let version = r.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(WireError::Version(version));
        }
        let kind = match r.u8()? {
            0 => MessageKind::Announce,
            1 => MessageKind::Publish,
            2 => MessageKind::Bye,
            k => return Err(WireError::Kind(k)),
        };
        let ns_len = r.u16()? as usize;
        let namespace = r.string(ns_len)?;
        let topic_len = r.u16()? as usize;
        let topic = r.string(topic_len)?;
        let sample_version = u64::from_be_bytes(r.take(8)?.try_into().unwrap());
        let payload_len = u32::from_be_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let payload = r.take(payload_len)?.to_vec();
        if r.pos != buf.len() {
            return Err(WireError::Trailing(buf.len() - r.pos));
        }
        Ok(Self { kind, namespace, topic, version: sample_version, payload })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String, WireError> {
        std::str::from_utf8(self.take(n)?).map(str::to_string).map_err(|_| WireError::Utf8)
    }
}
