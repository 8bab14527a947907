use std::io::{Read, Write};

use super::{CommError, WorkerId};

const MAGIC: [u8; 4] = *b"FML1";
const HEADER_LEN: usize = 20;

/// Upper bound on an encoded frame, guarding allocations on corrupt length prefixes.
pub const MAX_FRAME_LEN: usize = 1 << 30;

const TAG_F64: u8 = 1;
const TAG_I64: u8 = 2;
const TAG_F64_VEC: u8 = 3;
const TAG_TEXT: u8 = 4;
const TAG_BYTES: u8 = 5;

/// A message payload value.
///
/// Equality is bitwise on floats, so `NaN == NaN` holds for identical bit
/// patterns and `0.0 != -0.0`.
#[derive(Debug, Clone)]
pub enum Value {
    Float64(f64),
    Int64(i64),
    Float64Vector(Vec<f64>),
    Text(String),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Float64(_) => "Float64",
            Value::Int64(_) => "Int64",
            Value::Float64Vector(_) => "Float64Vector",
            Value::Text(_) => "Text",
            Value::Bytes(_) => "Bytes",
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Float64(a), Value::Float64(b)) => a.to_bits() == b.to_bits(),
            (Value::Int64(a), Value::Int64(b)) => a == b,
            (Value::Float64Vector(a), Value::Float64Vector(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

/// A routable unit of communication with an ordered, key-unique payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: u32,
    pub sender_id: WorkerId,
    pub receiver_id: WorkerId,
    params: Vec<(String, Value)>,
}

impl Message {
    pub fn new(msg_type: u32, sender_id: WorkerId, receiver_id: WorkerId) -> Self {
        Self {
            msg_type,
            sender_id,
            receiver_id,
            params: Vec::new(),
        }
    }

    /// Sets `key` to `value`, replacing an existing entry in place.
    pub fn with(mut self, key: impl Into<String>, value: Value) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: impl Into<String>, value: Value) {
        let key = key.into();
        match self.params.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.params.push((key, value)),
        }
    }

    pub fn params(&self) -> &[(String, Value)] {
        &self.params
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(k, _)| k.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    fn require(&self, key: &str) -> Result<&Value, CommError> {
        self.get(key).ok_or_else(|| CommError::MissingParam(key.to_string()))
    }

    fn wrong_type(key: &str, expected: &'static str, found: &Value) -> CommError {
        CommError::WrongParamType {
            key: key.to_string(),
            expected,
            found: found.type_name(),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64, CommError> {
        match self.require(key)? {
            Value::Float64(x) => Ok(*x),
            other => Err(Self::wrong_type(key, "Float64", other)),
        }
    }

    pub fn i64(&self, key: &str) -> Result<i64, CommError> {
        match self.require(key)? {
            Value::Int64(x) => Ok(*x),
            other => Err(Self::wrong_type(key, "Int64", other)),
        }
    }

    pub fn f64_vec(&self, key: &str) -> Result<&[f64], CommError> {
        match self.require(key)? {
            Value::Float64Vector(v) => Ok(v),
            other => Err(Self::wrong_type(key, "Float64Vector", other)),
        }
    }

    pub fn text(&self, key: &str) -> Result<&str, CommError> {
        match self.require(key)? {
            Value::Text(s) => Ok(s),
            other => Err(Self::wrong_type(key, "Text", other)),
        }
    }

    pub fn bytes(&self, key: &str) -> Result<&[u8], CommError> {
        match self.require(key)? {
            Value::Bytes(b) => Ok(b),
            other => Err(Self::wrong_type(key, "Bytes", other)),
        }
    }
}

fn len_u32(len: usize, what: &str) -> Result<u32, CommError> {
    u32::try_from(len).map_err(|_| CommError::FrameTooLarge(format!("{what} length {len} exceeds u32")))
}

/// Encodes a message body (magic, header, params) without the length prefix.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, CommError> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * msg.params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&msg.msg_type.to_le_bytes());
    out.extend_from_slice(&msg.sender_id.to_le_bytes());
    out.extend_from_slice(&msg.receiver_id.to_le_bytes());
    out.extend_from_slice(&len_u32(msg.params.len(), "param count")?.to_le_bytes());
    for (key, value) in &msg.params {
        out.extend_from_slice(&len_u32(key.len(), "key")?.to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        match value {
            Value::Float64(x) => {
                out.push(TAG_F64);
                out.extend_from_slice(&x.to_le_bytes());
            }
            Value::Int64(x) => {
                out.push(TAG_I64);
                out.extend_from_slice(&x.to_le_bytes());
            }
            Value::Float64Vector(v) => {
                out.push(TAG_F64_VEC);
                out.extend_from_slice(&len_u32(v.len(), "vector")?.to_le_bytes());
                out.reserve(8 * v.len());
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Value::Text(s) => {
                out.push(TAG_TEXT);
                out.extend_from_slice(&len_u32(s.len(), "text")?.to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Value::Bytes(b) => {
                out.push(TAG_BYTES);
                out.extend_from_slice(&len_u32(b.len(), "bytes")?.to_le_bytes());
                out.extend_from_slice(b);
            }
        }
    }
    if out.len() > MAX_FRAME_LEN {
        return Err(CommError::FrameTooLarge(format!("{} bytes", out.len())));
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CommError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| CommError::MalformedFrame(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CommError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, CommError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CommError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn utf8(&mut self, len: usize, what: &str) -> Result<String, CommError> {
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CommError::MalformedFrame(format!("{what} is not valid UTF-8")))
    }
}

/// Decodes a message body produced by [`encode_message`].
pub fn decode_message(buf: &[u8]) -> Result<Message, CommError> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CommError::MalformedFrame(format!("bad magic {magic:02x?}")));
    }
    let msg_type = cur.u32("msg_type")?;
    let sender_id = cur.u32("sender_id")?;
    let receiver_id = cur.u32("receiver_id")?;
    let count = cur.u32("param_count")? as usize;
    let mut params: Vec<(String, Value)> = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let key_len = cur.u32("key length")? as usize;
        let key = cur.utf8(key_len, "key")?;
        if params.iter().any(|(k, _)| *k == key) {
            return Err(CommError::MalformedFrame(format!("duplicate key {key:?}")));
        }
        let value = match cur.u8("value tag")? {
            TAG_F64 => Value::Float64(f64::from_bits(cur.u64("Float64")?)),
            TAG_I64 => Value::Int64(cur.u64("Int64")? as i64),
            TAG_F64_VEC => {
                let n = cur.u32("vector length")? as usize;
                let raw = cur.take(n.saturating_mul(8), "vector payload")?;
                Value::Float64Vector(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            TAG_TEXT => {
                let n = cur.u32("text length")? as usize;
                Value::Text(cur.utf8(n, "text")?)
            }
            TAG_BYTES => {
                let n = cur.u32("bytes length")? as usize;
                Value::Bytes(cur.take(n, "bytes payload")?.to_vec())
            }
            tag => return Err(CommError::MalformedFrame(format!("bad value tag {tag} for key {key:?}"))),
        };
        params.push((key, value));
    }
    if cur.pos != buf.len() {
        return Err(CommError::MalformedFrame(format!(
            "{} trailing bytes after last parameter",
            buf.len() - cur.pos
        )));
    }
    Ok(Message {
        msg_type,
        sender_id,
        receiver_id,
        params,
    })
}

/// Writes a u32-length-prefixed frame.
pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<(), CommError> {
    let body = encode_message(msg)?;
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(&body)?;
    Ok(())
}

/// Reads one length-prefixed frame. Returns `Ok(None)` on a clean EOF before the prefix.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, CommError> {
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(CommError::MalformedFrame("truncated length prefix".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(CommError::FrameTooLarge(format!("length prefix {len}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CommError::MalformedFrame("truncated frame body".into()),
        _ => e.into(),
    })?;
    decode_message(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Message {
        Message::new(1, 0, 2).with("w", Value::Float64Vector(vec![1.0]))
    }

    #[test]
    fn header_bytes_match_layout() {
        let bytes = encode_message(&sample()).unwrap();
        let mut expected = vec![0x46, 0x4D, 0x4C, 0x31];
        for field in [1u32, 0, 2, 1] {
            expected.extend_from_slice(&field.to_le_bytes());
        }
        assert_eq!(&bytes[..20], &expected[..]);
        // key_len=1, "w", tag 3, count 1, 1.0
        let mut rest = vec![1, 0, 0, 0, b'w', 3, 1, 0, 0, 0];
        rest.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(&bytes[20..], &rest[..]);
    }

    #[test]
    fn roundtrip_example() {
        let msg = sample();
        assert_eq!(decode_message(&encode_message(&msg).unwrap()).unwrap(), msg);
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = encode_message(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_message(&bytes), Err(CommError::MalformedFrame(_))));
    }

    #[test]
    fn truncated_rejected() {
        let bytes = encode_message(&sample()).unwrap();
        for cut in 0..bytes.len() {
            assert!(
                matches!(decode_message(&bytes[..cut]), Err(CommError::MalformedFrame(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_value_tag_rejected() {
        let mut bytes = encode_message(&sample()).unwrap();
        bytes[25] = 9;
        let err = decode_message(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad value tag 9"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut bytes = encode_message(&Message::new(1, 0, 0)).unwrap();
        bytes[16..20].copy_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&1u32.to_le_bytes());
            bytes.push(b'k');
            bytes.push(TAG_I64);
            bytes.extend_from_slice(&5i64.to_le_bytes());
        }
        let err = decode_message(&bytes).unwrap_err();
        assert!(err.to_string().contains("duplicate key"), "{err}");
    }

    #[test]
    fn with_replaces_existing_key() {
        let msg = Message::new(3, 0, 1)
            .with("a", Value::Int64(1))
            .with("b", Value::Int64(2))
            .with("a", Value::Int64(3));
        assert_eq!(msg.keys().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(msg.i64("a").unwrap(), 3);
    }

    #[test]
    fn typed_getters_report_mismatch() {
        let msg = Message::new(3, 0, 1).with("a", Value::Text("x".into()));
        assert!(matches!(msg.f64("a"), Err(CommError::WrongParamType { .. })));
        assert!(matches!(msg.f64("b"), Err(CommError::MissingParam(_))));
    }

    #[test]
    fn frame_stream_roundtrip() {
        let msgs = [sample(), Message::new(0, 2, 0)];
        let mut buf = Vec::new();
        for m in &msgs {
            write_frame(&mut buf, m).unwrap();
        }
        let mut reader = &buf[..];
        assert_eq!(read_frame(&mut reader).unwrap().unwrap(), msgs[0]);
        assert_eq!(read_frame(&mut reader).unwrap().unwrap(), msgs[1]);
        assert!(read_frame(&mut reader).unwrap().is_none());
    }
}
