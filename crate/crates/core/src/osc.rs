//! OSC 1.0 binary codec.
//!
//! Implements the subset of Open Sound Control 1.0 the headset's streaming
//! software speaks: messages with int32/float32/string/blob arguments and
//! `#bundle` containers, all big-endian and padded to 4-byte alignment.
//!
//! ```text
//! message  = address-pattern  type-tag-string  arguments
//! address  = OSC-string beginning with '/'
//! type-tag = OSC-string beginning with ','  (one tag char per argument)
//! bundle   = "#bundle\0"  timetag:u64  (size:i32 element)*
//! ```
//!
//! `parse_packet` and `encode_packet` are inverses on valid packets:
//! structural equality after a round trip, byte equality for canonical
//! encodings. Parse errors carry the byte offset where decoding failed.

use std::fmt;

/// One OSC argument.
#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
    Blob(Vec<u8>),
}

impl OscArg {
    /// The OSC type-tag character for this argument.
    pub fn tag(&self) -> char {
        match self {
            OscArg::Int(_) => 'i',
            OscArg::Float(_) => 'f',
            OscArg::Str(_) => 's',
            OscArg::Blob(_) => 'b',
        }
    }
}

/// An OSC message: an address pattern plus typed arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        Self { address: address.into(), args }
    }

    /// The type-tag string (`,` followed by one tag char per argument).
    pub fn type_tags(&self) -> String {
        let mut tags = String::with_capacity(self.args.len() + 1);
        tags.push(',');
        tags.extend(self.args.iter().map(OscArg::tag));
        tags
    }

    /// Iterator over float arguments only.
    pub fn floats(&self) -> impl Iterator<Item = f32> + '_ {
        self.args.iter().filter_map(|a| match a {
            OscArg::Float(v) => Some(*v),
            _ => None,
        })
    }
}

/// An OSC bundle: a timetag plus nested messages or bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct OscBundle {
    /// 64-bit NTP-style fixed-point timetag (1 = immediately).
    pub timetag: u64,
    pub elements: Vec<OscPacket>,
}

/// Either a message or a bundle — the unit of one datagram.
#[derive(Debug, Clone, PartialEq)]
pub enum OscPacket {
    Message(OscMessage),
    Bundle(OscBundle),
}

impl OscPacket {
    /// Walk all messages in this packet, depth first, in wire order.
    pub fn messages(&self) -> Vec<&OscMessage> {
        let mut out = Vec::new();
        fn walk<'a>(p: &'a OscPacket, out: &mut Vec<&'a OscMessage>) {
            match p {
                OscPacket::Message(m) => out.push(m),
                OscPacket::Bundle(b) => b.elements.iter().for_each(|e| walk(e, out)),
            }
        }
        walk(self, &mut out);
        out
    }
}

// ── Errors ───────────────────────────────────────────────────────────────────

/// Why a packet failed to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedKind {
    /// Packet or field ended before its declared content.
    Truncated,
    /// Address pattern does not start with '/'.
    BadAddress,
    /// Type-tag string does not start with ','.
    BadTypeTags,
    /// A type-tag character outside the supported i/f/s/b set.
    UnsupportedTag(char),
    /// A string or blob field is not padded to a 4-byte boundary.
    Misaligned,
    /// Bundle does not begin with the "#bundle\0" literal.
    BadBundleHeader,
    /// A bundle element size is negative or not a multiple of 4.
    BadElementSize,
    /// Bytes left over after the packet content (beyond legal padding).
    TrailingBytes,
    /// Empty input.
    Empty,
}

/// Parse failure with the byte offset where decoding stopped.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed OSC packet at byte {offset}: {kind:?}")]
pub struct MalformedPacket {
    pub kind: MalformedKind,
    pub offset: usize,
}

/// Encode failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("unsupported argument type: {0}")]
    UnsupportedArgType(String),
    #[error("address must start with '/': {0:?}")]
    BadAddress(String),
    #[error("OSC strings cannot contain NUL: {0:?}")]
    EmbeddedNul(String),
    #[error("blob of {0} bytes exceeds the int32 size field")]
    OversizedBlob(usize),
}

impl fmt::Display for MalformedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

// ── Parsing ──────────────────────────────────────────────────────────────────

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: MalformedKind) -> MalformedPacket {
        MalformedPacket { kind, offset: self.pos }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedPacket> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(MalformedKind::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self) -> Result<u32, MalformedPacket> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn i32_be(&mut self) -> Result<i32, MalformedPacket> {
        Ok(self.u32_be()? as i32)
    }

    /// Read a NUL-terminated, 4-byte-padded OSC string.
    fn osc_string(&mut self) -> Result<String, MalformedPacket> {
        let start = self.pos;
        let rel_nul = self.bytes[self.pos..]
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| self.err(MalformedKind::Truncated))?;
        let content = &self.bytes[start..start + rel_nul];
        // content + NUL, padded up to the next multiple of 4
        let padded = (rel_nul + 4) & !3;
        if start + padded > self.bytes.len() {
            self.pos = self.bytes.len();
            return Err(self.err(MalformedKind::Misaligned));
        }
        if self.bytes[start + rel_nul..start + padded].iter().any(|&b| b != 0) {
            self.pos = start + rel_nul;
            return Err(self.err(MalformedKind::Misaligned));
        }
        self.pos = start + padded;
        String::from_utf8(content.to_vec()).map_err(|_| MalformedPacket {
            kind: MalformedKind::Misaligned,
            offset: start,
        })
    }
}

/// Parse one datagram into a message or (recursively) a bundle.
///
/// No bytes may remain after the packet content; only the padding implied
/// by the layout itself is consumed.
pub fn parse_packet(bytes: &[u8]) -> Result<OscPacket, MalformedPacket> {
    if bytes.is_empty() {
        return Err(MalformedPacket { kind: MalformedKind::Empty, offset: 0 });
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let packet = parse_element(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(cur.err(MalformedKind::TrailingBytes));
    }
    Ok(packet)
}

fn parse_element(cur: &mut Cursor<'_>) -> Result<OscPacket, MalformedPacket> {
    if cur.bytes[cur.pos..].starts_with(b"#bundle\0") {
        parse_bundle(cur).map(OscPacket::Bundle)
    } else {
        parse_message(cur).map(OscPacket::Message)
    }
}

fn parse_bundle(cur: &mut Cursor<'_>) -> Result<OscBundle, MalformedPacket> {
    let hdr = cur.take(8)?;
    if hdr != b"#bundle\0" {
        cur.pos -= 8;
        return Err(cur.err(MalformedKind::BadBundleHeader));
    }
    let hi = cur.u32_be()? as u64;
    let lo = cur.u32_be()? as u64;
    let timetag = (hi << 32) | lo;

    let mut elements = Vec::new();
    while cur.pos < cur.bytes.len() {
        let size_at = cur.pos;
        let size = cur.i32_be()?;
        if size < 0 || size % 4 != 0 {
            cur.pos = size_at;
            return Err(cur.err(MalformedKind::BadElementSize));
        }
        let body_start = cur.pos;
        let body = cur.take(size as usize)?;
        let mut inner = Cursor { bytes: body, pos: 0 };
        let elem = parse_element(&mut inner).map_err(|e| MalformedPacket {
            kind: e.kind,
            offset: body_start + e.offset,
        })?;
        if inner.pos != body.len() {
            return Err(MalformedPacket {
                kind: MalformedKind::TrailingBytes,
                offset: body_start + inner.pos,
            });
        }
        elements.push(elem);
    }
    Ok(OscBundle { timetag, elements })
}

fn parse_message(cur: &mut Cursor<'_>) -> Result<OscMessage, MalformedPacket> {
    let addr_at = cur.pos;
    let address = cur.osc_string()?;
    if !address.starts_with('/') {
        return Err(MalformedPacket { kind: MalformedKind::BadAddress, offset: addr_at });
    }
    let tags_at = cur.pos;
    let tags = cur.osc_string()?;
    if !tags.starts_with(',') {
        return Err(MalformedPacket { kind: MalformedKind::BadTypeTags, offset: tags_at });
    }
    let mut args = Vec::with_capacity(tags.len() - 1);
    for tag in tags.chars().skip(1) {
        let arg = match tag {
            'i' => OscArg::Int(cur.i32_be()?),
            'f' => OscArg::Float(f32::from_bits(cur.u32_be()?)),
            's' => OscArg::Str(cur.osc_string()?),
            'b' => {
                let len_at = cur.pos;
                let len = cur.i32_be()?;
                if len < 0 {
                    cur.pos = len_at;
                    return Err(cur.err(MalformedKind::BadElementSize));
                }
                let data = cur.take(len as usize)?.to_vec();
                let pad = (4 - (len as usize % 4)) % 4;
                let pad_bytes = cur.take(pad)?;
                if pad_bytes.iter().any(|&b| b != 0) {
                    return Err(cur.err(MalformedKind::Misaligned));
                }
                OscArg::Blob(data)
            }
            other => {
                return Err(MalformedPacket {
                    kind: MalformedKind::UnsupportedTag(other),
                    offset: tags_at,
                })
            }
        };
        args.push(arg);
    }
    Ok(OscMessage { address, args })
}

// ── Encoding ─────────────────────────────────────────────────────────────────

/// Encode a packet to its canonical big-endian, 4-byte-aligned wire form.
pub fn encode_packet(packet: &OscPacket) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::new();
    encode_into(packet, &mut out)?;
    debug_assert_eq!(out.len() % 4, 0);
    Ok(out)
}

fn encode_into(packet: &OscPacket, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    match packet {
        OscPacket::Message(m) => encode_message(m, out),
        OscPacket::Bundle(b) => {
            out.extend_from_slice(b"#bundle\0");
            out.extend_from_slice(&b.timetag.to_be_bytes());
            for elem in &b.elements {
                let mut body = Vec::new();
                encode_into(elem, &mut body)?;
                if body.len() > i32::MAX as usize {
                    return Err(EncodeError::OversizedBlob(body.len()));
                }
                out.extend_from_slice(&(body.len() as i32).to_be_bytes());
                out.extend_from_slice(&body);
            }
            Ok(())
        }
    }
}

fn push_osc_string(s: &str, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    if s.as_bytes().contains(&0) {
        return Err(EncodeError::EmbeddedNul(s.to_string()));
    }
    out.extend_from_slice(s.as_bytes());
    let pad = 4 - (s.len() % 4);
    out.resize(out.len() + pad, 0);
    Ok(())
}

fn encode_message(m: &OscMessage, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    if !m.address.starts_with('/') {
        return Err(EncodeError::BadAddress(m.address.clone()));
    }
    push_osc_string(&m.address, out)?;
    push_osc_string(&m.type_tags(), out)?;
    for arg in &m.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
            OscArg::Str(s) => push_osc_string(s, out)?,
            OscArg::Blob(data) => {
                if data.len() > i32::MAX as usize {
                    return Err(EncodeError::OversizedBlob(data.len()));
                }
                out.extend_from_slice(&(data.len() as i32).to_be_bytes());
                out.extend_from_slice(data);
                let pad = (4 - (data.len() % 4)) % 4;
                out.resize(out.len() + pad, 0);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(address: &str, args: Vec<OscArg>) -> OscPacket {
        OscPacket::Message(OscMessage::new(address, args))
    }

    #[test]
    fn encode_int_message_matches_hand_layout() {
        // "/a\0\0" ",i\0\0" 0x00000007 — 12 bytes
        let bytes = encode_packet(&msg("/a", vec![OscArg::Int(7)])).unwrap();
        assert_eq!(bytes, b"/a\0\0,i\0\0\x00\x00\x00\x07");
    }

    #[test]
    fn encode_empty_args_is_address_plus_comma_padding() {
        let bytes = encode_packet(&msg("/x", vec![])).unwrap();
        assert_eq!(bytes, b"/x\0\0,\0\0\0");
    }

    #[test]
    fn eeg_message_round_trips() {
        let p = msg(
            "/muse/eeg",
            vec![
                OscArg::Float(1.0),
                OscArg::Float(2.0),
                OscArg::Float(3.0),
                OscArg::Float(4.0),
            ],
        );
        let bytes = encode_packet(&p).unwrap();
        assert_eq!(bytes.len() % 4, 0);
        let back = parse_packet(&bytes).unwrap();
        assert_eq!(back, p);
        match back {
            OscPacket::Message(m) => {
                assert_eq!(m.type_tags(), ",ffff");
                assert_eq!(m.floats().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
            }
            _ => panic!("expected message"),
        }
    }

    #[test]
    fn bundle_of_two_messages_round_trips() {
        let b = OscPacket::Bundle(OscBundle {
            timetag: 1,
            elements: vec![
                msg("/muse/eeg", vec![OscArg::Float(0.5); 4]),
                msg("/marker", vec![OscArg::Str("song-1".into())]),
            ],
        });
        let bytes = encode_packet(&b).unwrap();
        assert!(bytes.starts_with(b"#bundle\0"));
        let back = parse_packet(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.messages().len(), 2);
    }

    #[test]
    fn nested_bundle_re_encodes_byte_identically() {
        let inner = OscBundle {
            timetag: 42,
            elements: vec![msg("/a/b", vec![OscArg::Int(-1), OscArg::Str("x".into())])],
        };
        let mid = OscBundle {
            timetag: 43,
            elements: vec![OscPacket::Bundle(inner), msg("/c", vec![OscArg::Blob(vec![1, 2, 3])])],
        };
        let outer = OscPacket::Bundle(OscBundle {
            timetag: 44,
            elements: vec![OscPacket::Bundle(mid)],
        });
        let bytes = encode_packet(&outer).unwrap();
        let reparsed = parse_packet(&bytes).unwrap();
        assert_eq!(reparsed, outer);
        assert_eq!(encode_packet(&reparsed).unwrap(), bytes);
    }

    #[test]
    fn missing_comma_in_type_tags_is_rejected() {
        // hand-built: "/m\0\0" then "ffff\0\0\0\0" (tags missing the ',')
        let mut bytes = b"/m\0\0".to_vec();
        bytes.extend_from_slice(b"ffff\0\0\0\0");
        bytes.extend_from_slice(&[0u8; 16]);
        let err = parse_packet(&bytes).unwrap_err();
        assert_eq!(err.kind, MalformedKind::BadTypeTags);
        assert_eq!(err.offset, 4);
    }

    #[test]
    fn truncated_argument_reports_offset() {
        // ",i" promises an int32 but only 2 bytes follow
        let mut bytes = b"/t\0\0,i\0\0".to_vec();
        bytes.extend_from_slice(&[0, 0]);
        let err = parse_packet(&bytes).unwrap_err();
        assert_eq!(err.kind, MalformedKind::Truncated);
        assert_eq!(err.offset, 8);
    }

    #[test]
    fn bad_bundle_element_size_is_rejected() {
        let mut bytes = b"#bundle\0".to_vec();
        bytes.extend_from_slice(&[0; 8]); // timetag
        bytes.extend_from_slice(&6i32.to_be_bytes()); // size not multiple of 4
        bytes.extend_from_slice(&[0; 6]);
        let err = parse_packet(&bytes).unwrap_err();
        assert_eq!(err.kind, MalformedKind::BadElementSize);
        assert_eq!(err.offset, 16);
    }

    #[test]
    fn unsupported_type_tag_is_rejected() {
        let bytes = b"/t\0\0,T\0\0".to_vec();
        let err = parse_packet(&bytes).unwrap_err();
        assert_eq!(err.kind, MalformedKind::UnsupportedTag('T'));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = encode_packet(&msg("/a", vec![OscArg::Int(7)])).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 9]);
        let err = parse_packet(&bytes).unwrap_err();
        assert_eq!(err.kind, MalformedKind::TrailingBytes);
        assert_eq!(err.offset, 12);
    }

    #[test]
    fn empty_input_is_rejected() {
        let err = parse_packet(&[]).unwrap_err();
        assert_eq!(err.kind, MalformedKind::Empty);
    }

    #[test]
    fn non_nul_string_padding_is_rejected() {
        // "/a\0" padded with a non-zero byte where NUL padding is required
        let mut bytes = b"/a\0".to_vec();
        bytes.push(7); // should be NUL padding
        bytes.extend_from_slice(b",\0\0\0");
        let err = parse_packet(&bytes).unwrap_err();
        assert_eq!(err.kind, MalformedKind::Misaligned);
        assert_eq!(err.offset, 2);
    }

    #[test]
    fn blob_padding_and_negative_len() {
        let p = msg("/b", vec![OscArg::Blob(vec![0xAA; 5])]);
        let bytes = encode_packet(&p).unwrap();
        assert_eq!(bytes.len() % 4, 0);
        assert_eq!(parse_packet(&bytes).unwrap(), p);

        // corrupt the blob length to -1
        let mut bad = bytes.clone();
        let len_at = 8; // "/b\0\0" + ",b\0\0"
        bad[len_at..len_at + 4].copy_from_slice(&(-1i32).to_be_bytes());
        let err = parse_packet(&bad).unwrap_err();
        assert_eq!(err.kind, MalformedKind::BadElementSize);
        assert_eq!(err.offset, len_at);
    }
}
