use std::fmt;

use crate::codec::DecodeError;
use crate::crypto::TAG_LEN;

/// Bytes of header that precede the body on the wire.
pub const HEADER_LEN: usize = 1 + 8 + 2;

/// One link-layer packet.
///
/// Wire layout: `secure_flag (1) | counter (8, LE) | body_len (2, LE) |
/// body | tag (16, secure only)`. Plaintext packets carry counter 0.
#[derive(Clone, PartialEq, Eq)]
pub struct WirePacket {
    pub secure: bool,
    pub counter: u64,
    pub body: Vec<u8>,
    pub tag: Option<[u8; TAG_LEN]>,
}

impl WirePacket {
    pub(crate) fn header_bytes(secure: bool, counter: u64, body_len: u16) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = secure as u8;
        h[1..9].copy_from_slice(&counter.to_le_bytes());
        h[9..11].copy_from_slice(&body_len.to_le_bytes());
        h
    }

    pub fn header(&self) -> [u8; HEADER_LEN] {
        Self::header_bytes(self.secure, self.counter, self.body.len() as u16)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        assert!(
            self.body.len() <= u16::MAX as usize,
            "link body exceeds 64 KiB"
        );
        assert_eq!(self.secure, self.tag.is_some(), "tag present iff secure");
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len() + TAG_LEN);
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.body);
        if let Some(tag) = &self.tag {
            out.extend_from_slice(tag);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() < HEADER_LEN {
            return Err(DecodeError::Truncated("link header"));
        }
        let secure = match bytes[0] {
            0 => false,
            1 => true,
            v => {
                return Err(DecodeError::InvalidValue {
                    field: "secure flag",
                    value: v as u64,
                })
            }
        };
        let counter = u64::from_le_bytes(bytes[1..9].try_into().expect("8 bytes"));
        let body_len = u16::from_le_bytes([bytes[9], bytes[10]]) as usize;
        let rest = &bytes[HEADER_LEN..];
        let need = body_len + if secure { TAG_LEN } else { 0 };
        if rest.len() < need {
            return Err(DecodeError::Truncated("link body"));
        }
        if rest.len() > need {
            return Err(DecodeError::TrailingBytes(rest.len() - need));
        }
        let body = rest[..body_len].to_vec();
        let tag = secure.then(|| rest[body_len..].try_into().expect("16 bytes"));
        Ok(Self {
            secure,
            counter,
            body,
            tag,
        })
    }
}

impl fmt::Debug for WirePacket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WirePacket")
            .field("secure", &self.secure)
            .field("counter", &self.counter)
            .field("body_len", &self.body.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let pkt = WirePacket {
            secure: true,
            counter: 0x0102030405060708,
            body: vec![0xaa, 0xbb, 0xcc],
            tag: Some([0x11; 16]),
        };
        let bytes = pkt.to_bytes();
        let mut want = vec![1, 8, 7, 6, 5, 4, 3, 2, 1, 3, 0, 0xaa, 0xbb, 0xcc];
        want.extend_from_slice(&[0x11; 16]);
        assert_eq!(bytes, want);
        assert_eq!(WirePacket::from_bytes(&bytes).unwrap(), pkt);
    }

    #[test]
    fn plaintext_has_no_tag() {
        let pkt = WirePacket {
            secure: false,
            counter: 0,
            body: vec![7; 5],
            tag: None,
        };
        let bytes = pkt.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 5);
        assert_eq!(WirePacket::from_bytes(&bytes).unwrap(), pkt);
    }

    #[test]
    fn rejects_bad_lengths_and_flags() {
        assert!(WirePacket::from_bytes(&[1, 0, 0]).is_err());
        assert!(WirePacket::from_bytes(&[2; HEADER_LEN]).is_err());
        let mut b = WirePacket {
            secure: false,
            counter: 0,
            body: vec![1, 2],
            tag: None,
        }
        .to_bytes();
        b.push(0);
        assert_eq!(
            WirePacket::from_bytes(&b),
            Err(DecodeError::TrailingBytes(1))
        );
        b.truncate(b.len() - 2);
        assert_eq!(
            WirePacket::from_bytes(&b),
            Err(DecodeError::Truncated("link body"))
        );
    }
}
