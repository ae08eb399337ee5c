//! Commitments, sender-ID encryption, tag signatures and the tag wire codec.
//!
//! Primitives: SHA-256 for commitments and receiver digests,
//! XChaCha20-Poly1305 for the sender ID, Ed25519 for tag signatures.
//!
//! Wire layout (big-endian):
//!
//! ```text
//! "SND1" | 0x01 | com[32] | tau u64 | y u8 | ct_len u16 | ct | sig_len u16 | sigma
//! ```

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TAG_MAGIC: &[u8; 4] = b"SND1";
pub const TAG_VERSION: u8 = 0x01;
pub const MAX_TAG_LEN: usize = 512;
pub const SENDER_ID_LEN: usize = 16;
const NONCE_LEN: usize = 24;
const AEAD_OVERHEAD: usize = 16;
/// Length of `ct` for a 16-byte sender ID: nonce, encrypted ID, Poly1305 tag.
pub const CT_LEN: usize = NONCE_LEN + SENDER_ID_LEN + AEAD_OVERHEAD;
pub const SIG_LEN: usize = 64;

const COMMIT_DOMAIN: &[u8] = b"sandi-commit-v1";
const RECEIVER_DOMAIN: &[u8] = b"sandi-rcpt-v1";
const TAG_DOMAIN: &[u8] = b"sandi-tag-v1";
const ID_AAD: &[u8] = b"sandi-id-v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("truncated at field {0}")]
    Truncated(&'static str),
    #[error("field {field} too long ({len} bytes)")]
    OverLength { field: &'static str, len: usize },
    #[error("{0} trailing bytes after sigma")]
    Trailing(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("sender ID decryption failed")]
pub struct DecryptError;

pub type Digest32 = [u8; 32];
pub type SenderId = [u8; SENDER_ID_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReceiverDigest(pub Digest32);

impl ReceiverDigest {
    /// Digest of the trimmed, lowercased address.
    pub fn of(addr: &str) -> Self {
        let normalized = normalize_address(addr);
        let mut h = Sha256::new();
        h.update(RECEIVER_DOMAIN);
        h.update(normalized.as_bytes());
        ReceiverDigest(h.finalize().into())
    }
}

pub fn normalize_address(addr: &str) -> String {
    addr.trim().to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commitment {
    pub com: Digest32,
    pub op: Digest32,
}

fn commitment_digest(m: &[u8], h_r: &ReceiverDigest, op: &Digest32) -> Digest32 {
    let mut h = Sha256::new();
    h.update(COMMIT_DOMAIN);
    h.update(h_r.0);
    h.update((m.len() as u64).to_be_bytes());
    h.update(m);
    h.update(op);
    h.finalize().into()
}

pub fn commit<R: RngCore + CryptoRng>(m: &[u8], receiver_addr: &str, rng: &mut R) -> Commitment {
    let mut op = [0u8; 32];
    rng.fill_bytes(&mut op);
    let com = commitment_digest(m, &ReceiverDigest::of(receiver_addr), &op);
    Commitment { com, op }
}

pub fn verify_commitment(com: &Digest32, op: &Digest32, m: &[u8], receiver_addr: &str) -> bool {
    let expected = commitment_digest(m, &ReceiverDigest::of(receiver_addr), op);
    // Constant-time compare over the digest bytes.
    expected.iter().zip(com.iter()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

/// Symmetric key `K` used to hide sender IDs inside tags.
#[derive(Clone)]
pub struct IdKey([u8; 32]);

impl IdKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        IdKey(k)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        IdKey(bytes)
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0
    }
}

impl std::fmt::Debug for IdKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("IdKey(..)")
    }
}

pub fn encrypt_sender_id<R: RngCore + CryptoRng>(key: &IdKey, id: &SenderId, rng: &mut R) -> Vec<u8> {
    let cipher = XChaCha20Poly1305::new((&key.0).into());
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let sealed = cipher
        .encrypt(XNonce::from_slice(&nonce), Payload { msg: id, aad: ID_AAD })
        .expect("encrypting 16 bytes cannot exceed the AEAD limit");
    let mut ct = Vec::with_capacity(CT_LEN);
    ct.extend_from_slice(&nonce);
    ct.extend_from_slice(&sealed);
    ct
}

pub fn decrypt_sender_id(key: &IdKey, ct: &[u8]) -> Result<SenderId, DecryptError> {
    if ct.len() != CT_LEN {
        return Err(DecryptError);
    }
    let (nonce, sealed) = ct.split_at(NONCE_LEN);
    let cipher = XChaCha20Poly1305::new((&key.0).into());
    let plain = cipher
        .decrypt(XNonce::from_slice(nonce), Payload { msg: sealed, aad: ID_AAD })
        .map_err(|_| DecryptError)?;
    plain.try_into().map_err(|_| DecryptError)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementTag {
    pub com: Digest32,
    pub tau: u64,
    pub y: u8,
    pub ct: Vec<u8>,
    pub sigma: Vec<u8>,
}

fn signing_payload(com: &Digest32, tau: u64, y: u8, ct: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(TAG_DOMAIN.len() + 32 + 8 + 1 + 2 + ct.len());
    out.extend_from_slice(TAG_DOMAIN);
    out.extend_from_slice(com);
    out.extend_from_slice(&tau.to_be_bytes());
    out.push(y);
    out.extend_from_slice(&(ct.len() as u16).to_be_bytes());
    out.extend_from_slice(ct);
    out
}

pub fn sign_tag(sk: &SigningKey, com: &Digest32, tau: u64, y: u8, ct: &[u8]) -> Vec<u8> {
    sk.sign(&signing_payload(com, tau, y, ct)).to_bytes().to_vec()
}

pub fn verify_tag_signature(vk: &VerifyingKey, tag: &EndorsementTag) -> bool {
    let Ok(sig) = Signature::from_slice(&tag.sigma) else {
        return false;
    };
    if tag.ct.len() > u16::MAX as usize {
        return false;
    }
    vk.verify(&signing_payload(&tag.com, tag.tau, tag.y, &tag.ct), &sig).is_ok()
}

pub fn encode_tag(tag: &EndorsementTag) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 1 + 32 + 8 + 1 + 2 + tag.ct.len() + 2 + tag.sigma.len());
    out.extend_from_slice(TAG_MAGIC);
    out.push(TAG_VERSION);
    out.extend_from_slice(&tag.com);
    out.extend_from_slice(&tag.tau.to_be_bytes());
    out.push(tag.y);
    out.extend_from_slice(&(tag.ct.len() as u16).to_be_bytes());
    out.extend_from_slice(&tag.ct);
    out.extend_from_slice(&(tag.sigma.len() as u16).to_be_bytes());
    out.extend_from_slice(&tag.sigma);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated(field));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u16(&mut self, field: &'static str) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2, field)?.try_into().unwrap()))
    }
}

pub fn decode_tag(bytes: &[u8]) -> Result<EndorsementTag, DecodeError> {
    if bytes.len() > MAX_TAG_LEN {
        return Err(DecodeError::OverLength { field: "tag", len: bytes.len() });
    }
    let mut r = Reader { buf: bytes };
    if r.take(4, "magic")? != TAG_MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.take(1, "version")?[0];
    if version != TAG_VERSION {
        return Err(DecodeError::BadVersion(version));
    }
    let com: Digest32 = r.take(32, "com")?.try_into().unwrap();
    let tau = u64::from_be_bytes(r.take(8, "tau")?.try_into().unwrap());
    let y = r.take(1, "y")?[0];
    let ct_len = r.u16("ct_len")? as usize;
    let ct = r.take(ct_len, "ct")?.to_vec();
    let sig_len = r.u16("sig_len")? as usize;
    if sig_len > SIG_LEN {
        return Err(DecodeError::OverLength { field: "sigma", len: sig_len });
    }
    let sigma = r.take(sig_len, "sigma")?.to_vec();
    if !r.buf.is_empty() {
        return Err(DecodeError::Trailing(r.buf.len()));
    }
    Ok(EndorsementTag { com, tau, y, ct, sigma })
}

/// `(tag, m, op)` as delivered to a receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsedMessage {
    pub tag: EndorsementTag,
    pub message: Vec<u8>,
    pub op: Digest32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FileFormatError {
    #[error("missing or malformed `{0}` line")]
    Header(&'static str),
    #[error("missing blank separator line")]
    Separator,
    #[error("bad base64 in `{0}` line")]
    Base64(&'static str),
    #[error("opening must be 32 bytes")]
    OpeningLength,
    #[error("tag: {0}")]
    Tag(#[from] DecodeError),
}

impl EndorsedMessage {
    /// `tag: <b64>\nop: <b64>\n\n<raw message bytes>`
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"tag: ");
        out.extend_from_slice(B64.encode(encode_tag(&self.tag)).as_bytes());
        out.extend_from_slice(b"\nop: ");
        out.extend_from_slice(B64.encode(self.op).as_bytes());
        out.extend_from_slice(b"\n\n");
        out.extend_from_slice(&self.message);
        out
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, FileFormatError> {
        fn line<'a>(buf: &mut &'a [u8], field: &'static str) -> Result<&'a [u8], FileFormatError> {
            let end = buf.iter().position(|&c| c == b'\n').ok_or(FileFormatError::Header(field))?;
            let l = &buf[..end];
            *buf = &buf[end + 1..];
            Ok(l)
        }
        fn field<'a>(l: &'a [u8], prefix: &'static str) -> Result<Vec<u8>, FileFormatError> {
            let body = l.strip_prefix(prefix.as_bytes()).ok_or(FileFormatError::Header(prefix.trim_end_matches(": ")))?;
            let body = body.strip_suffix(b"\r").unwrap_or(body);
            B64.decode(body).map_err(|_| FileFormatError::Base64(prefix.trim_end_matches(": ")))
        }
        let mut rest = bytes;
        let tag_bytes = field(line(&mut rest, "tag")?, "tag: ")?;
        let op_bytes = field(line(&mut rest, "op")?, "op: ")?;
        let blank = line(&mut rest, "separator").map_err(|_| FileFormatError::Separator)?;
        if !(blank.is_empty() || blank == b"\r") {
            return Err(FileFormatError::Separator);
        }
        let op: Digest32 = op_bytes.try_into().map_err(|_| FileFormatError::OpeningLength)?;
        Ok(EndorsedMessage { tag: decode_tag(&tag_bytes)?, message: rest.to_vec(), op })
    }
}
