//! Sender and receiver flows against the accountability server API.
//!
//! Receivers never need an account: verification works from the published
//! verification key alone and reporting posts nothing but the tag.

use std::path::Path;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::VerifyingKey;
use rand::rngs::OsRng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ureq::Agent;

use crate::asd::http::{RegisterRequest, RegisterResponse, ReportRejection, ReportRequest, TagRequest, TagResponse, VkResponse};
use crate::asd::{EpochSummary, RejectReason, ReportOutcome, ScoreView};
use crate::tagcrypt::{commit, decode_tag, encode_tag, verify_commitment, verify_tag_signature, EndorsedMessage, EndorsementTag};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication rejected by server")]
    Auth,
    #[error("server returned {status}: {body}")]
    Server { status: u16, body: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("server verification key changed since it was pinned")]
    KeyChanged,
    #[error("credential file: {0}")]
    CredentialFile(String),
}

impl From<ureq::Error> for ClientError {
    fn from(e: ureq::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

/// Thin blocking client for the JSON API.
#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    agent: Agent,
}

impl ApiClient {
    pub fn new(server_url: &str) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        ApiClient { base: server_url.trim_end_matches('/').to_string(), agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn decode<T: DeserializeOwned>(resp: ureq::http::Response<ureq::Body>) -> Result<T, ClientError> {
        let status = resp.status().as_u16();
        let mut body = resp.into_body();
        match status {
            200 => body.read_json::<T>().map_err(|e| ClientError::Protocol(format!("bad response body: {e}"))),
            401 => Err(ClientError::Auth),
            _ => Err(ClientError::Server { status, body: body.read_to_string().unwrap_or_default() }),
        }
    }

    pub fn register(&self, token: &str) -> Result<String, ClientError> {
        let resp = self.agent.post(self.url("/v1/register")).send_json(RegisterRequest { token: token.into() })?;
        Ok(Self::decode::<RegisterResponse>(resp)?.credential)
    }

    pub fn issue(&self, credential: &str, com: &[u8; 32]) -> Result<Vec<u8>, ClientError> {
        let req = TagRequest { credential: credential.into(), com: B64.encode(com) };
        let resp = self.agent.post(self.url("/v1/tag")).send_json(req)?;
        let tag = Self::decode::<TagResponse>(resp)?.tag;
        B64.decode(tag).map_err(|_| ClientError::Protocol("tag is not base64".into()))
    }

    pub fn report_bytes(&self, tag_bytes: &[u8]) -> Result<ReportOutcome, ClientError> {
        let resp = self.agent.post(self.url("/v1/report")).send_json(ReportRequest { tag: B64.encode(tag_bytes) })?;
        match resp.status().as_u16() {
            204 => Ok(ReportOutcome::Accepted),
            400 => {
                let rej: ReportRejection = resp
                    .into_body()
                    .read_json()
                    .map_err(|e| ClientError::Protocol(format!("bad rejection body: {e}")))?;
                parse_reason(&rej.reason)
                    .map(ReportOutcome::Rejected)
                    .ok_or_else(|| ClientError::Protocol(format!("unknown rejection reason {:?}", rej.reason)))
            }
            status => Err(ClientError::Server { status, body: resp.into_body().read_to_string().unwrap_or_default() }),
        }
    }

    pub fn advance_epoch(&self, admin_token: &str) -> Result<EpochSummary, ClientError> {
        let resp = self
            .agent
            .post(self.url("/v1/epoch/advance"))
            .header("Authorization", format!("Bearer {admin_token}"))
            .send_empty()?;
        Self::decode(resp)
    }

    pub fn score(&self, credential: &str) -> Result<ScoreView, ClientError> {
        let resp = self.agent.get(self.url("/v1/score")).header("Authorization", format!("Bearer {credential}")).call()?;
        Self::decode(resp)
    }

    pub fn verifying_key(&self) -> Result<(VerifyingKey, Vec<String>), ClientError> {
        let resp: VkResponse = Self::decode(self.agent.get(self.url("/v1/vk")).call()?)?;
        let bytes: [u8; 32] = B64
            .decode(&resp.vk)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| ClientError::Protocol("malformed verification key".into()))?;
        let vk = VerifyingKey::from_bytes(&bytes).map_err(|_| ClientError::Protocol("invalid verification key".into()))?;
        Ok((vk, resp.labels))
    }
}

fn parse_reason(s: &str) -> Option<RejectReason> {
    Some(match s {
        "decode" => RejectReason::Decode,
        "signature" => RejectReason::Signature,
        "decrypt" => RejectReason::Decrypt,
        "expired" => RejectReason::Expired,
        "replay" => RejectReason::Replay,
        _ => return None,
    })
}

#[derive(Serialize, Deserialize)]
struct CredentialFile {
    server_url: String,
    credential: String,
    #[serde(default)]
    vk: Option<String>,
}

/// An authenticated sender with a pinned server key.
pub struct SenderSession {
    client: ApiClient,
    credential: String,
    vk: Option<VerifyingKey>,
    vk_confirmed: bool,
}

impl std::fmt::Debug for SenderSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SenderSession").field("server", &self.client.base).finish_non_exhaustive()
    }
}

impl SenderSession {
    pub fn new(server_url: &str, credential: impl Into<String>) -> Self {
        SenderSession { client: ApiClient::new(server_url), credential: credential.into(), vk: None, vk_confirmed: false }
    }

    /// Registers a fresh account and pins the server key.
    pub fn register(server_url: &str, registration_token: &str) -> Result<Self, ClientError> {
        let client = ApiClient::new(server_url);
        let credential = client.register(registration_token)?;
        let (vk, _) = client.verifying_key()?;
        Ok(SenderSession { client, credential, vk: Some(vk), vk_confirmed: true })
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let bytes = std::fs::read(path).map_err(|e| ClientError::CredentialFile(e.to_string()))?;
        let f: CredentialFile = serde_json::from_slice(&bytes).map_err(|e| ClientError::CredentialFile(e.to_string()))?;
        let vk = f
            .vk
            .map(|s| {
                B64.decode(s)
                    .ok()
                    .and_then(|b| <[u8; 32]>::try_from(b).ok())
                    .and_then(|b| VerifyingKey::from_bytes(&b).ok())
                    .ok_or_else(|| ClientError::CredentialFile("bad pinned vk".into()))
            })
            .transpose()?;
        Ok(SenderSession { client: ApiClient::new(&f.server_url), credential: f.credential, vk, vk_confirmed: false })
    }

    /// Writes the credential file with owner-only permissions where supported.
    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        let f = CredentialFile {
            server_url: self.client.base.clone(),
            credential: self.credential.clone(),
            vk: self.vk.map(|vk| B64.encode(vk.as_bytes())),
        };
        let bytes = serde_json::to_vec_pretty(&f).map_err(|e| ClientError::CredentialFile(e.to_string()))?;
        let mut opts = std::fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        use std::io::Write;
        opts.open(path)
            .and_then(|mut fh| fh.write_all(&bytes))
            .map_err(|e| ClientError::CredentialFile(e.to_string()))
    }

    pub fn client(&self) -> &ApiClient {
        &self.client
    }

    pub fn credential(&self) -> &str {
        &self.credential
    }

    /// Pinned verification key. Pins on first contact; afterwards the
    /// server's published key must match or the session fails closed.
    pub fn verifying_key(&mut self) -> Result<VerifyingKey, ClientError> {
        if let (Some(vk), true) = (self.vk, self.vk_confirmed) {
            return Ok(vk);
        }
        let (published, _) = self.client.verifying_key()?;
        match self.vk {
            Some(pinned) if pinned != published => Err(ClientError::KeyChanged),
            _ => {
                self.vk = Some(published);
                self.vk_confirmed = true;
                Ok(published)
            }
        }
    }

    pub fn score(&self) -> Result<ScoreView, ClientError> {
        self.client.score(&self.credential)
    }

    /// Commits to `(m, receiver)`, obtains a tag for the commitment and checks
    /// it before handing back the endorsed message.
    pub fn prepare_endorsed_message(&mut self, m: &[u8], receiver_addr: &str) -> Result<EndorsedMessage, ClientError> {
        if receiver_addr.trim().is_empty() {
            return Err(ClientError::Protocol("receiver address is empty".into()));
        }
        let vk = self.verifying_key()?;
        let c = commit(m, receiver_addr, &mut OsRng);
        let bytes = self.client.issue(&self.credential, &c.com)?;
        let tag = decode_tag(&bytes).map_err(|e| ClientError::Protocol(format!("undecodable tag: {e}")))?;
        if tag.com != c.com {
            return Err(ClientError::Protocol("tag endorses a different commitment".into()));
        }
        if !verify_tag_signature(&vk, &tag) {
            return Err(ClientError::Protocol("tag signature does not verify".into()));
        }
        Ok(EndorsedMessage { tag, message: m.to_vec(), op: c.op })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerifiedMessage {
    /// Signed reputation label index of the sender.
    pub y: u8,
    pub tau: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InvalidMessage {
    #[error("commitment")]
    Commitment,
    #[error("signature")]
    Signature,
}

impl InvalidMessage {
    pub fn as_str(self) -> &'static str {
        match self {
            InvalidMessage::Commitment => "commitment",
            InvalidMessage::Signature => "signature",
        }
    }
}

/// Receiver-side check: the commitment opens over `(m, my_addr)` and the tag
/// signature verifies.
pub fn verify_endorsed_message(vk: &VerifyingKey, em: &EndorsedMessage, my_addr: &str) -> Result<VerifiedMessage, InvalidMessage> {
    if !verify_commitment(&em.tag.com, &em.op, &em.message, my_addr) {
        return Err(InvalidMessage::Commitment);
    }
    if !verify_tag_signature(vk, &em.tag) {
        return Err(InvalidMessage::Signature);
    }
    Ok(VerifiedMessage { y: em.tag.y, tau: em.tag.tau })
}

/// JSON body of a report: the encoded tag and nothing else.
pub fn report_payload(tag: &EndorsementTag) -> String {
    serde_json::to_string(&ReportRequest { tag: B64.encode(encode_tag(tag)) }).expect("plain struct serializes")
}

pub fn report(server_url: &str, tag: &EndorsementTag) -> Result<ReportOutcome, ClientError> {
    ApiClient::new(server_url).report_bytes(&encode_tag(tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ed25519_dalek::SigningKey;

    use crate::tagcrypt::{encrypt_sender_id, sign_tag, IdKey};

    fn endorsed(sk: &SigningKey) -> EndorsedMessage {
        let c = commit(b"lunch tomorrow?", "carol@example.org", &mut OsRng);
        let ct = encrypt_sender_id(&IdKey::generate(&mut OsRng), &[1; 16], &mut OsRng);
        let sigma = sign_tag(sk, &c.com, 77, 2, &ct);
        EndorsedMessage { tag: EndorsementTag { com: c.com, tau: 77, y: 2, ct, sigma }, message: b"lunch tomorrow?".to_vec(), op: c.op }
    }

    #[test]
    fn receiver_verification() {
        let sk = SigningKey::generate(&mut OsRng);
        let vk = sk.verifying_key();
        let em = endorsed(&sk);
        assert_eq!(verify_endorsed_message(&vk, &em, "Carol@example.org"), Ok(VerifiedMessage { y: 2, tau: 77 }));
        assert_eq!(verify_endorsed_message(&vk, &em, "dave@example.org"), Err(InvalidMessage::Commitment));
        let mut flipped = em.clone();
        flipped.message[0] ^= 1;
        assert_eq!(verify_endorsed_message(&vk, &flipped, "carol@example.org"), Err(InvalidMessage::Commitment));
        let mut forged = em.clone();
        forged.tag.y = 3;
        assert_eq!(verify_endorsed_message(&vk, &forged, "carol@example.org"), Err(InvalidMessage::Signature));
    }

    #[test]
    fn report_payload_is_tag_only() {
        let sk = SigningKey::generate(&mut OsRng);
        let em = endorsed(&sk);
        let body = report_payload(&em.tag);
        let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(parsed.as_object().unwrap().len(), 1);
        assert!(!body.contains("lunch"));
        assert!(!body.contains("carol"));
        assert!(!body.contains(&B64.encode(em.op)));
    }
}
