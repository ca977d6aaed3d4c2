use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, TimeZone, Utc};
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::AuthError;

type HmacSha256 = Hmac<Sha256>;

const HEADER: &str = r#"{"alg":"HS256","typ":"JWT"}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Audience {
    Portal,
    Api,
    Workspace,
}

/// A validated (or freshly issued) token together with its compact form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthToken {
    pub token_id: String,
    pub user_id: String,
    pub scopes: Vec<String>,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub audience: Audience,
    /// `header.payload.signature`, each base64url without padding.
    pub token: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Claims {
    jti: String,
    sub: String,
    scopes: Vec<String>,
    iat: i64,
    exp: i64,
    aud: Audience,
}

#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
}

impl std::fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenSigner(..)")
    }
}

impl TokenSigner {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        Self { key: key.into() }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length")
    }

    pub fn sign(
        &self,
        token_id: String,
        user_id: String,
        scopes: Vec<String>,
        issued_at: DateTime<Utc>,
        expires_at: DateTime<Utc>,
        audience: Audience,
    ) -> AuthToken {
        let claims = Claims {
            jti: token_id.clone(),
            sub: user_id.clone(),
            scopes: scopes.clone(),
            iat: issued_at.timestamp(),
            exp: expires_at.timestamp(),
            aud: audience,
        };
        let payload = serde_json::to_vec(&claims).expect("claims serialize");
        let signing_input = format!(
            "{}.{}",
            URL_SAFE_NO_PAD.encode(HEADER),
            URL_SAFE_NO_PAD.encode(payload)
        );
        let mut mac = self.mac();
        mac.update(signing_input.as_bytes());
        let signature = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        AuthToken {
            token_id,
            user_id,
            scopes,
            issued_at: Utc.timestamp_opt(claims.iat, 0).unwrap(),
            expires_at: Utc.timestamp_opt(claims.exp, 0).unwrap(),
            audience,
            token: format!("{signing_input}.{signature}"),
        }
    }

    /// Checks structure and signature only; expiry is the caller's job.
    pub fn verify(&self, compact: &str) -> Result<AuthToken, AuthError> {
        let invalid = |why: &str| AuthError::TokenInvalid(why.to_string());
        let mut parts = compact.split('.');
        let (Some(header), Some(payload), Some(signature), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(invalid("expected three sections"));
        };
        let signature = URL_SAFE_NO_PAD
            .decode(signature)
            .map_err(|_| invalid("signature is not base64url"))?;
        let mut mac = self.mac();
        mac.update(header.as_bytes());
        mac.update(b".");
        mac.update(payload.as_bytes());
        mac.verify_slice(&signature)
            .map_err(|_| invalid("bad signature"))?;

        // Only the canonical encoding of a payload is accepted.
        let header_bytes = URL_SAFE_NO_PAD
            .decode(header)
            .map_err(|_| invalid("header is not base64url"))?;
        if header_bytes != HEADER.as_bytes() {
            return Err(invalid("unsupported header"));
        }
        let payload_bytes = URL_SAFE_NO_PAD
            .decode(payload)
            .map_err(|_| invalid("payload is not base64url"))?;
        if URL_SAFE_NO_PAD.encode(&payload_bytes) != payload {
            return Err(invalid("non-canonical payload encoding"));
        }
        let claims: Claims =
            serde_json::from_slice(&payload_bytes).map_err(|_| invalid("payload is not claims"))?;
        let ts = |secs| {
            Utc.timestamp_opt(secs, 0)
                .single()
                .ok_or_else(|| invalid("timestamp out of range"))
        };
        Ok(AuthToken {
            token_id: claims.jti,
            user_id: claims.sub,
            scopes: claims.scopes,
            issued_at: ts(claims.iat)?,
            expires_at: ts(claims.exp)?,
            audience: claims.aud,
            token: compact.to_string(),
        })
    }
}
