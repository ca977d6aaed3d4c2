use chrono::{DateTime, TimeZone, Utc};
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use url::Url;

type HmacSha256 = Hmac<Sha256>;

/// Parameters recovered from a signed bucket URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedRequest {
    pub bucket: String,
    pub key: String,
    pub user_id: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UrlCheckError {
    #[error("malformed signed url")]
    Malformed,
    #[error("signature mismatch")]
    BadSignature,
    #[error("url expired")]
    Expired,
}

/// Presigned bucket URLs: HMAC-SHA256 over (bucket, key, user, expiry).
#[derive(Clone)]
pub struct BucketUrlSigner {
    key: Vec<u8>,
}

impl std::fmt::Debug for BucketUrlSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BucketUrlSigner(..)")
    }
}

impl BucketUrlSigner {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        Self { key: key.into() }
    }

    fn mac(&self, bucket: &str, key: &str, user_id: &str, expires: i64) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length");
        for part in [bucket, key, user_id] {
            mac.update(&(part.len() as u64).to_be_bytes());
            mac.update(part.as_bytes());
        }
        mac.update(&expires.to_be_bytes());
        mac
    }

    pub fn sign(
        &self,
        endpoint: &str,
        bucket: &str,
        key: &str,
        user_id: &str,
        expires_at: DateTime<Utc>,
    ) -> String {
        let expires = expires_at.timestamp();
        let sig = hex::encode(self.mac(bucket, key, user_id, expires).finalize().into_bytes());
        let mut url = Url::parse(endpoint.trim_end_matches('/')).expect("bucket endpoint is a url");
        url.path_segments_mut()
            .expect("bucket endpoint is a base url")
            .push(bucket)
            .extend(key.split('/'));
        url.query_pairs_mut()
            .append_pair("user", user_id)
            .append_pair("expires", &expires.to_string())
            .append_pair("sig", &sig);
        url.into()
    }

    /// Checks a URL produced by [`sign`](Self::sign) whose path ends in
    /// `{bucket}/{key...}` below `endpoint`.
    pub fn verify(&self, endpoint: &str, url: &str, now: DateTime<Utc>) -> Result<SignedRequest, UrlCheckError> {
        let base = Url::parse(endpoint.trim_end_matches('/')).map_err(|_| UrlCheckError::Malformed)?;
        let url = Url::parse(url).map_err(|_| UrlCheckError::Malformed)?;
        let base_segs: Vec<String> = segments(&base);
        let segs: Vec<String> = segments(&url);
        if segs.len() < base_segs.len() + 2 || segs[..base_segs.len()] != base_segs[..] {
            return Err(UrlCheckError::Malformed);
        }
        let bucket = segs[base_segs.len()].clone();
        let key = segs[base_segs.len() + 1..].join("/");
        let q = |name: &str| {
            url.query_pairs()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.into_owned())
                .ok_or(UrlCheckError::Malformed)
        };
        let user_id = q("user")?;
        let expires: i64 = q("expires")?.parse().map_err(|_| UrlCheckError::Malformed)?;
        let sig = hex::decode(q("sig")?).map_err(|_| UrlCheckError::Malformed)?;
        self.mac(&bucket, &key, &user_id, expires)
            .verify_slice(&sig)
            .map_err(|_| UrlCheckError::BadSignature)?;
        let expires_at = Utc.timestamp_opt(expires, 0).single().ok_or(UrlCheckError::Malformed)?;
        if now >= expires_at {
            return Err(UrlCheckError::Expired);
        }
        Ok(SignedRequest {
            bucket,
            key,
            user_id,
            expires_at,
        })
    }
}

fn segments(url: &Url) -> Vec<String> {
    url.path_segments()
        .map(|s| {
            s.filter(|p| !p.is_empty())
                .map(|p| percent_encoding::percent_decode_str(p).decode_utf8_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default()
}
