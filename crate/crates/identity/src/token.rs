//! OAuth2-style bearer tokens.
//!
//! Wire format: `base64url(canonical claims) "." base64url(signature)`, no
//! padding. That is the whole token; there is no JOSE header machinery.
//! Validity is the half-open interval `[iat, exp)`.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::RngCore;
use thiserror::Error;

use trellis_ledger::encoding::{self, canonical_encode, Value, ValueError};
use trellis_ledger::crypto::VerifyingKey;
use trellis_ledger::{KeyPair, Signature};

use crate::registry::RoleVocabulary;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("unknown role \"{0}\"")]
    UnknownRole(String),
    #[error("ttl must be positive")]
    BadTtl,
    #[error("token signature invalid")]
    BadSignature,
    #[error("token expired")]
    Expired,
    #[error("token not yet valid")]
    NotYetValid,
    #[error("malformed token: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenClaims {
    /// UUID in 8-4-4-4-12 hex format.
    pub id: String,
    pub sub: String,
    pub role: String,
    pub iat: u64,
    pub exp: u64,
}

impl TokenClaims {
    pub fn to_value(&self) -> Value {
        Value::map([
            ("exp", self.exp.into()),
            ("iat", self.iat.into()),
            ("id", self.id.as_str().into()),
            ("role", self.role.as_str().into()),
            ("sub", self.sub.as_str().into()),
        ])
    }

    pub fn from_value(value: &Value) -> Result<TokenClaims, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "claims",
            expected: "map",
        })?;
        Ok(TokenClaims {
            id: encoding::field_str(m, "id")?.to_owned(),
            sub: encoding::field_str(m, "sub")?.to_owned(),
            role: encoding::field_str(m, "role")?.to_owned(),
            iat: encoding::field_u64(m, "iat")?,
            exp: encoding::field_u64(m, "exp")?,
        })
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_encode(&self.to_value()).expect("claims contain no floats")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub claims: TokenClaims,
    pub sig: Signature,
}

impl Token {
    pub fn encode(&self) -> String {
        format!(
            "{}.{}",
            URL_SAFE_NO_PAD.encode(self.claims.canonical_bytes()),
            URL_SAFE_NO_PAD.encode(self.sig.to_bytes())
        )
    }

    pub fn decode(s: &str) -> Result<Token, TokenError> {
        let (claims_part, sig_part) = s
            .split_once('.')
            .ok_or_else(|| TokenError::Malformed("missing separator".into()))?;
        let claims_bytes = URL_SAFE_NO_PAD
            .decode(claims_part)
            .map_err(|e| TokenError::Malformed(e.to_string()))?;
        let sig_bytes = URL_SAFE_NO_PAD
            .decode(sig_part)
            .map_err(|e| TokenError::Malformed(e.to_string()))?;
        let claims_value = trellis_ledger::decode_value(&claims_bytes)
            .map_err(|e| TokenError::Malformed(e.to_string()))?;
        let claims = TokenClaims::from_value(&claims_value)
            .map_err(|e| TokenError::Malformed(e.to_string()))?;
        let sig =
            Signature::from_bytes(&sig_bytes).map_err(|e| TokenError::Malformed(e.to_string()))?;
        Ok(Token { claims, sig })
    }
}

/// Formats 16 random bytes as a version-4, RFC 4122 variant UUID.
fn uuid_from_rng(rng: &mut impl RngCore) -> String {
    let mut b = [0u8; 16];
    rng.fill_bytes(&mut b);
    b[6] = (b[6] & 0x0f) | 0x40;
    b[8] = (b[8] & 0x3f) | 0x80;
    let h = hex::encode(b);
    format!(
        "{}-{}-{}-{}-{}",
        &h[0..8],
        &h[8..12],
        &h[12..16],
        &h[16..20],
        &h[20..32]
    )
}

/// Issues a signed token with a fresh UUID drawn from the caller's RNG.
pub fn issue_token(
    issuer: &KeyPair,
    vocabulary: &RoleVocabulary,
    sub: &str,
    role: &str,
    now: u64,
    ttl: u64,
    rng: &mut impl RngCore,
) -> Result<Token, TokenError> {
    if !vocabulary.contains(role) {
        return Err(TokenError::UnknownRole(role.to_owned()));
    }
    if ttl == 0 {
        return Err(TokenError::BadTtl);
    }
    let claims = TokenClaims {
        id: uuid_from_rng(rng),
        sub: sub.to_owned(),
        role: role.to_owned(),
        iat: now,
        exp: now + ttl,
    };
    let sig = issuer.sign(&claims.canonical_bytes());
    Ok(Token { claims, sig })
}

/// Returns the claims iff the signature is valid under the issuer key and
/// `iat <= now < exp`.
pub fn verify_token(
    issuer_pub: &VerifyingKey,
    token: &Token,
    now: u64,
) -> Result<TokenClaims, TokenError> {
    if !token
        .sig
        .verify_with_key(issuer_pub, &token.claims.canonical_bytes())
    {
        return Err(TokenError::BadSignature);
    }
    if now < token.claims.iat {
        return Err(TokenError::NotYetValid);
    }
    if now >= token.claims.exp {
        return Err(TokenError::Expired);
    }
    Ok(token.claims.clone())
}
