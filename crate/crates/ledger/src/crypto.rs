//! Digests, addresses, and Ed25519 signing.
//!
//! Addresses are the first 20 bytes of SHA-256 over the Ed25519 public key.
//! An address cannot be inverted back to a key, so a [`Signature`] travels as
//! the 32-byte public key followed by the 64-byte Ed25519 signature;
//! verification first checks that the key hashes to the claimed address.

use ed25519_dalek::{Signer, SigningKey, Verifier};
pub use ed25519_dalek::VerifyingKey;
use sha2::{Digest as _, Sha256};

use crate::encoding::{canonical_encode, EncodeError, Value, ValueError};

pub const DIGEST_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;
pub const SIGNATURE_LEN: usize = 96;

/// A 32-byte SHA-256 digest over a canonical encoding.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn of(bytes: &[u8]) -> Digest {
        let mut h = Sha256::new();
        h.update(bytes);
        Digest(h.finalize().into())
    }

    /// Digest of the canonical encoding of a value.
    pub fn of_value(value: &Value) -> Result<Digest, EncodeError> {
        Ok(Digest::of(&canonical_encode(value)?))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Digest, ValueError> {
        Ok(Digest(crate::encoding::hex_array(s, "digest")?))
    }

    pub fn value(&self) -> Value {
        Value::Bytes(self.0.to_vec())
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A 20-byte account identifier derived from a public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Address {
    pub const ZERO: Address = Address([0u8; ADDRESS_LEN]);

    /// Derives the address: first 20 bytes of SHA-256(public key).
    pub fn of_public(public: &VerifyingKey) -> Address {
        let digest = Digest::of(public.as_bytes());
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&digest.0[..ADDRESS_LEN]);
        Address(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Address, ValueError> {
        Ok(Address(crate::encoding::hex_array(s, "address")?))
    }

    pub fn value(&self) -> Value {
        Value::Bytes(self.0.to_vec())
    }
}

impl std::fmt::Debug for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Address({})", self.to_hex())
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Public key plus Ed25519 signature, 96 bytes on the wire.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub public: [u8; 32],
    pub sig: [u8; 64],
}

impl Signature {
    /// Checks that the embedded key hashes to `signer` and that the
    /// signature verifies over `msg` under that key.
    pub fn verify(&self, signer: &Address, msg: &[u8]) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.public) else {
            return false;
        };
        if Address::of_public(&vk) != *signer {
            return false;
        }
        vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&self.sig))
            .is_ok()
    }

    /// Verification against a known public key, for issuers whose key is
    /// distributed out of band (token verification).
    pub fn verify_with_key(&self, public: &VerifyingKey, msg: &[u8]) -> bool {
        if &self.public != public.as_bytes() {
            return false;
        }
        public
            .verify(msg, &ed25519_dalek::Signature::from_bytes(&self.sig))
            .is_ok()
    }

    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        let mut out = [0u8; SIGNATURE_LEN];
        out[..32].copy_from_slice(&self.public);
        out[32..].copy_from_slice(&self.sig);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Signature, ValueError> {
        if bytes.len() != SIGNATURE_LEN {
            return Err(ValueError::BadLength { field: "signature", expected: SIGNATURE_LEN });
        }
        let mut public = [0u8; 32];
        let mut sig = [0u8; 64];
        public.copy_from_slice(&bytes[..32]);
        sig.copy_from_slice(&bytes[32..]);
        Ok(Signature { public, sig })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Signature, ValueError> {
        let bytes = hex::decode(s).map_err(|_| ValueError::BadHex("signature"))?;
        Signature::from_bytes(&bytes)
    }

    pub fn value(&self) -> Value {
        Value::Bytes(self.to_bytes().to_vec())
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

/// An Ed25519 keypair with its derived address.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    pub public: VerifyingKey,
    pub address: Address,
}

impl KeyPair {
    pub fn from_secret(secret: [u8; 32]) -> KeyPair {
        let signing = SigningKey::from_bytes(&secret);
        let public = signing.verifying_key();
        let address = Address::of_public(&public);
        KeyPair { signing, public, address }
    }

    /// Deterministic test/simulation key derivation from a run seed and an
    /// actor label. Not a production KDF.
    pub fn derive(seed: u64, label: &str) -> KeyPair {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(b"/");
        h.update(label.as_bytes());
        KeyPair::from_secret(h.finalize().into())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        let sig = self.signing.sign(msg);
        Signature {
            public: self.public.to_bytes(),
            sig: sig.to_bytes(),
        }
    }

    pub fn sign_digest(&self, digest: &Digest) -> Signature {
        self.sign(&digest.0)
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyPair({})", self.address)
    }
}
