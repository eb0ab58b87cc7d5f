//! Signed contract-call transactions.
//!
//! A transaction's id is the digest of the canonical encoding of everything
//! except the id and signature; the signature is Ed25519 over the 32 id
//! bytes. Arguments are an arbitrary canonical value, so floats are rejected
//! at build time rather than at hashing time.

use thiserror::Error;

use crate::crypto::{Address, Digest, KeyPair, Signature};
use crate::encoding::{self, EncodeError, Value, ValueError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("transaction id does not match its contents")]
    IdMismatch,
    #[error("transaction signature invalid")]
    BadSignature,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub id: Digest,
    pub sender: Address,
    pub nonce: u64,
    pub contract: String,
    pub method: String,
    pub args: Value,
    pub signature: Signature,
}

impl Transaction {
    /// Builds and signs a call. The nonce only disambiguates otherwise
    /// identical calls from the same sender so their ids differ.
    pub fn build(
        key: &KeyPair,
        nonce: u64,
        contract: &str,
        method: &str,
        args: Value,
    ) -> Result<Transaction, EncodeError> {
        let id = Transaction::compute_id(&key.address, nonce, contract, method, &args)?;
        let signature = key.sign_digest(&id);
        Ok(Transaction {
            id,
            sender: key.address,
            nonce,
            contract: contract.to_owned(),
            method: method.to_owned(),
            args,
            signature,
        })
    }

    pub fn compute_id(
        sender: &Address,
        nonce: u64,
        contract: &str,
        method: &str,
        args: &Value,
    ) -> Result<Digest, EncodeError> {
        Digest::of_value(&Value::map([
            ("args", args.clone()),
            ("contract", contract.into()),
            ("method", method.into()),
            ("nonce", nonce.into()),
            ("sender", sender.value()),
        ]))
    }

    /// Recomputes the id and checks the signature over it.
    pub fn verify(&self) -> Result<(), TxError> {
        let expected = Transaction::compute_id(
            &self.sender,
            self.nonce,
            &self.contract,
            &self.method,
            &self.args,
        )?;
        if expected != self.id {
            return Err(TxError::IdMismatch);
        }
        if !self.signature.verify(&self.sender, &self.id.0) {
            return Err(TxError::BadSignature);
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            ("args", self.args.clone()),
            ("contract", self.contract.as_str().into()),
            ("id", self.id.value()),
            ("method", self.method.as_str().into()),
            ("nonce", self.nonce.into()),
            ("sender", self.sender.value()),
            ("signature", self.signature.value()),
        ])
    }

    pub fn from_value(value: &Value) -> Result<Transaction, ValueError> {
        let m = value.as_map().ok_or(ValueError::Expected {
            field: "transaction",
            expected: "map",
        })?;
        Ok(Transaction {
            id: Digest(encoding::field_hex(m, "id")?),
            sender: Address(encoding::field_hex(m, "sender")?),
            nonce: encoding::field_u64(m, "nonce")?,
            contract: encoding::field_str(m, "contract")?.to_owned(),
            method: encoding::field_str(m, "method")?.to_owned(),
            args: encoding::field(m, "args")?.clone(),
            signature: Signature::from_bytes(&encoding::bytes_like(
                encoding::field(m, "signature")?,
                "signature",
            )?)?,
        })
    }
}
