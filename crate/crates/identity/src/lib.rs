//! Two-plane identity management.
//!
//! Off-chain access runs on signed bearer tokens: five claims (uuid id,
//! subject, role, issued-at, expiry), canonically encoded and signed by the
//! gateway issuer key. On-chain access runs on an address-to-role registry
//! consulted by per-method ACLs at contract dispatch. Tokens deliberately
//! carry nothing beyond the five claims; subjects are opaque strings.

pub mod registry;
pub mod token;

pub use registry::{
    authorize, bind_address_role, AclTable, AuthzError, BindError, MethodAcl, RoleRegistry,
    RoleVocabulary,
};
pub use token::{issue_token, verify_token, Token, TokenClaims, TokenError};
