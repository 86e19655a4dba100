//! Token-based central bank digital currency: blind-signed coins issued by a
//! central-bank mint through commercial banks, spent at merchants with online
//! double-spend detection, and changed through a cut-and-choose refresh.

pub mod amount;
pub mod api;
pub mod clock;
pub mod crypto;
pub mod deploy;
pub mod gateway;
pub mod merchant;
pub mod mint;
pub mod observe;
pub mod rpc;
pub mod store;
pub mod wallet;
pub mod wire;

pub use amount::Amount;
pub use clock::{Clock, ManualClock, SystemClock, Timestamp};
