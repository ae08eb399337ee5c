//! Accountability for direct messages: senders attach server-signed
//! endorsement tags, receivers report abusive messages, and the server folds
//! report counts into sender scores once per epoch.
//!
//! * [`scorekit`]: the epoch score function, reputation labels and DP noise.
//! * [`tagcrypt`]: commitments, sender-ID encryption, tag signatures and codec.
//! * [`asd`]: the accountability server and its HTTP API.
//! * [`clientkit`]: sender and receiver flows over that API.
//! * [`stratsim`]: optimal sender strategies, oracles and Monte Carlo.

pub mod asd;
pub mod cli;
pub mod clientkit;
pub mod scorekit;
pub mod stratsim;
pub mod tagcrypt;
