//! Concrete problem models: the algebraic pitchfork oracle and the channel
//! Navier-Stokes model.

mod channel;
mod pitchfork;

pub use channel::{reynolds, ChannelConfig, ChannelModel};
pub use pitchfork::PitchforkModel;
