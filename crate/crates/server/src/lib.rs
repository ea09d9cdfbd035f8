//! Game server for the letter-board gaze collection system.
//!
//! [`host`] runs one session independent of any transport; [`app`] exposes
//! the hosts over WebSocket with one task per session.

pub mod app;
pub mod host;
pub mod protocol;
pub mod trace;
