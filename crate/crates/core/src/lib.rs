//! Core of the letter-board gaze collection system.
//!
//! Two players sit on either side of a transparent letter board. The
//! questioner conveys hidden letters of a word by looking at them while a
//! camera behind the board captures their face; the answerer guesses the
//! word. Every approved capture is a face image with a known 3D gaze target,
//! i.e. a labeled sample for appearance-based gaze estimation.
//!
//! The crate is organised by subsystem:
//!
//! - [`board_geometry`]: letter board layout, camera model, homography and
//!   planar pose recovery, gaze labels and angular errors.
//! - [`normalization`]: the canonical rotation/scaling applied to every face
//!   image and gaze label.
//! - [`dictionary`]: quiz vocabulary loading and question selection.
//! - [`engine`]: the authoritative, replayable session state machine.
//! - [`capture`]: driver interfaces, synthetic drivers and sample assembly.
//! - [`store`]: append-only session storage, dataset export and fold splits.
//! - [`eval`]: eye-tracker based label accuracy evaluation and statistics.
//! - [`runtime`]: glue that executes engine effects against drivers and storage.
//! - [`sim`]: synthetic participants and eye trackers for hardware-free runs.
//! - [`config`]: the installation configuration file.

pub mod board_geometry;
pub mod capture;
pub mod config;
pub mod dictionary;
pub mod engine;
pub mod eval;
pub mod ids;
pub mod jsonl;
pub mod noise;
pub mod normalization;
pub mod runtime;
pub mod seed;
pub mod sim;
pub mod store;

pub use nalgebra;

/// 3-vector in millimeters or a unit direction, depending on context.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 2D point in pixels or millimeters, depending on context.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3×3 matrix (rotations, homographies, intrinsics).
pub type Mat3 = nalgebra::Matrix3<f64>;
