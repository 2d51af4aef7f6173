//! Cornering-stiffness identification toolkit.
//!
//! Estimates the front and rear tire cornering stiffness of a single-track
//! (bicycle) vehicle model from sensor trajectories, by three routes:
//!
//! * [`pidl`] — a physics-informed estimator that trains a small network
//!   against the residual of the governing state equations,
//! * [`rdl`] — a regression baseline (BiLSTM sequence network) trained on
//!   simulated trajectories over a stiffness grid,
//! * [`tirefit`] — Pacejka magic-formula curve fitting with the linear-region
//!   slope taken as the stiffness.
//!
//! The [`control`] module closes the loop: a yaw-rate regulator whose
//! reference generator depends on the understeer coefficient, which can be
//! refreshed online from the physics-informed estimator.
//!
//! [`dynamics`] owns the vehicle model, simulation, and sensor synthesis;
//! [`nn`] is the minimal network kernel shared by the two learning routes;
//! [`io`] holds the file formats (trajectory CSV, scenario/model/report JSON).

pub mod control;
pub mod dynamics;
pub mod io;
pub mod nn;
pub mod pidl;
pub mod rdl;
pub mod tirefit;
