//! Simulation of a platoon of multi-carriage trains under actuator faults,
//! with a distributed state-fault observer and constrained cruise control.

pub mod config;
pub mod controller;
pub mod dual;
pub mod faults;
pub mod integrator;
pub mod model;
pub mod monitor;
pub mod observer;
pub mod output;
pub mod reference;
pub mod simulator;
