//! Driven two-level system coupled to a bosonic bath, propagated with the
//! second-order time-nonlocal master equation recast as time-local equations
//! for the reduced state and one auxiliary memory matrix per exponential term
//! of the bath kernel.

pub mod bath;
pub mod operators;
pub mod dynamics;
pub mod integrator;
pub mod bounds;
pub mod observables;
pub mod io;
pub mod scenarios;
