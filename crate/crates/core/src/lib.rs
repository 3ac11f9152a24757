//! Forced oscillations bifurcating from an attracting limit cycle.
//!
//! The pipeline: locate the cycle of the unperturbed field and its Floquet
//! multipliers ([`cycle`]), build the normalized periodic adjoint, evaluate
//! the bifurcation function `M(θ)` and classify its zeros ([`malkin`]),
//! then check the predictions against fixed points of the stroboscopic map
//! at small `eps` ([`forced`]).

pub mod cycle;
pub mod forced;
pub mod linalg;
pub mod malkin;
pub mod odeint;
pub mod sysdef;
