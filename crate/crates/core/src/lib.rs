//! Many-to-many NOMA between the cluster heads of vehicular platoons.
//!
//! - [`topology`]: road, lane clusters and CH geometry
//! - [`channel`]: seeded fading, knife-edge and path-loss realizations
//! - [`schemes`]: SINR and sum rate for OMA, DM-, UM- and UDM-NOMA
//! - [`allocation`]: CH selection and power allocation (FPA, EPA, greedy, exhaustive)
//! - [`scfp`]: event-driven super-cluster formation protocol
//! - [`harness`]: built-in scenarios, Monte Carlo runner and CSV output

pub mod allocation;
pub mod channel;
pub mod harness;
pub mod scfp;
pub mod schemes;
pub mod topology;
