//! Discrete-event simulator of a TWDM-PON mobile fronthaul with east-west
//! splitter links and dynamic vPON slicing.

pub mod config;
pub mod controller;
pub mod dba;
pub mod metrics;
pub mod runner;
pub mod sim;
pub mod topology;
pub mod traffic;
pub mod wavelength;
