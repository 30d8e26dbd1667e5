//! Runtime for the virtual-patient trainer: model gateways, configuration,
//! session persistence, the HTTP API and batch analysis.

pub mod cases_io;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod manager;
pub mod report;
pub mod service;
pub mod store;
