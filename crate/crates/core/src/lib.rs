//! Passive TCP/IP trace analysis: pcap ingest, prefix-preserving address
//! anonymization, traffic classification, flow reconstruction, per-flow TCP
//! performance heuristics and report generation.

pub mod anon;
pub mod checksum;
pub mod classify;
pub mod cli;
pub mod config;
pub mod flow;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod tcp;
