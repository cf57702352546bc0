//! A self-contained laboratory for cooperative multi-intersection traffic
//! signal control: a queue-based traffic microsimulator plus a
//! spatio-temporal multi-agent Q-learning controller (STMARL), its
//! ablations, and classical baselines.

pub mod agent;
pub mod cli;
pub mod controllers;
pub mod features;
pub mod network;
pub mod simulator;
pub mod training;
pub mod numerics;
