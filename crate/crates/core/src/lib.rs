//! Topology compiler and analytical profiler for CNNs that mix dense and
//! harmonic (power-of-two) shortcut connectivity, switching between them
//! with a channel-count threshold.
//!
//! The pipeline is
//! [`NetworkSpec`](config::NetworkSpec) → [`build_graph`](topology::build_graph)
//! → [`propagate`](shapes::propagate) → [`network_cost`](cost::network_cost)
//! and [`traffic`](memplan::traffic), with [`refexec`] as an executable
//! oracle for the graph and its memory schedule.
//!
//! ```
//! use threshnet::{config::preset, cost::network_cost, shapes::TensorShape, topology::build_graph};
//!
//! let graph = build_graph(&preset("threshnet79")?)?;
//! let cost = network_cost(&graph, TensorShape::image(1, 224))?;
//! assert_eq!(cost.depth, 79);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod calibration;
pub mod cli;
pub mod config;
pub mod cost;
pub mod error;
pub mod graph;
pub mod memplan;
pub mod refexec;
pub mod shapes;
pub mod topology;

pub use error::{Error, Result};
