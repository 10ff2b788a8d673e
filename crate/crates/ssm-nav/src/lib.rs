//! Graph-structured scene memory navigation.
//!
//! An embodied agent follows template-grammar instructions through partially
//! observable viewpoint graphs. It builds a directed scene memory of visited
//! places (visual node embeddings, orientation-typed edges, unvisited
//! sub-nodes), grounds the instruction into perception- and action-aware
//! states, enriches the memory by message passing, and decides through
//! frontier exploration: pick a frontier anywhere on the map, travel there
//! along the shortest known path, then pick one of its sub-nodes or stop.
//!
//! The crate also ships the synthetic environment generator, an IL/RL
//! trainer over an exact-gradient tape, and the trajectory metric suite
//! (SR, NE, TL, OR, SPL, CLS, nDTW, SDTW).

pub mod dataset;
pub mod env;
pub mod graph;
pub mod instructions;
pub mod memory;
pub mod metrics;
pub mod planner;
pub mod policy;
pub mod render;
pub mod tape;
pub mod trainer;
pub mod types;

pub use env::{generate_environment, make_episode, EnvParams, EnvironmentGraph, Episode, Geodesics};
pub use memory::SceneMemory;
pub use metrics::{DistanceMode, MetricReport, MetricScores};
pub use planner::{run_episode, DecisionMode, Forcing, RolloutOptions, Sampling, Trajectory};
pub use policy::{ModelDims, ParamSet};
pub use trainer::{evaluate, train, EnvTable, TrainConfig};
