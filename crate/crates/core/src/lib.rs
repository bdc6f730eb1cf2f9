pub mod analysis;
pub mod answer;
pub mod backend;
pub mod cli;
pub mod jsonl;
pub mod oem;
pub mod reward;
pub mod rollout;
pub mod synthpipe;
pub mod toolbelt;
pub mod trajectory;
