//! Video comixification: keyframe extraction, aesthetic scoring, comic style
//! transfer and page composition.

pub mod aesthetics;
pub mod composer;
pub mod error;
pub mod features;
pub mod frame;
pub mod ingest;
pub mod kts;
pub mod pipeline;
pub mod selector;
pub mod styletransfer;
pub mod summarizer;
pub mod synthetic;

pub use error::{Error, Result};
pub use frame::Frame;
