//! Input shaping for a flexible beam: ZVD shaper design, EKF identification of the natural
//! frequency and damping, and a residual network that compensates the observation error.

pub mod data;
pub mod dynamics;
pub mod ekf;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod resnet;
pub mod shaper;

pub use data::{Dataset, VibrationSample};
pub use dynamics::{SystemParams, TimeSeries};
pub use error::{Error, Result};
pub use shaper::{design_zvd, shape_command, Impulse, ImpulseSequence};
