//! HTTP boundary for external segmenter, policy and reward services.
//!
//! Three JSON endpoints, images carried as base64 PGM/PPM:
//!
//! | endpoint       | request                                   | response                 |
//! |----------------|-------------------------------------------|--------------------------|
//! | `/v1/segment`  | `{image_pgm_b64, clicks:[{sign,x,y}], box?}` | `{mask_rle:{size,counts}}` |
//! | `/v1/act`      | `{image_ppm_b64, prompt, n_samples}`      | `{texts:[...]}`          |
//! | `/v1/score`    | `{image_ppm_b64, prompt}`                 | `{text:"Current mIoU: NN"}` |

mod client;
mod mock;
mod protocol;

pub use client::{call_policy, call_prm, call_segment, RemoteEndpoint, RemoteSegmenter};
pub use mock::{MockConfig, MockServer};
pub use protocol::{
    ActRequest, ActResponse, ErrorResponse, ScoreRequest, ScoreResponse, SegmentRequest,
    SegmentResponse, WireBox, WireClick,
};
