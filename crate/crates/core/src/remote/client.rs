use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::protocol::{
    encode_ppm_b64, ActRequest, ActResponse, ScoreRequest, ScoreResponse, SegmentRequest,
    SegmentResponse,
};
use crate::env::Task;
use crate::error::{Error, Result};
use crate::grammar::parse_reward;
use crate::mask::{BitMask, GrayImage, NormBox, RgbImage};
use crate::rle::rle_decode;
use crate::segment::{Click, Segmenter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    2
}

impl RemoteEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "endpoint timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(())
    }

    /// A connection-pooling agent; one request in flight per connection.
    pub fn agent(&self) -> Result<ureq::Agent> {
        self.validate()?;
        Ok(ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(self.timeout_secs))
            .build())
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// POSTs JSON, retrying transport failures and 5xx replies up to
/// `max_retries` extra times. 4xx replies fail immediately.
fn post_json<Req: Serialize, Resp: DeserializeOwned>(
    agent: &ureq::Agent,
    ep: &RemoteEndpoint,
    path: &str,
    body: &Req,
) -> Result<Resp> {
    let url = ep.url(path);
    let payload = serde_json::to_value(body)?;
    let mut last_err = String::new();
    for _attempt in 0..=ep.max_retries {
        match agent.post(&url).send_json(payload.clone()) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| Error::Remote(format!("{url}: reading body: {e}")))?;
                return serde_json::from_str(&text)
                    .map_err(|e| Error::Remote(format!("{url}: protocol error: {e}")));
            }
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                last_err = format!("{url}: HTTP {code}: {body}");
                if code < 500 {
                    break;
                }
            }
            Err(ureq::Error::Transport(t)) => {
                last_err = format!("{url}: {t}");
            }
        }
    }
    Err(Error::Remote(last_err))
}

pub fn call_segment(
    agent: &ureq::Agent,
    ep: &RemoteEndpoint,
    image: &GrayImage,
    clicks: &[Click],
    bbox: Option<NormBox>,
) -> Result<BitMask> {
    let req = SegmentRequest::new(image, clicks, bbox);
    let resp: SegmentResponse = post_json(agent, ep, "/v1/segment", &req)?;
    let mask = rle_decode(&resp.mask_rle)?;
    if mask.dims() != image.dims() {
        return Err(Error::Remote(format!(
            "segment reply is {:?}, image is {:?}",
            mask.dims(),
            image.dims()
        )));
    }
    Ok(mask)
}

pub fn call_policy(
    agent: &ureq::Agent,
    ep: &RemoteEndpoint,
    composite: &RgbImage,
    prompt: &str,
    k: usize,
) -> Result<Vec<String>> {
    if k < 1 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let req = ActRequest {
        image_ppm_b64: encode_ppm_b64(composite),
        prompt: prompt.to_string(),
        n_samples: k,
    };
    let resp: ActResponse = post_json(agent, ep, "/v1/act", &req)?;
    Ok(resp.texts)
}

pub fn call_prm(agent: &ureq::Agent, ep: &RemoteEndpoint, composite: &RgbImage, prompt: &str) -> Result<f64> {
    let req = ScoreRequest {
        image_ppm_b64: encode_ppm_b64(composite),
        prompt: prompt.to_string(),
    };
    let resp: ScoreResponse = post_json(agent, ep, "/v1/score", &req)?;
    Ok(parse_reward(&resp.text)?)
}

pub struct RemoteSegmenter {
    pub endpoint: RemoteEndpoint,
    supports_box: bool,
    agent: ureq::Agent,
}

impl RemoteSegmenter {
    pub fn new(endpoint: RemoteEndpoint, supports_box: bool) -> Result<Self> {
        let agent = endpoint.agent()?;
        Ok(Self {
            endpoint,
            supports_box,
            agent,
        })
    }
}

impl Segmenter for RemoteSegmenter {
    fn segment(&self, task: &Task, clicks: &[Click], bbox: Option<NormBox>) -> Result<BitMask> {
        call_segment(&self.agent, &self.endpoint, &task.image, clicks, bbox)
    }

    fn supports_box(&self) -> bool {
        self.supports_box
    }
}
