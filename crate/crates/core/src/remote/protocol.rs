use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mask::{GrayImage, NormBox, NormPoint, RgbImage};
use crate::pnm;
use crate::rle::RleMask;
use crate::segment::Click;

/// Normalized coordinates travel with six decimals.
fn six_digits<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*v))
}

pub(crate) fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireClick {
    /// `1` for positive, `-1` for negative.
    pub sign: i8,
    #[serde(serialize_with = "six_digits")]
    pub x: f64,
    #[serde(serialize_with = "six_digits")]
    pub y: f64,
}

impl From<&Click> for WireClick {
    fn from(c: &Click) -> Self {
        WireClick {
            sign: if c.positive { 1 } else { -1 },
            x: c.point.x,
            y: c.point.y,
        }
    }
}

impl WireClick {
    pub fn to_click(&self) -> Result<Click> {
        let positive = match self.sign {
            1 => true,
            -1 => false,
            s => return Err(Error::Remote(format!("click sign must be +1 or -1, got {s}"))),
        };
        // Six-digit rounding can land exactly on 1.0.
        if !(0.0..=1.0).contains(&self.x) || !(0.0..=1.0).contains(&self.y) {
            return Err(Error::Remote(format!("click ({}, {}) outside [0,1]", self.x, self.y)));
        }
        Ok(Click {
            positive,
            point: NormPoint::clamped(self.x, self.y),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    #[serde(serialize_with = "six_digits")]
    pub x1: f64,
    #[serde(serialize_with = "six_digits")]
    pub y1: f64,
    #[serde(serialize_with = "six_digits")]
    pub x2: f64,
    #[serde(serialize_with = "six_digits")]
    pub y2: f64,
}

impl From<NormBox> for WireBox {
    fn from(b: NormBox) -> Self {
        WireBox {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        }
    }
}

impl WireBox {
    /// Rounding to six digits may push an upper corner to 1.0; pull it back.
    pub fn to_box(&self) -> Result<NormBox> {
        let c = crate::mask::clamp_unit;
        NormBox::new(c(self.x1), c(self.y1), c(self.x2), c(self.y2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_pgm_b64: String,
    pub clicks: Vec<WireClick>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<WireBox>,
}

impl SegmentRequest {
    pub fn new(image: &GrayImage, clicks: &[Click], bbox: Option<NormBox>) -> Self {
        SegmentRequest {
            image_pgm_b64: STANDARD.encode(pnm::encode_pgm(image)),
            clicks: clicks.iter().map(WireClick::from).collect(),
            bbox: bbox.map(WireBox::from),
        }
    }

    pub fn image(&self) -> Result<GrayImage> {
        pnm::decode_pgm(&decode_b64(&self.image_pgm_b64)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask_rle: RleMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActRequest {
    pub image_ppm_b64: String,
    pub prompt: String,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActResponse {
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub image_ppm_b64: String,
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub(crate) fn encode_ppm_b64(image: &RgbImage) -> String {
    STANDARD.encode(pnm::encode_ppm(image))
}

pub(crate) fn decode_b64(s: &str) -> Result<Vec<u8>> {
    STANDARD
        .decode(s)
        .map_err(|e| Error::Remote(format!("bad base64 payload: {e}")))
}
