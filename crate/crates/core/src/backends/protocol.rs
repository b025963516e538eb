//! JSON wire format spoken between the harness and model servers (version 1).
//!
//! Endpoints are `POST /perceive`, `/reason`, `/act`, `/evaluate`. Every
//! request and response carries the [`PROTO_HEADER`] header and a
//! client-generated `request_id` that the server echoes back. Errors come
//! back as [`WireError`] bodies.
//!
//! Images travel as base64 RGB PNG, masks as base64 1-bit PNG, and saliency
//! maps as base64 16-bit grayscale PNG (`encoding: "png16"`) or as a plain
//! list of reals (`encoding: "values"`). The schema is in
//! `docs/protocol.schema.json`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{
    ActionRequest, BackendSet, ActionResponse, BackendError, BackendResult, EvaluationRequest,
    EvaluationResponse, PerceptionRequest, PerceptionResponse, ReasoningRequest,
    ReasoningResponse,
};
use crate::objectives::DimensionScores;
use crate::raster;
use crate::types::{BinaryMask, BoundingBox, FlawDiagnosis, ImageRef, RegionKind, SaliencyMap};

pub const PROTO_HEADER: &str = "x-editrefiner-proto";
pub const PROTO_VERSION: &str = "1";

pub const PERCEIVE: &str = "/perceive";
pub const REASON: &str = "/reason";
pub const ACT: &str = "/act";
pub const EVALUATE: &str = "/evaluate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMap {
    Png16 {
        width: u32,
        height: u32,
        data: String,
    },
    Values {
        width: u32,
        height: u32,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMask {
    pub width: u32,
    pub height: u32,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePerceptionRequest {
    pub request_id: String,
    pub source: WireImage,
    pub edited: WireImage,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePerceptionResponse {
    pub request_id: String,
    pub artifact_map: WireMap,
    pub failure_map: WireMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireReasoningRequest {
    pub request_id: String,
    pub source: WireImage,
    pub edited: WireImage,
    pub instruction: String,
    pub region_kind: RegionKind,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireReasoningResponse {
    pub request_id: String,
    pub diagnoses: Vec<FlawDiagnosis>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireActionRequest {
    pub request_id: String,
    pub source: WireImage,
    pub previous_edit: WireImage,
    pub re_edit_instruction: String,
    pub mask: WireMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireActionResponse {
    pub request_id: String,
    pub re_edited: WireImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireEvaluationRequest {
    pub request_id: String,
    pub source: WireImage,
    pub edited: WireImage,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireEvaluationResponse {
    pub request_id: String,
    pub scores: DimensionScores,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

fn protocol(agent: &'static str, message: impl std::fmt::Display) -> BackendError {
    BackendError::Protocol {
        agent,
        message: message.to_string(),
    }
}

fn b64_decode(agent: &'static str, s: &str) -> BackendResult<Vec<u8>> {
    STANDARD.decode(s).map_err(|e| protocol(agent, format!("bad base64: {e}")))
}

pub fn encode_image(agent: &'static str, img: &ImageRef) -> BackendResult<WireImage> {
    let rgb = img.load_rgb().map_err(|e| protocol(agent, e))?;
    let png = raster::encode_rgb_png(&rgb).map_err(|e| protocol(agent, e))?;
    Ok(WireImage {
        id: img.id.clone(),
        width: img.width,
        height: img.height,
        png_base64: STANDARD.encode(png),
    })
}

pub fn decode_image(agent: &'static str, w: &WireImage) -> BackendResult<ImageRef> {
    let bytes = b64_decode(agent, &w.png_base64)?;
    let rgb = raster::decode_rgb_png(&bytes).map_err(|e| protocol(agent, e))?;
    if rgb.dimensions() != (w.width, w.height) {
        return Err(protocol(
            agent,
            format!(
                "image {} declares {}x{} but decodes to {}x{}",
                w.id,
                w.width,
                w.height,
                rgb.width(),
                rgb.height()
            ),
        ));
    }
    Ok(ImageRef::from_rgb(w.id.clone(), &rgb))
}

pub fn encode_map(agent: &'static str, m: &SaliencyMap) -> BackendResult<WireMap> {
    let png = raster::encode_map_png16(m).map_err(|e| protocol(agent, e))?;
    Ok(WireMap::Png16 {
        width: m.width(),
        height: m.height(),
        data: STANDARD.encode(png),
    })
}

/// Decode a map. Out-of-range values surface as invariant violations.
pub fn decode_map(agent: &'static str, w: &WireMap) -> BackendResult<SaliencyMap> {
    match w {
        WireMap::Png16 {
            width,
            height,
            data,
        } => {
            let m = raster::decode_map_png16(&b64_decode(agent, data)?)
                .map_err(|e| protocol(agent, e))?;
            if m.dims() != (*width, *height) {
                return Err(protocol(
                    agent,
                    format!("map declares {width}x{height}, decodes to {:?}", m.dims()),
                ));
            }
            Ok(m)
        }
        WireMap::Values {
            width,
            height,
            values,
        } => {
            if values.len() != *width as usize * *height as usize {
                return Err(protocol(
                    agent,
                    format!("map declares {width}x{height} but has {} values", values.len()),
                ));
            }
            if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(BackendError::Invariant {
                    agent,
                    invariant: format!("saliency value out of [0,1]: {v}"),
                });
            }
            SaliencyMap::new(*width, *height, values.clone()).map_err(|e| protocol(agent, e))
        }
    }
}

pub fn encode_mask(agent: &'static str, m: &BinaryMask) -> BackendResult<WireMask> {
    let png = raster::encode_mask_png(m).map_err(|e| protocol(agent, e))?;
    Ok(WireMask {
        width: m.width(),
        height: m.height(),
        png_base64: STANDARD.encode(png),
    })
}

pub fn decode_mask(agent: &'static str, w: &WireMask) -> BackendResult<BinaryMask> {
    let m = raster::decode_mask_png(&b64_decode(agent, &w.png_base64)?)
        .map_err(|e| protocol(agent, e))?;
    if m.dims() != (w.width, w.height) {
        return Err(protocol(
            agent,
            format!(
                "mask declares {}x{}, decodes to {:?}",
                w.width,
                w.height,
                m.dims()
            ),
        ));
    }
    Ok(m)
}

impl WirePerceptionRequest {
    pub fn encode(request_id: &str, r: &PerceptionRequest) -> BackendResult<Self> {
        Ok(WirePerceptionRequest {
            request_id: request_id.into(),
            source: encode_image("perception", &r.source)?,
            edited: encode_image("perception", &r.edited)?,
            instruction: r.instruction.clone(),
        })
    }

    pub fn decode(&self) -> BackendResult<PerceptionRequest> {
        Ok(PerceptionRequest {
            source: decode_image("perception", &self.source)?,
            edited: decode_image("perception", &self.edited)?,
            instruction: self.instruction.clone(),
        })
    }
}

impl WirePerceptionResponse {
    pub fn encode(request_id: &str, r: &PerceptionResponse) -> BackendResult<Self> {
        Ok(WirePerceptionResponse {
            request_id: request_id.into(),
            artifact_map: encode_map("perception", &r.artifact_map)?,
            failure_map: encode_map("perception", &r.failure_map)?,
        })
    }

    pub fn decode(&self) -> BackendResult<PerceptionResponse> {
        Ok(PerceptionResponse {
            artifact_map: decode_map("perception", &self.artifact_map)?,
            failure_map: decode_map("perception", &self.failure_map)?,
        })
    }
}

impl WireReasoningRequest {
    pub fn encode(request_id: &str, r: &ReasoningRequest) -> BackendResult<Self> {
        Ok(WireReasoningRequest {
            request_id: request_id.into(),
            source: encode_image("reasoning", &r.source)?,
            edited: encode_image("reasoning", &r.edited)?,
            instruction: r.instruction.clone(),
            region_kind: r.region_kind,
            boxes: r.boxes.clone(),
        })
    }

    pub fn decode(&self) -> BackendResult<ReasoningRequest> {
        Ok(ReasoningRequest {
            source: decode_image("reasoning", &self.source)?,
            edited: decode_image("reasoning", &self.edited)?,
            instruction: self.instruction.clone(),
            region_kind: self.region_kind,
            boxes: self.boxes.clone(),
        })
    }
}

impl WireReasoningResponse {
    pub fn encode(request_id: &str, r: &ReasoningResponse) -> Self {
        WireReasoningResponse {
            request_id: request_id.into(),
            diagnoses: r.diagnoses.clone(),
            summary: r.summary.clone(),
        }
    }

    pub fn decode(&self) -> BackendResult<ReasoningResponse> {
        Ok(ReasoningResponse {
            diagnoses: self.diagnoses.clone(),
            summary: self.summary.clone(),
        })
    }
}

impl WireActionRequest {
    pub fn encode(request_id: &str, r: &ActionRequest) -> BackendResult<Self> {
        Ok(WireActionRequest {
            request_id: request_id.into(),
            source: encode_image("action", &r.source)?,
            previous_edit: encode_image("action", &r.previous_edit)?,
            re_edit_instruction: r.re_edit_instruction.clone(),
            mask: encode_mask("action", &r.mask)?,
        })
    }

    pub fn decode(&self) -> BackendResult<ActionRequest> {
        Ok(ActionRequest {
            source: decode_image("action", &self.source)?,
            previous_edit: decode_image("action", &self.previous_edit)?,
            re_edit_instruction: self.re_edit_instruction.clone(),
            mask: decode_mask("action", &self.mask)?,
        })
    }
}

impl WireActionResponse {
    pub fn encode(request_id: &str, r: &ActionResponse) -> BackendResult<Self> {
        Ok(WireActionResponse {
            request_id: request_id.into(),
            re_edited: encode_image("action", &r.re_edited)?,
        })
    }

    pub fn decode(&self) -> BackendResult<ActionResponse> {
        Ok(ActionResponse {
            re_edited: decode_image("action", &self.re_edited)?,
        })
    }
}

impl WireEvaluationRequest {
    pub fn encode(request_id: &str, r: &EvaluationRequest) -> BackendResult<Self> {
        Ok(WireEvaluationRequest {
            request_id: request_id.into(),
            source: encode_image("evaluation", &r.source)?,
            edited: encode_image("evaluation", &r.edited)?,
            instruction: r.instruction.clone(),
        })
    }

    pub fn decode(&self) -> BackendResult<EvaluationRequest> {
        Ok(EvaluationRequest {
            source: decode_image("evaluation", &self.source)?,
            edited: decode_image("evaluation", &self.edited)?,
            instruction: self.instruction.clone(),
        })
    }
}

impl WireEvaluationResponse {
    pub fn encode(request_id: &str, r: &EvaluationResponse) -> Self {
        WireEvaluationResponse {
            request_id: request_id.into(),
            scores: r.scores,
        }
    }

    pub fn decode(&self) -> BackendResult<EvaluationResponse> {
        Ok(EvaluationResponse {
            scores: self.scores,
        })
    }
}

/// Reply produced by [`dispatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct ServerReply {
    pub status: u16,
    pub body: Vec<u8>,
}

fn error_reply(status: u16, code: &str, message: impl std::fmt::Display) -> ServerReply {
    let body = serde_json::to_vec(&WireError {
        code: code.into(),
        message: message.to_string(),
    })
    .expect("error bodies serialize");
    ServerReply { status, body }
}

fn agent_error(e: BackendError) -> ServerReply {
    match e {
        BackendError::Remote { code, message, .. } => error_reply(422, &code, message),
        BackendError::Protocol { message, .. } => error_reply(400, "bad_request", message),
        other => error_reply(500, "internal", other),
    }
}

fn handle<Req, Resp, Dom>(
    body: &[u8],
    decode: impl FnOnce(&Req) -> BackendResult<Dom>,
    run: impl FnOnce(&str, Dom) -> BackendResult<Resp>,
) -> ServerReply
where
    Req: for<'de> Deserialize<'de> + HasRequestId,
    Resp: Serialize,
{
    let req: Req = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return error_reply(400, "bad_request", e),
    };
    let dom = match decode(&req) {
        Ok(d) => d,
        Err(e) => return agent_error(e),
    };
    match run(req.request_id(), dom) {
        Ok(resp) => ServerReply {
            status: 200,
            body: serde_json::to_vec(&resp).expect("responses serialize"),
        },
        Err(e) => agent_error(e),
    }
}

trait HasRequestId {
    fn request_id(&self) -> &str;
}

macro_rules! has_request_id {
    ($($t:ty),*) => {$(impl HasRequestId for $t { fn request_id(&self) -> &str { &self.request_id } })*};
}
has_request_id!(
    WirePerceptionRequest,
    WireReasoningRequest,
    WireActionRequest,
    WireEvaluationRequest
);

/// Serve one protocol request against `backends`: decode the body for
/// `path`, call the agent, and encode its answer with the echoed request
/// id. Malformed bodies get 400, agent refusals ([`BackendError::Remote`])
/// get 422 and anything else 500, all with a [`WireError`] body. The
/// caller is responsible for the version header.
pub fn dispatch(backends: &BackendSet, path: &str, body: &[u8]) -> ServerReply {
    match path {
        PERCEIVE => handle(body, WirePerceptionRequest::decode, |id, r| {
            WirePerceptionResponse::encode(id, &backends.perception.perceive(&r)?)
        }),
        REASON => handle(body, WireReasoningRequest::decode, |id, r| {
            Ok(WireReasoningResponse::encode(id, &backends.reasoning.reason(&r)?))
        }),
        ACT => handle(body, WireActionRequest::decode, |id, r| {
            WireActionResponse::encode(id, &backends.action.act(&r)?)
        }),
        EVALUATE => handle(body, WireEvaluationRequest::decode, |id, r| {
            Ok(WireEvaluationResponse::encode(id, &backends.evaluation.evaluate(&r)?))
        }),
        other => error_reply(404, "not_found", format!("no endpoint {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    #[test]
    fn out_of_range_values_are_invariant_violations() {
        let w = WireMap::Values {
            width: 2,
            height: 1,
            values: vec![0.2, 1.3],
        };
        let err = decode_map("perception", &w).unwrap_err();
        assert!(matches!(err, BackendError::Invariant { .. }));
        assert!(err.to_string().contains("saliency value out of [0,1]"));
    }

    #[test]
    fn map_tag_is_encoding() {
        let w = WireMap::Values {
            width: 1,
            height: 1,
            values: vec![0.5],
        };
        let v = serde_json::to_value(&w).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"encoding": "values", "width": 1, "height": 1, "values": [0.5]})
        );
    }

    #[test]
    fn image_roundtrip_and_dimension_check() {
        let rgb = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 80, 9]));
        let img = ImageRef::from_rgb("i", &rgb);
        let mut w = encode_image("action", &img).unwrap();
        assert_eq!(decode_image("action", &w).unwrap(), img);
        w.width = 6;
        assert!(matches!(
            decode_image("action", &w),
            Err(BackendError::Protocol { .. })
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let r: Result<WireEvaluationResponse, _> = serde_json::from_str(
            r#"{"request_id":"x","scores":{"perceptual_quality":1,"instruction_following":1,"visual_consistency":1},"extra":1}"#,
        );
        assert!(r.is_err());
    }
}
