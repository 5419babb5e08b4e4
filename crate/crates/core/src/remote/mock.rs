//! In-process HTTP server answering all three endpoints from a task set.
//!
//! Segmentation is the ground-truth oracle; the policy is the expert and the
//! reward is the true IoU. Composite images are matched back to their task
//! and mask by re-rendering, so the server must know the overlay color and
//! alpha the clients use.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use super::protocol::{
    decode_b64, ActRequest, ActResponse, ErrorResponse, ScoreRequest, ScoreResponse, SegmentRequest,
    SegmentResponse,
};
use crate::env::Task;
use crate::error::{Error, Result};
use crate::expert::next_click;
use crate::grammar::{format_response, format_reward, CoordFormat};
use crate::mask::{iou, render_overlay, BitMask, Rgb, RgbImage, DEFAULT_ALPHA};
use crate::pnm;
use crate::rle::rle_encode;
use crate::seed::Fnv;
use crate::segment::{oracle_segment, Click, DEFAULT_R_NEG};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub r_neg: usize,
    pub mask_color: Rgb,
    pub alpha: f64,
    pub coord_format: CoordFormat,
    pub workers: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            r_neg: DEFAULT_R_NEG,
            mask_color: Rgb::GREEN,
            alpha: DEFAULT_ALPHA,
            coord_format: CoordFormat::default(),
            workers: 4,
        }
    }
}

struct State {
    tasks: Vec<Task>,
    by_image: HashMap<u64, Vec<usize>>,
    config: MockConfig,
}

fn image_digest(data: &[u8], w: usize, h: usize) -> u64 {
    let mut f = Fnv::new();
    f.write_u64(w as u64);
    f.write_u64(h as u64);
    f.write(data);
    f.finish()
}

impl State {
    fn task_for_gray(&self, image: &crate::mask::GrayImage) -> Option<&Task> {
        let key = image_digest(image.data(), image.width(), image.height());
        self.by_image
            .get(&key)?
            .iter()
            .map(|&i| &self.tasks[i])
            .find(|t| &t.image == image)
    }

    /// Recovers `(task, mask)` from a rendered composite.
    fn locate(&self, composite: &RgbImage) -> Option<(&Task, BitMask)> {
        self.tasks.iter().filter(|t| t.dims() == composite.dims()).find_map(|t| {
            let mask = BitMask::from_fn(t.image.width(), t.image.height(), |x, y| {
                let g = t.image.get(x, y);
                composite.get(x, y) != [g, g, g]
            });
            let rendered = render_overlay(&t.image, &mask, self.config.mask_color, self.config.alpha).ok()?;
            (&rendered == composite).then_some((t, mask))
        })
    }

    fn segment(&self, req: SegmentRequest) -> Result<SegmentResponse> {
        let image = req.image()?;
        let task = self
            .task_for_gray(&image)
            .ok_or_else(|| Error::Remote("image does not match any served task".into()))?;
        let clicks = req
            .clicks
            .iter()
            .map(|c| c.to_click())
            .collect::<Result<Vec<Click>>>()?;
        let bbox = req.bbox.map(|b| b.to_box()).transpose()?;
        let mask = oracle_segment(&task.target, &clicks, bbox, self.config.r_neg);
        Ok(SegmentResponse {
            mask_rle: rle_encode(&mask),
        })
    }

    fn composite(&self, b64: &str) -> Result<(&Task, BitMask)> {
        let img = pnm::decode_ppm(&decode_b64(b64)?)?;
        self.locate(&img)
            .ok_or_else(|| Error::Remote("composite does not match any served task".into()))
    }

    fn act(&self, req: ActRequest) -> Result<ActResponse> {
        if req.n_samples < 1 {
            return Err(Error::Remote("n_samples must be >= 1".into()));
        }
        let (task, mask) = self.composite(&req.image_ppm_b64)?;
        let texts = match next_click(&mask, &task.target)? {
            Some(action) => {
                let reward = iou(&mask, &task.target)?;
                let text = format_response(Some(reward), &action, self.config.coord_format);
                vec![text; req.n_samples]
            }
            None => Vec::new(),
        };
        Ok(ActResponse { texts })
    }

    fn score(&self, req: ScoreRequest) -> Result<ScoreResponse> {
        let (task, mask) = self.composite(&req.image_ppm_b64)?;
        Ok(ScoreResponse {
            text: format_reward(iou(&mask, &task.target)?),
        })
    }
}

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(tasks: Vec<Task>, config: MockConfig, addr: &str) -> Result<Self> {
        let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            by_image
                .entry(image_digest(t.image.data(), t.image.width(), t.image.height()))
                .or_default()
                .push(i);
        }
        let workers = config.workers.max(1);
        let state = Arc::new(State {
            tasks,
            by_image,
            config,
        });
        let server = Server::http(addr).map_err(|e| Error::Remote(format!("bind {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Remote("server is not bound to an IP address".into()))?;
        let server = Arc::new(server);
        let workers = (0..workers)
            .map(|_| {
                let server = Arc::clone(&server);
                let state = Arc::clone(&state);
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&state, req);
                    }
                })
            })
            .collect();
        Ok(Self { server, addr, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the worker threads exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn handle(state: &State, mut req: Request) {
    let mut body = String::new();
    let result = if *req.method() != Method::Post {
        Err((405, format!("method {} not allowed", req.method())))
    } else if let Err(e) = req.as_reader().read_to_string(&mut body) {
        Err((400, format!("reading body: {e}")))
    } else {
        route(state, req.url(), &body)
    };
    let (status, text) = match result {
        Ok(json) => (200, json),
        Err((code, msg)) => (
            code,
            serde_json::to_string(&ErrorResponse { error: msg }).unwrap_or_default(),
        ),
    };
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let _ = req.respond(Response::from_string(text).with_status_code(status).with_header(header));
}

fn route(state: &State, url: &str, body: &str) -> std::result::Result<String, (u16, String)> {
    fn run<Req: serde::de::DeserializeOwned, Resp: Serialize>(
        body: &str,
        f: impl FnOnce(Req) -> Result<Resp>,
    ) -> std::result::Result<String, (u16, String)> {
        let req: Req = serde_json::from_str(body).map_err(|e| (400, format!("bad request: {e}")))?;
        let resp = f(req).map_err(|e| (400, e.to_string()))?;
        serde_json::to_string(&resp).map_err(|e| (500, e.to_string()))
    }
    match url {
        "/v1/segment" => run(body, |r| state.segment(r)),
        "/v1/act" => run(body, |r| state.act(r)),
        "/v1/score" => run(body, |r| state.score(r)),
        other => Err((404, format!("no endpoint {other}"))),
    }
}
