//! Websocket render service.
//!
//! Text messages are JSON requests `{"op": ..., "id": n, ...}`; every reply
//! echoes `id`. `frame` answers with one binary message: the ASCII magic
//! `PLFR`, then `id`, `width`, `height` as little-endian `u32`, a format
//! byte ([`FORMAT_RGBA8_SRGB`]) and three zero bytes, followed by
//! `height` rows of `width` RGBA8 pixels, top row first. Nothing is sent
//! unless requested.

use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::Deserialize;
use serde_json::{json, Value};
use tungstenite::Message;

use primlight::illum::EnvMap;
use primlight::math::DVec3;
use primlight::raymarch::Camera;
use primlight::rig::Pose;
use primlight::runtime::StageTimes;

use crate::commands::{Illumination, Models};
use crate::scene::{self, Orbit, TARGET};

pub const MAGIC: &[u8; 4] = b"PLFR";
pub const FORMAT_RGBA8_SRGB: u8 = 1;
pub const HEADER_LEN: usize = 20;
pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted image side.
pub const MAX_SIDE: usize = 1024;

/// Pose components per slider group: wrist, then one group per digit.
pub const POSE_GROUPS: [(&str, &[usize]); 6] = [
    ("wrist", &[0, 1, 2]),
    ("thumb", &[23, 24, 3, 4, 5, 6]),
    ("index", &[7, 8, 9, 10]),
    ("middle", &[11, 12, 13, 14]),
    ("ring", &[15, 16, 17, 18]),
    ("pinky", &[19, 20, 21, 22]),
];

/// One outgoing message.
#[derive(Clone, Debug, PartialEq)]
pub enum Reply {
    Json(Value),
    Frame(Vec<u8>),
}

/// Header plus RGBA8 body of a binary frame message.
pub fn encode_frame(id: u32, width: usize, height: usize, rgba: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + rgba.len());
    out.extend_from_slice(MAGIC);
    for v in [id, width as u32, height as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&[FORMAT_RGBA8_SRGB, 0, 0, 0]);
    out.extend_from_slice(rgba);
    out
}

/// Decoded frame header: `(id, width, height, format)`.
pub fn decode_header(msg: &[u8]) -> Option<(u32, usize, usize, u8)> {
    if msg.len() < HEADER_LEN || &msg[..4] != MAGIC {
        return None;
    }
    let word = |i: usize| u32::from_le_bytes(msg[i..i + 4].try_into().unwrap());
    let (id, w, h) = (word(4), word(8) as usize, word(12) as usize);
    (msg.len() == HEADER_LEN + 4 * w * h).then_some((id, w, h, msg[16]))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraSpec {
    Orbit {
        orbit: OrbitSpec,
    },
    LookAt {
        eye: [f64; 3],
        #[serde(default = "default_target")]
        target: [f64; 3],
        fov_y: Option<f64>,
        width: Option<usize>,
        height: Option<usize>,
    },
}

#[derive(Deserialize)]
struct OrbitSpec {
    azimuth: Option<f64>,
    elevation: Option<f64>,
    radius: Option<f64>,
    fov_y: Option<f64>,
    width: Option<usize>,
    height: Option<usize>,
}

fn default_target() -> [f64; 3] {
    TARGET
}

/// Per-connection scene state; models are shared read-only.
pub struct Session {
    models: Arc<Models>,
    ev: f64,
    env_total: f64,
    pose: Pose,
    orbit: Orbit,
    camera: Camera,
    light: Illumination,
    last: Option<(f64, StageTimes)>,
    frames: usize,
    total_ms: f64,
}

fn error(id: &Value, message: impl std::fmt::Display) -> Reply {
    Reply::Json(json!({"type": "error", "id": id, "message": message.to_string()}))
}

fn ok(id: &Value) -> Reply {
    Reply::Json(json!({"type": "ok", "id": id}))
}

fn vec3(v: &Value) -> Result<[f64; 3], String> {
    let a: [f64; 3] = serde_json::from_value(v.clone()).map_err(|_| format!("expected [x, y, z], got {v}"))?;
    if a.iter().all(|x| x.is_finite()) {
        Ok(a)
    } else {
        Err("non-finite vector".into())
    }
}

fn check_side(n: usize) -> Result<usize, String> {
    if (1..=MAX_SIDE).contains(&n) {
        Ok(n)
    } else {
        Err(format!("image side {n} outside 1..={MAX_SIDE}"))
    }
}

impl Session {
    pub fn new(models: Arc<Models>, ev: f64, env_total: f64, orbit: Orbit) -> anyhow::Result<Self> {
        let camera = orbit.camera()?;
        let light = if models.student.is_some() {
            Illumination::Env(scene::load_envmap("sky", models.run.env_rows, models.run.env_cols, env_total)?)
        } else {
            Illumination::Lights(vec![scene::directional_light([0.0, 0.3, 1.0], [1.0; 3])?])
        };
        Ok(Session {
            pose: Pose::rest(models.stage.hand.pose_dim()),
            models,
            ev,
            env_total,
            orbit,
            camera,
            light,
            last: None,
            frames: 0,
            total_ms: 0.0,
        })
    }

    /// Sent once when a client connects.
    pub fn hello(&self) -> Reply {
        let m = &self.models;
        let groups: Vec<Value> = POSE_GROUPS.iter().map(|(n, r)| json!({"name": n, "indices": r})).collect();
        Reply::Json(json!({
            "type": "hello",
            "protocol": PROTOCOL_VERSION,
            "pose_dim": m.stage.hand.pose_dim(),
            "pose_groups": groups,
            "scale": m.run.scale,
            "w": m.run.w,
            "s": m.run.s,
            "env_rows": m.run.env_rows,
            "env_cols": m.run.env_cols,
            "teacher": m.teacher.is_some(),
            "student": m.student.is_some(),
            "width": self.camera.width,
            "height": self.camera.height,
            "frame_format": FORMAT_RGBA8_SRGB,
        }))
    }

    /// Replies to one text message. Failures become error replies and leave
    /// the state unchanged.
    pub fn handle(&mut self, text: &str) -> Vec<Reply> {
        let msg: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![error(&Value::Null, format!("malformed JSON: {e}"))],
        };
        let id = msg.get("id").cloned().unwrap_or(Value::Null);
        let Some(op) = msg.get("op").and_then(Value::as_str) else {
            return vec![error(&id, "missing \"op\"")];
        };
        let result = match op {
            "hello" => return vec![self.hello()],
            "set_pose" => self.set_pose(&msg).map(|_| ok(&id)),
            "set_camera" => self.set_camera(&msg).map(|_| ok(&id)),
            "set_light" => self.set_light(&msg).map(|_| ok(&id)),
            "frame" => self.frame(&id),
            "stats" => Ok(self.stats(&id)),
            other => Err(format!("unknown op `{other}`")),
        };
        vec![result.unwrap_or_else(|e| error(&id, e))]
    }

    fn set_pose(&mut self, msg: &Value) -> Result<(), String> {
        let hand = &self.models.stage.hand;
        let pose = if let Some(p) = msg.get("preset").and_then(Value::as_str) {
            match p {
                "rest" | "finger-over-palm" => scene::parse_pose(p, hand).map_err(|e| e.to_string())?,
                _ if p.starts_with("random") => scene::parse_pose(p, hand).map_err(|e| e.to_string())?,
                _ => return Err(format!("unknown pose preset `{p}`")),
            }
        } else {
            let theta: Vec<f64> = msg
                .get("theta")
                .map(|t| serde_json::from_value(t.clone()))
                .ok_or("set_pose needs \"theta\" or \"preset\"")?
                .map_err(|e| format!("theta: {e}"))?;
            Pose { theta, ..Pose::rest(0) }
        };
        scene::check_pose(&pose, hand).map_err(|e| e.to_string())?;
        self.pose = pose;
        Ok(())
    }

    fn set_camera(&mut self, msg: &Value) -> Result<(), String> {
        let spec: CameraSpec = serde_json::from_value(msg.clone()).map_err(|_| "set_camera needs \"orbit\" or \"eye\"".to_string())?;
        match spec {
            CameraSpec::Orbit { orbit: o } => {
                let d = &self.orbit;
                let orbit = Orbit {
                    azimuth: o.azimuth.unwrap_or(d.azimuth),
                    elevation: o.elevation.unwrap_or(d.elevation),
                    radius: o.radius.unwrap_or(d.radius),
                    fov_y: o.fov_y.unwrap_or(d.fov_y),
                    width: check_side(o.width.unwrap_or(d.width))?,
                    height: check_side(o.height.unwrap_or(d.height))?,
                };
                if !(orbit.radius > 0.0) || ![orbit.azimuth, orbit.elevation, orbit.fov_y].iter().all(|v| v.is_finite()) {
                    return Err("orbit needs finite angles and a positive radius".into());
                }
                self.camera = orbit.camera().map_err(|e| e.to_string())?;
                self.orbit = orbit;
            }
            CameraSpec::LookAt { eye, target, fov_y, width, height } => {
                let (w, h) = (check_side(width.unwrap_or(self.camera.width))?, check_side(height.unwrap_or(self.camera.height))?);
                let fov = fov_y.unwrap_or(self.orbit.fov_y);
                let (eye, target) = (DVec3::from_array(vec3(&json!(eye))?), DVec3::from_array(vec3(&json!(target))?));
                let dir = (target - eye).try_normalize().ok_or("eye and target coincide")?;
                let up = if dir.y.abs() > 0.999 { DVec3::Z } else { DVec3::Y };
                self.camera = Camera::look_at(eye, target, up, fov, w, h).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }

    fn set_light(&mut self, msg: &Value) -> Result<(), String> {
        let mode = msg.get("mode").and_then(Value::as_str).ok_or("set_light needs \"mode\": point, dir or envmap")?;
        let value = msg.get("value").ok_or("set_light needs \"value\"")?;
        let intensity = match msg.get("intensity") {
            None => [1.0; 3],
            Some(Value::Number(n)) => [n.as_f64().unwrap_or(f64::NAN); 3],
            Some(v) => vec3(v)?,
        };
        if intensity.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("intensity must be finite and non-negative".into());
        }
        let light = match mode {
            "point" => Illumination::Lights(vec![scene::point_light(vec3(value)?, intensity)]),
            "dir" => Illumination::Lights(vec![scene::directional_light(vec3(value)?, intensity).map_err(|e| e.to_string())?]),
            "envmap" => Illumination::Env(self.envmap(value)?),
            other => return Err(format!("unknown light mode `{other}`")),
        };
        let available = match &light {
            Illumination::Lights(_) => self.models.teacher.is_some(),
            Illumination::Env(_) => self.models.student.is_some(),
        };
        if !available {
            return Err(format!("mode `{mode}` needs a {} checkpoint", if mode == "envmap" { "student" } else { "teacher" }));
        }
        self.light = light;
        Ok(())
    }

    /// `"sky[:seed]"`, a file path, or `{"rows", "cols", "texels": [[r,g,b], ...]}`.
    fn envmap(&self, value: &Value) -> Result<EnvMap, String> {
        let run = &self.models.run;
        if let Some(spec) = value.as_str() {
            return scene::load_envmap(spec, run.env_rows, run.env_cols, self.env_total).map_err(|e| e.to_string());
        }
        #[derive(Deserialize)]
        struct Inline {
            rows: usize,
            cols: usize,
            texels: Vec<[f64; 3]>,
        }
        let inline: Inline = serde_json::from_value(value.clone()).map_err(|e| format!("envmap value: {e}"))?;
        if inline.texels.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("envmap texels must be finite and non-negative".into());
        }
        let env = EnvMap::new(inline.rows, inline.cols, inline.texels).map_err(|e| e.to_string())?;
        scene::fit_envmap(&env, run.env_rows, run.env_cols).map_err(|e| e.to_string())
    }

    fn frame(&mut self, id: &Value) -> Result<Reply, String> {
        let frame_id = match id {
            Value::Null => 0,
            v => v.as_u64().and_then(|n| u32::try_from(n).ok()).ok_or("frame ids must be integers in u32 range")?,
        };
        let t = Instant::now();
        let (img, times) = self.models.render(&self.pose, &self.camera, &self.light).map_err(|e| e.to_string())?;
        let ms = 1e3 * t.elapsed().as_secs_f64();
        let rgba = scene::rgba8(&img, self.ev);
        self.last = Some((ms, times));
        self.frames += 1;
        self.total_ms += ms;
        Ok(Reply::Frame(encode_frame(frame_id, self.camera.width, self.camera.height, &rgba)))
    }

    fn stats(&self, id: &Value) -> Reply {
        let (render_ms, stages) = match &self.last {
            Some((ms, t)) => (json!(ms), StageTimes::NAMES.iter().zip(t.values()).map(|(n, v)| (n.to_string(), json!(v * 1e3))).collect()),
            None => (Value::Null, serde_json::Map::new()),
        };
        let mean = if self.frames > 0 { json!(self.total_ms / self.frames as f64) } else { Value::Null };
        Reply::Json(json!({"type": "stats", "id": id, "render_ms": render_ms, "stage_ms": stages, "frames": self.frames, "mean_render_ms": mean}))
    }
}

fn send(ws: &mut tungstenite::WebSocket<TcpStream>, reply: Reply) -> tungstenite::Result<()> {
    match reply {
        Reply::Json(v) => ws.send(Message::text(v.to_string())),
        Reply::Frame(b) => ws.send(Message::binary(b)),
    }
}

fn connection(stream: TcpStream, models: Arc<Models>, ev: f64, env_total: f64, orbit: Orbit) -> anyhow::Result<()> {
    let peer = stream.peer_addr()?;
    let mut ws = tungstenite::accept(stream)?;
    let mut session = Session::new(models, ev, env_total, orbit)?;
    send(&mut ws, session.hello())?;
    info!("{peer}: connected");
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                for r in session.handle(text.as_str()) {
                    send(&mut ws, r)?;
                }
            }
            Ok(Message::Binary(_)) => send(&mut ws, error(&Value::Null, "binary requests are not accepted"))?,
            Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => break,
            Ok(_) => {}
            Err(e) => return Err(e.into()),
        }
    }
    info!("{peer}: closed after {} frames", session.frames);
    Ok(())
}

/// Accepts connections forever, one thread per session.
pub fn serve(listener: TcpListener, models: Arc<Models>, ev: f64, env_total: f64, orbit: Orbit) -> anyhow::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let (models, orbit) = (models.clone(), orbit.clone());
        std::thread::spawn(move || {
            if let Err(e) = connection(stream, models, ev, env_total, orbit) {
                warn!("session ended: {e:#}");
            }
        });
    }
    Ok(())
}
