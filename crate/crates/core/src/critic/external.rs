//! Critic hosted in a subprocess.
//!
//! Protocol, one JSON object per line on the child's stdin/stdout:
//!
//! ```text
//! -> {"type":"hello","patch_resolution":512}
//! <- {"type":"ready"}
//! -> {"type":"eval","observed_png":"<base64>","rendered_png":"<base64>"}
//! <- {"type":"error_px","value":12.5}
//! ```
//!
//! Requests are answered in order; one request is in flight per process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{check_patches, Critic, CriticRequest};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Outgoing<'a> {
    Hello {
        patch_resolution: usize,
    },
    Eval {
        observed_png: &'a str,
        rendered_png: &'a str,
    },
}

#[derive(Deserialize, Debug)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Incoming {
    Ready,
    ErrorPx { value: f64 },
}

struct Endpoint {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Endpoint {
    fn send(&mut self, msg: &Outgoing<'_>) -> Result<()> {
        let mut line = serde_json::to_string(msg)
            .map_err(|e| Error::CriticProtocol(format!("cannot encode request: {e}")))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::CriticProtocol(format!("cannot write to critic: {e}")))
    }

    fn receive(&mut self, timeout: Duration) -> Result<Incoming> {
        let line = match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::CriticProtocol(format!("cannot read from critic: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(Error::CriticTimeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "still running".into());
                return Err(Error::CriticProtocol(format!(
                    "critic closed its output ({status})"
                )));
            }
        };
        serde_json::from_str(line.trim())
            .map_err(|e| Error::CriticProtocol(format!("malformed response {line:?}: {e}")))
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalCritic {
    endpoint: Mutex<Endpoint>,
    timeout: Duration,
    patch_resolution: usize,
}

impl std::fmt::Debug for ExternalCritic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalCritic")
            .field("timeout", &self.timeout)
            .field("patch_resolution", &self.patch_resolution)
            .finish()
    }
}

impl ExternalCritic {
    /// Spawns `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, patch_resolution: usize, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::CriticProtocol(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut endpoint = Endpoint {
            child,
            stdin,
            lines: rx,
        };
        endpoint.send(&Outgoing::Hello { patch_resolution })?;
        match endpoint.receive(timeout)? {
            Incoming::Ready => {}
            other => {
                return Err(Error::CriticProtocol(format!(
                    "expected ready, got {other:?}"
                )))
            }
        }
        Ok(ExternalCritic {
            endpoint: Mutex::new(endpoint),
            timeout,
            patch_resolution,
        })
    }

    pub fn patch_resolution(&self) -> usize {
        self.patch_resolution
    }
}

impl Critic for ExternalCritic {
    fn evaluate(&self, req: &CriticRequest<'_>) -> Result<f64> {
        check_patches(req)?;
        let b64 = base64::engine::general_purpose::STANDARD;
        let observed = b64.encode(req.observed.pixels.encode_png()?);
        let rendered = b64.encode(req.rendered.pixels.encode_png()?);
        let mut ep = self
            .endpoint
            .lock()
            .map_err(|_| Error::CriticProtocol("critic endpoint poisoned".into()))?;
        ep.send(&Outgoing::Eval {
            observed_png: &observed,
            rendered_png: &rendered,
        })?;
        match ep.receive(self.timeout)? {
            Incoming::ErrorPx { value } if value.is_finite() && value >= 0.0 => Ok(value),
            Incoming::ErrorPx { value } => Err(Error::CriticProtocol(format!(
                "critic returned invalid error estimate {value}"
            ))),
            other => Err(Error::CriticProtocol(format!(
                "expected error_px, got {other:?}"
            ))),
        }
    }

    fn name(&self) -> &str {
        "external"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, ImagePatch, ZoomedCamera};
    use crate::critic::CriticContext;
    use crate::geometry::{Pose, PoseDelta};
    use crate::image::RgbImage;
    use nalgebra::Vector2;

    fn responder(reply: &str) -> String {
        format!(
            "read l; echo '{{\"type\":\"ready\"}}'; while read l; do echo '{reply}'; done"
        )
    }

    fn request_value(critic: &ExternalCritic) -> Result<f64> {
        let intr = CameraIntrinsics::new(100.0, 100.0, 16.0, 16.0, 32, 32).unwrap();
        let zoom = ZoomedCamera::new(intr, Vector2::new(16.0, 16.0), 8.0, 8).unwrap();
        let patch = ImagePatch {
            pixels: RgbImage::new(8, 8),
            camera: zoom,
        };
        let pose = Pose::identity();
        let delta = PoseDelta::zero();
        critic.evaluate(&CriticRequest {
            observed: &patch,
            rendered: &patch,
            context: CriticContext {
                pose_hat: &pose,
                zoom_hat: &zoom,
                delta: &delta,
                truth: None,
            },
        })
    }

    #[test]
    fn echo_critic_value_is_returned() {
        let c = ExternalCritic::spawn(&responder(r#"{"type":"error_px","value":7.5}"#), 8, DEFAULT_TIMEOUT)
            .unwrap();
        assert_eq!(request_value(&c).unwrap(), 7.5);
        assert_eq!(request_value(&c).unwrap(), 7.5);
    }

    #[test]
    fn malformed_line_is_protocol_error() {
        let c = ExternalCritic::spawn(&responder("not json"), 8, DEFAULT_TIMEOUT).unwrap();
        assert!(matches!(request_value(&c), Err(Error::CriticProtocol(_))));
    }

    #[test]
    fn negative_value_is_protocol_error() {
        let c = ExternalCritic::spawn(&responder(r#"{"type":"error_px","value":-1}"#), 8, DEFAULT_TIMEOUT)
            .unwrap();
        assert!(matches!(request_value(&c), Err(Error::CriticProtocol(_))));
    }

    #[test]
    fn exiting_process_fails_handshake() {
        let err = ExternalCritic::spawn("exit 0", 8, DEFAULT_TIMEOUT).unwrap_err();
        assert!(matches!(err, Error::CriticProtocol(_)), "{err:?}");
    }

    #[test]
    fn silent_process_times_out() {
        let err = ExternalCritic::spawn("sleep 5", 8, Duration::from_millis(200)).unwrap_err();
        assert!(matches!(err, Error::CriticTimeout(_)), "{err:?}");
    }
}
