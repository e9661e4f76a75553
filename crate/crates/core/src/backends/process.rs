//! External programs as backends. Each call gets a fresh temporary directory;
//! the image goes in as `{input}`, the program writes a PFM depth to
//! `{output}` and exits 0.
//!
//! Placeholders: `{input} {output} {id} {x} {y} {w} {h} {out_w} {out_h} {src_w} {src_h}`.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{BackendError, DepthBackend, DepthRequest};
use crate::formats::{self, FormatError};
use crate::grid::{DepthGrid, Image};
use crate::losses::PerceptualBackend;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const TIMEOUT_ENV: &str = "EFFDEPTH_BACKEND_TIMEOUT_SECS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// 8-bit PNG
    Png,
    /// Float PFM, 1 or 3 channels
    Pfm,
}

fn timeout_from_env() -> Result<Duration, BackendError> {
    match std::env::var(TIMEOUT_ENV) {
        Ok(v) => v
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|s| s.is_finite() && *s > 0.0)
            .map(Duration::from_secs_f64)
            .ok_or_else(|| BackendError::Spec(format!("{TIMEOUT_ENV}={v:?} is not a positive number of seconds"))),
        Err(_) => Ok(DEFAULT_TIMEOUT),
    }
}

fn split_template(template: &str, required: &[&str]) -> Result<Vec<String>, BackendError> {
    let argv = shell_words::split(template).map_err(|e| BackendError::Spec(e.to_string()))?;
    if argv.is_empty() {
        return Err(BackendError::Spec("empty command template".into()));
    }
    for r in required {
        if !argv.iter().any(|a| a.contains(r)) {
            return Err(BackendError::Spec(format!("command template lacks {r}")));
        }
    }
    Ok(argv)
}

fn io_tempdir(io_dir: &Path) -> Result<tempfile::TempDir, BackendError> {
    std::fs::create_dir_all(io_dir)?;
    Ok(tempfile::Builder::new().prefix("effdepth-call-").tempdir_in(io_dir)?)
}

fn drain(mut r: impl Read + Send + 'static) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs `argv` after placeholder substitution; returns stdout on exit code 0.
fn run(argv: &[String], vars: &[(&str, String)], timeout: Duration) -> Result<String, BackendError> {
    let args: Vec<String> = argv
        .iter()
        .map(|a| vars.iter().fold(a.clone(), |s, (k, v)| s.replace(k, v)))
        .collect();
    let mut child = Command::new(&args[0])
        .args(&args[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| BackendError::Spawn {
            program: args[0].clone(),
            source,
        })?;
    let out = drain(child.stdout.take().expect("piped stdout"));
    let err = drain(child.stderr.take().expect("piped stderr"));
    let started = Instant::now();
    let mut nap = Duration::from_millis(2);
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(BackendError::Timeout(timeout));
        }
        std::thread::sleep(nap);
        nap = (nap * 2).min(Duration::from_millis(50));
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    if !status.success() {
        return Err(BackendError::Exit {
            code: status.code(),
            stderr: stderr.trim().to_string(),
        });
    }
    Ok(stdout)
}

#[derive(Debug, Clone)]
pub struct ProcessBackend {
    argv: Vec<String>,
    io_dir: PathBuf,
    timeout: Duration,
    input: InputFormat,
    concurrency: usize,
    native_size: Option<usize>,
}

impl ProcessBackend {
    /// Timeout defaults to 120 s unless `EFFDEPTH_BACKEND_TIMEOUT_SECS` is set.
    pub fn new(template: impl AsRef<str>, io_dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        Ok(ProcessBackend {
            argv: split_template(template.as_ref(), &["{input}", "{output}"])?,
            io_dir: io_dir.into(),
            timeout: timeout_from_env()?,
            input: InputFormat::Png,
            concurrency: 1,
            native_size: None,
        })
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }

    pub fn with_input_format(mut self, f: InputFormat) -> Self {
        self.input = f;
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn with_native_size(mut self, n: Option<usize>) -> Self {
        self.native_size = n;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }
}

impl DepthBackend for ProcessBackend {
    fn infer(&self, req: &DepthRequest<'_>) -> Result<DepthGrid, BackendError> {
        let dir = io_tempdir(&self.io_dir)?;
        let (input, bytes) = match self.input {
            InputFormat::Png => (dir.path().join("input.png"), formats::write_png8(req.image)?),
            InputFormat::Pfm => (dir.path().join("input.pfm"), formats::write_pfm_image(req.image)),
        };
        std::fs::write(&input, bytes)?;
        let output = dir.path().join("output.pfm");
        let r = req.region;
        let vars = [
            ("{input}", input.display().to_string()),
            ("{output}", output.display().to_string()),
            ("{id}", req.image_id.to_string()),
            ("{x}", r.x.to_string()),
            ("{y}", r.y.to_string()),
            ("{w}", r.w.to_string()),
            ("{h}", r.h.to_string()),
            ("{out_w}", req.out_w.to_string()),
            ("{out_h}", req.out_h.to_string()),
            ("{src_w}", req.source_dims.0.to_string()),
            ("{src_h}", req.source_dims.1.to_string()),
        ];
        run(&self.argv, &vars, self.timeout)?;
        let bytes = std::fs::read(&output)
            .map_err(|e| BackendError::MalformedOutput(format!("{}: {e}", output.display())))?;
        let g = formats::read_pfm(&bytes).map_err(|e: FormatError| BackendError::MalformedOutput(e.to_string()))?;
        if g.dims() != (req.out_w, req.out_h) {
            return Err(BackendError::MalformedOutput(format!(
                "expected {}x{} depth, got {}x{}",
                req.out_w,
                req.out_h,
                g.width(),
                g.height()
            )));
        }
        if !g.is_fully_valid() {
            return Err(BackendError::MalformedOutput("output contains NaN pixels".into()));
        }
        Ok(g)
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }

    fn native_size(&self) -> Option<usize> {
        self.native_size
    }
}

/// Perceptual distance computed by an external program. The two maps are
/// written as 3-channel PFMs at `{a}` and `{b}`; the program prints the
/// distance as the last line of stdout.
#[derive(Debug, Clone)]
pub struct ProcessPerceptual {
    argv: Vec<String>,
    io_dir: PathBuf,
    timeout: Duration,
}

impl ProcessPerceptual {
    pub fn new(template: impl AsRef<str>, io_dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        Ok(ProcessPerceptual {
            argv: split_template(template.as_ref(), &["{a}", "{b}"])?,
            io_dir: io_dir.into(),
            timeout: timeout_from_env()?,
        })
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }

    fn measure(&self, a: &DepthGrid, b: &DepthGrid) -> Result<f64, BackendError> {
        let dir = io_tempdir(&self.io_dir)?;
        let mut vars = Vec::new();
        for (name, g) in [("a", a), ("b", b)] {
            let rgb: Vec<f32> = g.values().iter().flat_map(|&v| [v; 3]).collect();
            let img = Image::new(g.width(), g.height(), 3, rgb).map_err(|e| BackendError::Other(e.to_string()))?;
            let path = dir.path().join(format!("{name}.pfm"));
            std::fs::write(&path, formats::write_pfm_image(&img))?;
            vars.push((if name == "a" { "{a}" } else { "{b}" }, path.display().to_string()));
        }
        let stdout = run(&self.argv, &vars, self.timeout)?;
        let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        last.trim()
            .parse::<f64>()
            .map_err(|_| BackendError::MalformedOutput(format!("expected a number on stdout, got {last:?}")))
    }
}

impl PerceptualBackend for ProcessPerceptual {
    fn distance(&self, a: &DepthGrid, b: &DepthGrid) -> Result<f64, String> {
        self.measure(a, b).map_err(|e| e.to_string())
    }
}
