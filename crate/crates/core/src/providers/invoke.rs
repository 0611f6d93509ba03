use std::fs::File;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::protocol::{
    parse_response, RequestManifest, ResponseManifest, Status, REQUEST_FILE, RESPONSE_FILE, STDERR_FILE, STDOUT_FILE,
};
use super::{ProviderError, ProviderKind, ProviderSpec};

fn io_err(kind: ProviderKind, e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Io {
        kind,
        message: e.to_string(),
    }
}

pub(crate) fn write_request(workdir: &Path, request: &RequestManifest) -> Result<(), ProviderError> {
    let text = serde_json::to_string_pretty(request).map_err(|e| io_err(request.kind, e))?;
    std::fs::write(workdir.join(REQUEST_FILE), text).map_err(|e| io_err(request.kind, e))
}

/// Reads and checks `response.json` after the provider has finished.
pub(crate) fn collect_response(workdir: &Path, request: &RequestManifest) -> Result<ResponseManifest, ProviderError> {
    let kind = request.kind;
    let path = workdir.join(RESPONSE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| ProviderError::Protocol {
        kind,
        message: format!("no readable {RESPONSE_FILE}"),
    })?;
    let resp = parse_response(&text, request).map_err(|message| ProviderError::Protocol { kind, message })?;
    if resp.status == Status::Error {
        return Err(ProviderError::Failed {
            kind,
            message: resp.message.unwrap_or_else(|| "unspecified error".into()),
        });
    }
    let missing: Vec<&str> = resp
        .outputs
        .values()
        .filter(|p| !workdir.join(p).is_file())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(ProviderError::Protocol {
            kind,
            message: format!("declared outputs missing: {}", missing.join(", ")),
        });
    }
    Ok(resp)
}

fn tail(path: &Path, max: usize) -> String {
    let bytes = std::fs::read(path).unwrap_or_default();
    let start = bytes.len().saturating_sub(max);
    String::from_utf8_lossy(&bytes[start..]).trim().to_string()
}

/// Runs an external provider on a prepared work directory: writes
/// `request.json`, launches the command with the directory appended as its
/// last argument, enforces the timeout and parses `response.json`.
pub fn invoke_process(
    spec: &ProviderSpec,
    workdir: &Path,
    request: &RequestManifest,
) -> Result<ResponseManifest, ProviderError> {
    let kind = request.kind;
    let cmd = spec
        .command
        .as_ref()
        .filter(|c| !c.is_empty())
        .ok_or(ProviderError::NotConfigured { kind })?;
    write_request(workdir, request)?;
    let stdout = File::create(workdir.join(STDOUT_FILE)).map_err(|e| io_err(kind, e))?;
    let stderr = File::create(workdir.join(STDERR_FILE)).map_err(|e| io_err(kind, e))?;
    let mut child = Command::new(&cmd[0])
        .args(&cmd[1..])
        .arg(workdir)
        .current_dir(workdir)
        .envs(&spec.env)
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr)
        .spawn()
        .map_err(|e| ProviderError::Launch {
            kind,
            message: format!("{}: {e}", cmd[0]),
        })?;
    let start = Instant::now();
    let limit = Duration::from_secs_f64(spec.timeout);
    let mut pause = Duration::from_millis(2);
    let status = loop {
        match child.try_wait().map_err(|e| io_err(kind, e))? {
            Some(status) => break status,
            None if start.elapsed() >= limit => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ProviderError::Timeout {
                    kind,
                    seconds: spec.timeout,
                });
            }
            None => {
                std::thread::sleep(pause.min(limit.saturating_sub(start.elapsed())));
                pause = (pause * 2).min(Duration::from_millis(50));
            }
        }
    };
    if !status.success() {
        let from_response = std::fs::read_to_string(workdir.join(RESPONSE_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<ResponseManifest>(&t).ok())
            .and_then(|r| r.message);
        let detail = from_response.unwrap_or_else(|| tail(&workdir.join(STDERR_FILE), 2000));
        return Err(ProviderError::Failed {
            kind,
            message: format!("exit status {}: {detail}", status.code().map_or("signal".to_string(), |c| c.to_string())),
        });
    }
    collect_response(workdir, request)
}
