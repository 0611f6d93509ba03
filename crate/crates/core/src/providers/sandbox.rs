//! Audited file access for built-in providers.
//!
//! Every read and write a mock performs goes through a [`Sandbox`] rooted at
//! the work directory. Wire paths must stay inside the root, including
//! through symlinks. The only reads allowed outside it are declared provider
//! resources, such as an oracle bundle. The access log is written to
//! `audit.json` next to the response.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::protocol::check_relative;

pub const AUDIT_FILE: &str = "audit.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
    /// Read of a declared provider resource outside the work directory.
    Resource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub kind: AccessKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    pub root: PathBuf,
    pub resources: Vec<PathBuf>,
    pub accesses: Vec<Access>,
}

impl AuditLog {
    /// Accesses that left the work directory: reads and writes outside the
    /// root, and resource reads outside every declared resource.
    pub fn violations(&self) -> Vec<&Access> {
        self.accesses
            .iter()
            .filter(|a| match a.kind {
                AccessKind::Read | AccessKind::Write => !a.path.starts_with(&self.root),
                AccessKind::Resource => !self.resources.iter().any(|r| a.path.starts_with(r)),
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct Sandbox {
    root: PathBuf,
    resources: Vec<PathBuf>,
    log: Vec<Access>,
}

impl Sandbox {
    pub fn new(root: &Path) -> std::io::Result<Self> {
        Ok(Self {
            root: root.canonicalize()?,
            resources: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Declares a read-only resource (file or directory) outside the root.
    pub fn allow_resource(&mut self, path: &Path) {
        if let Ok(p) = path.canonicalize() {
            self.resources.push(p);
        }
    }

    fn inside(&self, rel: &str) -> Result<PathBuf, String> {
        let rel = check_relative(rel)?;
        Ok(self.root.join(rel))
    }

    /// Deepest existing ancestor of `path`, canonicalized.
    fn existing_ancestor(path: &Path) -> Option<PathBuf> {
        path.ancestors().find_map(|a| a.canonicalize().ok())
    }

    pub fn read(&mut self, rel: &str) -> Result<Vec<u8>, String> {
        let full = self.inside(rel)?;
        let real = full.canonicalize().map_err(|e| format!("{rel}: {e}"))?;
        self.log.push(Access {
            kind: AccessKind::Read,
            path: real.clone(),
        });
        if !real.starts_with(&self.root) {
            return Err(format!("{rel} resolves outside the work directory"));
        }
        std::fs::read(&real).map_err(|e| format!("{rel}: {e}"))
    }

    pub fn read_to_string(&mut self, rel: &str) -> Result<String, String> {
        String::from_utf8(self.read(rel)?).map_err(|_| format!("{rel} is not utf-8"))
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), String> {
        let full = self.inside(rel)?;
        let anchor = Self::existing_ancestor(&full).ok_or_else(|| format!("{rel}: no existing ancestor"))?;
        let target = if anchor == full { full.clone() } else { anchor.join(full.strip_prefix(&anchor).unwrap_or(&full)) };
        self.log.push(Access {
            kind: AccessKind::Write,
            path: target.clone(),
        });
        if !anchor.starts_with(&self.root) {
            return Err(format!("{rel} resolves outside the work directory"));
        }
        if std::fs::symlink_metadata(&full).is_ok_and(|m| m.file_type().is_symlink()) {
            return Err(format!("{rel} is a symlink"));
        }
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).map_err(|e| format!("{rel}: {e}"))?;
        }
        std::fs::write(&full, bytes).map_err(|e| format!("{rel}: {e}"))
    }

    /// Reads a file belonging to a declared resource.
    pub fn read_resource(&mut self, path: &Path) -> Result<Vec<u8>, String> {
        let real = path.canonicalize().map_err(|e| format!("{}: {e}", path.display()))?;
        self.log.push(Access {
            kind: AccessKind::Resource,
            path: real.clone(),
        });
        if !self.resources.iter().any(|r| real.starts_with(r)) {
            return Err(format!("{} is not a declared resource", path.display()));
        }
        std::fs::read(&real).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn audit(&self) -> AuditLog {
        AuditLog {
            root: self.root.clone(),
            resources: self.resources.clone(),
            accesses: self.log.clone(),
        }
    }

    /// Writes `audit.json` into the root. The write itself is not logged.
    pub fn save_audit(&self) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.audit()).map_err(std::io::Error::other)?;
        std::fs::write(self.root.join(AUDIT_FILE), text)
    }
}

/// Relative path to `(size, content hash)` for every file under `dir`.
pub fn snapshot_tree(dir: &Path) -> std::io::Result<BTreeMap<PathBuf, (u64, u64)>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, (u64, u64)>) -> std::io::Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            let ft = e.file_type()?;
            if ft.is_dir() {
                walk(base, &path, out)?;
            } else {
                let bytes = if ft.is_file() { std::fs::read(&path)? } else { Vec::new() };
                let mut h = std::collections::hash_map::DefaultHasher::new();
                bytes.hash(&mut h);
                let rel = path.strip_prefix(base).unwrap_or(&path).to_path_buf();
                out.insert(rel, (bytes.len() as u64, h.finish()));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_escapes() {
        let outer = tempfile::tempdir().unwrap();
        let work = outer.path().join("work");
        std::fs::create_dir(&work).unwrap();
        std::fs::write(outer.path().join("secret.txt"), b"x").unwrap();
        let mut sb = Sandbox::new(&work).unwrap();
        assert!(sb.read("../secret.txt").is_err());
        assert!(sb.write("/tmp/evil", b"x").is_err());
        sb.write("sub/out.txt", b"ok").unwrap();
        assert_eq!(sb.read("sub/out.txt").unwrap(), b"ok");
        #[cfg(unix)]
        {
            std::os::unix::fs::symlink(outer.path().join("secret.txt"), work.join("link")).unwrap();
            assert!(sb.read("link").is_err());
            assert!(sb.write("link", b"y").is_err());
            assert!(!sb.audit().violations().is_empty());
        }
        assert!(sb.read_resource(&outer.path().join("secret.txt")).is_err());
        sb.allow_resource(&outer.path().join("secret.txt"));
        let clean = {
            let mut s = Sandbox::new(&work).unwrap();
            s.allow_resource(&outer.path().join("secret.txt"));
            s.read_resource(&outer.path().join("secret.txt")).unwrap();
            s.write("a.txt", b"1").unwrap();
            s.audit()
        };
        assert!(clean.violations().is_empty());
    }

    #[test]
    fn snapshot_sees_changes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a"), b"1").unwrap();
        let before = snapshot_tree(dir.path()).unwrap();
        std::fs::write(dir.path().join("a"), b"2").unwrap();
        assert_ne!(before, snapshot_tree(dir.path()).unwrap());
    }
}
