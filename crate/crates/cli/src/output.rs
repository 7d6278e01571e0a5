//! Output files. Every CSV opens with a `# anytime <version> config=<json>`
//! comment; every JSON file is an object with `tool`, `version` and `config`.
//! Nothing time-dependent is written, so reruns are byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::Config;

pub const TOOL: &str = "anytime";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct OutDir<'a> {
    root: PathBuf,
    config: &'a Config,
}

impl<'a> OutDir<'a> {
    pub fn create(config: &'a Config) -> Result<Self> {
        let root = config.out.clone();
        fs::create_dir_all(&root)
            .with_context(|| format!("out: cannot create {}", root.display()))?;
        let probe = root.join(".anytime-write-probe");
        fs::write(&probe, b"")
            .with_context(|| format!("out: {} is not writable", root.display()))?;
        let _ = fs::remove_file(&probe);
        Ok(Self { root, config })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn header_line(&self) -> Result<String> {
        Ok(format!(
            "# {TOOL} {VERSION} config={}\n",
            serde_json::to_string(self.config)?
        ))
    }

    /// Writes `name` as the header line followed by whatever `body` emits.
    pub fn csv<F>(&self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = self.header_line()?.into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn json<T: Serialize>(&self, name: &str, report: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Wrapped<'r, T> {
            tool: &'static str,
            version: &'static str,
            config: &'r Config,
            #[serde(flatten)]
            report: &'r T,
        }
        let mut text = serde_json::to_string_pretty(&Wrapped {
            tool: TOOL,
            version: VERSION,
            config: self.config,
            report,
        })?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_file(&path, bytes)?;
        Ok(path)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("out: cannot create {}", path.display()))?;
    f.write_all(bytes)
        .with_context(|| format!("out: cannot write {}", path.display()))
}
