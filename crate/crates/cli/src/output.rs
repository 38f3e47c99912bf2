use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use idcf_core::data::UserPartition;
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

pub const SPLIT_FILE: &str = "split.json";
pub const PARTITION_FILE: &str = "partition.txt";
pub const MF_CHECKPOINT: &str = "mf.ckpt";
pub const REL_CHECKPOINT: &str = "rel.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ATTENTION_FILE: &str = "attention.csv";
pub const INFER_FILE: &str = "infer.csv";
pub const SYNTH_FILE: &str = "synth.csv";
pub const TRUE_FACTORS_FILE: &str = "true_factors.json";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes through a temp file in the target directory, then renames it into
/// place so readers never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<PathBuf> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    let tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.error })?;
    log::info!("wrote {}", path.display());
    Ok(path.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<PathBuf> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(io_err(path)))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// One user index per line under `# key` and `# query` headers.
pub fn partition_text(p: &UserPartition) -> String {
    let mut s = String::from("# key\n");
    for u in &p.key_users {
        s.push_str(&format!("{u}\n"));
    }
    s.push_str("# query\n");
    for u in &p.query_users {
        s.push_str(&format!("{u}\n"));
    }
    s
}
