//! Gzip-compressed line files.
//!
//! Each writer emits one gzip member; members can be concatenated byte-wise
//! and read back as one logical file.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, IoContext, Result};

pub struct RunWriter {
    path: PathBuf,
    inner: GzEncoder<BufWriter<File>>,
    records: u64,
}

impl RunWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(parent)?;
        }
        let file = File::create(&path).at(&path)?;
        Ok(RunWriter {
            inner: GzEncoder::new(BufWriter::with_capacity(1 << 16, file), Compression::fast()),
            path,
            records: 0,
        })
    }

    pub fn write_record(&mut self, line: &str) -> Result<()> {
        debug_assert!(!line.contains('\n'), "record contains newline: {line:?}");
        self.inner
            .write_all(line.as_bytes())
            .and_then(|_| self.inner.write_all(b"\n"))
            .at(&self.path)?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Flushes the gzip trailer; returns the record count.
    pub fn finish(self) -> Result<u64> {
        let mut buffered = self.inner.finish().at(&self.path)?;
        buffered.flush().at(&self.path)?;
        Ok(self.records)
    }
}

/// Iterator over the records of a compressed run file. A missing file reads
/// as empty when opened with [`RunReader::open_or_empty`].
pub struct RunReader {
    path: PathBuf,
    inner: Option<Box<dyn BufRead + Send>>,
    buf: String,
    position: u64,
}

impl RunReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).at(&path)?;
        Ok(Self::from_reader(path, file))
    }

    pub fn open_or_empty(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        match File::open(&path) {
            Ok(file) => Ok(Self::from_reader(path, file)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(RunReader {
                path,
                inner: None,
                buf: String::new(),
                position: 0,
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn from_reader(path: PathBuf, raw: impl Read + Send + 'static) -> Self {
        let decoder = MultiGzDecoder::new(BufReader::with_capacity(1 << 16, raw));
        RunReader {
            path,
            inner: Some(Box::new(BufReader::with_capacity(1 << 16, decoder))),
            buf: String::new(),
            position: 0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of records yielded so far.
    pub fn position(&self) -> u64 {
        self.position
    }
}

impl Iterator for RunReader {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        let inner = self.inner.as_mut()?;
        self.buf.clear();
        match inner.read_line(&mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                if self.buf.ends_with('\n') {
                    self.buf.pop();
                }
                self.position += 1;
                Some(Ok(std::mem::take(&mut self.buf)))
            }
            Err(e) => Some(Err(Error::io(&self.path, e))),
        }
    }
}

/// Reads a whole run into memory.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<String>> {
    RunReader::open(path)?.collect()
}

/// Writes every record of `records` to a fresh run at `path`.
pub fn write_all<I, S>(path: impl AsRef<Path>, records: I) -> Result<u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut w = RunWriter::create(path)?;
    for r in records {
        w.write_record(r.as_ref())?;
    }
    w.finish()
}

/// Byte-concatenates compressed runs into `dest`.
pub fn concat_files(sources: &[PathBuf], dest: impl AsRef<Path>) -> Result<()> {
    let dest = dest.as_ref();
    let mut out = BufWriter::new(File::create(dest).at(dest)?);
    for src in sources {
        match File::open(src) {
            Ok(mut f) => {
                io::copy(&mut f, &mut out).at(src)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(src, e)),
        }
    }
    out.flush().at(dest)
}
