use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Cursor, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

/// Byte-level backend for the event log and its snapshot slot.
pub trait LogStorage: Send + Sync {
    /// Appends bytes at the end of the log; durable on return.
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn len(&self) -> io::Result<u64>;
    fn truncate(&mut self, len: u64) -> io::Result<()>;
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()>;
    fn reader(&self) -> io::Result<Box<dyn Read + '_>>;
    fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn read_snapshot(&self) -> io::Result<Option<Vec<u8>>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStorage {
    log: Vec<u8>,
    snapshot: Option<Vec<u8>>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(log: Vec<u8>) -> Self {
        MemoryStorage { log, snapshot: None }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.log
    }

    pub fn bytes_mut(&mut self) -> &mut Vec<u8> {
        &mut self.log
    }
}

impl LogStorage for MemoryStorage {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.log.extend_from_slice(bytes);
        Ok(())
    }

    fn len(&self) -> io::Result<u64> {
        Ok(self.log.len() as u64)
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.log.truncate(len as usize);
        Ok(())
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let start = offset as usize;
        let src = self
            .log
            .get(start..start + buf.len())
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "read past end of log"))?;
        buf.copy_from_slice(src);
        Ok(())
    }

    fn reader(&self) -> io::Result<Box<dyn Read + '_>> {
        Ok(Box::new(Cursor::new(&self.log[..])))
    }

    fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.snapshot = Some(bytes.to_vec());
        Ok(())
    }

    fn read_snapshot(&self) -> io::Result<Option<Vec<u8>>> {
        Ok(self.snapshot.clone())
    }
}

/// A single append-only file plus `<file>.snapshot`.
#[derive(Debug)]
pub struct FileStorage {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl FileStorage {
    /// Opens or creates the log. With `fsync`, every append is synced to disk.
    pub fn open(path: impl AsRef<Path>, fsync: bool) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        Ok(FileStorage { path, file, fsync })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn snapshot_path(&self) -> PathBuf {
        let mut p = self.path.clone().into_os_string();
        p.push(".snapshot");
        PathBuf::from(p)
    }
}

impl LogStorage for FileStorage {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all(bytes)?;
        self.file.flush()?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    fn len(&self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.file.set_len(len)?;
        self.file.sync_all()
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.file.read_exact_at(buf, offset)
    }

    fn reader(&self) -> io::Result<Box<dyn Read + '_>> {
        Ok(Box::new(BufReader::with_capacity(1 << 16, File::open(&self.path)?)))
    }

    fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()> {
        let target = self.snapshot_path();
        let mut tmp = target.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(tmp, target)
    }

    fn read_snapshot(&self) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.snapshot_path()) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}
