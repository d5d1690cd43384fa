//! Binary checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "RSQU" | version u32 | kind (u16 len + utf8) | config (u32 len + utf8)
//! | rng state (u16 len + bytes) | tensor count u32
//! | per tensor: name (u16 len + utf8), frozen u8, ndim u8, dims u32 × ndim, f32 × len
//! | crc32 of everything above
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use resqu_core::ParamStore;

pub const MAGIC: &[u8; 4] = b"RSQU";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint at byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind { expected: String, found: String },
    #[error("checkpoint has no tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name}: stored shape {stored:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    /// TOML snapshot of the run configuration.
    pub config: String,
    pub rng_state: Vec<u8>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: &str) -> Self {
        Self {
            kind: kind.to_string(),
            config: config.to_string(),
            rng_state: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Adds every entry of `store` as `prefix/name`, rounded to f32.
    pub fn add_store(&mut self, prefix: &str, store: &ParamStore) {
        for e in store.entries() {
            self.tensors.push(TensorRecord {
                name: format!("{prefix}/{}", e.name),
                shape: e.shape.clone(),
                frozen: e.frozen,
                data: e.value.iter().map(|&v| v as f32).collect(),
            });
        }
    }

    pub fn add_scalar(&mut self, name: &str, value: f64) {
        self.tensors.push(TensorRecord {
            name: name.to_string(),
            shape: vec![1],
            frozen: true,
            data: vec![value as f32],
        });
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.tensor(name)?;
        t.data
            .first()
            .map(|&v| v as f64)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorRecord> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Copies `prefix/*` tensors into `store`. Every name and shape is
    /// checked before anything is written.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let mut plan = Vec::with_capacity(store.len());
        for e in store.entries() {
            let name = format!("{prefix}/{}", e.name);
            let t = self.tensor(&name)?;
            if t.shape != e.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    stored: t.shape.clone(),
                    expected: e.shape.clone(),
                });
            }
            plan.push(t);
        }
        for (i, t) in plan.into_iter().enumerate() {
            let e = store.entry_mut(resqu_core::numerics::ParamId(i));
            e.value = t.data.iter().map(|&v| v as f64).collect();
            e.frozen = t.frozen;
        }
        Ok(())
    }

    pub fn set_rng(&mut self, rng: &ChaCha8Rng) {
        let mut out = Vec::with_capacity(56);
        out.extend_from_slice(&rng.get_seed());
        out.extend_from_slice(&rng.get_stream().to_le_bytes());
        out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        self.rng_state = out;
    }

    pub fn rng(&self) -> Option<ChaCha8Rng> {
        use rand::SeedableRng;
        if self.rng_state.len() != 56 {
            return None;
        }
        let seed: [u8; 32] = self.rng_state[..32].try_into().ok()?;
        let stream = u64::from_le_bytes(self.rng_state[32..40].try_into().ok()?);
        let pos = u128::from_le_bytes(self.rng_state[40..56].try_into().ok()?);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(pos);
        Some(rng)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CheckpointError::Kind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_str16(&mut b, &self.kind);
        b.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config.as_bytes());
        b.extend_from_slice(&(self.rng_state.len() as u16).to_le_bytes());
        b.extend_from_slice(&self.rng_state);
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str16(&mut b, &t.name);
            b.push(t.frozen as u8);
            b.push(t.shape.len() as u8);
            for &d in &t.shape {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated {
                offset: bytes.len(),
                needed: 4,
                available: 0,
            });
        }
        let body = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body]);
        let mut r = Reader {
            bytes: &bytes[..body],
            pos: 8,
        };
        let parsed = (|| -> Result<Self> {
            let kind = r.str16()?;
            let n = r.u32()? as usize;
            let config = r.utf8(n)?;
            let n = r.u16()? as usize;
            let rng_state = r.take(n)?.to_vec();
            let count = r.u32()? as usize;
            let mut tensors = Vec::new();
            for _ in 0..count {
                let name = r.str16()?;
                let frozen = r.take(1)?[0] != 0;
                let ndim = r.take(1)?[0] as usize;
                let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let len: usize = shape.iter().product();
                let raw = r.take(len.checked_mul(4).ok_or_else(|| r.malformed("tensor size overflow"))?)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                tensors.push(TensorRecord {
                    name,
                    shape,
                    frozen,
                    data,
                });
            }
            if r.pos != r.bytes.len() {
                return Err(r.malformed("trailing bytes after tensor table"));
            }
            Ok(Self {
                kind,
                config,
                rng_state,
                tensors,
            })
        })();
        // A short file usually fails structurally before the checksum can
        // be trusted; report the structural position in that case.
        match parsed {
            Err(e) if stored != computed => Err(match e {
                CheckpointError::Truncated { .. } | CheckpointError::Malformed { .. } => e,
                _ => CheckpointError::Checksum { stored, computed },
            }),
            Ok(_) if stored != computed => Err(CheckpointError::Checksum { stored, computed }),
            other => other,
        }
    }

    /// Writes atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(&self.to_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str16(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u16).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Malformed {
            offset: at,
            msg: "invalid utf-8".into(),
        })
    }

    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        self.utf8(n)
    }

    fn malformed(&self, msg: &str) -> CheckpointError {
        CheckpointError::Malformed {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }
}
