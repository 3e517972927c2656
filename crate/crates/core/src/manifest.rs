//! Content payload files and the content-set manifest.
//!
//! A payload file is exactly `Q / 8` raw bytes, bit `k` of the payload at
//! byte `k / 8`, most significant bit first. The manifest is plain text,
//! one `key=value` per line, `#` starting a comment:
//!
//! ```text
//! m=3
//! q=1024
//! 1=file:contents/first.bin
//! 2=seed:42
//! 3=file:/abs/path/third.bin
//! ```
//!
//! `file:` paths are relative to the manifest's directory; `seed:` contents
//! are generated from the crate's seeded generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::coding::{ContentStore, Payload};
use crate::error::{Error, Result};
use crate::gf2::BitVector;
use crate::seeds::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContentSource {
    File(PathBuf),
    Seed(u64),
}

fn check_q(q: usize) -> Result<()> {
    if q == 0 || !q.is_multiple_of(8) {
        Err(Error::Config(format!(
            "Q must be a positive multiple of 8, got {q}"
        )))
    } else {
        Ok(())
    }
}

pub fn read_payload(path: &Path, q: usize) -> Result<Payload> {
    check_q(q)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != q / 8 {
        return Err(Error::Config(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            q / 8,
            bytes.len()
        )));
    }
    BitVector::from_bytes(q, &bytes)
}

pub fn write_payload(path: &Path, payload: &Payload) -> Result<()> {
    check_q(payload.len())?;
    fs::write(path, payload.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Payload generated for a `seed:` manifest entry.
pub fn seeded_payload(seed: u64, q: usize) -> Payload {
    BitVector::random(q, &mut rng_from_seed(seed))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub m: usize,
    pub q: usize,
    pub sources: Vec<ContentSource>,
}

impl Manifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            detail,
        };
        let mut m = None;
        let mut q = None;
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let as_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| parse_err(line_no, format!("{key}: {e}")))
            };
            match key {
                "m" => m = Some(as_usize(value)?),
                "q" | "Q" => q = Some(as_usize(value)?),
                _ => {
                    let index = as_usize(key)?;
                    let source = if let Some(p) = value.strip_prefix("file:") {
                        ContentSource::File(PathBuf::from(p.trim()))
                    } else if let Some(s) = value.strip_prefix("seed:") {
                        ContentSource::Seed(
                            s.trim()
                                .parse()
                                .map_err(|e| parse_err(line_no, format!("seed: {e}")))?,
                        )
                    } else {
                        return Err(parse_err(line_no, format!("unknown source {value:?}")));
                    };
                    if entries.insert(index, source).is_some() {
                        return Err(parse_err(line_no, format!("duplicate content {index}")));
                    }
                }
            }
        }
        let m = m.ok_or_else(|| parse_err(0, "missing m".into()))?;
        let q = q.ok_or_else(|| parse_err(0, "missing q".into()))?;
        check_q(q)?;
        let keys: Vec<usize> = entries.keys().copied().collect();
        if keys != (1..=m).collect::<Vec<_>>() {
            return Err(parse_err(
                0,
                format!("contents must be exactly 1..={m}, got {keys:?}"),
            ));
        }
        Ok(Self {
            m,
            q,
            sources: entries.into_values().collect(),
        })
    }

    pub fn load(path: &Path) -> Result<ContentStore> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve(base)
    }

    pub fn resolve(&self, base: &Path) -> Result<ContentStore> {
        let payloads = self
            .sources
            .iter()
            .map(|s| match s {
                ContentSource::Seed(seed) => Ok(seeded_payload(*seed, self.q)),
                ContentSource::File(p) => read_payload(&base.join(p), self.q),
            })
            .collect::<Result<Vec<_>>>()?;
        ContentStore::new(self.q, payloads)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("m={}\nq={}\n", self.m, self.q);
        for (i, s) in self.sources.iter().enumerate() {
            match s {
                ContentSource::File(p) => {
                    out.push_str(&format!("{}=file:{}\n", i + 1, p.display()))
                }
                ContentSource::Seed(seed) => out.push_str(&format!("{}=seed:{seed}\n", i + 1)),
            }
        }
        out
    }
}

/// Writes every content as `content_NNNN.bin` into `dir` plus a
/// `manifest.txt` referencing them. Returns the manifest path.
pub fn write_store(store: &ContentStore, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sources = Vec::with_capacity(store.m());
    for c in store.contents() {
        let name = format!("content_{:04}.bin", c.index);
        write_payload(&dir.join(&name), &c.payload)?;
        sources.push(ContentSource::File(PathBuf::from(name)));
    }
    let manifest = Manifest {
        m: store.m(),
        q: store.q(),
        sources,
    };
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_sources() {
        let text = "# demo\nm=2\nq=16\n2=file:b.bin\n1=seed:5 # inline\n";
        let m = Manifest::parse(text, Path::new("x")).unwrap();
        assert_eq!(m.m, 2);
        assert_eq!(m.sources[0], ContentSource::Seed(5));
        assert_eq!(m.sources[1], ContentSource::File("b.bin".into()));
    }

    #[test]
    fn rejects_bad_manifests() {
        let bad = [
            "m=2\nq=16\n1=seed:1\n",
            "m=1\nq=12\n1=seed:1\n",
            "m=1\nq=16\n1=url:x\n",
            "m=1\nq=16\n1=seed:1\n1=seed:2\n",
            "q=16\n1=seed:1\n",
            "m=1\nq=16\nnonsense\n",
        ];
        for text in bad {
            assert!(Manifest::parse(text, Path::new("x")).is_err(), "{text}");
        }
    }

    #[test]
    fn store_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::random(3, 64, &mut rng_from_seed(1)).unwrap();
        let path = write_store(&store, dir.path()).unwrap();
        assert_eq!(
            fs::metadata(dir.path().join("content_0001.bin"))
                .unwrap()
                .len(),
            8
        );
        assert_eq!(Manifest::load(&path).unwrap(), store);
    }

    #[test]
    fn payload_length_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.bin");
        fs::write(&p, [0u8; 3]).unwrap();
        assert!(read_payload(&p, 64).is_err());
        assert!(write_payload(&p, &BitVector::zeros(12)).is_err());
    }
}
