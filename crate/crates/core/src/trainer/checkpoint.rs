//! Checkpoint files: a text index header followed by the binary tensors.
//!
//! ```text
//! BROCKPT 1
//! config <n>
//! <n lines of key = value>
//! tensors <k>
//! <name> <extent>...      (k lines)
//! end
//! <k tensors in the binary tensor format, in index order>
//! ```

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{BroError, Result};
use crate::tensor::{read_tensor, write_tensor};

use super::conv::{Conv2d, Encoder};
use super::pipeline::Model;

pub const CHECKPOINT_MAGIC: &str = "BROCKPT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let config = self.config.to_text();
        let mut header = format!("{CHECKPOINT_MAGIC}\nconfig {}\n{config}", config.lines().count());
        let params = self.model.params();
        let _ = writeln!(header, "tensors {}", params.len());
        for (name, t) in Model::PARAM_NAMES.iter().zip(&params) {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(header, "{name} {}", dims.join(" "));
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for t in params {
            write_tensor(t, &mut out).expect("writing to a Vec cannot fail");
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |r: String| BroError::format(origin, r);
        if !bytes.starts_with(format!("{CHECKPOINT_MAGIC}\n").as_bytes()) {
            return Err(bad("bad magic: not a checkpoint".into()));
        }
        let mut pos = 0;
        let mut next_line = || -> Result<String> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end])
                .map_err(|_| bad("header is not UTF-8".into()))?
                .to_string();
            pos += end + 1;
            Ok(line)
        };
        next_line()?;
        let count = |line: String, word: &str| -> Result<usize> {
            line.strip_prefix(word)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| bad(format!("expected `{word} <count>`, got `{line}`")))
        };
        let n = count(next_line()?, "config")?;
        let mut text = String::new();
        for _ in 0..n {
            text.push_str(&next_line()?);
            text.push('\n');
        }
        let config = TrainConfig::parse(&text).map_err(|e| bad(format!("embedded config: {e}")))?;
        let k = count(next_line()?, "tensors")?;
        if k != Model::PARAM_NAMES.len() {
            return Err(bad(format!("expected {} tensors, found {k}", Model::PARAM_NAMES.len())));
        }
        let mut index = Vec::with_capacity(k);
        for name in Model::PARAM_NAMES {
            let line = next_line()?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected tensor `{name}`, got `{line}`")));
            }
            let shape = parts
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad extents in `{line}`")))?;
            index.push(shape);
        }
        if next_line()? != "end" {
            return Err(bad("missing `end` after the tensor index".into()));
        }

        let mut cursor = Cursor::new(&bytes[pos..]);
        let mut tensors = Vec::with_capacity(k);
        for (name, shape) in Model::PARAM_NAMES.iter().zip(&index) {
            let t = read_tensor(&mut cursor, origin)?;
            if t.shape() != shape.as_slice() {
                return Err(bad(format!("tensor `{name}` is {:?}, index says {shape:?}", t.shape())));
            }
            tensors.push(t);
        }
        if cursor.position() as usize != bytes.len() - pos {
            return Err(bad("trailing bytes after the last tensor".into()));
        }

        let mut it = tensors.into_iter();
        let layers = Encoder::STRIDES
            .iter()
            .map(|&stride| Conv2d {
                weight: it.next().expect("index has 7 entries"),
                bias: it.next().expect("index has 7 entries"),
                stride,
            })
            .collect::<Vec<_>>();
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels() != pair[1].in_channels() || pair[0].weight.shape()[2..] != [3, 3] {
                return Err(bad(format!("layer {} does not feed layer {}", i + 1, i + 2)));
            }
        }
        let model = Model {
            encoder: Encoder { layers },
            b_delta: it.next().expect("index has 7 entries"),
        };
        model
            .check_config(&config)
            .map_err(|e| bad(format!("tensors disagree with embedded config: {e}")))?;
        Ok(Self { config, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| BroError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| BroError::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            channels: 8,
            group_size: 2,
            ..TrainConfig::default()
        };
        Checkpoint {
            model: Model::new(&config, 4),
            config,
        }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.encode();
        assert!(bytes.starts_with(b"BROCKPT 1\nconfig 28\nalpha = 0.2\n"));
        assert_eq!(Checkpoint::decode(&bytes, Path::new("mem")).unwrap(), ck);
    }

    #[test]
    fn rejects_bad_magic_and_mismatches() {
        let ck = sample();
        let mut bytes = ck.encode();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes, Path::new("mem")), Err(BroError::Format { .. })));

        let mut tampered = ck.encode();
        let at = tampered.windows(14).position(|w| w == b"group_size = 2").unwrap();
        tampered[at + 13] = b'4';
        let err = Checkpoint::decode(&tampered, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("group_size"), "{err}");

        let truncated = &ck.encode()[..200];
        assert!(Checkpoint::decode(truncated, Path::new("mem")).is_err());
    }
}
