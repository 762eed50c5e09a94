use std::fmt::Write as _;
use std::path::Path;

use crate::model::{BranchName, ModelConfig, MultiStreamModel};
use crate::numcore::{Parameter, Tensor};
use crate::semisup::{Segmenter, SegmenterConfig};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "TRISTREAM-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A classifier and/or segmenter with the seed they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub model: Option<MultiStreamModel>,
    pub segmenter: Option<Segmenter>,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn table(params: &[(String, Vec<usize>)]) -> String {
    params
        .iter()
        .map(|(n, s)| format!("{n} {}", shape_str(s)))
        .collect::<Vec<_>>()
        .join("; ")
}

fn next_field<'a>(it: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = it.next().ok_or_else(|| ck_err(format!("missing `{key}` line")))?;
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| ck_err(format!("expected `{key}`, found `{line}`")))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serialises")
}

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.model.as_ref().map(|m| m.params()).unwrap_or_default();
        if let Some(s) = &self.segmenter {
            v.extend(s.params());
        }
        v
    }

    /// Text header followed by little-endian f32 payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut h = String::new();
        writeln!(h, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(h, "version {CHECKPOINT_VERSION}").unwrap();
        writeln!(h, "seed {}", self.seed).unwrap();
        match &self.model {
            Some(m) => {
                let branches: Vec<&str> = BranchName::ALL.iter().map(|b| b.as_str()).collect();
                writeln!(h, "branches {}", branches.join(",")).unwrap();
                writeln!(h, "classes {}", m.num_classes()).unwrap();
                writeln!(h, "tau {}", m.tau()).unwrap();
                writeln!(h, "model {}", to_json(m.config())).unwrap();
            }
            None => writeln!(h, "model none").unwrap(),
        }
        match &self.segmenter {
            Some(s) => writeln!(h, "segmenter {}", to_json(s.config())).unwrap(),
            None => writeln!(h, "segmenter none").unwrap(),
        }
        let params = self.params();
        writeln!(h, "params {}", params.len()).unwrap();
        for p in &params {
            writeln!(h, "param {} {}", p.name, shape_str(p.value.shape())).unwrap();
        }
        writeln!(h, "end").unwrap();
        let mut out = h.into_bytes();
        for p in &params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse(bytes, None)
    }

    /// Like [`Self::from_bytes`], additionally requiring the stored shape
    /// table to match the classifier built from `expected`.
    pub fn from_bytes_expecting(bytes: &[u8], expected: &ModelConfig) -> Result<Self> {
        Self::parse(bytes, Some(expected))
    }

    fn parse(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let nl = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| ck_err("header is not terminated by `end`"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| ck_err("header is not UTF-8"))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line);
            if lines.len() > 100_000 {
                return Err(ck_err("header too long"));
            }
        }
        let mut it = lines.into_iter().peekable();
        if it.next() != Some(CHECKPOINT_MAGIC) {
            return Err(ck_err("not a checkpoint file"));
        }
        let version: u32 = next_field(&mut it, "version")?.parse().map_err(|_| ck_err("bad version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(ck_err(format!(
                "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let seed: u64 = next_field(&mut it, "seed")?.parse().map_err(|_| ck_err("bad seed"))?;
        let model_cfg: Option<ModelConfig> = if it.peek() == Some(&"model none") {
            next_field(&mut it, "model")?;
            None
        } else {
            let want: Vec<&str> = BranchName::ALL.iter().map(|b| b.as_str()).collect();
            if next_field(&mut it, "branches")? != want.join(",") {
                return Err(ck_err(format!("branch list must be {}", want.join(","))));
            }
            let classes: usize = next_field(&mut it, "classes")?.parse().map_err(|_| ck_err("bad classes"))?;
            let tau: f32 = next_field(&mut it, "tau")?.parse().map_err(|_| ck_err("bad tau"))?;
            let cfg: ModelConfig =
                serde_json::from_str(next_field(&mut it, "model")?).map_err(|e| ck_err(format!("model config: {e}")))?;
            if cfg.num_classes != classes || cfg.tau.to_bits() != tau.to_bits() {
                return Err(ck_err("classes/tau disagree with the model config"));
            }
            Some(cfg)
        };
        let seg_cfg: Option<SegmenterConfig> = match next_field(&mut it, "segmenter")? {
            "none" => None,
            s => Some(serde_json::from_str(s).map_err(|e| ck_err(format!("segmenter config: {e}")))?),
        };
        let n: usize = next_field(&mut it, "params")?.parse().map_err(|_| ck_err("bad params count"))?;
        let mut stored = Vec::with_capacity(n);
        for _ in 0..n {
            let rest = next_field(&mut it, "param")?;
            let (name, shape) = rest.rsplit_once(' ').ok_or_else(|| ck_err(format!("bad param line `{rest}`")))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| ck_err(format!("bad shape in `{rest}`"))))
                .collect::<Result<_>>()?;
            stored.push((name.to_string(), shape));
        }

        let model = model_cfg.map(|c| MultiStreamModel::new(c, seed)).transpose()?;
        let segmenter = seg_cfg.map(|c| Segmenter::new(c, 0)).transpose()?;
        let mut want: Vec<(String, Vec<usize>)> = Vec::new();
        if let Some(m) = &model {
            want.extend(m.params().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())));
        }
        if let Some(s) = &segmenter {
            want.extend(s.params().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())));
        }
        if stored != want {
            return Err(ck_err(format!(
                "shape table mismatch\n  stored:   {}\n  expected: {}",
                table(&stored),
                table(&want)
            )));
        }
        if let (Some(exp), Some(m)) = (expected, &model) {
            let exp_model = MultiStreamModel::new(exp.clone(), seed)?;
            let exp_table: Vec<(String, Vec<usize>)> =
                exp_model.params().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect();
            let n_model = m.params().len();
            if exp_table[..] != stored[..n_model.min(stored.len())] {
                return Err(ck_err(format!(
                    "checkpoint does not fit the configured model\n  checkpoint: {}\n  config:     {}",
                    table(&stored[..n_model]),
                    table(&exp_table)
                )));
            }
        }

        let floats: usize = stored.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let payload = &bytes[pos..];
        if payload.len() != 4 * floats {
            return Err(ck_err(format!(
                "payload has {} bytes, expected {} (truncated or corrupt)",
                payload.len(),
                4 * floats
            )));
        }
        let mut values = stored.iter().scan(0usize, |off, (_, s)| {
            let len: usize = s.iter().product();
            let data: Vec<f32> = payload[4 * *off..4 * (*off + len)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            *off += len;
            Some(Tensor::new(s.clone(), data).expect("shape"))
        });
        let model = match model {
            Some(m) => {
                let k = m.params().len();
                let vals: Vec<Tensor> = values.by_ref().take(k).collect();
                Some(MultiStreamModel::from_parts(m.config().clone(), seed, vals)?)
            }
            None => None,
        };
        let segmenter = match segmenter {
            Some(s) => Some(Segmenter::from_parts(s.config().clone(), values.collect())?),
            None => None,
        };
        Ok(Checkpoint {
            seed,
            model,
            segmenter,
        })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, ck.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
