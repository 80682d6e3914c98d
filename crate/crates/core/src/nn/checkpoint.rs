//! Text checkpoint format: a flat map from tensor names to shaped `f64` arrays.
//!
//! ```text
//! divcurriculum-checkpoint 1
//! meta <key> <json value>            (zero or more)
//! tensor <name> <rank> <d0> ... <dk>  (zero or more, each followed by one line)
//! <v0> <v1> ...                       (row-major values, shortest round-trip form)
//! end
//! ```
//!
//! Names and meta keys contain no whitespace. Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::Mlp;
use crate::error::{Error, Result};

const MAGIC: &str = "divcurriculum-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(bad(format!("invalid name `{name}`")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        check_name(name)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(bad(format!("tensor `{name}`: shape {shape:?} does not match {} values", data.len())));
        }
        self.tensors.insert(name.to_string(), Tensor { shape, data });
        Ok(())
    }

    pub fn set_meta(&mut self, key: &str, value: serde_json::Value) -> Result<()> {
        check_name(key)?;
        self.meta.insert(key.to_string(), value);
        Ok(())
    }

    pub fn meta_as<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| bad(format!("missing meta `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| bad(format!("meta `{key}`: {e}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    /// Stores every parameter tensor of `net` under `prefix.`, plus its architecture.
    pub fn add_mlp(&mut self, prefix: &str, net: &Mlp) -> Result<()> {
        self.set_meta(&format!("{prefix}.sizes"), serde_json::to_value(net.sizes())?)?;
        self.set_meta(&format!("{prefix}.activation"), serde_json::to_value(net.activation())?)?;
        self.set_meta(&format!("{prefix}.layer_norm"), serde_json::Value::Bool(net.layer_norm()))?;
        for t in net.tensor_layout() {
            let data = net.params()[t.offset..t.offset + t.len()].to_vec();
            self.insert(&format!("{prefix}.{}", t.name), t.shape.clone(), data)?;
        }
        Ok(())
    }

    /// Rebuilds a network stored with [`Checkpoint::add_mlp`].
    pub fn load_mlp(&self, prefix: &str) -> Result<Mlp> {
        let sizes: Vec<usize> = self.meta_as(&format!("{prefix}.sizes"))?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(bad(format!("`{prefix}`: invalid layer sizes {sizes:?}")));
        }
        let act = self.meta_as(&format!("{prefix}.activation"))?;
        let ln: bool = self.meta_as(&format!("{prefix}.layer_norm"))?;
        let mut net = Mlp::zeros(&sizes, act, ln);
        let mut params = vec![0.0; net.num_params()];
        for t in net.tensor_layout() {
            let stored = self.get(&format!("{prefix}.{}", t.name))?;
            if stored.shape != t.shape {
                return Err(bad(format!("`{prefix}.{}`: shape {:?}, expected {:?}", t.name, stored.shape, t.shape)));
            }
            params[t.offset..t.offset + t.len()].copy_from_slice(&stored.data);
        }
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {}", serde_json::to_string(v)?)?;
        }
        for (name, t) in &self.tensors {
            write!(w, "tensor {name} {}", t.shape.len())?;
            for d in &t.shape {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
            let line: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next =
            || -> Result<String> { lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(Error::from) };
        let header = next()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file"));
        }
        match parts.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(VERSION) => {}
            other => return Err(bad(format!("unsupported checkpoint version {other:?}"))),
        }
        let mut ck = Checkpoint::default();
        loop {
            let line = next()?;
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("end") => return Ok(ck),
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad("meta without key"))?;
                    let raw = parts.next().ok_or_else(|| bad("meta without value"))?;
                    let value = serde_json::from_str(raw).map_err(|e| bad(format!("meta `{key}`: {e}")))?;
                    ck.set_meta(key, value)?;
                }
                Some("tensor") => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() < 3 {
                        return Err(bad("truncated tensor header"));
                    }
                    let name = fields[1];
                    let rank: usize = fields[2].parse().map_err(|_| bad(format!("`{name}`: bad rank")))?;
                    if fields.len() != 3 + rank {
                        return Err(bad(format!("`{name}`: expected {rank} dimensions")));
                    }
                    let shape = fields[3..]
                        .iter()
                        .map(|d| d.parse::<usize>().map_err(|_| bad(format!("`{name}`: bad dimension `{d}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    let values = next()?;
                    let data = values
                        .split_whitespace()
                        .map(|v| v.parse::<f64>().map_err(|_| bad(format!("`{name}`: bad value `{v}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    ck.insert(name, shape, data)?;
                }
                _ => return Err(bad(format!("unexpected line `{line}`"))),
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
