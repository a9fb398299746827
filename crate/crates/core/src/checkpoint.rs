//! Plain-text network checkpoints.
//!
//! ```text
//! hashlearn-checkpoint 1
//! input 4
//! trunk 8 6
//! hash_bits 16
//! classes 4
//! activations relu relu identity identity
//! params 278
//! 0.12345
//! ...
//! ```
//!
//! Layers are listed trunk first, then the hash head, then the class head.
//! Parameters are written with Rust's shortest round-trip float formatting, so
//! loading reproduces them bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{Activation, Architecture, MlpNetwork};

const MAGIC: &str = "hashlearn-checkpoint";
const VERSION: u32 = 1;

pub fn to_string(net: &MlpNetwork) -> String {
    let arch = net.architecture();
    let mut s = String::new();
    let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
    writeln!(s, "{MAGIC} {VERSION}").unwrap();
    writeln!(s, "input {}", arch.input).unwrap();
    writeln!(s, "trunk {}", join(&mut arch.trunk.iter().map(ToString::to_string))).unwrap();
    writeln!(s, "hash_bits {}", arch.hash_bits).unwrap();
    writeln!(s, "classes {}", arch.classes).unwrap();
    writeln!(s, "activations {}", join(&mut net.layers().iter().map(|l| l.activation.name().to_string()))).unwrap();
    writeln!(s, "params {}", net.num_params()).unwrap();
    for p in net.params() {
        writeln!(s, "{p:?}").unwrap();
    }
    s
}

pub fn from_str(text: &str) -> Result<MlpNetwork> {
    let bad = |reason: String| Error::Checkpoint { path: PathBuf::new(), reason };
    let mut lines = text.lines();
    let mut field = |key: &str| -> Result<Vec<String>> {
        let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(format!("expected `{key}`, found {line:?}")));
        }
        Ok(parts.map(str::to_string).collect())
    };
    let one = |v: Vec<String>, key: &str| -> Result<usize> {
        match v.as_slice() {
            [x] => x.parse().map_err(|_| bad(format!("`{key}` is not a count: {x:?}"))),
            _ => Err(bad(format!("`{key}` takes exactly one value"))),
        }
    };

    let version = field(MAGIC)?;
    if version != [VERSION.to_string()] {
        return Err(bad(format!("unsupported version {version:?}")));
    }
    let input = one(field("input")?, "input")?;
    let trunk = field("trunk")?
        .iter()
        .map(|x| x.parse().map_err(|_| bad(format!("bad trunk width {x:?}"))))
        .collect::<Result<Vec<usize>>>()?;
    let hash_bits = one(field("hash_bits")?, "hash_bits")?;
    let classes = one(field("classes")?, "classes")?;
    let activations = field("activations")?;
    let count = one(field("params")?, "params")?;

    let arch = Architecture { input, trunk, hash_bits, classes };
    let net = MlpNetwork::zeros(arch.clone()).map_err(|e| bad(e.to_string()))?;
    let expected: Vec<&str> = net.layers().iter().map(|l| l.activation.name()).collect();
    if activations.iter().any(|a| Activation::parse(a).is_none()) || activations != expected {
        return Err(bad(format!("activations {activations:?} do not match the layout {expected:?}")));
    }
    if count != net.num_params() {
        return Err(bad(format!("header declares {count} params, architecture needs {}", net.num_params())));
    }
    let params = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|_| bad(format!("bad parameter {l:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    if params.len() != count {
        return Err(bad(format!("expected {count} params, found {}", params.len())));
    }
    MlpNetwork::from_params(arch, params)
}

pub fn save(net: &MlpNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MlpNetwork> {
    let text = std::fs::read_to_string(path)?;
    from_str(&text).map_err(|e| match e {
        Error::Checkpoint { reason, .. } => Error::Checkpoint { path: path.to_path_buf(), reason },
        other => other,
    })
}
