use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bumped only on incompatible layout changes.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream, enough to continue it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Stored as a decimal string because JSON numbers cannot hold u128.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Safetensors file with a JSON-ish header describing the run.
///
/// Header keys: `format_version`, `component`, `config` (JSON), `step`, `rng` (JSON).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub component: String,
    pub config: serde_json::Value,
    pub step: u64,
    pub rng: Option<RngState>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn encode(t: &Tensor) -> Result<(Dtype, Vec<usize>, Vec<u8>)> {
    let shape = t.dims().to_vec();
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            shape,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            shape,
            flat.to_dtype(DType::F32)?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        ),
    })
}

fn decode(name: &str, view: &TensorView<'_>) -> Result<Tensor> {
    let shape = view.shape().to_vec();
    let bytes = view.data();
    let t = match view.dtype() {
        Dtype::F64 => {
            let v: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F32 => {
            let v: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has unsupported dtype {other:?}"
            )))
        }
    };
    Ok(t)
}

/// Rewrites the JSON header with sorted keys. The metadata map is a
/// `HashMap`, so without this identical checkpoints could differ in bytes.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = |m: &str| Error::Checkpoint(format!("cannot canonicalize header: {m}"));
    let n = u64::from_le_bytes(bytes.get(..8).ok_or_else(|| bad("short file"))?.try_into().unwrap()) as usize;
    let header = bytes.get(8..8 + n).ok_or_else(|| bad("short header"))?;
    let mut map: BTreeMap<String, serde_json::Value> = serde_json::from_slice(header)?;
    if let Some(meta) = map.remove("__metadata__") {
        let sorted: BTreeMap<String, String> = serde_json::from_value(meta)?;
        map.insert("__metadata__".into(), serde_json::to_value(sorted)?);
    }
    let mut json = serde_json::to_vec(&map)?;
    json.resize(json.len().next_multiple_of(8), b' ');
    let mut out = Vec::with_capacity(8 + json.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let encoded = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), encode(t)?)))
            .collect::<Result<Vec<_>>>()?;
        let views = encoded
            .iter()
            .map(|(k, (dt, shape, bytes))| {
                TensorView::new(*dt, shape.clone(), bytes)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format_version".into(), CHECKPOINT_FORMAT_VERSION.to_string());
        meta.insert("component".into(), self.component.clone());
        meta.insert("config".into(), serde_json::to_string(&self.config)?);
        meta.insert("step".into(), self.step.to_string());
        if let Some(rng) = &self.rng {
            meta.insert("rng".into(), serde_json::to_string(rng)?);
        }
        let bytes = safetensors::tensor::serialize(views, Some(meta))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bytes = canonical_header(bytes)?;

        // Write-then-rename so an interrupted save never leaves a torn file.
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing header field {k}")));
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|_| bad("bad format_version".into()))?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!(
                "format version {version}, this build reads {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let config = serde_json::from_str(get("config")?)?;
        let step = get("step")?.parse().map_err(|_| bad("bad step".into()))?;
        let rng = meta.get("rng").map(|s| serde_json::from_str(s)).transpose()?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.iter() {
            tensors.insert(name.to_string(), decode(name, &view)?);
        }
        Ok(Self {
            component: get("component")?.clone(),
            config,
            step,
            rng,
            tensors,
        })
    }

    /// Fails unless the checkpoint carries the given component tag.
    pub fn expect_component(&self, component: &str) -> Result<()> {
        if self.component != component {
            return Err(Error::Checkpoint(format!(
                "expected a {component} checkpoint, found {}",
                self.component
            )));
        }
        Ok(())
    }

    /// Tensors whose names start with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rng_state_continues_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..13 {
            rng.random::<u32>();
        }
        let state = RngState::capture(&rng);
        let json = serde_json::to_string(&state).unwrap();
        let mut restored: ChaCha8Rng = serde_json::from_str::<RngState>(&json).unwrap().restore();
        for _ in 0..100 {
            assert_eq!(rng.random::<u64>(), restored.random::<u64>());
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.safetensors");
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "param.a".to_string(),
            Tensor::new(&[[1.5f64, -2.0], [0.25, 3.0]], &Device::Cpu).unwrap(),
        );
        tensors.insert("param.b".to_string(), Tensor::new(&[7f32], &Device::Cpu).unwrap());
        let ck = Checkpoint {
            component: "vocoder".into(),
            config: serde_json::json!({"layers": 8}),
            step: 42,
            rng: Some(RngState::capture(&ChaCha8Rng::seed_from_u64(3))),
            tensors,
        };
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.component, "vocoder");
        assert_eq!(back.step, 42);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.rng, ck.rng);
        let a = back.tensors["param.a"].to_vec2::<f64>().unwrap();
        assert_eq!(a, vec![vec![1.5, -2.0], vec![0.25, 3.0]]);
        assert_eq!(back.tensors["param.b"].dtype(), DType::F32);
        assert_eq!(back.with_prefix("param.").len(), 2);
        assert!(back.expect_component("upsampler").is_err());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
