use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{DenseArray, GradError};

const MANIFEST: &str = "manifest.txt";
const BLOB: &str = "params.bin";
const HEADER: &str = "lsdm-checkpoint 1";

/// Named trainable arrays plus the generator used to initialise them.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: BTreeMap<String, DenseArray>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn insert(&mut self, name: &str, value: DenseArray) {
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DenseArray)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.params.values().map(DenseArray::len).sum()
    }

    /// Registers `name` with entries drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    /// Existing entries are left untouched.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        if self.params.contains_key(name) {
            return;
        }
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let arr = DenseArray::new(shape.to_vec(), data).expect("shape product");
        self.params.insert(name.to_string(), arr);
    }

    /// Registers `name` with a fixed value unless already present.
    pub fn init_value(&mut self, name: &str, value: DenseArray) {
        self.params.entry(name.to_string()).or_insert(value);
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(DenseArray::is_finite)
    }

    /// Largest absolute entrywise difference against another store.
    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        self.params
            .iter()
            .map(|(k, v)| other.get(k).map_or(f64::INFINITY, |o| v.max_abs_diff(o)))
            .fold(0.0, f64::max)
    }

    fn quantized(&self) -> ParamStore {
        let params = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.map(|x| x as f32 as f64)))
            .collect();
        ParamStore {
            params,
            rng: self.rng.clone(),
        }
    }
}

/// Parameters and string metadata read from a checkpoint directory.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

/// Writes `params` as little-endian `f32` plus a text manifest, returning the
/// store as it will be read back.
pub fn save_checkpoint(
    dir: &Path,
    meta: &BTreeMap<String, String>,
    params: &ParamStore,
) -> Result<ParamStore, GradError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(GradError::Checkpoint(format!("unencodable metadata `{k}`")));
        }
        writeln!(manifest, "meta {k} {v}").expect("string write");
    }
    let mut blob: Vec<u8> = Vec::with_capacity(params.size() * 4);
    let mut offset = 0usize;
    for (name, arr) in params.iter() {
        if name.contains(char::is_whitespace) {
            return Err(GradError::Checkpoint(format!("parameter name `{name}` has whitespace")));
        }
        let dims: Vec<String> = arr.shape().iter().map(usize::to_string).collect();
        let dims = if dims.is_empty() { "-".to_string() } else { dims.join("x") };
        writeln!(manifest, "param {name} {dims} {offset} f32le").expect("string write");
        for v in arr.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        offset += arr.len();
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    fs::write(dir.join(BLOB), blob)?;
    Ok(params.quantized())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, GradError> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let blob = fs::read(dir.join(BLOB))?;
    if blob.len() % 4 != 0 {
        return Err(GradError::Checkpoint("parameter blob length is not a multiple of 4".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut lines = manifest.lines();
    if lines.next() != Some(HEADER) {
        return Err(GradError::Checkpoint("unrecognised manifest header".into()));
    }
    let mut meta = BTreeMap::new();
    let mut params = ParamStore::new(0);
    for (lineno, line) in lines.enumerate() {
        let bad = |what: &str| GradError::Checkpoint(format!("manifest line {}: {what}", lineno + 2));
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "param" || fields[4] != "f32le" {
            return Err(bad("expected `param <name> <dims> <offset> f32le`"));
        }
        let shape: Vec<usize> = if fields[2] == "-" {
            vec![]
        } else {
            fields[2]
                .split('x')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad dims"))?
        };
        let offset: usize = fields[3].parse().map_err(|_| bad("bad offset"))?;
        let n: usize = shape.iter().product();
        let slice = values
            .get(offset..offset + n)
            .ok_or_else(|| bad("parameter extends past blob"))?;
        params.insert(fields[1], DenseArray::new(shape, slice.to_vec())?);
    }
    Ok(Checkpoint { meta, params })
}

/// SHA-256 over the manifest followed by the parameter blob, hex encoded.
pub fn checkpoint_hash(dir: &Path) -> Result<String, GradError> {
    let mut hasher = Sha256::new();
    hasher.update(fs::read(dir.join(MANIFEST))?);
    hasher.update(fs::read(dir.join(BLOB))?);
    Ok(hex::encode(hasher.finalize()))
}
