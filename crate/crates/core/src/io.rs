//! Little-endian binary formats for cubes (`HSC1`), label maps (`HSL1`),
//! splits (`HSS1`), probability tensors (`HSP1`) and multiclass models
//! (`HSM1`), plus PGM heatmaps. Reals are stored as `f32` except the model
//! scalars, which are `f64`. Every write goes to a temporary file in the
//! target directory and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{HsiError, Result};
use crate::svm::{BinaryModel, KernelKind, KernelSpec, MulticlassModel, FALLBACK_SIGMOID};
use crate::types::{HyperCube, LabelMap, ProbabilityTensor, SplitSpec};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const LABEL_MAGIC: &[u8; 4] = b"HSL1";
pub const SPLIT_MAGIC: &[u8; 4] = b"HSS1";
pub const PROB_MAGIC: &[u8; 4] = b"HSP1";
pub const MODEL_MAGIC: &[u8; 4] = b"HSM1";

/// Writes `bytes` to `path` through a temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| HsiError::Io(e.error))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(HsiError::Format(format!(
                "{what}: bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Reader { bytes, pos: 4, what })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            HsiError::Format(format!("{}: truncated at byte {}", self.what, self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn overflow(&self) -> HsiError {
        HsiError::Format(format!("{}: size overflow", self.what))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(HsiError::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| HsiError::Format(format!("{what} {v} does not fit in u32")))
}

fn dim_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| HsiError::Format(format!("{what} {v} does not fit in u16")))
}

// ---- cube ----

pub fn encode_cube(cube: &HyperCube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + cube.data.len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&dim_u32(cube.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(cube.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(cube.bands, "bands")?.to_le_bytes());
    out.push(u8::from(cube.normalized));
    for &v in &cube.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    let mut r = Reader::new(bytes, CUBE_MAGIC, "cube")?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let b = r.u32()? as usize;
    let normalized = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(HsiError::Format(format!("cube: normalized flag {other}"))),
    };
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(b)).ok_or_else(|| r.overflow())?;
    let data: Vec<f64> = r.f32_vec(n)?.into_iter().map(f64::from).collect();
    r.finish()?;
    let mut cube = HyperCube::new(h, w, b, data)?;
    cube.normalized = normalized;
    Ok(cube)
}

pub fn write_cube(path: &Path, cube: &HyperCube) -> Result<()> {
    write_atomic(path, &encode_cube(cube)?)
}

pub fn read_cube(path: &Path) -> Result<HyperCube> {
    decode_cube(&fs::read(path)?)
}

// ---- labels ----

pub fn encode_labels(labels: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + labels.labels.len() * 2);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&dim_u32(labels.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(labels.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(labels.num_classes, "class count")?.to_le_bytes());
    for &l in &labels.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let mut r = Reader::new(bytes, LABEL_MAGIC, "labels")?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u16()? as usize;
    let n = h.checked_mul(w).ok_or_else(|| r.overflow())?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u16()?);
    }
    r.finish()?;
    LabelMap::new(h, w, c, labels)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_atomic(path, &encode_labels(labels)?)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?)
}

// ---- split ----

pub fn encode_split(split: &SplitSpec) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + split.training.len() * 8);
    out.extend_from_slice(SPLIT_MAGIC);
    out.extend_from_slice(&split.seed.to_le_bytes());
    out.extend_from_slice(&dim_u32(split.training.len(), "training count")?.to_le_bytes());
    for px in &split.training {
        out.extend_from_slice(&dim_u32(px.row, "row")?.to_le_bytes());
        out.extend_from_slice(&dim_u32(px.col, "col")?.to_le_bytes());
    }
    Ok(out)
}

/// Raw contents of a split file: seed and training positions.
pub fn decode_split_pixels(bytes: &[u8]) -> Result<(u64, Vec<(usize, usize)>)> {
    let mut r = Reader::new(bytes, SPLIT_MAGIC, "split")?;
    let seed = r.u64()?;
    let n = r.u32()? as usize;
    let mut pixels = Vec::with_capacity(n.min(bytes.len() / 8));
    for _ in 0..n {
        let row = r.u32()? as usize;
        let col = r.u32()? as usize;
        pixels.push((row, col));
    }
    r.finish()?;
    Ok((seed, pixels))
}

/// Decodes a split against its label map; testing pixels are every other
/// labeled pixel.
pub fn decode_split(bytes: &[u8], labels: &LabelMap) -> Result<SplitSpec> {
    let (seed, pixels) = decode_split_pixels(bytes)?;
    SplitSpec::from_training(labels, &pixels, seed)
}

pub fn write_split(path: &Path, split: &SplitSpec) -> Result<()> {
    write_atomic(path, &encode_split(split)?)
}

pub fn read_split(path: &Path, labels: &LabelMap) -> Result<SplitSpec> {
    decode_split(&fs::read(path)?, labels)
}

// ---- probability tensor ----

pub fn encode_probabilities(t: &ProbabilityTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + t.values.len() * 4);
    out.extend_from_slice(PROB_MAGIC);
    out.extend_from_slice(&dim_u32(t.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(t.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(t.num_classes, "class count")?.to_le_bytes());
    for &v in &t.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_probabilities(bytes: &[u8]) -> Result<ProbabilityTensor> {
    let mut r = Reader::new(bytes, PROB_MAGIC, "probabilities")?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u16()? as usize;
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(c)).ok_or_else(|| r.overflow())?;
    let values = r.f32_vec(n)?.into_iter().map(f64::from).collect();
    r.finish()?;
    ProbabilityTensor::new(h, w, c, values)
}

pub fn write_probabilities(path: &Path, t: &ProbabilityTensor) -> Result<()> {
    write_atomic(path, &encode_probabilities(t)?)
}

pub fn read_probabilities(path: &Path) -> Result<ProbabilityTensor> {
    decode_probabilities(&fs::read(path)?)
}

// ---- model ----

/// Layout: magic, u16 classes, u8 kernel kind, f64 sigma, u32 bands, then
/// per pair: u32 n_sv, f64 bias, f64 rho, f64 tau, f64 nu and n_sv records
/// of (u32 source pixel or `u32::MAX`, f64 alpha*y, bands × f32).
pub fn encode_model(model: &MulticlassModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&dim_u16(model.num_classes, "class count")?.to_le_bytes());
    out.push(model.kernel.kind as u8);
    out.extend_from_slice(&model.kernel.sigma.to_le_bytes());
    out.extend_from_slice(&dim_u32(model.bands, "bands")?.to_le_bytes());
    for pair in &model.pairs {
        out.extend_from_slice(&dim_u32(pair.num_sv(), "support vector count")?.to_le_bytes());
        for v in [pair.bias, pair.rho, pair.tau, pair.nu] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for k in 0..pair.num_sv() {
            out.extend_from_slice(&pair.sv_pixels[k].to_le_bytes());
            out.extend_from_slice(&pair.alphas[k].to_le_bytes());
            for &x in pair.support_vector(k) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<MulticlassModel> {
    let mut r = Reader::new(bytes, MODEL_MAGIC, "model")?;
    let c = r.u16()? as usize;
    let kind = match r.u8()? {
        0 => KernelKind::Rbf,
        other => return Err(HsiError::Format(format!("model: unknown kernel kind {other}"))),
    };
    let sigma = r.f64()?;
    let kernel = KernelSpec::rbf(sigma).map_err(|_| HsiError::Format(format!("model: kernel width {sigma}")))?;
    debug_assert_eq!(kernel.kind, kind);
    let bands = r.u32()? as usize;
    let num_pairs = c * c.saturating_sub(1) / 2;
    let mut pairs = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let n_sv = r.u32()? as usize;
        let bias = r.f64()?;
        let rho = r.f64()?;
        let tau = r.f64()?;
        let nu = r.f64()?;
        let mut sv_pixels = Vec::with_capacity(n_sv.min(bytes.len()));
        let mut alphas = Vec::with_capacity(n_sv.min(bytes.len()));
        let mut support_vectors = Vec::new();
        for _ in 0..n_sv {
            sv_pixels.push(r.u32()?);
            alphas.push(r.f64()?);
            support_vectors.extend(r.f32_vec(bands)?);
        }
        pairs.push(BinaryModel {
            bands,
            support_vectors,
            sv_pixels,
            alphas,
            bias,
            kernel,
            rho,
            tau,
            nu,
            sigmoid_fallback: (rho, tau) == FALLBACK_SIGMOID,
        });
    }
    r.finish()?;
    Ok(MulticlassModel {
        num_classes: c,
        bands,
        kernel,
        pairs,
    })
}

pub fn write_model(path: &Path, model: &MulticlassModel) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn read_model(path: &Path) -> Result<MulticlassModel> {
    decode_model(&fs::read(path)?)
}

// ---- class counts ----

/// Parses `class,count` records (1-based classes, header optional) into
/// per-class counts indexed by 0-based class.
pub fn parse_counts_csv(text: &str) -> Result<Vec<usize>> {
    let mut counts: Vec<Option<usize>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(HsiError::Format(format!("counts line {}: expected two fields", lineno + 1)));
        };
        let (class, count) = match (a.parse::<usize>(), b.parse::<usize>()) {
            (Ok(c), Ok(n)) => (c, n),
            _ if lineno == 0 => continue,
            _ => return Err(HsiError::Format(format!("counts line {}: not integers", lineno + 1))),
        };
        if class == 0 {
            return Err(HsiError::Format(format!("counts line {}: classes start at 1", lineno + 1)));
        }
        if counts.len() < class {
            counts.resize(class, None);
        }
        if counts[class - 1].replace(count).is_some() {
            return Err(HsiError::Format(format!("class {class} listed twice")));
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| c.ok_or_else(|| HsiError::Format(format!("no count for class {}", k + 1))))
        .collect()
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<usize>> {
    parse_counts_csv(&fs::read_to_string(path)?)
}

// ---- PGM ----

/// Binary greymap (`P5`). Values above 255 switch to 16-bit big-endian
/// samples as the format requires.
pub fn encode_pgm(width: usize, height: usize, maxval: u16, values: &[u16]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(HsiError::LengthMismatch {
            expected: width * height,
            actual: values.len(),
        });
    }
    let maxval = maxval.max(1);
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in values {
        let v = v.min(maxval);
        if maxval < 256 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    Ok(out)
}
