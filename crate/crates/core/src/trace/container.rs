//! On-disk layout:
//!
//! ```text
//! bundle.json                      optional index: sample order, annotations_ref
//! pack/manifest.json
//! pack/unembed.bin
//! pack/vocab.tsv                   token_id \t surface (escaped: \\ \t \n \r)
//! samples/<sample_id>/manifest.json
//! samples/<sample_id>/tensors.bin
//! ```
//!
//! Blob files start with an 8-byte magic followed by zero padding up to the
//! first 64-byte boundary. Every section is little-endian `f32`, row-major,
//! starts on a 64-byte boundary and is described in the owning manifest by
//! name, shape, offset, byte length and SHA-256 digest. Bytes not covered
//! by a section are zero, and the file is padded to a multiple of 64 bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::check::{check_bundle, check_pack, check_sample, is_valid_sample_id};
use super::{
    GenToken, LayerConvention, LayerStates, Matrix, ModelPack, SampleTrace, SectionName,
    TraceBundle, TraceError, UnembedInputTransform, ValidationReport,
};

pub const FORMAT_VERSION: &str = "1";
pub const SECTION_ALIGN: usize = 64;

const MANIFEST_MAGIC: &str = "glsim-trace";
const BLOB_MAGIC: &[u8; 8] = b"GLSTNSR1";

const PACK_DIR: &str = "pack";
const SAMPLES_DIR: &str = "samples";
const INDEX_FILE: &str = "bundle.json";
const MANIFEST_FILE: &str = "manifest.json";
const UNEMBED_FILE: &str = "unembed.bin";
const VOCAB_FILE: &str = "vocab.tsv";
const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SectionEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PackManifest {
    magic: String,
    format_version: String,
    model_id: String,
    hidden_dim: usize,
    vocab_size: usize,
    layer_count: usize,
    layer_convention: LayerConvention,
    unembed_input_transform: UnembedInputTransform,
    vocab_file: String,
    blob: BlobRef,
    sections: Vec<SectionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenEntry {
    token_id: u32,
    char_span: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleManifest {
    magic: String,
    format_version: String,
    sample_id: String,
    image_id: String,
    grid: [usize; 2],
    n_visual: usize,
    n_generated: usize,
    hidden_dim: usize,
    exported_layers: Vec<usize>,
    var_layers: Vec<usize>,
    generated_text: String,
    gen_tokens: Vec<TokenEntry>,
    blob: BlobRef,
    sections: Vec<SectionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleIndex {
    magic: String,
    format_version: String,
    samples: Vec<String>,
    annotations_ref: Option<String>,
}

// ---------------------------------------------------------------------------
// writing

fn align_up(n: usize) -> usize {
    n.div_ceil(SECTION_ALIGN) * SECTION_ALIGN
}

struct BlobWriter {
    buf: Vec<u8>,
    sections: Vec<SectionEntry>,
}

impl BlobWriter {
    fn new() -> Self {
        let mut buf = Vec::with_capacity(SECTION_ALIGN);
        buf.extend_from_slice(BLOB_MAGIC);
        buf.resize(SECTION_ALIGN, 0);
        Self {
            buf,
            sections: Vec::new(),
        }
    }

    fn add(&mut self, name: String, shape: Vec<usize>, data: &[f32]) {
        self.buf.resize(align_up(self.buf.len()), 0);
        let offset = self.buf.len();
        for x in data {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        let bytes = &self.buf[offset..];
        self.sections.push(SectionEntry {
            name,
            shape,
            offset: offset as u64,
            nbytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    fn finish(mut self, file: &str) -> (Vec<u8>, BlobRef, Vec<SectionEntry>) {
        self.buf.resize(align_up(self.buf.len()), 0);
        let blob = BlobRef {
            file: file.to_string(),
            bytes: self.buf.len() as u64,
        };
        (self.buf, blob, self.sections)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), TraceError> {
    fs::write(path, bytes).map_err(|e| TraceError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TraceError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| {
        TraceError::ManifestMismatch(format!("serializing {}: {e}", path.display()))
    })?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn create_dir(path: &Path) -> Result<(), TraceError> {
    fs::create_dir_all(path).map_err(|e| TraceError::io(path, e))
}

fn escape_surface(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_surface(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push('\\'),
                't' => out.push('\t'),
                'n' => out.push('\n'),
                'r' => out.push('\r'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

fn write_pack(pack: &ModelPack, dir: &Path) -> Result<(), TraceError> {
    create_dir(dir)?;
    let mut blob = BlobWriter::new();
    blob.add(
        "unembed".to_string(),
        vec![pack.unembed.rows(), pack.unembed.cols()],
        pack.unembed.data(),
    );
    let (bytes, blob_ref, sections) = blob.finish(UNEMBED_FILE);
    write_file(&dir.join(UNEMBED_FILE), &bytes)?;

    let mut vocab = String::new();
    for (id, surface) in pack.vocab.iter().enumerate() {
        vocab.push_str(&format!("{id}\t{}\n", escape_surface(surface)));
    }
    write_file(&dir.join(VOCAB_FILE), vocab.as_bytes())?;

    let manifest = PackManifest {
        magic: MANIFEST_MAGIC.to_string(),
        format_version: FORMAT_VERSION.to_string(),
        model_id: pack.model_id.clone(),
        hidden_dim: pack.hidden_dim,
        vocab_size: pack.vocab_size,
        layer_count: pack.layer_count,
        layer_convention: pack.layer_convention,
        unembed_input_transform: pack.unembed_input_transform,
        vocab_file: VOCAB_FILE.to_string(),
        blob: blob_ref,
        sections,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn write_sample(sample: &SampleTrace, hidden_dim: usize, dir: &Path) -> Result<(), TraceError> {
    create_dir(dir)?;
    let mut blob = BlobWriter::new();
    for (&layer, states) in &sample.layers {
        blob.add(
            SectionName("visual_hidden", layer).to_string(),
            vec![states.visual.rows(), states.visual.cols()],
            states.visual.data(),
        );
        blob.add(
            SectionName("prompt_last_hidden", layer).to_string(),
            vec![states.prompt_last.len()],
            &states.prompt_last,
        );
        blob.add(
            SectionName("gen_hidden", layer).to_string(),
            vec![states.generated.rows(), states.generated.cols()],
            states.generated.data(),
        );
    }
    let logprobs: Vec<f32> = sample.gen_tokens.iter().map(|t| t.logprob).collect();
    let entropies: Vec<f32> = sample.gen_tokens.iter().map(|t| t.entropy).collect();
    blob.add("gen_logprob".to_string(), vec![logprobs.len()], &logprobs);
    blob.add("gen_entropy".to_string(), vec![entropies.len()], &entropies);
    for (&layer, values) in &sample.var {
        blob.add(
            SectionName("var", layer).to_string(),
            vec![values.len()],
            values,
        );
    }
    let (bytes, blob_ref, sections) = blob.finish(TENSORS_FILE);
    write_file(&dir.join(TENSORS_FILE), &bytes)?;

    let manifest = SampleManifest {
        magic: MANIFEST_MAGIC.to_string(),
        format_version: FORMAT_VERSION.to_string(),
        sample_id: sample.sample_id.clone(),
        image_id: sample.image_id.clone(),
        grid: [sample.grid.0, sample.grid.1],
        n_visual: sample.n_visual,
        n_generated: sample.gen_tokens.len(),
        hidden_dim,
        exported_layers: sample.layers.keys().copied().collect(),
        var_layers: sample.var.keys().copied().collect(),
        generated_text: sample.generated_text.clone(),
        gen_tokens: sample
            .gen_tokens
            .iter()
            .map(|t| TokenEntry {
                token_id: t.token_id,
                char_span: [t.char_span.0, t.char_span.1],
            })
            .collect(),
        blob: blob_ref,
        sections,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Writes `bundle` under `dest` after checking every invariant.
///
/// Sample directories already present under `dest` must belong to the
/// bundle; their files are overwritten.
pub fn write_bundle(bundle: &TraceBundle, dest: &Path) -> Result<(), TraceError> {
    let report = check_bundle(bundle);
    if !report.is_valid() {
        let detail: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(TraceError::InvariantViolation(detail.join("; ")));
    }
    write_bundle_unchecked(bundle, dest)
}

/// Writes without the invariant gate. Sample ids must still be safe
/// directory names. Exists to build corrupt fixtures for validator tests.
#[doc(hidden)]
pub fn write_bundle_unchecked(bundle: &TraceBundle, dest: &Path) -> Result<(), TraceError> {
    if let Some(bad) = bundle
        .samples
        .iter()
        .find(|s| !is_valid_sample_id(&s.sample_id))
    {
        return Err(TraceError::InvariantViolation(format!(
            "sample_id {:?} is not a valid directory name",
            bad.sample_id
        )));
    }
    let samples_dir = dest.join(SAMPLES_DIR);
    if samples_dir.is_dir() {
        let ours: HashSet<&str> = bundle
            .samples
            .iter()
            .map(|s| s.sample_id.as_str())
            .collect();
        for existing in list_sample_dirs(&samples_dir)? {
            if !ours.contains(existing.as_str()) {
                return Err(TraceError::io(
                    samples_dir.join(&existing),
                    std::io::Error::new(
                        std::io::ErrorKind::AlreadyExists,
                        "destination holds a sample that is not part of this bundle",
                    ),
                ));
            }
        }
    }
    create_dir(dest)?;
    write_pack(&bundle.pack, &dest.join(PACK_DIR))?;
    create_dir(&samples_dir)?;
    for sample in &bundle.samples {
        write_sample(
            sample,
            bundle.pack.hidden_dim,
            &samples_dir.join(&sample.sample_id),
        )?;
    }
    let index = BundleIndex {
        magic: MANIFEST_MAGIC.to_string(),
        format_version: FORMAT_VERSION.to_string(),
        samples: bundle.samples.iter().map(|s| s.sample_id.clone()).collect(),
        annotations_ref: bundle.annotations_ref.clone(),
    };
    write_json(&dest.join(INDEX_FILE), &index)
}

// ---------------------------------------------------------------------------
// reading

fn read_bytes(path: &Path) -> Result<Vec<u8>, TraceError> {
    fs::read(path).map_err(|e| TraceError::io(path, e))
}

/// Parses a manifest, gating on magic and version before the typed decode.
fn read_manifest<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, TraceError> {
    let bytes = read_bytes(path)?;
    let shown = path.display().to_string();
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| TraceError::ManifestMismatch(format!("{shown}: malformed JSON: {e}")))?;
    match value.get("magic").and_then(|m| m.as_str()) {
        Some(MANIFEST_MAGIC) => {}
        _ => return Err(TraceError::BadMagic(shown)),
    }
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(TraceError::UnsupportedVersion(other.to_string())),
        None => return Err(TraceError::UnsupportedVersion(String::new())),
    }
    serde_json::from_value(value).map_err(|e| TraceError::ManifestMismatch(format!("{shown}: {e}")))
}

/// Decoded sections of one blob file.
struct Blob {
    file: String,
    sections: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Blob {
    fn read(dir: &Path, blob: &BlobRef, entries: &[SectionEntry]) -> Result<Self, TraceError> {
        if blob.file.contains('/') || blob.file.contains('\\') || blob.file.starts_with('.') {
            return Err(TraceError::ManifestMismatch(format!(
                "blob file name {:?} must be a plain file name",
                blob.file
            )));
        }
        let path = dir.join(&blob.file);
        let shown = path.display().to_string();
        let bytes = read_bytes(&path)?;
        let mismatch = |msg: String| TraceError::ManifestMismatch(format!("{shown}: {msg}"));

        if bytes.len() < BLOB_MAGIC.len() || &bytes[..BLOB_MAGIC.len()] != BLOB_MAGIC {
            return Err(TraceError::BadMagic(shown));
        }
        if bytes.len() as u64 != blob.bytes {
            return Err(mismatch(format!(
                "manifest declares {} bytes, file has {}",
                blob.bytes,
                bytes.len()
            )));
        }

        let mut order: Vec<&SectionEntry> = entries.iter().collect();
        order.sort_by_key(|e| e.offset);
        let mut covered_to = BLOB_MAGIC.len();
        let mut sections = BTreeMap::new();
        for entry in order {
            let elems = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| mismatch(format!("section {} shape overflows", entry.name)))?;
            let offset = usize::try_from(entry.offset)
                .map_err(|_| mismatch(format!("section {} offset too large", entry.name)))?;
            let nbytes = elems * 4;
            if entry.nbytes != nbytes as u64 {
                return Err(mismatch(format!(
                    "section {} declares {} bytes, shape {:?} needs {nbytes}",
                    entry.name, entry.nbytes, entry.shape
                )));
            }
            if offset % SECTION_ALIGN != 0 || offset < SECTION_ALIGN {
                return Err(mismatch(format!(
                    "section {} offset {offset} is not a 64-byte aligned position after the header",
                    entry.name
                )));
            }
            if offset < covered_to {
                return Err(mismatch(format!(
                    "section {} overlaps its predecessor",
                    entry.name
                )));
            }
            let end = offset
                .checked_add(nbytes)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| {
                    mismatch(format!(
                        "section {} [{offset}, +{nbytes}) runs past end of file ({} bytes)",
                        entry.name,
                        bytes.len()
                    ))
                })?;
            if bytes[covered_to..offset].iter().any(|&b| b != 0) {
                return Err(mismatch(format!(
                    "nonzero padding before section {}",
                    entry.name
                )));
            }
            let data = &bytes[offset..end];
            if hex::encode(Sha256::digest(data)) != entry.sha256 {
                return Err(mismatch(format!(
                    "checksum mismatch in section {}",
                    entry.name
                )));
            }
            let values = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if sections
                .insert(entry.name.clone(), (entry.shape.clone(), values))
                .is_some()
            {
                return Err(mismatch(format!("duplicate section {}", entry.name)));
            }
            covered_to = end;
        }
        if bytes[covered_to..].iter().any(|&b| b != 0) {
            return Err(mismatch("nonzero trailing padding".to_string()));
        }
        Ok(Self {
            file: shown,
            sections,
        })
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>, TraceError> {
        let (got, values) = self.sections.remove(name).ok_or_else(|| {
            TraceError::ManifestMismatch(format!("{}: missing section {name}", self.file))
        })?;
        if got != shape {
            return Err(TraceError::ManifestMismatch(format!(
                "{}: section {name} has shape {got:?}, manifest implies {shape:?}",
                self.file
            )));
        }
        Ok(values)
    }

    fn finish(self) -> Result<(), TraceError> {
        match self.sections.keys().next() {
            Some(extra) => Err(TraceError::ManifestMismatch(format!(
                "{}: unexpected section {extra}",
                self.file
            ))),
            None => Ok(()),
        }
    }
}

fn read_vocab(path: &Path, vocab_size: usize) -> Result<Vec<String>, TraceError> {
    let bytes = read_bytes(path)?;
    let shown = path.display().to_string();
    let text = String::from_utf8(bytes)
        .map_err(|_| TraceError::ManifestMismatch(format!("{shown}: not UTF-8")))?;
    let mut vocab = Vec::with_capacity(vocab_size);
    for (line_no, line) in text.lines().enumerate() {
        let bad =
            |what: &str| TraceError::ManifestMismatch(format!("{shown}:{}: {what}", line_no + 1));
        let (id, surface) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let id: usize = id.parse().map_err(|_| bad("token id is not an integer"))?;
        if id != vocab.len() {
            return Err(bad("token ids must be 0..|V|-1 in order"));
        }
        vocab.push(unescape_surface(surface).ok_or_else(|| bad("bad escape"))?);
    }
    if vocab.len() != vocab_size {
        return Err(TraceError::ManifestMismatch(format!(
            "{shown}: {} tokens, manifest declares vocab_size {vocab_size}",
            vocab.len()
        )));
    }
    Ok(vocab)
}

fn read_pack(dir: &Path) -> Result<ModelPack, TraceError> {
    let manifest: PackManifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut blob = Blob::read(dir, &manifest.blob, &manifest.sections)?;
    let unembed = blob.take("unembed", &[manifest.vocab_size, manifest.hidden_dim])?;
    blob.finish()?;
    if manifest.vocab_file.contains('/') || manifest.vocab_file.starts_with('.') {
        return Err(TraceError::ManifestMismatch(format!(
            "vocab file name {:?} must be a plain file name",
            manifest.vocab_file
        )));
    }
    let vocab = read_vocab(&dir.join(&manifest.vocab_file), manifest.vocab_size)?;
    Ok(ModelPack {
        model_id: manifest.model_id,
        hidden_dim: manifest.hidden_dim,
        vocab_size: manifest.vocab_size,
        layer_count: manifest.layer_count,
        layer_convention: manifest.layer_convention,
        unembed_input_transform: manifest.unembed_input_transform,
        unembed: Matrix::new(manifest.vocab_size, manifest.hidden_dim, unembed)
            .expect("shape checked by take"),
        vocab,
    })
}

fn read_sample(dir: &Path, expected_id: &str) -> Result<SampleTrace, TraceError> {
    let manifest: SampleManifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    if manifest.sample_id != expected_id {
        return Err(TraceError::ManifestMismatch(format!(
            "{}: sample_id {:?} does not match its directory {expected_id:?}",
            dir.display(),
            manifest.sample_id
        )));
    }
    if manifest.gen_tokens.len() != manifest.n_generated {
        return Err(TraceError::ManifestMismatch(format!(
            "{}: n_generated {} but {} gen_tokens listed",
            dir.display(),
            manifest.n_generated,
            manifest.gen_tokens.len()
        )));
    }
    let (n, m, d) = (manifest.n_visual, manifest.n_generated, manifest.hidden_dim);
    let mut blob = Blob::read(dir, &manifest.blob, &manifest.sections)?;

    let mut layers = BTreeMap::new();
    for &layer in &manifest.exported_layers {
        let visual = blob.take(&SectionName("visual_hidden", layer).to_string(), &[n, d])?;
        let prompt_last = blob.take(&SectionName("prompt_last_hidden", layer).to_string(), &[d])?;
        let generated = blob.take(&SectionName("gen_hidden", layer).to_string(), &[m, d])?;
        let states = LayerStates {
            visual: Matrix::new(n, d, visual).expect("shape checked by take"),
            prompt_last,
            generated: Matrix::new(m, d, generated).expect("shape checked by take"),
        };
        if layers.insert(layer, states).is_some() {
            return Err(TraceError::ManifestMismatch(format!(
                "{}: layer {layer} listed twice",
                dir.display()
            )));
        }
    }
    let logprobs = blob.take("gen_logprob", &[m])?;
    let entropies = blob.take("gen_entropy", &[m])?;
    let mut var = BTreeMap::new();
    for &layer in &manifest.var_layers {
        let values = blob.take(&SectionName("var", layer).to_string(), &[m])?;
        if var.insert(layer, values).is_some() {
            return Err(TraceError::ManifestMismatch(format!(
                "{}: var layer {layer} listed twice",
                dir.display()
            )));
        }
    }
    blob.finish()?;

    let gen_tokens = manifest
        .gen_tokens
        .iter()
        .zip(logprobs)
        .zip(entropies)
        .map(|((t, logprob), entropy)| GenToken {
            token_id: t.token_id,
            logprob,
            entropy,
            char_span: (t.char_span[0], t.char_span[1]),
        })
        .collect();

    Ok(SampleTrace {
        sample_id: manifest.sample_id,
        image_id: manifest.image_id,
        grid: (manifest.grid[0], manifest.grid[1]),
        n_visual: n,
        layers,
        gen_tokens,
        var,
        generated_text: manifest.generated_text,
    })
}

fn list_sample_dirs(samples_dir: &Path) -> Result<Vec<String>, TraceError> {
    let entries = fs::read_dir(samples_dir).map_err(|e| TraceError::io(samples_dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| TraceError::io(samples_dir, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Sample order and annotation reference: from `bundle.json` when present,
/// otherwise every directory under `samples/` in lexicographic order.
fn read_index(src: &Path) -> Result<(Vec<String>, Option<String>), TraceError> {
    let index_path = src.join(INDEX_FILE);
    if index_path.exists() {
        let index: BundleIndex = read_manifest(&index_path)?;
        if let Some(bad) = index.samples.iter().find(|id| !is_valid_sample_id(id)) {
            return Err(TraceError::ManifestMismatch(format!(
                "{}: sample id {bad:?} is not a valid directory name",
                index_path.display()
            )));
        }
        Ok((index.samples, index.annotations_ref))
    } else {
        let samples_dir = src.join(SAMPLES_DIR);
        let ids = if samples_dir.is_dir() {
            list_sample_dirs(&samples_dir)?
        } else {
            Vec::new()
        };
        Ok((ids, None))
    }
}

/// Reads and fully validates a bundle.
pub fn read_bundle(src: &Path) -> Result<TraceBundle, TraceError> {
    let pack = read_pack(&src.join(PACK_DIR))?;
    let (ids, annotations_ref) = read_index(src)?;
    let samples = ids
        .iter()
        .map(|id| read_sample(&src.join(SAMPLES_DIR).join(id), id))
        .collect::<Result<Vec<_>, _>>()?;
    let bundle = TraceBundle {
        pack,
        samples,
        annotations_ref,
    };
    let report = check_bundle(&bundle);
    if !report.is_valid() {
        let detail: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(TraceError::InvariantViolation(detail.join("; ")));
    }
    Ok(bundle)
}

/// Collects every problem in the bundle at `src` instead of stopping at the
/// first. Only a missing or unreadable `src` is an error.
pub fn validate_bundle(src: &Path) -> Result<ValidationReport, TraceError> {
    let meta = fs::metadata(src).map_err(|e| TraceError::io(src, e))?;
    if !meta.is_dir() {
        return Err(TraceError::io(
            src,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a directory"),
        ));
    }
    let mut report = ValidationReport::default();
    let pack = match read_pack(&src.join(PACK_DIR)) {
        Ok(pack) => {
            report.extend(check_pack(&pack));
            Some(pack)
        }
        Err(e) => {
            report.push(PACK_DIR, e.to_string());
            None
        }
    };
    let ids = match read_index(src) {
        Ok((ids, _)) => ids,
        Err(e) => {
            report.push(INDEX_FILE, e.to_string());
            return Ok(report);
        }
    };
    let mut seen = HashSet::new();
    for id in &ids {
        let loc = format!("{SAMPLES_DIR}/{id}");
        if !seen.insert(id.as_str()) {
            report.push(&loc, "duplicate sample_id");
            continue;
        }
        match read_sample(&src.join(SAMPLES_DIR).join(id), id) {
            Ok(sample) => {
                if let Some(pack) = &pack {
                    report.extend(check_sample(pack, &sample));
                }
            }
            Err(e) => report.push(&loc, e.to_string()),
        }
    }
    Ok(report)
}
