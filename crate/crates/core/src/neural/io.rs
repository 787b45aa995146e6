//! Versioned JSON model files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierNet, EncoderModel, FamilyRef};
use crate::error::{Error, Result};
use crate::templates::TemplateSpec;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Encoder,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Encoder => "encoder",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub steps: usize,
    pub final_metric: f64,
}

#[derive(Serialize, Deserialize)]
struct LayerWeights {
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    kind: ModelKind,
    n_qubits: usize,
    max_cz: usize,
    n_templates: usize,
    template_family_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cz_sequence: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    canonicalize_phase: bool,
    layer_sizes: Vec<usize>,
    activation: String,
    weights: Vec<LayerWeights>,
    training_metadata: TrainingMetadata,
}

impl ModelDocument {
    fn family(&self) -> FamilyRef {
        FamilyRef {
            n_qubits: self.n_qubits,
            max_cz: self.max_cz,
            n_templates: self.n_templates,
            hash: self.template_family_hash.clone(),
        }
    }
}

fn header(kind: ModelKind, family: &FamilyRef, layer_sizes: &[usize], meta: &TrainingMetadata) -> ModelDocument {
    ModelDocument {
        format_version: MODEL_FORMAT_VERSION,
        kind,
        n_qubits: family.n_qubits,
        max_cz: family.max_cz,
        n_templates: family.n_templates,
        template_family_hash: family.hash.clone(),
        template_id: None,
        cz_sequence: None,
        canonicalize_phase: false,
        layer_sizes: layer_sizes.to_vec(),
        activation: match kind {
            ModelKind::Classifier => "relu".into(),
            ModelKind::Encoder => "split_relu".into(),
        },
        weights: Vec::new(),
        training_metadata: meta.clone(),
    }
}

fn write(doc: &ModelDocument, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string(doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read(path: &Path, kind: ModelKind, expected_hash: Option<&str>) -> Result<ModelDocument> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
        Some(v) => return Err(Error::ModelFormat(format!("unsupported format version {v}"))),
        None => return Err(Error::ModelFormat("missing format_version".into())),
    }
    let doc: ModelDocument = serde_json::from_value(value)?;
    if doc.kind != kind {
        return Err(Error::ModelKind {
            expected: kind.name().into(),
            found: doc.kind.name().into(),
        });
    }
    if let Some(h) = expected_hash {
        if h != doc.template_family_hash {
            return Err(Error::FamilyMismatch {
                expected: h.into(),
                found: doc.template_family_hash.clone(),
            });
        }
    }
    if doc.layer_sizes.len() < 2 || doc.weights.len() + 1 != doc.layer_sizes.len() {
        return Err(Error::ModelFormat("layer sizes do not match weights".into()));
    }
    Ok(doc)
}

pub fn save_classifier(net: &ClassifierNet, meta: &TrainingMetadata, path: impl AsRef<Path>) -> Result<()> {
    let mut doc = header(ModelKind::Classifier, &net.family, net.layer_sizes(), meta);
    doc.canonicalize_phase = net.canonicalize_phase;
    doc.weights = (0..net.n_layers())
        .map(|l| {
            let (w, b) = net.layer(l);
            LayerWeights { w: w.to_vec(), b: b.to_vec() }
        })
        .collect();
    write(&doc, path.as_ref())
}

/// Loads a classifier, optionally requiring a template-family hash.
pub fn load_classifier(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(ClassifierNet, TrainingMetadata)> {
    let doc = read(path.as_ref(), ModelKind::Classifier, expected_hash)?;
    let dim = 1usize << doc.n_qubits.min(16);
    if doc.layer_sizes[0] != 2 * dim * dim || *doc.layer_sizes.last().unwrap() != doc.n_templates {
        return Err(Error::ModelFormat("classifier layer sizes do not match the family".into()));
    }
    let mut net = ClassifierNet::zeroed(doc.family(), doc.layer_sizes.clone(), doc.canonicalize_phase);
    for (l, lw) in doc.weights.iter().enumerate() {
        net.set_layer(l, &lw.w, &lw.b)?;
    }
    Ok((net, doc.training_metadata))
}

fn interleave(re: &[f64], im: &[f64]) -> Vec<f64> {
    re.iter().zip(im).flat_map(|(&r, &i)| [r, i]).collect()
}

pub fn save_encoder(enc: &EncoderModel, meta: &TrainingMetadata, path: impl AsRef<Path>) -> Result<()> {
    let mut doc = header(ModelKind::Encoder, &enc.family, enc.layer_sizes(), meta);
    doc.template_id = Some(enc.template.id);
    doc.cz_sequence = Some(enc.template.cz_sequence.clone());
    doc.weights = (0..enc.n_layers())
        .map(|l| {
            let (wr, wi, br, bi) = enc.layer(l);
            LayerWeights {
                w: interleave(wr, wi),
                b: interleave(br, bi),
            }
        })
        .collect();
    write(&doc, path.as_ref())
}

/// Loads an encoder, optionally requiring a template-family hash.
pub fn load_encoder(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(EncoderModel, TrainingMetadata)> {
    let doc = read(path.as_ref(), ModelKind::Encoder, expected_hash)?;
    let (Some(id), Some(seq)) = (doc.template_id, doc.cz_sequence.clone()) else {
        return Err(Error::ModelFormat("encoder file lacks its template".into()));
    };
    let template = TemplateSpec::from_sequence(doc.n_qubits, seq)?;
    if template.id != id {
        return Err(Error::ModelFormat(format!(
            "template id {id} does not match its CZ sequence (id {})",
            template.id
        )));
    }
    let d = template.dim();
    if doc.layer_sizes[0] != d * d || *doc.layer_sizes.last().unwrap() != 2 * template.slot_count() {
        return Err(Error::ModelFormat("encoder layer sizes do not match the template".into()));
    }
    let mut enc = EncoderModel::zeroed(doc.family(), template, doc.layer_sizes.clone());
    for (l, lw) in doc.weights.iter().enumerate() {
        let (i, o) = (doc.layer_sizes[l], doc.layer_sizes[l + 1]);
        if lw.w.len() != 2 * i * o || lw.b.len() != 2 * o {
            return Err(Error::ModelFormat(format!("layer {l} has the wrong shape")));
        }
        let dst = enc.layer_slice_mut(l);
        let (wr, rest) = dst.split_at_mut(i * o);
        let (wi, rest) = rest.split_at_mut(i * o);
        let (br, bi) = rest.split_at_mut(o);
        for k in 0..i * o {
            wr[k] = lw.w[2 * k];
            wi[k] = lw.w[2 * k + 1];
        }
        for k in 0..o {
            br[k] = lw.b[2 * k];
            bi[k] = lw.b[2 * k + 1];
        }
    }
    Ok((enc, doc.training_metadata))
}
