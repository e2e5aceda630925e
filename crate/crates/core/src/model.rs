//! Contracts for the learned components the pipeline depends on: generator,
//! encoder, face segmenter, identity embedder and perceptual distance.
//!
//! Any backend implementing these traits can drive the pipeline. The bundled
//! [`toy`](crate::toy) backend is a small differentiable stand-in; adapters
//! for pretrained networks plug in the same way.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Binary face mask at crop resolution.
pub type SegMask = Mask;

/// Per-layer style codes, `layers × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    layers: usize,
    dim: usize,
    data: Vec<f64>,
}

impl LatentCode {
    pub fn zeros(layers: usize, dim: usize) -> Self {
        LatentCode {
            layers,
            dim,
            data: vec![0.0; layers * dim],
        }
    }

    pub fn from_vec(layers: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(Error::Contract("latent code needs L ≥ 1 and D ≥ 1".into()));
        }
        if data.len() != layers * dim {
            return Err(Error::Contract(format!(
                "latent buffer has {} values, expected {layers}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("latent code has non-finite values".into()));
        }
        Ok(LatentCode { layers, dim, data })
    }

    #[inline]
    pub fn layers(&self) -> usize {
        self.layers
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.dim)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub(crate) fn check_shape(&self, shape: (usize, usize), what: &str) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::Contract(format!(
                "{what}: latent shape {:?} does not match backend {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(())
    }

    pub fn distance(&self, other: &LatentCode) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &LatentCode) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self + scale·other`.
    pub fn add_scaled(&self, other: &LatentCode, scale: f64) -> Result<LatentCode> {
        other.check_shape(self.shape(), "add_scaled")?;
        Ok(LatentCode {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + scale * b)
                .collect(),
            ..*self
        })
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Location of one named tensor inside a flat [`ParamSet`] buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named arrays packed into one contiguous buffer, in insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    specs: Vec<TensorSpec>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let name = name.into();
        let spec = TensorSpec {
            name,
            shape: shape.to_vec(),
        };
        if spec.numel() != values.len() {
            return Err(Error::Contract(format!(
                "tensor `{}` has shape {:?} but {} values",
                spec.name,
                spec.shape,
                values.len()
            )));
        }
        if self.specs.iter().any(|s| s.name == spec.name) {
            return Err(Error::Contract(format!("duplicate tensor `{}`", spec.name)));
        }
        self.offsets.push(self.data.len());
        self.specs.push(spec);
        self.data.extend(values);
        Ok(())
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn range(&self, name: &str) -> Result<Range<usize>> {
        let i = self
            .specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::Contract(format!("missing tensor `{name}`")))?;
        let start = self.offsets[i];
        Ok(start..start + self.specs[i].numel())
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let r = self.range(name)?;
        Ok(&self.data[r])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.range(name)?;
        Ok(&mut self.data[r])
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<ParamSet> {
        if data.len() != self.data.len() {
            return Err(Error::Contract(format!(
                "parameter buffer has {} values, expected {}",
                data.len(),
                self.data.len()
            )));
        }
        Ok(ParamSet {
            specs: self.specs.clone(),
            offsets: self.offsets.clone(),
            data,
        })
    }

    /// Round every value to the nearest `f32`, so the set survives the
    /// on-disk format unchanged.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn is_structurally_equal(&self, other: &ParamSet) -> bool {
        self.specs == other.specs
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.specs {
            h.update(s.name.as_bytes());
            for d in &s.shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// A generator parameter set plus the provenance tag of the exact values.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorWeights {
    pub params: ParamSet,
    pub version_tag: String,
    pub backend_id: String,
}

impl GeneratorWeights {
    pub fn new(backend_id: impl Into<String>, label: &str, params: ParamSet) -> Self {
        let hash = params.content_hash();
        GeneratorWeights {
            version_tag: format!("{label}-{}", &hash[..12]),
            backend_id: backend_id.into(),
            params,
        }
    }

    /// New weights descended from `self`. The tag chains the parent tag, so
    /// it changes on every mutation even if values happen to repeat.
    pub fn derive(&self, label: &str, params: ParamSet) -> Result<GeneratorWeights> {
        if !self.params.is_structurally_equal(&params) {
            return Err(Error::Contract(
                "derived weights must keep the parent's tensor layout".into(),
            ));
        }
        let mut h = Sha256::new();
        h.update(self.version_tag.as_bytes());
        h.update(label.as_bytes());
        h.update(params.content_hash().as_bytes());
        let tag = hex::encode(h.finalize());
        Ok(GeneratorWeights {
            version_tag: format!("{label}-{}", &tag[..12]),
            backend_id: self.backend_id.clone(),
            params,
        })
    }
}

/// Unit-norm identity descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityEmbedding {
    vector: Vec<f64>,
}

impl IdentityEmbedding {
    /// Normalizes `v`; a zero vector is rejected.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::InvalidInput(
                "cannot normalize a zero or non-finite identity vector".into(),
            ));
        }
        Ok(IdentityEmbedding {
            vector: v.into_iter().map(|x| x / n).collect(),
        })
    }

    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "identity embedding must have unit norm, got {n}"
            )));
        }
        Ok(IdentityEmbedding { vector: v })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }
}

/// Gradient of a scalar loss with respect to a generator's inputs.
#[derive(Clone, Debug)]
pub struct GeneratorGrad {
    pub code: LatentCode,
    pub params: Vec<f64>,
}

pub trait Generator: Send + Sync {
    fn backend_id(&self) -> &str;

    /// `(L, D)` of the codes this generator consumes.
    fn latent_shape(&self) -> (usize, usize);

    /// Output side length; images are square.
    fn resolution(&self) -> usize;

    fn channels(&self) -> usize {
        3
    }

    /// Deterministic render of `w` under weights `theta`, values in `[0, 1]`.
    fn generate(&self, w: &LatentCode, theta: &GeneratorWeights) -> Result<Image>;

    /// Vector-Jacobian product: pulls `grad_image` (∂loss/∂image) back to
    /// the code and the flat parameter buffer.
    fn backward(&self, w: &LatentCode, theta: &GeneratorWeights, grad_image: &Image) -> Result<GeneratorGrad>;

    /// Average code of the prior; the starting point for optimization-based inversion.
    fn mean_code(&self) -> LatentCode;

    /// A code drawn from the prior and mapped into latent space.
    fn sample_code(&self, seed: u64) -> LatentCode;
}

pub trait Encoder: Send + Sync {
    fn encode(&self, image: &Image) -> Result<LatentCode>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &Image) -> SegMask;
}

pub trait IdentityEmbedder: Send + Sync {
    fn embed(&self, image: &Image) -> Result<IdentityEmbedding>;
}

pub trait PerceptualDistance: Send + Sync {
    /// Symmetric, non-negative, zero for identical inputs.
    fn distance(&self, a: &Image, b: &Image) -> Result<f64>;

    /// Distance with its gradients with respect to `a` and `b`.
    fn distance_grad(&self, a: &Image, b: &Image) -> Result<(f64, Image, Image)>;
}

/// JSON manifest describing a backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendManifest {
    pub backend_id: String,
    pub latent_layers: usize,
    pub latent_dim: usize,
    pub resolution: usize,
    #[serde(default)]
    pub certified_bounds: serde_json::Map<String, serde_json::Value>,
}

/// The five learned components plus the initial generator weights.
#[derive(Clone)]
pub struct Backend {
    pub manifest: BackendManifest,
    pub generator: Arc<dyn Generator>,
    pub encoder: Arc<dyn Encoder>,
    pub segmenter: Arc<dyn Segmenter>,
    pub embedder: Arc<dyn IdentityEmbedder>,
    pub perceptual: Arc<dyn PerceptualDistance>,
    pub theta0: GeneratorWeights,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("manifest", &self.manifest)
            .field("theta0", &self.theta0.version_tag)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_set_layout() {
        let mut p = ParamSet::new();
        p.push("a", &[2, 3], vec![1.0; 6]).unwrap();
        p.push("b", &[4], vec![2.0; 4]).unwrap();
        assert_eq!(p.range("b").unwrap(), 6..10);
        assert_eq!(p.get("b").unwrap(), &[2.0; 4]);
        assert!(p.push("a", &[1], vec![0.0]).is_err());
        assert!(p.push("c", &[3], vec![0.0]).is_err());
        assert!(p.get("zzz").is_err());
    }

    #[test]
    fn derived_tags_always_change() {
        let mut p = ParamSet::new();
        p.push("a", &[2], vec![1.0, 2.0]).unwrap();
        let w0 = GeneratorWeights::new("toy", "theta0", p.clone());
        let w1 = w0.derive("pti", p.clone()).unwrap();
        let w2 = w1.derive("pti", p).unwrap();
        assert_ne!(w0.version_tag, w1.version_tag);
        assert_ne!(w1.version_tag, w2.version_tag);
        assert!(w1.version_tag.starts_with("pti-"));
    }

    #[test]
    fn embedding_normalization() {
        let e = IdentityEmbedding::normalized(vec![3.0, 4.0]).unwrap();
        assert_eq!(e.vector(), &[0.6, 0.8]);
        assert!(IdentityEmbedding::normalized(vec![0.0, 0.0]).is_err());
        assert!(IdentityEmbedding::from_unit(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn latent_code_checks() {
        assert!(LatentCode::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(LatentCode::from_vec(1, 2, vec![0.0, f64::INFINITY]).is_err());
        let a = LatentCode::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = a.add_scaled(&a, -1.0).unwrap();
        assert_eq!(b.norm(), 0.0);
    }
}
