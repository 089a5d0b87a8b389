//! Where per-transform descriptors come from.
//!
//! [`Pipeline`] is the full transform -> extract -> aggregate -> whiten ->
//! normalize chain. A [`FeatureSource`] answers weighted-sum queries either by
//! replaying a [`FeatureCache`](crate::featcache::FeatureCache) or by running
//! the pipeline on demand ([`RecomputeSource`]).

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::aggregate::{aggregate, l2_normalize, pca_apply, AggregationKind, FeatureVector, PcaModel};
use crate::error::{Error, Result};
use crate::extractor::{ExtractorDescriptor, ExtractorRegistry};
use crate::imagexform::{apply, DomainProfile, Image, MagnitudeLevel, TransformOp, TransformSpec};

/// One weighted policy slot as seen by a feature source.
pub type WeightedSlot = (TransformOp, MagnitudeLevel, f64);

pub trait FeatureSource: Sync {
    fn feature_dim(&self) -> usize;

    /// Unnormalized `sum_j w_j * descriptor(t_j(image))`.
    fn accumulate_weighted(&self, image_id: u64, slots: &[WeightedSlot]) -> Result<FeatureVector>;

    /// Descriptor of the untransformed image.
    fn baseline(&self, image_id: u64) -> Result<FeatureVector>;
}

/// A finished descriptor and whether it had to be replaced by the uniform
/// unit vector because post-processing produced a zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Described {
    pub vector: FeatureVector,
    pub substituted: bool,
}

#[derive(Clone)]
pub struct Pipeline {
    pub registry: ExtractorRegistry,
    pub descriptor: ExtractorDescriptor,
    pub aggregation: AggregationKind,
    pub profile: DomainProfile,
    pub pca: Option<PcaModel>,
}

impl Pipeline {
    pub fn new(descriptor: ExtractorDescriptor, aggregation: AggregationKind, profile: DomainProfile) -> Self {
        Self {
            registry: ExtractorRegistry::default(),
            descriptor,
            aggregation,
            profile,
            pca: None,
        }
    }

    pub fn with_pca(mut self, pca: Option<PcaModel>) -> Self {
        self.pca = pca;
        self
    }

    pub fn output_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.descriptor.channels, |m| m.output_dim)
    }

    /// Transform (if any), extract and pool; no whitening or normalization.
    pub fn pooled(&self, image: &Image, spec: Option<TransformSpec>) -> Result<FeatureVector> {
        let map = match spec {
            Some(spec) => {
                let transformed = apply(spec, image, self.profile);
                self.registry.extract(&transformed, &self.descriptor)?
            }
            None => self.registry.extract(image, &self.descriptor)?,
        };
        aggregate(&map, self.aggregation)
    }

    /// Full descriptor: pooled, whitened when a model is set, L2-normalized.
    /// A zero vector is replaced by the uniform unit vector.
    pub fn describe(&self, image: &Image, spec: Option<TransformSpec>) -> Result<Described> {
        let pooled = self.pooled(image, spec)?;
        let whitened = match &self.pca {
            Some(model) => pca_apply(model, &pooled)?,
            None => pooled,
        };
        match l2_normalize(&whitened) {
            Ok(vector) => Ok(Described {
                vector,
                substituted: false,
            }),
            Err(Error::ZeroNorm) => {
                log::warn!("zero descriptor for {spec:?}; substituting uniform unit vector");
                Ok(Described {
                    vector: FeatureVector::uniform_unit(whitened.dim()),
                    substituted: true,
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Computes every descriptor from pixels on each request.
pub struct RecomputeSource {
    pipeline: Pipeline,
    images: HashMap<u64, Image>,
    substitutions: AtomicUsize,
}

impl RecomputeSource {
    pub fn new(pipeline: Pipeline, images: impl IntoIterator<Item = (u64, Image)>) -> Self {
        Self {
            pipeline,
            images: images.into_iter().collect(),
            substitutions: AtomicUsize::new(0),
        }
    }

    pub fn zero_norm_substitutions(&self) -> usize {
        self.substitutions.load(Ordering::Relaxed)
    }

    fn describe(&self, image_id: u64, spec: Option<TransformSpec>) -> Result<FeatureVector> {
        let image = self.images.get(&image_id).ok_or_else(|| {
            let op_id = spec.map_or(0, |s| s.op.id());
            let magnitude = spec.map_or(1, |s| s.canonical().magnitude.get());
            Error::NotFound(crate::featcache::CacheKey {
                image_id,
                op_id,
                magnitude,
            })
        })?;
        let d = self.pipeline.describe(image, spec)?;
        if d.substituted {
            self.substitutions.fetch_add(1, Ordering::Relaxed);
        }
        Ok(d.vector)
    }
}

impl FeatureSource for RecomputeSource {
    fn feature_dim(&self) -> usize {
        self.pipeline.output_dim()
    }

    fn accumulate_weighted(&self, image_id: u64, slots: &[WeightedSlot]) -> Result<FeatureVector> {
        let mut acc = FeatureVector::zeros(self.feature_dim());
        for &(op, magnitude, weight) in slots {
            let v = self.describe(image_id, Some(TransformSpec::new(op, magnitude)))?;
            for (a, x) in acc.values_mut().iter_mut().zip(v.values()) {
                *a += weight * x;
            }
        }
        Ok(acc)
    }

    fn baseline(&self, image_id: u64) -> Result<FeatureVector> {
        self.describe(image_id, None)
    }
}
