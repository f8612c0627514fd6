use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{FeatureError, FeatureMatrix, Provenance};
use crate::linalg::{derive_seed, rng_from_seed};
use crate::raster::ViewImage;

/// Random convolutional features ("random kitchen sinks" on image patches).
///
/// Each filter is convolved with every patch of the view; the two rectified
/// responses `max(0, r - bias)` and `max(0, bias - r)` are average-pooled
/// over patches, giving `2 * n_filters` features per image. Feature `2k` is
/// the positive part of filter `k` and `2k + 1` the negative part.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConvFeaturizer {
    n_filters: usize,
    patch_size: usize,
    stride: usize,
    seed: u64,
    /// `n_filters x (3 * patch * patch)`, channel-major within a filter.
    filters: Vec<f64>,
    biases: Vec<f64>,
}

impl RandomConvFeaturizer {
    pub const DEFAULT_FILTERS: usize = 512;
    pub const DEFAULT_PATCH: usize = 3;

    /// Filters drawn from unit Gaussians scaled by `1 / sqrt(3 * patch^2)`,
    /// zero biases, stride equal to the patch size.
    pub fn new(n_filters: usize, patch_size: usize, seed: u64) -> Result<Self, FeatureError> {
        if n_filters == 0 || patch_size == 0 {
            return Err(FeatureError::InvalidArgument(
                "n_filters and patch_size must be positive".into(),
            ));
        }
        let len = 3 * patch_size * patch_size;
        let scale = 1.0 / (len as f64).sqrt();
        let mut rng = rng_from_seed(seed);
        let filters = (0..n_filters * len)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Ok(RandomConvFeaturizer {
            n_filters,
            patch_size,
            stride: patch_size,
            seed,
            filters,
            biases: vec![0.0; n_filters],
        })
    }

    /// Explicit filters and biases, mostly for tests.
    pub fn from_parts(
        filters: Vec<f64>,
        biases: Vec<f64>,
        patch_size: usize,
        stride: usize,
    ) -> Result<Self, FeatureError> {
        let len = 3 * patch_size * patch_size;
        if patch_size == 0 || stride == 0 || biases.is_empty() || filters.len() != biases.len() * len {
            return Err(FeatureError::InvalidArgument(format!(
                "{} filter weights and {} biases do not fit patch size {patch_size}",
                filters.len(),
                biases.len()
            )));
        }
        Ok(RandomConvFeaturizer {
            n_filters: biases.len(),
            patch_size,
            stride,
            seed: 0,
            filters,
            biases,
        })
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self, FeatureError> {
        if stride == 0 {
            return Err(FeatureError::InvalidArgument("stride must be positive".into()));
        }
        self.stride = stride;
        Ok(self)
    }

    /// Sets each bias to the filter's response on a randomly chosen patch of
    /// `image`, so the rectifiers split the empirical response distribution.
    pub fn calibrate_biases(&mut self, image: &ViewImage) -> Result<(), FeatureError> {
        self.check_size(image)?;
        let mut rng = rng_from_seed(derive_seed(self.seed, 1));
        let mut patch = vec![0.0; 3 * self.patch_size * self.patch_size];
        for k in 0..self.n_filters {
            let y = rng.random_range(0..=image.height() - self.patch_size);
            let x = rng.random_range(0..=image.width() - self.patch_size);
            self.gather(image, y, x, &mut patch);
            self.biases[k] = crate::linalg::dot(self.filter(k), &patch);
        }
        Ok(())
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_filters
    }

    fn filter(&self, k: usize) -> &[f64] {
        let len = 3 * self.patch_size * self.patch_size;
        &self.filters[k * len..(k + 1) * len]
    }

    fn check_size(&self, image: &ViewImage) -> Result<(), FeatureError> {
        if image.width() < self.patch_size || image.height() < self.patch_size {
            return Err(FeatureError::ImageTooSmall {
                width: image.width(),
                height: image.height(),
                patch: self.patch_size,
            });
        }
        Ok(())
    }

    fn gather(&self, image: &ViewImage, y0: usize, x0: usize, out: &mut [f64]) {
        let p = self.patch_size;
        let mut i = 0;
        for c in 0..3 {
            for dy in 0..p {
                for dx in 0..p {
                    out[i] = image.at(c, y0 + dy, x0 + dx);
                    i += 1;
                }
            }
        }
    }

    /// Top-left corners of the valid patches, row by row.
    pub fn patch_origins(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        if width < self.patch_size || height < self.patch_size {
            return Vec::new();
        }
        let ys = (0..=height - self.patch_size).step_by(self.stride);
        ys.flat_map(|y| {
            (0..=width - self.patch_size)
                .step_by(self.stride)
                .map(move |x| (y, x))
        })
        .collect()
    }

    pub fn extract(&self, image: &ViewImage) -> Result<Vec<f64>, FeatureError> {
        self.check_size(image)?;
        let origins = self.patch_origins(image.width(), image.height());
        Ok(self.pool(image, &origins))
    }

    /// Average-pooled rectified responses over the given patch origins.
    pub fn pool(&self, image: &ViewImage, origins: &[(usize, usize)]) -> Vec<f64> {
        let mut sums = vec![0.0; 2 * self.n_filters];
        let mut patch = vec![0.0; 3 * self.patch_size * self.patch_size];
        for &(y, x) in origins {
            self.gather(image, y, x, &mut patch);
            for k in 0..self.n_filters {
                let r = crate::linalg::dot(self.filter(k), &patch) - self.biases[k];
                sums[2 * k] += r.max(0.0);
                sums[2 * k + 1] += (-r).max(0.0);
            }
        }
        let count = origins.len().max(1) as f64;
        sums.iter_mut().for_each(|s| *s /= count);
        sums
    }

    /// One row per image, computed in parallel; row order follows `images`.
    pub fn extract_matrix(
        &self,
        images: &[ViewImage],
        row_ids: Vec<String>,
        view_name: &str,
    ) -> Result<FeatureMatrix, FeatureError> {
        let rows: Vec<Vec<f64>> = images
            .par_iter()
            .map(|img| self.extract(img))
            .collect::<Result<_, _>>()?;
        let d = self.output_dim();
        FeatureMatrix::new(
            rows.concat(),
            images.len(),
            d,
            row_ids,
            view_name,
            Provenance::RandomConv,
        )
    }
}
