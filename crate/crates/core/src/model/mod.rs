//! The segmented transformer: tokenization, embedding, encoder stack,
//! reversible instance normalization and task heads.

mod config;
mod encoder;
mod heads;
pub mod loss;
mod params;
mod positional;
mod revin;
mod segment;

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};

pub use config::ModelConfig;
pub use encoder::{encoder_backward, encoder_forward, EncoderCache};
pub use params::{Head, LayerSlots, LinearSlots, Layout, MlpSlots, Slot};
pub use positional::{positional_encoding, positional_table};
pub use revin::{instance_denormalize, instance_normalize, InstanceStats};
pub use segment::{segment, segment_with_months, SegmentSequence};

use crate::error::{Error, Result};
use heads::{linear_backward, linear_forward, mlp_backward, mlp_forward, pool, pool_backward};

/// Supervision attached to one model input.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Original segments to recover through a reconstruction head.
    Reconstruct { head: Head, segments: Array2<f64> },
    /// Season label (1..=4) for every segment.
    Season(Vec<u8>),
    /// Next K values.
    Forecast(Vec<f64>),
    Scalar(f64),
    /// 0-based class of the week classifier.
    Week(usize),
}

impl Target {
    pub fn head(&self) -> Head {
        match self {
            Target::Reconstruct { head, .. } => *head,
            Target::Season(_) => Head::Season,
            Target::Forecast(_) => Head::Forecast,
            Target::Scalar(_) => Head::Scalar,
            Target::Week(_) => Head::Week,
        }
    }
}

/// One model input (L×P segments, already normalized and masked) with its
/// target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub segments: Array2<f64>,
    pub target: Target,
}

/// Raw head output.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Segments(Array2<f64>),
    SeasonLogits(Array2<f64>),
    Forecast(Vec<f64>),
    Scalar(f64),
    WeekLogits(Vec<f64>),
}

/// Encoder output plus everything needed to back-propagate through it.
pub struct Forward {
    pub z: Array2<f64>,
    pub cache: EncoderCache,
    segments: Array2<f64>,
}

/// Parameters of the shared encoder and all task heads.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Arc<Layout>,
    params: Vec<f64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Model {
    /// Freshly initialized model from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = layout.init(config.seed);
        Ok(Model {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Model> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Model {
            config,
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// `u(l) = x(l) W1 + pos(l)` for every segment.
    pub fn embed(&self, segments: ArrayView2<f64>) -> Result<Array2<f64>> {
        if segments.ncols() != self.config.segment_len || segments.nrows() == 0 {
            return Err(Error::Config(format!(
                "expected L×{} segments with L >= 1, got {}×{}",
                self.config.segment_len,
                segments.nrows(),
                segments.ncols()
            )));
        }
        let mut u = segments.dot(&self.layout.embed.mat(&self.params));
        u += &positional_table(segments.nrows(), self.config.d_model);
        Ok(u)
    }

    pub fn forward(&self, segments: ArrayView2<f64>) -> Result<Forward> {
        let u = self.embed(segments)?;
        let (z, cache) = encoder_forward(&self.layout, &self.params, self.config.n_heads, u)?;
        Ok(Forward {
            z,
            cache,
            segments: segments.to_owned(),
        })
    }

    /// Token embeddings z(1..L).
    pub fn encode(&self, segments: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(segments).map(|f| f.z)
    }

    pub fn head_reconstruct(&self, head: Head, z: &Array2<f64>) -> Array2<f64> {
        mlp_forward(z, self.layout.recon(head), &self.params).0
    }

    pub fn head_season(&self, z: &Array2<f64>) -> Array2<f64> {
        linear_forward(z, &self.layout.season, &self.params)
    }

    pub fn head_forecast(&self, z: &Array2<f64>) -> Vec<f64> {
        linear_forward(&pool(z), &self.layout.forecast, &self.params).into_raw_vec_and_offset().0
    }

    pub fn head_scalar(&self, z: &Array2<f64>) -> f64 {
        linear_forward(&pool(z), &self.layout.scalar, &self.params)[[0, 0]]
    }

    pub fn head_week(&self, z: &Array2<f64>) -> Vec<f64> {
        linear_forward(&pool(z), &self.layout.week, &self.params).into_raw_vec_and_offset().0
    }

    /// Pooled embedding fed to sequence-level heads.
    pub fn pooled(&self, z: &Array2<f64>) -> Array1<f64> {
        pool(z).row(0).to_owned()
    }

    pub fn predict(&self, segments: ArrayView2<f64>, head: Head) -> Result<Output> {
        let z = self.encode(segments)?;
        Ok(match head {
            Head::RandMask | Head::LastMask | Head::PeakMask => {
                Output::Segments(self.head_reconstruct(head, &z))
            }
            Head::Season => Output::SeasonLogits(self.head_season(&z)),
            Head::Forecast => Output::Forecast(self.head_forecast(&z)),
            Head::Scalar => Output::Scalar(self.head_scalar(&z)),
            Head::Week => Output::WeekLogits(self.head_week(&z)),
        })
    }

    pub fn loss(&self, example: &Example) -> Result<f64> {
        self.run(example, None)
    }

    /// Loss of `example`; its parameter gradient is added into `grads`.
    pub fn loss_and_grad(&self, example: &Example, grads: &mut [f64]) -> Result<f64> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer length".into()));
        }
        self.run(example, Some(grads))
    }

    fn run(&self, example: &Example, grads: Option<&mut [f64]>) -> Result<f64> {
        let fwd = self.forward(example.segments.view())?;
        let p = &self.params;
        let z = &fwd.z;
        let l = z.nrows();
        let (loss, dz) = match &example.target {
            Target::Reconstruct { head, segments } => {
                let m = self.layout.recon(*head);
                let (out, cache) = mlp_forward(z, m, p);
                if out.dim() != segments.dim() {
                    return Err(Error::Shape(format!(
                        "reconstruction target {:?} vs prediction {:?}",
                        segments.dim(),
                        out.dim()
                    )));
                }
                let (loss, dout) = loss::mse_with_grad(
                    out.as_slice().expect("contiguous"),
                    segments.as_standard_layout().as_slice().expect("contiguous"),
                )?;
                let dz = grads.map(|g| {
                    let dout = Array2::from_shape_vec(out.raw_dim(), dout).expect("shape");
                    (mlp_backward(&dout, z, &cache, m, p, g), g)
                });
                (loss, dz)
            }
            Target::Season(labels) => {
                if labels.len() != l {
                    return Err(Error::Shape(format!("{} season labels for {l} segments", labels.len())));
                }
                let logits = linear_forward(z, &self.layout.season, p);
                let mut dout = Array2::zeros(logits.raw_dim());
                let mut total = 0.0;
                for (i, &lab) in labels.iter().enumerate() {
                    let row = logits.row(i).to_vec();
                    let (ce, d) = loss::cross_entropy_with_grad(&row, (lab as usize).wrapping_sub(1))?;
                    total += ce / l as f64;
                    for (j, v) in d.into_iter().enumerate() {
                        dout[[i, j]] = v / l as f64;
                    }
                }
                let dz = grads.map(|g| (linear_backward(&dout, z, &self.layout.season, p, g), g));
                (total, dz)
            }
            Target::Forecast(y) => self.pooled_loss(z, &self.layout.forecast, grads, |out| {
                loss::mse_with_grad(out, y)
            })?,
            Target::Scalar(y) => self.pooled_loss(z, &self.layout.scalar, grads, |out| {
                loss::mse_with_grad(out, &[*y])
            })?,
            Target::Week(w) => self.pooled_loss(z, &self.layout.week, grads, |out| {
                loss::cross_entropy_with_grad(out, *w)
            })?,
        };
        if let Some((dz, grads)) = dz {
            let du = encoder_backward(&self.layout, p, &fwd.cache, &dz, grads);
            self.layout
                .embed
                .mat_mut(grads)
                .scaled_add(1.0, &fwd.segments.t().dot(&du));
        }
        Ok(loss)
    }

    #[allow(clippy::type_complexity)]
    fn pooled_loss<'g>(
        &self,
        z: &Array2<f64>,
        head: &LinearSlots,
        grads: Option<&'g mut [f64]>,
        loss_fn: impl FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
    ) -> Result<(f64, Option<(Array2<f64>, &'g mut [f64])>)> {
        let pooled = pool(z);
        let out = linear_forward(&pooled, head, &self.params);
        let (loss, dout) = loss_fn(out.as_slice().expect("contiguous"))?;
        let dz = grads.map(|g| {
            let dout = Array2::from_shape_vec(out.raw_dim(), dout).expect("shape");
            let dpooled = linear_backward(&dout, &pooled, head, &self.params, g);
            (pool_backward(&dpooled, z.nrows()), g)
        });
        Ok((loss, dz))
    }
}

#[cfg(test)]
mod tests;
