use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Location of one weight matrix inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).expect("slot shape")
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()])
            .expect("slot shape")
    }

    pub fn vec<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.range()])
    }

    pub fn vec_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut data[self.range()])
    }
}

/// Task heads sitting on top of the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    RandMask,
    LastMask,
    PeakMask,
    Season,
    Forecast,
    Scalar,
    Week,
}

impl Head {
    pub const ALL: [Head; 7] = [
        Head::RandMask,
        Head::LastMask,
        Head::PeakMask,
        Head::Season,
        Head::Forecast,
        Head::Scalar,
        Head::Week,
    ];

    pub const SSL: [Head; 4] = [Head::RandMask, Head::LastMask, Head::PeakMask, Head::Season];

    fn index(self) -> usize {
        self as usize
    }
}

/// Two-layer tokenwise network used for segment reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct MlpSlots {
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearSlots {
    pub w: Slot,
    pub b: Slot,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSlots {
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
    pub ff_w1: Slot,
    pub ff_b1: Slot,
    pub ff_w2: Slot,
    pub ff_b2: Slot,
}

/// Placement of every tensor in the flat parameter vector. The backbone
/// occupies a prefix; each head owns one contiguous range after it.
#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: Slot,
    pub layers: Vec<LayerSlots>,
    pub lnf_g: Slot,
    pub lnf_b: Slot,
    pub recon: [MlpSlots; 3],
    pub season: LinearSlots,
    pub forecast: LinearSlots,
    pub scalar: LinearSlots,
    pub week: LinearSlots,
    backbone_len: usize,
    head_ranges: [Range<usize>; 7],
    total: usize,
}

struct Builder {
    next: usize,
}

impl Builder {
    fn slot(&mut self, rows: usize, cols: usize) -> Slot {
        let s = Slot {
            offset: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        s
    }

    fn mlp(&mut self, d_in: usize, hidden: usize, d_out: usize) -> MlpSlots {
        MlpSlots {
            w1: self.slot(d_in, hidden),
            b1: self.slot(1, hidden),
            w2: self.slot(hidden, d_out),
            b2: self.slot(1, d_out),
        }
    }

    fn linear(&mut self, d_in: usize, d_out: usize) -> LinearSlots {
        LinearSlots {
            w: self.slot(d_in, d_out),
            b: self.slot(1, d_out),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let (d, f, p) = (cfg.d_model, cfg.ffn(), cfg.segment_len);
        let mut b = Builder { next: 0 };
        let embed = b.slot(p, d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerSlots {
                ln1_g: b.slot(1, d),
                ln1_b: b.slot(1, d),
                wq: b.slot(d, d),
                bq: b.slot(1, d),
                wk: b.slot(d, d),
                bk: b.slot(1, d),
                wv: b.slot(d, d),
                bv: b.slot(1, d),
                wo: b.slot(d, d),
                bo: b.slot(1, d),
                ln2_g: b.slot(1, d),
                ln2_b: b.slot(1, d),
                ff_w1: b.slot(d, f),
                ff_b1: b.slot(1, f),
                ff_w2: b.slot(f, d),
                ff_b2: b.slot(1, d),
            })
            .collect();
        let lnf_g = b.slot(1, d);
        let lnf_b = b.slot(1, d);
        let backbone_len = b.next;

        let mut head_ranges: [Range<usize>; 7] = Default::default();
        let mut mark = |b: &Builder, head: Head, start: usize| {
            head_ranges[head.index()] = start..b.next;
        };
        let mut recon = Vec::with_capacity(3);
        for head in [Head::RandMask, Head::LastMask, Head::PeakMask] {
            let start = b.next;
            recon.push(b.mlp(d, f, p));
            mark(&b, head, start);
        }
        let mut linear = |b: &mut Builder, head: Head, out: usize| {
            let start = b.next;
            let l = b.linear(d, out);
            mark(b, head, start);
            l
        };
        let season = linear(&mut b, Head::Season, 4);
        let forecast = linear(&mut b, Head::Forecast, cfg.horizon);
        let scalar = linear(&mut b, Head::Scalar, 1);
        let week = linear(&mut b, Head::Week, cfg.season_weeks);

        Layout {
            embed,
            layers,
            lnf_g,
            lnf_b,
            recon: [recon[0], recon[1], recon[2]],
            season,
            forecast,
            scalar,
            week,
            backbone_len,
            head_ranges,
            total: b.next,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn backbone(&self) -> Range<usize> {
        0..self.backbone_len
    }

    pub fn head(&self, head: Head) -> Range<usize> {
        self.head_ranges[head.index()].clone()
    }

    pub fn recon(&self, head: Head) -> &MlpSlots {
        match head {
            Head::RandMask => &self.recon[0],
            Head::LastMask => &self.recon[1],
            Head::PeakMask => &self.recon[2],
            other => panic!("{other:?} is not a reconstruction head"),
        }
    }

    /// Random initial values: weights uniform in ±sqrt(1/fan_in), biases
    /// zero, layer-norm gains one.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; self.total];
        let mut weight = |s: Slot, rng: &mut ChaCha8Rng| {
            let bound = (1.0 / s.rows as f64).sqrt();
            for v in &mut data[s.range()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        weight(self.embed, &mut rng);
        for l in &self.layers {
            for s in [l.wq, l.wk, l.wv, l.wo, l.ff_w1, l.ff_w2] {
                weight(s, &mut rng);
            }
        }
        for m in &self.recon {
            weight(m.w1, &mut rng);
            weight(m.w2, &mut rng);
        }
        for l in [self.season, self.forecast, self.scalar, self.week] {
            weight(l.w, &mut rng);
        }
        for s in self
            .layers
            .iter()
            .flat_map(|l| [l.ln1_g, l.ln2_g])
            .chain([self.lnf_g])
        {
            data[s.range()].fill(1.0);
        }
        data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_partition_the_tail() {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            horizon: 3,
            season_weeks: 5,
            ..ModelConfig::default()
        };
        let layout = Layout::new(&cfg);
        let mut end = layout.backbone().end;
        for h in Head::ALL {
            let r = layout.head(h);
            assert_eq!(r.start, end);
            end = r.end;
        }
        assert_eq!(end, layout.total());
        assert_eq!(layout.head(Head::Forecast).len(), 8 * 3 + 3);
    }

    #[test]
    fn init_is_seeded() {
        let layout = Layout::new(&ModelConfig::default());
        assert_eq!(layout.init(3), layout.init(3));
        assert_ne!(layout.init(3), layout.init(4));
        assert!(layout.init(3).iter().all(|v| v.is_finite()));
    }
}
