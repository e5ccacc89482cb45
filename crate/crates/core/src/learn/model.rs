//! Toy encoder f, projection head h and residual decoder g with hand-written
//! reverse-mode gradients.
//!
//! f: x -> tanh(W1 x + b1) -> z = W2 h1 + b2
//! h: z -> p = tanh(Wp z + bp)
//! g: z -> offsets = Wd z + bd, added to the constant-velocity extrapolation

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use glam::DVec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{Encoded, Normalizer, FUTURE, INPUT_DIM, OUTPUT_DIM};
use super::LearnError;

pub const FORMAT_HEADER: &str = "causal-crowds toy-model 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
    pub proj: usize,
    pub output: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            input: INPUT_DIM,
            hidden: 64,
            latent: 32,
            proj: 8,
            output: OUTPUT_DIM,
        }
    }
}

/// Offsets of each tensor in the flat parameter vector. Matrices are row-major
/// with one row per output unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub wp: Range<usize>,
    pub bp: Range<usize>,
    pub wd: Range<usize>,
    pub bd: Range<usize>,
}

impl Dims {
    pub fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            w1: take(self.hidden * self.input),
            b1: take(self.hidden),
            w2: take(self.latent * self.hidden),
            b2: take(self.latent),
            wp: take(self.proj * self.latent),
            bp: take(self.proj),
            wd: take(self.output * self.latent),
            bd: take(self.output),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().bd.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub dims: Dims,
    pub params: Vec<f64>,
    pub norm: Normalizer,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub x: Vec<f64>,
    pub h1: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub offsets: Vec<f64>,
}

/// `out = W v + b` for a row-major `W`.
fn affine(w: &[f64], b: &[f64], v: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(r, bias)| bias + w[r * v.len()..(r + 1) * v.len()].iter().zip(v).map(|(a, x)| a * x).sum::<f64>())
        .collect()
}

/// Accumulate `dW += d ⊗ v`, `db += d` and return `W^T d`.
fn affine_back(w: &[f64], v: &[f64], d: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = v.len();
    let mut dv = vec![0.0; n];
    for (r, &dr) in d.iter().enumerate() {
        db[r] += dr;
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * n..(r + 1) * n];
        let drow = &mut dw[r * n..(r + 1) * n];
        for c in 0..n {
            drow[c] += dr * v[c];
            dv[c] += dr * row[c];
        }
    }
    dv
}

impl ToyModel {
    /// Glorot-uniform weights, zero biases; the decoder starts at a tenth of
    /// that scale so the untrained model stays close to constant velocity.
    pub fn init(seed: u64, norm: Normalizer) -> Self {
        let dims = Dims::default();
        let l = dims.layout();
        let mut params = vec![0.0; dims.num_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: Range<usize>, fan_in: usize, fan_out: usize, scale: f64| {
            let a = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut params[range] {
                *v = rng.random_range(-a..a);
            }
        };
        fill(l.w1, dims.input, dims.hidden, 1.0);
        fill(l.w2, dims.hidden, dims.latent, 1.0);
        fill(l.wp, dims.latent, dims.proj, 1.0);
        fill(l.wd, dims.latent, dims.output, 0.1);
        Self { dims, params, norm }
    }

    pub fn zeros() -> Self {
        let dims = Dims::default();
        Self {
            dims,
            params: vec![0.0; dims.num_params()],
            norm: Normalizer::identity(),
        }
    }

    pub fn activations(&self, encoded: &Encoded) -> Activations {
        let l = self.dims.layout();
        let p = &self.params;
        let x = self.norm.apply(&encoded.raw);
        let h1: Vec<f64> = affine(&p[l.w1], &p[l.b1], &x).into_iter().map(f64::tanh).collect();
        let z = affine(&p[l.w2], &p[l.b2], &h1);
        let proj = affine(&p[l.wp], &p[l.bp], &z).into_iter().map(f64::tanh).collect();
        let offsets = affine(&p[l.wd], &p[l.bd], &z);
        Activations {
            x,
            h1,
            z,
            p: proj,
            offsets,
        }
    }

    /// Accumulate parameter gradients given upstream gradients on the decoder
    /// offsets and on the projection `p` (either may be `None` for zero).
    pub fn backward(&self, act: &Activations, d_offsets: Option<&[f64]>, d_p: Option<&[f64]>, grad: &mut [f64]) {
        let l = self.dims.layout();
        let p = &self.params;
        let mut dz = vec![0.0; self.dims.latent];
        if let Some(d) = d_offsets {
            let (dw, db) = split_pair(grad, &l.wd, &l.bd);
            let back = affine_back(&p[l.wd.clone()], &act.z, d, dw, db);
            dz.iter_mut().zip(back).for_each(|(a, b)| *a += b);
        }
        if let Some(d) = d_p {
            let pre: Vec<f64> = d.iter().zip(&act.p).map(|(g, y)| g * (1.0 - y * y)).collect();
            let (dw, db) = split_pair(grad, &l.wp, &l.bp);
            let back = affine_back(&p[l.wp.clone()], &act.z, &pre, dw, db);
            dz.iter_mut().zip(back).for_each(|(a, b)| *a += b);
        }
        let (dw, db) = split_pair(grad, &l.w2, &l.b2);
        let dh1 = affine_back(&p[l.w2.clone()], &act.h1, &dz, dw, db);
        let da1: Vec<f64> = dh1.iter().zip(&act.h1).map(|(g, y)| g * (1.0 - y * y)).collect();
        let (dw, db) = split_pair(grad, &l.w1, &l.b1);
        affine_back(&p[l.w1.clone()], &act.x, &da1, dw, db);
    }

    /// Predicted ego future in the ego frame.
    pub fn predict_local(&self, encoded: &Encoded, act: &Activations) -> Vec<DVec2> {
        debug_assert_eq!(encoded.cv.len(), FUTURE);
        encoded
            .cv
            .iter()
            .enumerate()
            .map(|(t, c)| *c + DVec2::new(act.offsets[2 * t], act.offsets[2 * t + 1]))
            .collect()
    }

    pub fn predict(&self, encoded: &Encoded) -> Vec<DVec2> {
        let act = self.activations(encoded);
        self.predict_local(encoded, &act)
            .into_iter()
            .map(|q| encoded.frame.to_world(q))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER}");
        let _ = writeln!(s, "dims {} {} {} {} {}", d.input, d.hidden, d.latent, d.proj, d.output);
        for (name, values) in [
            ("params", &self.params),
            ("norm_mean", &self.norm.mean),
            ("norm_std", &self.norm.std),
        ] {
            let _ = writeln!(s, "{name} {}", values.len());
            for v in values {
                let _ = writeln!(s, "{v}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, LearnError> {
        let bad = |m: String| LearnError::ModelFormat(m);
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end of file, expected {what}")));
        let (_, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(bad(format!("unknown header {header:?}")));
        }
        let (n, dims_line) = next("dims")?;
        let nums: Vec<usize> = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| bad(format!("line {}: expected dims", n + 1)))?
            .split(' ')
            .map(|t| t.parse().map_err(|_| bad(format!("line {}: bad dimension {t:?}", n + 1))))
            .collect::<Result<_, _>>()?;
        let [input, hidden, latent, proj, output] = nums[..] else {
            return Err(bad(format!("line {}: expected five dimensions", n + 1)));
        };
        let dims = Dims {
            input,
            hidden,
            latent,
            proj,
            output,
        };
        if dims != Dims::default() {
            return Err(LearnError::DimensionMismatch {
                expected: Dims::default().num_params(),
                found: dims.num_params(),
            });
        }
        let mut block = |name: &str, len: usize| -> Result<Vec<f64>, LearnError> {
            let (n, head) = next(name)?;
            if head != format!("{name} {len}") {
                return Err(bad(format!("line {}: expected \"{name} {len}\"", n + 1)));
            }
            (0..len)
                .map(|_| {
                    let (n, v) = next(name)?;
                    let x: f64 = v.parse().map_err(|_| bad(format!("line {}: bad number {v:?}", n + 1)))?;
                    x.is_finite()
                        .then_some(x)
                        .ok_or_else(|| bad(format!("line {}: non-finite value", n + 1)))
                })
                .collect()
        };
        let params = block("params", dims.num_params())?;
        let mean = block("norm_mean", dims.input)?;
        let std = block("norm_std", dims.input)?;
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(bad("norm_std must be positive".into()));
        }
        Ok(Self {
            dims,
            params,
            norm: Normalizer { mean, std },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, self.to_text()).map_err(|e| LearnError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let text = std::fs::read_to_string(path).map_err(|e| LearnError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

fn split_pair<'a>(grad: &'a mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    // Every bias block directly follows its weight block.
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}
