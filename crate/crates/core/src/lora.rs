//! Low-rank adapters on dense projections: `W' = W + α·A·Bᵀ` with `A: d_out×r`,
//! `B: d_in×r`, evaluated either unmerged or folded into the frozen weight.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
}

impl DenseLayer {
    pub fn new(weight: DMatrix<f64>, bias: Option<DVector<f64>>) -> Result<Self> {
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::invalid("dense layer needs a non-empty weight"));
        }
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dense layer weight has non-finite entries"));
        }
        if let Some(b) = &bias {
            if b.len() != weight.nrows() {
                return Err(Error::invalid(format!(
                    "bias has {} entries for {} outputs",
                    b.len(),
                    weight.nrows()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("dense layer bias has non-finite entries"));
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let mut y = &self.weight * x;
        if let Some(b) = &self.bias {
            y += b;
        }
        Ok(y)
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.d_in() {
            return Err(Error::invalid(format!(
                "input has {} entries, layer expects {}",
                x.len(),
                self.d_in()
            )));
        }
        Ok(())
    }
}

/// Trainable factor pair. `ΔW = alpha · a · bᵀ`; no `1/r` normalization is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, alpha: f64) -> Result<Self> {
        let r = a.ncols();
        if r == 0 || b.ncols() != r {
            return Err(Error::invalid(format!(
                "factor ranks disagree or are zero: A has {} columns, B has {}",
                a.ncols(),
                b.ncols()
            )));
        }
        if r > a.nrows().min(b.nrows()) {
            return Err(Error::invalid(format!(
                "rank {r} exceeds min(d_out, d_in) = {}",
                a.nrows().min(b.nrows())
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(Self { a, b, alpha })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.b.nrows()
    }

    /// Materialized `α·A·Bᵀ`.
    pub fn delta(&self) -> DMatrix<f64> {
        &self.a * self.b.transpose() * self.alpha
    }

    fn check_layer(&self, layer: &DenseLayer) -> Result<()> {
        if layer.d_out() != self.d_out() || layer.d_in() != self.d_in() {
            return Err(Error::invalid(format!(
                "adapter is {}x{} but layer weight is {}x{}",
                self.d_out(),
                self.d_in(),
                layer.d_out(),
                layer.d_in()
            )));
        }
        Ok(())
    }
}

/// `(W + α·A·Bᵀ)·x + bias`, computed as `W·x + α·A·(Bᵀ·x)` so `ΔW` is never formed.
pub fn lora_forward(layer: &DenseLayer, adapter: &LoraAdapter, x: &DVector<f64>) -> Result<DVector<f64>> {
    adapter.check_layer(layer)?;
    let base = layer.forward(x)?;
    let projected = adapter.b.tr_mul(x);
    Ok(base + &adapter.a * projected * adapter.alpha)
}

/// New layer with `W + α·A·Bᵀ` folded into the weight.
pub fn merge_adapter(layer: &DenseLayer, adapter: &LoraAdapter) -> Result<DenseLayer> {
    adapter.check_layer(layer)?;
    Ok(DenseLayer {
        weight: &layer.weight + adapter.delta(),
        bias: layer.bias.clone(),
    })
}

/// Trainable parameters of one adapter: `r·(d_out + d_in)`.
pub fn param_count(d_out: usize, d_in: usize, rank: usize) -> usize {
    rank * (d_out + d_in)
}

/// Gaussian `A` (mean 0, std 0.02) from a seeded stream, `B = 0`, `α = 1`.
pub fn init_adapter(d_out: usize, d_in: usize, rank: usize, seed: u64) -> Result<LoraAdapter> {
    if d_out == 0 || d_in == 0 {
        return Err(Error::invalid("adapter dimensions must be positive"));
    }
    if rank == 0 || rank > d_out.min(d_in) {
        return Err(Error::invalid(format!(
            "rank {rank} must be in 1..={}",
            d_out.min(d_in)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let a = DMatrix::from_fn(d_out, rank, |_, _| normal.sample(&mut rng));
    LoraAdapter::new(a, DMatrix::zeros(d_in, rank), 1.0)
}

/// Analytic gradients of `L = ‖lora_forward(x) − y‖²` with respect to `A` and `B`:
/// `∂L/∂A = 2α·e·(Bᵀx)ᵀ`, `∂L/∂B = 2α·x·(Aᵀe)ᵀ` where `e` is the residual.
pub fn squared_error_gradients(
    layer: &DenseLayer,
    adapter: &LoraAdapter,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let e = lora_forward(layer, adapter, x)? - y;
    let bx = adapter.b.tr_mul(x);
    let ae = adapter.a.tr_mul(&e);
    let grad_a = &e * bx.transpose() * (2.0 * adapter.alpha);
    let grad_b = x * ae.transpose() * (2.0 * adapter.alpha);
    Ok((grad_a, grad_b))
}

pub fn squared_error(layer: &DenseLayer, adapter: &LoraAdapter, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    Ok((lora_forward(layer, adapter, x)? - y).norm_squared())
}

/// Relative error `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)` of the analytic
/// gradients against central differences with step `h`. Returns `(err_a, err_b)`.
pub fn gradient_check(
    layer: &DenseLayer,
    adapter: &LoraAdapter,
    x: &DVector<f64>,
    y: &DVector<f64>,
    h: f64,
) -> Result<(f64, f64)> {
    let (ga, gb) = squared_error_gradients(layer, adapter, x, y)?;
    let mut fa = DMatrix::zeros(ga.nrows(), ga.ncols());
    let mut fb = DMatrix::zeros(gb.nrows(), gb.ncols());
    let mut probe = adapter.clone();
    for idx in 0..fa.len() {
        let orig = probe.a[idx];
        probe.a[idx] = orig + h;
        let up = squared_error(layer, &probe, x, y)?;
        probe.a[idx] = orig - h;
        let down = squared_error(layer, &probe, x, y)?;
        probe.a[idx] = orig;
        fa[idx] = (up - down) / (2.0 * h);
    }
    for idx in 0..fb.len() {
        let orig = probe.b[idx];
        probe.b[idx] = orig + h;
        let up = squared_error(layer, &probe, x, y)?;
        probe.b[idx] = orig - h;
        let down = squared_error(layer, &probe, x, y)?;
        probe.b[idx] = orig;
        fb[idx] = (up - down) / (2.0 * h);
    }
    let rel = |g: &DMatrix<f64>, f: &DMatrix<f64>| {
        let scale = g.norm().max(f.norm());
        if scale == 0.0 {
            0.0
        } else {
            (g - f).norm() / scale
        }
    };
    Ok((rel(&ga, &fa), rel(&gb, &fb)))
}

/// Number of singular values above `tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    QProj,
    KProj,
    VProj,
    OutProj,
    Ff1,
    Ff2,
}

impl Projection {
    pub const ALL: [Projection; 6] = [
        Projection::QProj,
        Projection::KProj,
        Projection::VProj,
        Projection::OutProj,
        Projection::Ff1,
        Projection::Ff2,
    ];

    /// Query, value and the two feed-forward projections take adapters.
    pub fn adaptable(self) -> bool {
        matches!(
            self,
            Projection::QProj | Projection::VProj | Projection::Ff1 | Projection::Ff2
        )
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Projection::QProj => "q_proj",
            Projection::KProj => "k_proj",
            Projection::VProj => "v_proj",
            Projection::OutProj => "out_proj",
            Projection::Ff1 => "ff1",
            Projection::Ff2 => "ff2",
        };
        f.write_str(name)
    }
}

/// Single-head self-attention followed by a ReLU feed-forward, both residual.
/// Tokens are the rows of the input matrix.
#[derive(Debug, Clone)]
pub struct ToyAttentionBlock {
    pub q_proj: DenseLayer,
    pub k_proj: DenseLayer,
    pub v_proj: DenseLayer,
    pub out_proj: DenseLayer,
    pub ff1: DenseLayer,
    pub ff2: DenseLayer,
    adapters: BTreeMap<Projection, LoraAdapter>,
}

impl ToyAttentionBlock {
    /// Random frozen weights with std `1/sqrt(fan_in)` from `seed`.
    pub fn random(d_model: usize, d_ff: usize, seed: u64) -> Result<Self> {
        if d_model == 0 || d_ff == 0 {
            return Err(Error::invalid("block dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |d_out: usize, d_in: usize| {
            let normal = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).expect("positive std");
            let w = DMatrix::from_fn(d_out, d_in, |_, _| normal.sample(&mut rng));
            let b = DVector::from_fn(d_out, |_, _| normal.sample(&mut rng));
            DenseLayer::new(w, Some(b))
        };
        Ok(Self {
            q_proj: dense(d_model, d_model)?,
            k_proj: dense(d_model, d_model)?,
            v_proj: dense(d_model, d_model)?,
            out_proj: dense(d_model, d_model)?,
            ff1: dense(d_ff, d_model)?,
            ff2: dense(d_model, d_ff)?,
            adapters: BTreeMap::new(),
        })
    }

    pub fn layer(&self, which: Projection) -> &DenseLayer {
        match which {
            Projection::QProj => &self.q_proj,
            Projection::KProj => &self.k_proj,
            Projection::VProj => &self.v_proj,
            Projection::OutProj => &self.out_proj,
            Projection::Ff1 => &self.ff1,
            Projection::Ff2 => &self.ff2,
        }
    }

    fn layer_mut(&mut self, which: Projection) -> &mut DenseLayer {
        match which {
            Projection::QProj => &mut self.q_proj,
            Projection::KProj => &mut self.k_proj,
            Projection::VProj => &mut self.v_proj,
            Projection::OutProj => &mut self.out_proj,
            Projection::Ff1 => &mut self.ff1,
            Projection::Ff2 => &mut self.ff2,
        }
    }

    pub fn attach(&mut self, which: Projection, adapter: LoraAdapter) -> Result<()> {
        if !which.adaptable() {
            return Err(Error::invalid(format!("{which} does not take an adapter")));
        }
        adapter.check_layer(self.layer(which))?;
        self.adapters.insert(which, adapter);
        Ok(())
    }

    pub fn adapters(&self) -> &BTreeMap<Projection, LoraAdapter> {
        &self.adapters
    }

    /// Copy with every adapter folded into its layer and none left attached.
    pub fn merged(&self) -> Result<Self> {
        let mut out = self.clone();
        for (&which, adapter) in &self.adapters {
            let merged = merge_adapter(self.layer(which), adapter)?;
            *out.layer_mut(which) = merged;
        }
        out.adapters.clear();
        Ok(out)
    }

    fn project(&self, which: Projection, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self.adapters.get(&which) {
            Some(adapter) => lora_forward(self.layer(which), adapter, x),
            None => self.layer(which).forward(x),
        }
    }

    fn project_rows(&self, which: Projection, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let rows = (0..x.nrows())
            .map(|i| self.project(which, &x.row(i).transpose()).map(|v| v.transpose()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_rows(&rows))
    }

    /// `x` is `tokens × d_model`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = self.q_proj.d_in();
        if x.ncols() != d || x.nrows() == 0 {
            return Err(Error::invalid(format!(
                "block expects tokens x {d}, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        let q = self.project_rows(Projection::QProj, x)?;
        let k = self.project_rows(Projection::KProj, x)?;
        let v = self.project_rows(Projection::VProj, x)?;
        let mut scores = &q * k.transpose() / (d as f64).sqrt();
        for mut row in scores.row_iter_mut() {
            let max = row.max();
            row.apply(|s| *s = (*s - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        let attended = scores * v;
        let h = x + self.project_rows(Projection::OutProj, &attended)?;
        let hidden = self.project_rows(Projection::Ff1, &h)?.map(|v| v.max(0.0));
        Ok(&h + self.project_rows(Projection::Ff2, &hidden)?)
    }
}
