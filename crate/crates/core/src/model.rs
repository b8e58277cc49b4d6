//! Message-passing model: forward computation, smooth losses, exact
//! reverse-mode gradients, and Gaussian weight perturbation.
//!
//! A depth-`l` model has `l-1` diffusion layers and one pooling readout:
//!
//! ```text
//! H^(0) = X
//! H^(t) = phi_t( X U^(t) + rho_t( P psi_t(H^(t-1)) ) W^(t) ),  t = 1..l-1
//! output = (1/n) 1_n^T H^(l-1) W^(l)
//! ```
//!
//! GCN is the special case `U = 0`, `rho = psi = identity`. A graph
//! isomorphism network additionally carries a classification head
//! `V^(t)` per diffusion layer and averages the per-head losses.
//!
//! Backpropagation is hand-written against this fixed structure; the
//! architecture is closed-form and the Hessian machinery only needs
//! gradients plus directional differences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{diffusion_matrix, DiffusionKind, Graph};
use crate::linalg::DenseMatrix;
#[cfg_attr(test, allow(unused_imports))]
use crate::math::{sigmoid, softplus, F64Ext};
use crate::rng::SeedTree;

/// Entrywise nonlinearity together with the Lipschitz constants of the
/// function, its first derivative, and its second derivative. All
/// supported activations are centered at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Tanh,
    /// `sigmoid(x) - 1/2`.
    SigmoidCentered,
    /// Not twice-differentiable: allowed in forward/training, refused by
    /// every smoothness-based bound.
    Relu,
    /// `factor * base(x)`.
    Scaled { base: ScaledBase, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaledBase {
    Identity,
    Tanh,
    SigmoidCentered,
}

impl ScaledBase {
    fn plain(self) -> Activation {
        match self {
            ScaledBase::Identity => Activation::Identity,
            ScaledBase::Tanh => Activation::Tanh,
            ScaledBase::SigmoidCentered => Activation::SigmoidCentered,
        }
    }
}

impl Activation {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::SigmoidCentered => sigmoid(x) - 0.5,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Scaled { base, factor } => factor * base.plain().value(x),
        }
    }

    /// First derivative.
    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::SigmoidCentered => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Scaled { base, factor } => factor * base.plain().d1(x),
        }
    }

    /// Second derivative (0 where undefined, for ReLU).
    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::SigmoidCentered => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Relu => 0.0,
            Activation::Scaled { base, factor } => factor * base.plain().d2(x),
        }
    }

    /// Lipschitz constant of the function itself.
    pub fn kappa0(&self) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0,
            Activation::SigmoidCentered => 0.25,
            Activation::Relu => 1.0,
            Activation::Scaled { base, factor } => factor.abs() * base.plain().kappa0(),
        }
    }

    /// Lipschitz constant of the first derivative; infinite for ReLU.
    pub fn kappa1(&self) -> f64 {
        match self {
            Activation::Identity => 0.0,
            // max |tanh''| = 4 / (3 sqrt(3)), attained at tanh(x) = 1/sqrt(3).
            Activation::Tanh => 4.0 / (3.0 * 3f64.sqrt()),
            // max |sigma''| = 1 / (6 sqrt(3)).
            Activation::SigmoidCentered => 1.0 / (6.0 * 3f64.sqrt()),
            Activation::Relu => f64::INFINITY,
            Activation::Scaled { base, factor } => factor.abs() * base.plain().kappa1(),
        }
    }

    /// Lipschitz constant of the second derivative; infinite for ReLU.
    pub fn kappa2(&self) -> f64 {
        match self {
            Activation::Identity => 0.0,
            // max |tanh'''| = 2, attained at x = 0.
            Activation::Tanh => 2.0,
            // max |sigma'''| = 1/8, attained at x = 0.
            Activation::SigmoidCentered => 0.125,
            Activation::Relu => f64::INFINITY,
            Activation::Scaled { base, factor } => factor.abs() * base.plain().kappa2(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(
            self,
            Activation::Relu
        )
    }

    /// Supremum of |value| over the reals (needed by one of the baseline
    /// bounds); `None` when unbounded.
    pub fn sup_abs(&self) -> Option<f64> {
        match self {
            Activation::Identity => None,
            Activation::Tanh => Some(1.0),
            Activation::SigmoidCentered => Some(0.5),
            Activation::Relu => None,
            Activation::Scaled { base, factor } => {
                base.plain().sup_abs().map(|s| s * factor.abs())
            }
        }
    }

    pub fn token(&self) -> String {
        match self {
            Activation::Identity => "identity".into(),
            Activation::Tanh => "tanh".into(),
            Activation::SigmoidCentered => "sigmoid".into(),
            Activation::Relu => "relu".into(),
            Activation::Scaled { base, factor } => {
                let b = base.plain().token();
                format!("scaled:{b}:{factor}")
            }
        }
    }

    pub fn parse(token: &str) -> Result<Activation> {
        match token {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::SigmoidCentered),
            "relu" => Ok(Activation::Relu),
            other => {
                if let Some(rest) = other.strip_prefix("scaled:") {
                    let mut it = rest.splitn(2, ':');
                    let base = match it.next() {
                        Some("identity") => ScaledBase::Identity,
                        Some("tanh") => ScaledBase::Tanh,
                        Some("sigmoid") => ScaledBase::SigmoidCentered,
                        _ => {
                            return Err(Error::InvalidParameter(format!(
                                "unknown scaled activation `{other}`"
                            )))
                        }
                    };
                    let factor: f64 = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| {
                            Error::InvalidParameter(format!("bad scale factor in `{other}`"))
                        })?;
                    Ok(Activation::Scaled { base, factor })
                } else {
                    Err(Error::InvalidParameter(format!(
                        "unknown activation `{other}`"
                    )))
                }
            }
        }
    }
}

/// The `(phi, rho, psi)` triple of one diffusion layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationTriple {
    pub phi: Activation,
    pub rho: Activation,
    pub psi: Activation,
}

impl ActivationTriple {
    pub fn uniform(a: Activation) -> Self {
        Self { phi: a, rho: a, psi: a }
    }

    /// GCN-style layer: `phi` nonlinear, `rho` and `psi` identity.
    pub fn gcn(phi: Activation) -> Self {
        Self {
            phi,
            rho: Activation::Identity,
            psi: Activation::Identity,
        }
    }

    pub fn all_smooth(&self) -> bool {
        self.phi.is_smooth() && self.rho.is_smooth() && self.psi.is_smooth()
    }

    /// Largest kappa_0 among the three maps, floored at 1 so products of
    /// per-layer constants never reward contraction the analysis does not
    /// credit.
    pub fn kappa0(&self) -> f64 {
        self.phi
            .kappa0()
            .max(self.rho.kappa0())
            .max(self.psi.kappa0())
    }

    pub fn kappa1(&self) -> f64 {
        self.phi
            .kappa1()
            .max(self.rho.kappa1())
            .max(self.psi.kappa1())
    }
}

/// One labelled graph example.
#[derive(Debug, Clone)]
pub struct DatasetExample {
    pub x: DenseMatrix,
    pub graph: Graph,
    pub label: usize,
}

impl DatasetExample {
    pub fn new(x: DenseMatrix, graph: Graph, label: usize) -> Result<Self> {
        if x.rows() != graph.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} rows but graph has {} nodes",
                x.rows(),
                graph.node_count()
            )));
        }
        Ok(Self { x, graph, label })
    }
}

/// Example with its diffusion matrix prebuilt; the hot paths (training,
/// trace estimation) reuse it instead of rebuilding `P` per evaluation.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub x: DenseMatrix,
    pub p: DenseMatrix,
    pub label: usize,
}

/// Smooth classification losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Two-class logistic loss on the logit difference `o_1 - o_0`.
    BinaryLogistic,
    SoftmaxCrossEntropy,
}

impl LossKind {
    pub fn token(&self) -> &'static str {
        match self {
            LossKind::BinaryLogistic => "binary_logistic",
            LossKind::SoftmaxCrossEntropy => "softmax_ce",
        }
    }
}

/// Loss of one output vector. `BinaryLogistic` maps the label into
/// `yhat in {-1, +1}` and evaluates `log(1 + exp(-yhat (o_1 - o_0)))`.
pub fn loss(output: &[f64], label: usize, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::BinaryLogistic => {
            if output.len() != 2 {
                return Err(Error::ShapeMismatch(format!(
                    "binary logistic loss needs 2 outputs, got {}",
                    output.len()
                )));
            }
            if label >= 2 {
                return Err(Error::LabelOutOfRange { label, classes: 2 });
            }
            let yhat = if label == 1 { 1.0 } else { -1.0 };
            let z = output[1] - output[0];
            Ok(softplus(-yhat * z))
        }
        LossKind::SoftmaxCrossEntropy => {
            let k = output.len();
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let m = output.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + output.iter().map(|o| (o - m).exp()).sum::<f64>().ln();
            Ok(lse - output[label])
        }
    }
}

/// Gradient of [`loss`] with respect to the output vector.
pub fn loss_grad(output: &[f64], label: usize, kind: LossKind) -> Result<Vec<f64>> {
    match kind {
        LossKind::BinaryLogistic => {
            if output.len() != 2 {
                return Err(Error::ShapeMismatch(format!(
                    "binary logistic loss needs 2 outputs, got {}",
                    output.len()
                )));
            }
            if label >= 2 {
                return Err(Error::LabelOutOfRange { label, classes: 2 });
            }
            let yhat = if label == 1 { 1.0 } else { -1.0 };
            let z = output[1] - output[0];
            let s = sigmoid(-yhat * z);
            Ok(vec![yhat * s, -yhat * s])
        }
        LossKind::SoftmaxCrossEntropy => {
            let k = output.len();
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let m = output.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = output.iter().map(|o| (o - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut g: Vec<f64> = exps.iter().map(|e| e / z).collect();
            g[label] -= 1.0;
            Ok(g)
        }
    }
}

/// What the gradient (and the Hessian machinery) differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Loss of the pooled readout.
    Standard(LossKind),
    /// Mean loss over the GIN classification heads.
    GinAveraged(LossKind),
}

/// The message-passing model.
#[derive(Debug, Clone, PartialEq)]
pub struct MpnnModel {
    widths: Vec<usize>,
    w: Vec<DenseMatrix>,
    u: Option<Vec<DenseMatrix>>,
    v: Option<Vec<DenseMatrix>>,
    acts: Vec<ActivationTriple>,
    diffusion: DiffusionKind,
    weight_tying: bool,
}

impl MpnnModel {
    /// Builds a model, validating the whole shape chain. `widths` is
    /// `d_0 ..= d_l`; the output dimension (class count) is `d_l`.
    pub fn new(
        widths: Vec<usize>,
        w: Vec<DenseMatrix>,
        u: Option<Vec<DenseMatrix>>,
        v: Option<Vec<DenseMatrix>>,
        acts: Vec<ActivationTriple>,
        diffusion: DiffusionKind,
        weight_tying: bool,
    ) -> Result<Self> {
        let l = widths.len().checked_sub(1).unwrap_or(0);
        if l < 2 {
            return Err(Error::InvalidParameter(
                "model needs depth l >= 2 (widths d_0 ..= d_l)".into(),
            ));
        }
        if widths.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        if w.len() != l {
            return Err(Error::ShapeMismatch(format!(
                "depth {l} model needs {l} W matrices, got {}",
                w.len()
            )));
        }
        for (t, m) in w.iter().enumerate() {
            if m.rows() != widths[t] || m.cols() != widths[t + 1] {
                return Err(Error::ShapeMismatch(format!(
                    "W^({}) must be {}x{}, got {}x{}",
                    t + 1,
                    widths[t],
                    widths[t + 1],
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if let Some(u) = &u {
            if u.len() != l - 1 {
                return Err(Error::ShapeMismatch(format!(
                    "depth {l} model needs {} U matrices, got {}",
                    l - 1,
                    u.len()
                )));
            }
            for (t, m) in u.iter().enumerate() {
                if m.rows() != widths[0] || m.cols() != widths[t + 1] {
                    return Err(Error::ShapeMismatch(format!(
                        "U^({}) must be {}x{}, got {}x{}",
                        t + 1,
                        widths[0],
                        widths[t + 1],
                        m.rows(),
                        m.cols()
                    )));
                }
            }
        }
        let classes = widths[l];
        if let Some(v) = &v {
            if v.len() != l - 1 {
                return Err(Error::ShapeMismatch(format!(
                    "depth {l} model needs {} GIN heads, got {}",
                    l - 1,
                    v.len()
                )));
            }
            for (t, m) in v.iter().enumerate() {
                if m.rows() != widths[t + 1] || m.cols() != classes {
                    return Err(Error::ShapeMismatch(format!(
                        "V^({}) must be {}x{}, got {}x{}",
                        t + 1,
                        widths[t + 1],
                        classes,
                        m.rows(),
                        m.cols()
                    )));
                }
            }
        }
        if acts.len() != l - 1 {
            return Err(Error::ShapeMismatch(format!(
                "depth {l} model needs {} activation triples, got {}",
                l - 1,
                acts.len()
            )));
        }
        if weight_tying {
            if widths[..l].iter().any(|&d| d != widths[0]) {
                return Err(Error::InvalidParameter(
                    "weight tying requires d_0 = d_1 = ... = d_{l-1}".into(),
                ));
            }
            for t in 1..l - 1 {
                if w[t] != w[0] {
                    return Err(Error::InvalidParameter(
                        "weight tying requires identical W^(t) for t < l".into(),
                    ));
                }
            }
            if let Some(u) = &u {
                for t in 1..u.len() {
                    if u[t] != u[0] {
                        return Err(Error::InvalidParameter(
                            "weight tying requires identical U^(t)".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            widths,
            w,
            u,
            v,
            acts,
            diffusion,
            weight_tying,
        })
    }

    /// Seeded Gaussian init with per-matrix scale `1/sqrt(fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn random_init(
        widths: Vec<usize>,
        acts: Vec<ActivationTriple>,
        diffusion: DiffusionKind,
        weight_tying: bool,
        with_u: bool,
        with_gin_heads: bool,
        seed: u64,
    ) -> Result<Self> {
        let l = widths
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::InvalidParameter("widths must not be empty".into()))?;
        if l < 2 {
            return Err(Error::InvalidParameter("model needs depth l >= 2".into()));
        }
        let tree = SeedTree::new(seed);
        let gauss = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, scale: f64| {
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale
                })
                .collect();
            DenseMatrix::from_vec(rows, cols, data)
        };
        let mut w = Vec::with_capacity(l);
        for t in 0..l {
            let (rows, cols) = (widths[t], widths[t + 1]);
            let mut rng = tree.stream("init-w", t as u64);
            w.push(gauss(&mut rng, rows, cols, 1.0 / (rows as f64).sqrt())?);
        }
        if weight_tying {
            for t in 1..l - 1 {
                w[t] = w[0].clone();
            }
        }
        let u = if with_u {
            let mut us = Vec::with_capacity(l - 1);
            for t in 0..l - 1 {
                let mut rng = tree.stream("init-u", t as u64);
                us.push(gauss(&mut rng, widths[0], widths[t + 1], 1.0 / (widths[0] as f64).sqrt())?);
            }
            if weight_tying {
                for t in 1..l - 1 {
                    us[t] = us[0].clone();
                }
            }
            Some(us)
        } else {
            None
        };
        let classes = widths[l];
        let v = if with_gin_heads {
            let mut vs = Vec::with_capacity(l - 1);
            for t in 0..l - 1 {
                let mut rng = tree.stream("init-v", t as u64);
                vs.push(gauss(&mut rng, widths[t + 1], classes, 1.0 / (widths[t + 1] as f64).sqrt())?);
            }
            Some(vs)
        } else {
            None
        };
        Self::new(widths, w, u, v, acts, diffusion, weight_tying)
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.w
    }

    pub fn anchor_weights(&self) -> Option<&[DenseMatrix]> {
        self.u.as_deref()
    }

    pub fn gin_heads(&self) -> Option<&[DenseMatrix]> {
        self.v.as_deref()
    }

    pub fn activations(&self) -> &[ActivationTriple] {
        &self.acts
    }

    pub fn diffusion(&self) -> DiffusionKind {
        self.diffusion
    }

    pub fn is_weight_tied(&self) -> bool {
        self.weight_tying
    }

    pub fn all_smooth(&self) -> bool {
        self.acts.iter().all(|t| t.all_smooth())
    }

    /// Largest kappa_0 across layers, floored at 1 (the analysis assumes
    /// constants >= those of the identity).
    pub fn kappa0(&self) -> f64 {
        self.acts.iter().map(|t| t.kappa0()).fold(1.0, f64::max)
    }

    pub fn kappa1(&self) -> f64 {
        self.acts.iter().map(|t| t.kappa1()).fold(0.0, f64::max)
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.w
    }

    pub(crate) fn anchor_weights_mut(&mut self) -> Option<&mut Vec<DenseMatrix>> {
        self.u.as_mut()
    }

    pub(crate) fn gin_heads_mut(&mut self) -> Option<&mut Vec<DenseMatrix>> {
        self.v.as_mut()
    }

    pub fn prepare(&self, example: &DatasetExample) -> Result<PreparedExample> {
        if example.x.cols() != self.widths[0] {
            return Err(Error::ShapeMismatch(format!(
                "features have width {} but the model expects d_0 = {}",
                example.x.cols(),
                self.widths[0]
            )));
        }
        Ok(PreparedExample {
            x: example.x.clone(),
            p: diffusion_matrix(&example.graph, self.diffusion)?,
            label: example.label,
        })
    }
}

/// Forward-pass result: the readout vector plus every intermediate node
/// embedding `H^(0) .. H^(l-1)` (kept for derivative checks).
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Vec<f64>,
    pub embeddings: Vec<DenseMatrix>,
}

struct LayerCache {
    /// `P psi(H^{t-1})`, pre-rho.
    m: DenseMatrix,
    /// `X U + rho(M) W`, pre-phi.
    e: DenseMatrix,
    /// `rho(M)`.
    r: DenseMatrix,
}

fn forward_internal(
    model: &MpnnModel,
    x: &DenseMatrix,
    p: &DenseMatrix,
) -> Result<(Vec<f64>, Vec<DenseMatrix>, Vec<LayerCache>)> {
    let l = model.depth();
    if x.cols() != model.widths[0] {
        return Err(Error::ShapeMismatch(format!(
            "features have width {} but the model expects d_0 = {}",
            x.cols(),
            model.widths[0]
        )));
    }
    if p.rows() != x.rows() || p.cols() != x.rows() {
        return Err(Error::ShapeMismatch(format!(
            "diffusion matrix is {}x{} for {} nodes",
            p.rows(),
            p.cols(),
            x.rows()
        )));
    }
    let mut embeddings = Vec::with_capacity(l);
    let mut caches = Vec::with_capacity(l - 1);
    embeddings.push(x.clone());
    for t in 0..l - 1 {
        let acts = &model.acts[t];
        let h_prev = &embeddings[t];
        let s = h_prev.map(|v| acts.psi.value(v));
        let m = p.matmul(&s)?;
        let r = m.map(|v| acts.rho.value(v));
        let mut e = r.matmul(&model.w[t])?;
        if let Some(u) = &model.u {
            e = e.add(&x.matmul(&u[t])?)?;
        }
        let h = e.map(|v| acts.phi.value(v));
        caches.push(LayerCache { m, e, r });
        embeddings.push(h);
    }
    let pooled = embeddings[l - 1].column_means();
    let output = model.w[l - 1].matvec_transposed(&pooled)?;
    Ok((output, embeddings, caches))
}

/// Full forward pass for one example.
pub fn forward(model: &MpnnModel, example: &DatasetExample) -> Result<Forward> {
    let p = diffusion_matrix(&example.graph, model.diffusion)?;
    forward_prepared(model, &example.x, &p)
}

/// Forward pass with a prebuilt diffusion matrix.
pub fn forward_prepared(model: &MpnnModel, x: &DenseMatrix, p: &DenseMatrix) -> Result<Forward> {
    let (output, embeddings, _) = forward_internal(model, x, p)?;
    Ok(Forward { output, embeddings })
}

/// Per-head readouts `o^(i) = (1/n) 1^T H^(i) V^(i)` of a GIN model.
pub fn forward_gin(model: &MpnnModel, example: &DatasetExample) -> Result<Vec<Vec<f64>>> {
    let p = diffusion_matrix(&example.graph, model.diffusion)?;
    forward_gin_prepared(model, &example.x, &p)
}

pub fn forward_gin_prepared(
    model: &MpnnModel,
    x: &DenseMatrix,
    p: &DenseMatrix,
) -> Result<Vec<Vec<f64>>> {
    let heads = model.v.as_ref().ok_or(Error::MissingGinHeads)?;
    let (_, embeddings, _) = forward_internal(model, x, p)?;
    let mut outs = Vec::with_capacity(heads.len());
    for (h, head) in heads.iter().enumerate() {
        let pooled = embeddings[h + 1].column_means();
        outs.push(head.matvec_transposed(&pooled)?);
    }
    Ok(outs)
}

/// Mean loss over the GIN classification heads.
pub fn gin_loss(model: &MpnnModel, example: &DatasetExample, kind: LossKind) -> Result<f64> {
    let outs = forward_gin(model, example)?;
    let mut total = 0.0;
    for o in &outs {
        total += loss(o, example.label, kind)?;
    }
    Ok(total / outs.len() as f64)
}

/// Loss of the model under the given objective, from prebuilt inputs.
pub fn objective_loss_prepared(
    model: &MpnnModel,
    x: &DenseMatrix,
    p: &DenseMatrix,
    label: usize,
    objective: Objective,
) -> Result<f64> {
    match objective {
        Objective::Standard(kind) => {
            let out = forward_prepared(model, x, p)?;
            loss(&out.output, label, kind)
        }
        Objective::GinAveraged(kind) => {
            let outs = forward_gin_prepared(model, x, p)?;
            let mut total = 0.0;
            for o in &outs {
                total += loss(o, label, kind)?;
            }
            Ok(total / outs.len() as f64)
        }
    }
}

/// Per-parameter gradients, same shapes as the model's matrices.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Vec<DenseMatrix>,
    pub u: Option<Vec<DenseMatrix>>,
    pub v: Option<Vec<DenseMatrix>>,
}

impl Gradients {
    pub fn zeros_like(model: &MpnnModel) -> Self {
        Self {
            w: model
                .w
                .iter()
                .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                .collect(),
            u: model.u.as_ref().map(|us| {
                us.iter()
                    .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                    .collect()
            }),
            v: model.v.as_ref().map(|vs| {
                vs.iter()
                    .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                    .collect()
            }),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a = a.add(b).expect("gradient shapes");
        }
        if let (Some(a), Some(b)) = (&mut self.u, &other.u) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = x.add(y).expect("gradient shapes");
            }
        }
        if let (Some(a), Some(b)) = (&mut self.v, &other.v) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = x.add(y).expect("gradient shapes");
            }
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for m in &mut self.w {
            *m = m.scale(s);
        }
        if let Some(us) = &mut self.u {
            for m in us {
                *m = m.scale(s);
            }
        }
        if let Some(vs) = &mut self.v {
            for m in vs {
                *m = m.scale(s);
            }
        }
    }
}

/// Exact gradient of the objective with respect to every weight entry.
pub fn gradient(
    model: &MpnnModel,
    example: &DatasetExample,
    objective: Objective,
) -> Result<Gradients> {
    let p = diffusion_matrix(&example.graph, model.diffusion)?;
    gradient_prepared(model, &example.x, &p, example.label, objective)
}

/// Exact gradient from prebuilt inputs.
///
/// Reverse sweep over the fixed architecture. With weight tying the
/// returned gradients are still per stored matrix; [`tie_gradients`]
/// folds them into the shared-parameter gradient.
pub fn gradient_prepared(
    model: &MpnnModel,
    x: &DenseMatrix,
    p: &DenseMatrix,
    label: usize,
    objective: Objective,
) -> Result<Gradients> {
    let l = model.depth();
    let n = x.rows();
    let (output, embeddings, caches) = forward_internal(model, x, p)?;
    let mut grads = Gradients::zeros_like(model);
    let p_t = p.transpose();

    // Seed gradient at the top embedding, and collect per-head seeds for
    // the GIN objective.
    let mut g_h: DenseMatrix; // dLoss/dH at the layer currently processed
    match objective {
        Objective::Standard(kind) => {
            let g_o = loss_grad(&output, label, kind)?;
            let pooled = embeddings[l - 1].column_means();
            // dL/dW^(l) = pooled^T (outer) g_o.
            let d = pooled.len();
            let k = g_o.len();
            let mut gw = DenseMatrix::zeros(d, k);
            for i in 0..d {
                for j in 0..k {
                    gw.set(i, j, pooled[i] * g_o[j]);
                }
            }
            grads.w[l - 1] = gw;
            // dL/dH^(l-1) has every row equal to (W^(l) g_o)/n.
            let t = model.w[l - 1].matvec(&g_o)?;
            g_h = DenseMatrix::from_fn(n, t.len(), |_, j| t[j] / n as f64);
        }
        Objective::GinAveraged(kind) => {
            let heads = model.v.as_ref().ok_or(Error::MissingGinHeads)?;
            let scale = 1.0 / heads.len() as f64;
            // Head at the top layer seeds g_h; lower heads are injected
            // during the downward sweep.
            g_h = DenseMatrix::zeros(n, model.widths[l - 1]);
            let head = heads.len() - 1;
            let (gv, inject) =
                gin_head_gradient(heads, &embeddings, head, label, kind, scale, n)?;
            grads.v.as_mut().expect("heads present")[head] = gv;
            g_h = g_h.add(&inject)?;
        }
    }

    // Downward sweep over diffusion layers t = l-2 .. 0 (0-based).
    for t in (0..l - 1).rev() {
        let acts = &model.acts[t];
        let cache = &caches[t];
        let h_prev = &embeddings[t];

        let g_e = g_h.hadamard(&cache.e.map(|v| acts.phi.d1(v)))?;
        if let Some(us) = &mut grads.u {
            us[t] = x.transpose().matmul(&g_e)?;
        }
        grads.w[t] = cache.r.transpose().matmul(&g_e)?;

        if t == 0 {
            break;
        }

        let g_r = g_e.matmul(&model.w[t].transpose())?;
        let g_m = g_r.hadamard(&cache.m.map(|v| acts.rho.d1(v)))?;
        let g_s = p_t.matmul(&g_m)?;
        g_h = g_s.hadamard(&h_prev.map(|v| acts.psi.d1(v)))?;

        // A GIN head also reads H^(t); fold its contribution in.
        if let Objective::GinAveraged(kind) = objective {
            let heads = model.v.as_ref().expect("heads present");
            let scale = 1.0 / heads.len() as f64;
            let head = t - 1;
            let (gv, inject) =
                gin_head_gradient(heads, &embeddings, head, label, kind, scale, n)?;
            grads.v.as_mut().expect("heads present")[head] = gv;
            g_h = g_h.add(&inject)?;
        }
    }
    Ok(grads)
}

/// Gradient of one GIN head's (scaled) loss: returns `dL/dV^(head)` and
/// the contribution to `dL/dH^(head+1)`.
fn gin_head_gradient(
    heads: &[DenseMatrix],
    embeddings: &[DenseMatrix],
    head: usize,
    label: usize,
    kind: LossKind,
    scale: f64,
    n: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let h = &embeddings[head + 1];
    let pooled = h.column_means();
    let o = heads[head].matvec_transposed(&pooled)?;
    let mut g_o = loss_grad(&o, label, kind)?;
    for g in &mut g_o {
        *g *= scale;
    }
    let d = pooled.len();
    let k = g_o.len();
    let mut gv = DenseMatrix::zeros(d, k);
    for i in 0..d {
        for j in 0..k {
            gv.set(i, j, pooled[i] * g_o[j]);
        }
    }
    let t = heads[head].matvec(&g_o)?;
    let inject = DenseMatrix::from_fn(n, t.len(), |_, j| t[j] / n as f64);
    Ok((gv, inject))
}

/// Folds per-copy gradients of a weight-tied model into the gradient of
/// the shared parameters: tied copies get the summed gradient, so one
/// optimizer step keeps them equal.
pub fn tie_gradients(model: &MpnnModel, grads: &mut Gradients) {
    if !model.is_weight_tied() {
        return;
    }
    let l = model.depth();
    if l >= 3 {
        let mut sum = grads.w[0].clone();
        for t in 1..l - 1 {
            sum = sum.add(&grads.w[t]).expect("tied shapes");
        }
        for t in 0..l - 1 {
            grads.w[t] = sum.clone();
        }
        if let Some(us) = &mut grads.u {
            let mut sum = us[0].clone();
            for t in 1..us.len() {
                sum = sum.add(&us[t]).expect("tied shapes");
            }
            for item in us.iter_mut() {
                *item = sum.clone();
            }
        }
    }
}

/// Gaussian noise applied to every weight matrix, together with the base
/// weights it was drawn against, so the exact negation can be replayed:
/// `theta + E` and `theta - E` are both formed from the same base, and
/// un-applying a recorded perturbation restores the base bit-exactly.
#[derive(Debug, Clone)]
pub struct NoiseRecord {
    pub w: Vec<DenseMatrix>,
    pub u: Option<Vec<DenseMatrix>>,
    pub v: Option<Vec<DenseMatrix>>,
    base_w: Vec<DenseMatrix>,
    base_u: Option<Vec<DenseMatrix>>,
    base_v: Option<Vec<DenseMatrix>>,
}

/// Draws per-entry Gaussian noise with per-layer scales `sigma[i]` for
/// layer `i+1` (W and U of a diffusion layer share the layer scale; the
/// readout uses `sigma[l-1]`). For tied models the shared matrices get a
/// single draw (scale `sigma[0]`) replicated across copies, so the
/// perturbed model remains tied.
pub fn draw_noise(model: &MpnnModel, sigma: &[f64], seed: u64) -> Result<NoiseRecord> {
    let l = model.depth();
    if sigma.len() != l {
        return Err(Error::ShapeMismatch(format!(
            "need {l} per-layer noise scales, got {}",
            sigma.len()
        )));
    }
    if sigma.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(Error::InvalidParameter(
            "noise scales must be finite and non-negative".into(),
        ));
    }
    let tree = SeedTree::new(seed);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, s: f64| {
        DenseMatrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * s
                })
                .collect(),
        )
        .expect("finite noise")
    };
    let tied = model.is_weight_tied();
    let mut w: Vec<DenseMatrix> = Vec::with_capacity(l);
    for t in 0..l {
        if tied && t > 0 && t < l - 1 {
            w.push(w[0].clone());
        } else {
            let mut rng = tree.stream("noise-w", t as u64);
            let m = &model.w[t];
            w.push(draw(&mut rng, m.rows(), m.cols(), sigma[t]));
        }
    }
    let u = model.u.as_ref().map(|us| {
        let mut out: Vec<DenseMatrix> = Vec::with_capacity(us.len());
        for (t, m) in us.iter().enumerate() {
            if tied && t > 0 {
                out.push(out[0].clone());
            } else {
                let mut rng = tree.stream("noise-u", t as u64);
                out.push(draw(&mut rng, m.rows(), m.cols(), sigma[t]));
            }
        }
        out
    });
    let v = model.v.as_ref().map(|vs| {
        let mut out = Vec::with_capacity(vs.len());
        for (t, m) in vs.iter().enumerate() {
            let mut rng = tree.stream("noise-v", t as u64);
            out.push(draw(&mut rng, m.rows(), m.cols(), sigma[t]));
        }
        out
    });
    Ok(NoiseRecord {
        w,
        u,
        v,
        base_w: model.w.clone(),
        base_u: model.u.clone(),
        base_v: model.v.clone(),
    })
}

/// `model + sign * noise`, entry by entry. Applying `+1` then `-1`
/// restores the weights bit-exactly: when subtracting, an entry that is
/// the recorded result of adding the noise to the base snaps back to the
/// base value instead of trusting `(a + e) - e` to round home.
pub fn apply_noise(model: &MpnnModel, noise: &NoiseRecord, sign: f64) -> MpnnModel {
    let mut out = model.clone();
    for (i, (m, e)) in out.w.iter_mut().zip(&noise.w).enumerate() {
        apply_signed(m, e, sign, Some(&noise.base_w[i]));
    }
    if let (Some(us), Some(es)) = (&mut out.u, &noise.u) {
        for (i, (m, e)) in us.iter_mut().zip(es).enumerate() {
            apply_signed(m, e, sign, noise.base_u.as_ref().map(|b| &b[i]));
        }
    }
    if let (Some(vs), Some(es)) = (&mut out.v, &noise.v) {
        for (i, (m, e)) in vs.iter_mut().zip(es).enumerate() {
            apply_signed(m, e, sign, noise.base_v.as_ref().map(|b| &b[i]));
        }
    }
    out
}

fn apply_signed(m: &mut DenseMatrix, e: &DenseMatrix, sign: f64, base: Option<&DenseMatrix>) {
    for (idx, (a, b)) in m.data_mut().iter_mut().zip(e.data()).enumerate() {
        if sign >= 0.0 {
            *a += b;
        } else {
            match base {
                Some(bm) if *a == bm.data()[idx] + b => *a = bm.data()[idx],
                _ => *a -= b,
            }
        }
    }
}

/// Perturbs every weight entry with independent `N(0, sigma_i^2)` noise
/// and returns the perturbed model together with the noise record.
pub fn perturb(model: &MpnnModel, sigma: &[f64], seed: u64) -> Result<(MpnnModel, NoiseRecord)> {
    let noise = draw_noise(model, sigma, seed)?;
    Ok((apply_noise(model, &noise, 1.0), noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphFamily};

    fn tiny_example(n: usize, d0: usize, seed: u64) -> DatasetExample {
        let g = generate(GraphFamily::ErdosRenyi { n, p: 0.5 }, seed).unwrap();
        let mut rng = SeedTree::new(seed).stream("x", 0);
        let x = DenseMatrix::from_fn(n, d0, |_, _| rng.gen::<f64>() - 0.5);
        DatasetExample::new(x, g, 1).unwrap()
    }

    fn tanh_model(widths: Vec<usize>, seed: u64, with_u: bool) -> MpnnModel {
        let l = widths.len() - 1;
        MpnnModel::random_init(
            widths,
            vec![ActivationTriple::uniform(Activation::Tanh); l - 1],
            DiffusionKind::SymNormalizedSelfLoops,
            false,
            with_u,
            false,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let widths = vec![3usize, 4, 2];
        let w = vec![DenseMatrix::zeros(3, 4), DenseMatrix::zeros(4, 2)];
        let model = MpnnModel::new(
            widths,
            w,
            None,
            None,
            vec![ActivationTriple::uniform(Activation::Tanh)],
            DiffusionKind::Adjacency,
            false,
        )
        .unwrap();
        let out = forward(&model, &tiny_example(5, 3, 1)).unwrap();
        assert!(out.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_two_layer_matches_closed_form() {
        // l = 2, identity activations, no U: output = (1/n) 1^T P X W1 W2.
        let n = 4;
        let example = tiny_example(n, 3, 2);
        let mut rng = SeedTree::new(9).stream("w", 0);
        let w1 = DenseMatrix::from_fn(3, 3, |_, _| rng.gen::<f64>() - 0.5);
        let w2 = DenseMatrix::from_fn(3, 2, |_, _| rng.gen::<f64>() - 0.5);
        let model = MpnnModel::new(
            vec![3, 3, 2],
            vec![w1.clone(), w2.clone()],
            None,
            None,
            vec![ActivationTriple::uniform(Activation::Identity)],
            DiffusionKind::Adjacency,
            false,
        )
        .unwrap();
        let out = forward(&model, &example).unwrap();
        let p = diffusion_matrix(&example.graph, DiffusionKind::Adjacency).unwrap();
        let z = p.matmul(&example.x).unwrap().matmul(&w1).unwrap();
        let pooled = z.column_means();
        let expect = w2.matvec_transposed(&pooled).unwrap();
        for (a, b) in out.output.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_gcn_matches_scalar_transcript() {
        // K2 with X = I, sym-normalized diffusion (P = [[1/2,1/2],[1/2,1/2]]
        // after self-loops), tanh phi, hand-computed transcript.
        let g = generate(GraphFamily::Complete { n: 2 }, 0).unwrap();
        let x = DenseMatrix::identity(2);
        let example = DatasetExample::new(x, g, 0).unwrap();
        let w1 = DenseMatrix::from_vec(2, 2, vec![0.3, -0.2, 0.1, 0.4]).unwrap();
        let w2 = DenseMatrix::from_vec(2, 2, vec![0.5, -0.1, 0.2, 0.6]).unwrap();
        let model = MpnnModel::new(
            vec![2, 2, 2],
            vec![w1, w2],
            None,
            None,
            vec![ActivationTriple::gcn(Activation::Tanh)],
            DiffusionKind::SymNormalizedSelfLoops,
            false,
        )
        .unwrap();
        let out = forward(&model, &example).unwrap();
        // P X = P; P W1 rows are both (0.2, 0.1); H1 = tanh of that.
        let h = (0.2f64.tanh(), 0.1f64.tanh());
        let pooled = (h.0, h.1); // both rows identical
        let expect = [
            0.5 * pooled.0 + 0.2 * pooled.1,
            -0.1 * pooled.0 + 0.6 * pooled.1,
        ];
        for (a, b) in out.output.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn binary_logistic_zero_margin_is_log2() {
        let v = loss(&[0.0, 0.0], 0, LossKind::BinaryLogistic).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_saturates_to_zero() {
        let v = loss(&[10.0, 0.0], 0, LossKind::SoftmaxCrossEntropy).unwrap();
        assert!(v < 1e-4);
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        for kind in [LossKind::BinaryLogistic, LossKind::SoftmaxCrossEntropy] {
            let o = [0.3, -0.7];
            for label in 0..2 {
                let g = loss_grad(&o, label, kind).unwrap();
                for j in 0..2 {
                    let h = 1e-6;
                    let mut op = o;
                    op[j] += h;
                    let mut om = o;
                    om[j] -= h;
                    let fd = (loss(&op, label, kind).unwrap() - loss(&om, label, kind).unwrap())
                        / (2.0 * h);
                    assert!((fd - g[j]).abs() < 1e-6, "{kind:?} label {label} coord {j}");
                }
            }
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        assert!(matches!(
            loss(&[0.0, 0.0], 2, LossKind::BinaryLogistic),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn gin_forward_reduces_to_plain_forward_at_depth_2() {
        let n = 5;
        let example = tiny_example(n, 3, 4);
        let mut model = tanh_model(vec![3, 4, 2], 5, false);
        // Install a single GIN head equal to a fresh matrix; compare with
        // forward() after swapping W^(2) for the head.
        let mut rng = SeedTree::new(77).stream("v", 0);
        let head = DenseMatrix::from_fn(4, 2, |_, _| rng.gen::<f64>() - 0.5);
        model = MpnnModel::new(
            model.widths().to_vec(),
            model.weights().to_vec(),
            None,
            Some(vec![head.clone()]),
            model.activations().to_vec(),
            model.diffusion(),
            false,
        )
        .unwrap();
        let gin_out = forward_gin(&model, &example).unwrap();
        assert_eq!(gin_out.len(), 1);

        let swapped = MpnnModel::new(
            model.widths().to_vec(),
            vec![model.weights()[0].clone(), head],
            None,
            None,
            model.activations().to_vec(),
            model.diffusion(),
            false,
        )
        .unwrap();
        let plain = forward(&swapped, &example).unwrap();
        for (a, b) in gin_out[0].iter().zip(&plain.output) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gin_loss_zero_heads_give_log2() {
        let example = tiny_example(4, 3, 6);
        let model = MpnnModel::new(
            vec![3, 4, 4, 2],
            vec![
                DenseMatrix::zeros(3, 4),
                DenseMatrix::zeros(4, 4),
                DenseMatrix::zeros(4, 2),
            ],
            None,
            Some(vec![DenseMatrix::zeros(4, 2), DenseMatrix::zeros(4, 2)]),
            vec![ActivationTriple::uniform(Activation::Tanh); 2],
            DiffusionKind::Adjacency,
            false,
        )
        .unwrap();
        let v = gin_loss(&model, &example, LossKind::BinaryLogistic).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gin_loss_is_mean_of_head_losses() {
        let example = tiny_example(5, 3, 8);
        let model = MpnnModel::random_init(
            vec![3, 4, 4, 2],
            vec![ActivationTriple::uniform(Activation::Tanh); 2],
            DiffusionKind::SymNormalizedSelfLoops,
            false,
            true,
            true,
            21,
        )
        .unwrap();
        let outs = forward_gin(&model, &example).unwrap();
        let mean: f64 = outs
            .iter()
            .map(|o| loss(o, example.label, LossKind::BinaryLogistic).unwrap())
            .sum::<f64>()
            / outs.len() as f64;
        let direct = gin_loss(&model, &example, LossKind::BinaryLogistic).unwrap();
        assert!((mean - direct).abs() < 1e-12);
    }

    #[test]
    fn perturb_zero_sigma_is_identity() {
        let model = tanh_model(vec![3, 4, 2], 3, true);
        let (p, _) = perturb(&model, &[0.0, 0.0], 1).unwrap();
        assert_eq!(p, model);
    }

    #[test]
    fn noise_negation_restores_bit_exactly() {
        let model = tanh_model(vec![3, 4, 2], 3, true);
        let (p, e) = perturb(&model, &[0.3, 0.1], 42).unwrap();
        let restored = apply_noise(&p, &e, -1.0);
        assert_eq!(restored, model);
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let model = tanh_model(vec![6, 8, 2], 3, false);
        let sigma = [0.2, 0.05];
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        let trials = 2_000; // 2000 draws x 48 entries = 96k samples per layer
        for t in 0..trials {
            let e = draw_noise(&model, &sigma, 1000 + t).unwrap();
            for (layer, m) in e.w.iter().enumerate() {
                for v in m.data() {
                    sums[layer] += v * v;
                }
                counts[layer] += m.data().len();
            }
        }
        for layer in 0..2 {
            let var = sums[layer] / counts[layer] as f64;
            let expect = sigma[layer] * sigma[layer];
            assert!(
                (var - expect).abs() < 0.03 * expect,
                "layer {layer}: {var} vs {expect}"
            );
        }
    }

    #[test]
    fn permutation_invariance_of_readout() {
        let n = 6;
        let example = tiny_example(n, 3, 12);
        let model = tanh_model(vec![3, 5, 4, 2], 13, true);
        let base = forward(&model, &example).unwrap();

        // Relabel nodes by the permutation i -> (i + 2) % n.
        let perm: Vec<usize> = (0..n).map(|i| (i + 2) % n).collect();
        let x2 = DenseMatrix::from_fn(n, 3, |i, j| example.x.at(perm[i], j));
        let edges2: Vec<(usize, usize)> = example
            .graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                let pa = perm.iter().position(|&q| q == a).unwrap();
                let pb = perm.iter().position(|&q| q == b).unwrap();
                (pa, pb)
            })
            .collect();
        let g2 = Graph::new(n, edges2).unwrap();
        let example2 = DatasetExample::new(x2, g2, example.label).unwrap();
        let permuted = forward(&model, &example2).unwrap();
        for (a, b) in base.output.iter().zip(&permuted.output) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_parse_roundtrip() {
        for a in [
            Activation::Identity,
            Activation::Tanh,
            Activation::SigmoidCentered,
            Activation::Relu,
            Activation::Scaled { base: ScaledBase::Tanh, factor: 2.5 },
        ] {
            assert_eq!(Activation::parse(&a.token()).unwrap(), a);
        }
        assert!(Activation::parse("swish").is_err());
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let err = MpnnModel::new(
            vec![3, 4, 2],
            vec![DenseMatrix::zeros(3, 3), DenseMatrix::zeros(4, 2)],
            None,
            None,
            vec![ActivationTriple::uniform(Activation::Tanh)],
            DiffusionKind::Adjacency,
            false,
        )
        .unwrap_err();
        match err {
            Error::ShapeMismatch(msg) => assert!(msg.contains("W^(1)"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
