//! Vectorised forward pass and hand-written backward pass of the fusion block.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};

use super::{Expert, Granularity, Mlp, ModalityTokens, MoeParams};
use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let th = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max subtraction.
pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = z.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    x: Array1<f64>,
    pre: Array1<f64>,
}

pub(crate) fn mlp_forward(m: &Mlp, x: Array1<f64>) -> (Array1<f64>, MlpCache) {
    let pre = m.w1.dot(&x) + &m.b1;
    let hidden = pre.mapv(gelu);
    let out = m.w2.dot(&hidden) + &m.b2;
    (out, MlpCache { x, pre })
}

/// Accumulates parameter gradients into `grad`, returns d/dx.
pub(crate) fn mlp_backward(m: &Mlp, cache: &MlpCache, dout: ArrayView1<f64>, grad: &mut Mlp) -> Array1<f64> {
    let hidden = cache.pre.mapv(gelu);
    grad.b2 += &dout;
    grad.w2 += &outer(dout, hidden.view());
    let dhidden = m.w2.t().dot(&dout);
    let dpre = &dhidden * &cache.pre.mapv(gelu_grad);
    grad.b1 += &dpre;
    grad.w1 += &outer(dpre.view(), cache.x.view());
    m.w1.t().dot(&dpre)
}

pub(crate) fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Low-level routing weights of one expert.
#[derive(Debug, Clone, PartialEq)]
pub enum LowRouting {
    /// One weight per modality, shared by all positions.
    Modality(Array1<f64>),
    /// modalities × positions
    Token(Array2<f64>),
}

impl LowRouting {
    /// Weights broadcast to modalities × positions.
    pub fn as_matrix(&self, n_positions: usize) -> Array2<f64> {
        match self {
            LowRouting::Modality(p) => {
                Array2::from_shape_fn((p.len(), n_positions), |(m, _)| p[m])
            }
            LowRouting::Token(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTrace {
    pub pi_high: Array1<f64>,
    pub pi_low: Vec<LowRouting>,
}

/// π^h = softmax(router(t)).
pub fn high_route(t: &Array1<f64>, params: &MoeParams) -> Array1<f64> {
    softmax(mlp_forward(&params.high_router, t.clone()).0.view())
}

fn flat_cls(v: &ModalityTokens) -> Array1<f64> {
    v.cls.iter().copied().collect()
}

fn flat_position(v: &ModalityTokens, i: usize) -> Array1<f64> {
    v.tokens.slice(s![i, .., ..]).iter().copied().collect()
}

fn route_low(expert: &Expert, v: &ModalityTokens) -> (LowRouting, Vec<MlpCache>) {
    match expert.granularity {
        Granularity::ModalityLevel => {
            let (logits, cache) = mlp_forward(&expert.router, flat_cls(v));
            (LowRouting::Modality(logits.mapv(sigmoid)), vec![cache])
        }
        Granularity::TokenLevel => {
            let n_i = v.n_positions();
            let mut gates = Array2::zeros((v.n_modalities(), n_i));
            let mut caches = Vec::with_capacity(n_i);
            for i in 0..n_i {
                let (logits, cache) = mlp_forward(&expert.router, flat_position(v, i));
                gates.column_mut(i).assign(&logits.mapv(sigmoid));
                caches.push(cache);
            }
            (LowRouting::Token(gates), caches)
        }
    }
}

/// π^{l,n} for one expert.
pub fn low_route(expert: &Expert, v: &ModalityTokens) -> LowRouting {
    route_low(expert, v).0
}

#[derive(Debug, Clone)]
struct ExpertCache {
    router: Vec<MlpCache>,
    /// modalities × positions
    gates: Array2<f64>,
    /// positions × modalities × d_T
    proj_mod: Array3<f64>,
    proj_shared: Array3<f64>,
    /// positions × d_T
    out: Array2<f64>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tokens: Array3<f64>,
    high: MlpCache,
    pi_high: Array1<f64>,
    experts: Vec<ExpertCache>,
}

fn check_shapes(v: &ModalityTokens, t: &Array1<f64>, params: &MoeParams) -> Result<()> {
    let (_, n_m, d_i) = v.tokens.dim();
    if n_m != params.n_modalities() || d_i != params.d_i() || t.len() != params.d_t() {
        return Err(Error::Shape(format!(
            "inputs (N_m={n_m}, d_I={d_i}, d_T={}) do not match parameters (N_m={}, d_I={}, d_T={})",
            t.len(),
            params.n_modalities(),
            params.d_i(),
            params.d_t()
        )));
    }
    if v.cls.dim() != (n_m, d_i) {
        return Err(Error::Shape("cls tokens do not match the token tensor".into()));
    }
    Ok(())
}

fn expert_forward(expert: &Expert, v: &ModalityTokens, d_t: usize) -> (LowRouting, ExpertCache) {
    let (n_i, n_m, _) = v.tokens.dim();
    let (routing, router) = route_low(expert, v);
    let gates = routing.as_matrix(n_i);
    let mut proj_mod = Array3::zeros((n_i, n_m, d_t));
    let mut proj_shared = Array3::zeros((n_i, n_m, d_t));
    let mut out = Array2::zeros((n_i, d_t));
    for m in 0..n_m {
        let w_m = expert.w_mod.index_axis(Axis(0), m);
        let b_m = expert.b_mod.row(m);
        // positions × d_I times (d_T × d_I)^T
        let v_m = v.tokens.slice(s![.., m, ..]);
        let pm = v_m.dot(&w_m.t()) + &b_m;
        let ps = v_m.dot(&expert.w_shared.t()) + &expert.b_shared;
        for i in 0..n_i {
            let g = gates[[m, i]];
            let mut row = out.row_mut(i);
            row.scaled_add(g, &pm.row(i));
            row.scaled_add(1.0 - g, &ps.row(i));
        }
        proj_mod.slice_mut(s![.., m, ..]).assign(&pm);
        proj_shared.slice_mut(s![.., m, ..]).assign(&ps);
    }
    let cache = ExpertCache {
        router,
        gates,
        proj_mod,
        proj_shared,
        out,
    };
    (routing, cache)
}

/// Output of one expert (positions × d_T) before high-level weighting.
pub(super) fn expert_output(expert: &Expert, v: &ModalityTokens) -> Array2<f64> {
    expert_forward(expert, v, expert.b_shared.len()).1.out
}

/// Fused tokens (positions × d_T), routing trace and backward cache.
pub fn forward_with_cache(
    v: &ModalityTokens,
    t: &Array1<f64>,
    params: &MoeParams,
) -> Result<(Array2<f64>, RoutingTrace, ForwardCache)> {
    check_shapes(v, t, params)?;
    let n_i = v.n_positions();
    let d_t = params.d_t();
    let (logits, high) = mlp_forward(&params.high_router, t.clone());
    let pi_high = softmax(logits.view());
    let mut fused = Array2::zeros((n_i, d_t));
    let mut pi_low = Vec::with_capacity(params.n_experts());
    let mut experts = Vec::with_capacity(params.n_experts());
    for (n, expert) in params.experts.iter().enumerate() {
        let (routing, ec) = expert_forward(expert, v, d_t);
        fused.scaled_add(pi_high[n], &ec.out);
        pi_low.push(routing);
        experts.push(ec);
    }
    let trace = RoutingTrace {
        pi_high: pi_high.clone(),
        pi_low,
    };
    let cache = ForwardCache {
        tokens: v.tokens.clone(),
        high,
        pi_high,
        experts,
    };
    Ok((fused, trace, cache))
}

/// Fused tokens and routing trace.
pub fn moe_forward(
    v: &ModalityTokens,
    t: &Array1<f64>,
    params: &MoeParams,
) -> Result<(Array2<f64>, RoutingTrace)> {
    forward_with_cache(v, t, params).map(|(e, trace, _)| (e, trace))
}

/// Gradients with respect to the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub tokens: Array3<f64>,
    pub cls: Array2<f64>,
    pub t: Array1<f64>,
}

/// Back-propagate `dfused` (positions × d_T). Parameter gradients are added
/// into `grads`; input gradients are returned.
pub fn moe_backward(
    dfused: &Array2<f64>,
    cache: &ForwardCache,
    params: &MoeParams,
    grads: &mut MoeParams,
) -> InputGrads {
    let (n_i, n_m, d_i) = cache.tokens.dim();
    let mut dtokens = Array3::zeros((n_i, n_m, d_i));
    let mut dcls = Array1::zeros(n_m * d_i);

    // d/dπ^h_n = <dfused, e_n>, then through the softmax.
    let dpi: Array1<f64> = cache
        .experts
        .iter()
        .map(|ec| (dfused * &ec.out).sum())
        .collect();
    let dot = cache.pi_high.dot(&dpi);
    let dlogits = &cache.pi_high * &(dpi - dot);
    let dt = mlp_backward(&params.high_router, &cache.high, dlogits.view(), &mut grads.high_router);

    for (n, (expert, ec)) in params.experts.iter().zip(&cache.experts).enumerate() {
        let g = &mut grads.experts[n];
        let dout = dfused * cache.pi_high[n];
        let mut dgate_logit = Array2::<f64>::zeros((n_m, n_i));
        for m in 0..n_m {
            let v_m = cache.tokens.slice(s![.., m, ..]);
            let gates_m = ec.gates.row(m);
            // positions × d_T
            let dpm = &dout * &gates_m.insert_axis(Axis(1));
            let dps = &dout * &gates_m.mapv(|p| 1.0 - p).insert_axis(Axis(1));
            {
                let mut gw = g.w_mod.index_axis_mut(Axis(0), m);
                gw += &dpm.t().dot(&v_m);
            }
            {
                let mut gb = g.b_mod.row_mut(m);
                gb += &dpm.sum_axis(Axis(0));
            }
            g.w_shared += &dps.t().dot(&v_m);
            g.b_shared += &dps.sum_axis(Axis(0));
            let w_m = expert.w_mod.index_axis(Axis(0), m);
            let dv = dpm.dot(&w_m) + dps.dot(&expert.w_shared);
            {
                let mut dt_m = dtokens.slice_mut(s![.., m, ..]);
                dt_m += &dv;
            }
            let diff = &ec.proj_mod.slice(s![.., m, ..]) - &ec.proj_shared.slice(s![.., m, ..]);
            for i in 0..n_i {
                let dp = dout.row(i).dot(&diff.row(i));
                let p = ec.gates[[m, i]];
                dgate_logit[[m, i]] = dp * p * (1.0 - p);
            }
        }
        match expert.granularity {
            Granularity::ModalityLevel => {
                let dr = dgate_logit.sum_axis(Axis(1));
                dcls += &mlp_backward(&expert.router, &ec.router[0], dr.view(), &mut g.router);
            }
            Granularity::TokenLevel => {
                for i in 0..n_i {
                    let dx = mlp_backward(&expert.router, &ec.router[i], dgate_logit.column(i), &mut g.router);
                    let dx = dx.into_shape_with_order((n_m, d_i)).expect("router input is N_m·d_I");
                    let mut slot = dtokens.slice_mut(s![i, .., ..]);
                    slot += &dx;
                }
            }
        }
    }
    InputGrads {
        tokens: dtokens,
        cls: dcls.into_shape_with_order((n_m, d_i)).expect("cls is N_m·d_I"),
        t: dt,
    }
}
