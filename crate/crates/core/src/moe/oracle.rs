//! Scalar, loop-by-loop evaluation of the fusion equation. Slow on purpose:
//! it shares no code with the vectorised path beyond the scalar activations,
//! so the two can be checked against each other.

use ndarray::Array2;

use super::{Granularity, Mlp, ModalityTokens, MoeParams};

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let (h, n_in) = m.w1.dim();
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut acc = m.b1[j];
        for k in 0..n_in {
            acc += m.w1[[j, k]] * x[k];
        }
        hidden[j] = gelu(acc);
    }
    let n_out = m.w2.nrows();
    let mut out = vec![0.0; n_out];
    for o in 0..n_out {
        let mut acc = m.b2[o];
        for j in 0..h {
            acc += m.w2[[o, j]] * hidden[j];
        }
        out[o] = acc;
    }
    out
}

/// e[i][d] computed with explicit sums over experts, modalities and inputs.
pub fn loop_reference(v: &ModalityTokens, t: &[f64], params: &MoeParams) -> Array2<f64> {
    let (n_i, n_m, d_i) = v.tokens.dim();
    let d_t = params.d_t();

    let logits = mlp(&params.high_router, t);
    let mut z = 0.0;
    let mut pi_high = Vec::with_capacity(logits.len());
    for &l in &logits {
        pi_high.push(l.exp());
    }
    for &p in &pi_high {
        z += p;
    }
    for p in pi_high.iter_mut() {
        *p /= z;
    }

    let mut e = Array2::zeros((n_i, d_t));
    for (n, expert) in params.experts.iter().enumerate() {
        let cls_gate = match expert.granularity {
            Granularity::ModalityLevel => {
                let mut x = Vec::with_capacity(n_m * d_i);
                for m in 0..n_m {
                    for k in 0..d_i {
                        x.push(v.cls[[m, k]]);
                    }
                }
                Some(mlp(&expert.router, &x))
            }
            Granularity::TokenLevel => None,
        };
        for i in 0..n_i {
            let gate_logits = match &cls_gate {
                Some(g) => g.clone(),
                None => {
                    let mut x = Vec::with_capacity(n_m * d_i);
                    for m in 0..n_m {
                        for k in 0..d_i {
                            x.push(v.tokens[[i, m, k]]);
                        }
                    }
                    mlp(&expert.router, &x)
                }
            };
            for m in 0..n_m {
                let p = 1.0 / (1.0 + (-gate_logits[m]).exp());
                for d in 0..d_t {
                    let mut specific = expert.b_mod[[m, d]];
                    let mut shared = expert.b_shared[d];
                    for k in 0..d_i {
                        specific += expert.w_mod[[m, d, k]] * v.tokens[[i, m, k]];
                        shared += expert.w_shared[[d, k]] * v.tokens[[i, m, k]];
                    }
                    e[[i, d]] += pi_high[n] * (p * specific + (1.0 - p) * shared);
                }
            }
        }
    }
    e
}
