//! Risk-set softmax moments.
//!
//! For every tie group `k` this computes `log Σ_{j∈R_k} exp(β·x_j)` and the
//! softmax-weighted mean and covariance of the covariates over `R_k`. Risk sets
//! are suffixes of the time-sorted order, so one backward pass with a running
//! max (rescaling the partial sums whenever the max moves) covers all groups.

use crate::data::RiskStructure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Per-group moments; `mean` is `K×p` and `cov` is `K×p×p`, both row-major.
#[derive(Debug, Clone, Default)]
pub struct GroupMoments {
    pub p: usize,
    pub log_den: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl GroupMoments {
    pub fn mean(&self, k: usize) -> &[f64] {
        &self.mean[k * self.p..(k + 1) * self.p]
    }

    pub fn cov(&self, k: usize) -> &[f64] {
        let pp = self.p * self.p;
        &self.cov[k * pp..(k + 1) * pp]
    }
}

pub fn linear_predictor(beta: &[f64], x: &[f64]) -> f64 {
    beta.iter().zip(x).map(|(b, v)| b * v).sum()
}

pub fn group_moments(risk: &RiskStructure, beta: &[f64], order: Order) -> GroupMoments {
    let mut out = GroupMoments::default();
    group_moments_into(risk, beta, order, &mut out);
    out
}

/// Same as [`group_moments`], reusing `out`'s buffers.
pub fn group_moments_into(risk: &RiskStructure, beta: &[f64], order: Order, out: &mut GroupMoments) {
    let p = risk.p();
    let groups = risk.n_groups();
    let sorted = risk.sorted_subjects();
    out.p = p;
    out.log_den.clear();
    out.log_den.resize(groups, 0.0);
    let want_mean = order >= Order::Gradient;
    let want_cov = order >= Order::Hessian;
    out.mean.clear();
    out.cov.clear();
    if want_mean {
        out.mean.resize(groups * p, 0.0);
    }
    if want_cov {
        out.cov.resize(groups * p * p, 0.0);
    }

    let mut mx = f64::NEG_INFINITY;
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; if want_mean { p } else { 0 }];
    let mut s2 = vec![0.0; if want_cov { p * p } else { 0 }];
    let mut k = groups;
    for pos in (0..sorted.len()).rev() {
        let i = sorted[pos];
        let x = risk.covariate(i);
        let eta = linear_predictor(beta, x);
        if eta > mx {
            let f = (mx - eta).exp();
            s0 *= f;
            s1.iter_mut().for_each(|v| *v *= f);
            s2.iter_mut().for_each(|v| *v *= f);
            mx = eta;
        }
        let w = (eta - mx).exp();
        s0 += w;
        if want_mean {
            for a in 0..p {
                s1[a] += w * x[a];
            }
        }
        if want_cov {
            for a in 0..p {
                let wa = w * x[a];
                for b in 0..p {
                    s2[a * p + b] += wa * x[b];
                }
            }
        }
        while k > 0 && risk.risk_start(k - 1) == pos {
            k -= 1;
            out.log_den[k] = mx + s0.ln();
            if want_mean {
                let mean = &mut out.mean[k * p..(k + 1) * p];
                for a in 0..p {
                    mean[a] = s1[a] / s0;
                }
                if want_cov {
                    let cov = &mut out.cov[k * p * p..(k + 1) * p * p];
                    for a in 0..p {
                        for b in 0..p {
                            cov[a * p + b] = s2[a * p + b] / s0 - mean[a] * mean[b];
                        }
                    }
                }
            }
        }
        if k == 0 {
            break;
        }
    }
}
