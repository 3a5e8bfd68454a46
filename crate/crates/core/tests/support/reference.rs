//! Straight-line forward passes over plain vectors, one sample at a time.
//! They read parameters by name and nothing else from the library.

use hierrec::data::Sample;
use hierrec::model::{HierRecModel, SharedBottomModel};
use hierrec::nn::{Activation, FcStackConfig, ParameterStore};

const EPS: f64 = 1e-5;

fn values<'a>(p: &'a ParameterStore, name: &str) -> &'a [f64] {
    p.value(name).unwrap().data()
}

fn buffer<'a>(p: &'a ParameterStore, name: &str) -> &'a [f64] {
    p.buffer(name).unwrap().data()
}

fn table_row(p: &ParameterStore, name: &str, id: usize) -> Vec<f64> {
    let t = p.value(name).unwrap();
    let d = t.cols();
    t.data()[id * d..(id + 1) * d].to_vec()
}

/// `W x + b` with `W` stored row-major as `out × in`.
fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(w.len(), n * b.len());
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + (0..n).map(|i| w[o * n + i] * x[i]).sum::<f64>())
        .collect()
}

fn fc(cfg: &FcStackConfig, p: &ParameterStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let layers = cfg.layer_sizes.len() - 1;
    let mut h = x.to_vec();
    for k in 0..layers {
        let name = |s: &str| format!("{prefix}.{k}.{s}");
        h = linear(values(p, &name("weight")), values(p, &name("bias")), &h);
        if cfg.linear_output && k + 1 == layers {
            break;
        }
        if cfg.use_batch_norm {
            let (g, b) = (values(p, &name("bn_gamma")), values(p, &name("bn_beta")));
            let (m, v) = (buffer(p, &name("bn_running_mean")), buffer(p, &name("bn_running_var")));
            for j in 0..h.len() {
                h[j] = g[j] * (h[j] - m[j]) / (v[j] + EPS).sqrt() + b[j];
            }
        }
        for e in &mut h {
            *e = match cfg.activation {
                Activation::Relu => e.max(0.0),
                Activation::Tanh => e.tanh(),
                Activation::Identity => *e,
            };
        }
    }
    h
}

/// Condition laid out as `W1 (r × n), b1 (r), W2 (o × r), b2 (o)`.
fn conditioned_pair(cond: &[f64], n: usize, r: usize, o: usize, x: &[f64]) -> Vec<f64> {
    assert_eq!(cond.len(), n * r + r + r * o + o);
    let (w1, rest) = cond.split_at(n * r);
    let (b1, rest) = rest.split_at(r);
    let (w2, b2) = rest.split_at(r * o);
    let mid = linear(w1, b1, x);
    linear(w2, b2, &mid)
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn common_embeddings(p: &ParameterStore, ids: &[usize]) -> Vec<Vec<f64>> {
    ids.iter()
        .enumerate()
        .map(|(i, &id)| table_row(p, &format!("emb.common.{i}"), id))
        .collect()
}

pub fn hierrec_prob(m: &HierRecModel, x: &Sample) -> f64 {
    use hierrec::model::CtrModel;
    let cfg = m.config();
    let p = m.params();
    let fields = x.common_ids.len();
    let r = cfg.bottleneck_r;
    let e_s = table_row(p, "emb.scenario", x.scenario_id);
    let blocks = common_embeddings(p, &x.common_ids);
    let e_c: Vec<f64> = blocks.concat();

    let o_global = fc(&cfg.global_fc, p, "global_fc", &e_c);
    let o_explicit = if cfg.ablate_explicit {
        linear(values(p, "explicit_proj.0.weight"), values(p, "explicit_proj.0.bias"), &o_global)
    } else {
        let cond = fc(&cfg.explicit_condition_fc, p, "explicit_fc", &e_s);
        conditioned_pair(&cond, cfg.global_dim, r, cfg.explicit_out_dim, &o_global)
    };

    let head = if cfg.ablate_implicit {
        o_explicit
    } else {
        let raw = fc(&cfg.attention_fc, p, "attention_fc", &e_s);
        let heads = raw.len() / fields;
        let mut out = Vec::new();
        for g in 0..heads {
            let w = softmax(&raw[g * fields..(g + 1) * fields]);
            let ie: Vec<f64> = blocks
                .iter()
                .zip(&w)
                .flat_map(|(b, wi)| b.iter().map(move |v| v * wi))
                .collect();
            let cond = fc(&cfg.implicit_condition_fc, p, "implicit_fc", &ie);
            out.extend(conditioned_pair(&cond, cfg.explicit_out_dim, r, cfg.implicit_out_dim, &o_explicit));
        }
        out
    };
    let logit = linear(values(p, "output.0.weight"), values(p, "output.0.bias"), &head);
    sigmoid(logit[0])
}

pub fn shared_bottom_prob(m: &SharedBottomModel, x: &Sample) -> f64 {
    use hierrec::model::CtrModel;
    let cfg = m.config();
    let p = m.params();
    let e_c = common_embeddings(p, &x.common_ids).concat();
    let bottom = fc(&cfg.bottom_fc, p, "bottom_fc", &e_c);
    let logit = fc(&cfg.tower_fc, p, &format!("tower.{}", x.scenario_id), &bottom);
    sigmoid(logit[0])
}
