//! Graph capsule encoder.
//!
//! A linear lift is followed by capsule layers. Layer `l` raises its input
//! element-wise to each power `p = 1..P`, filters every power with the
//! polynomial `sum_k L^k (.) W_pk`, applies the activation and concatenates
//! the `P` blocks. A final affine map brings the width back to `hl`.

use numcore::{Axis, ParamVars, Tape, Var};

use crate::error::{CapamError, Result};
use crate::model::{capsule_weight_name, Activation, ModelConfig};
use crate::taskgraph::TaskGraph;

/// `X W0 + b0`.
pub fn lift(tape: &mut Tape, x: Var, params: &ParamVars, cfg: &ModelConfig) -> Result<Var> {
    let width = tape.shape(x)[1];
    if width != cfg.features.width() {
        return Err(CapamError::Config(format!(
            "node features have width {width}, model expects {}",
            cfg.features.width()
        )));
    }
    let w = params.get("enc.lift.w")?;
    let b = params.get("enc.lift.b")?;
    Ok(tape.linear(x, w, b)?)
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Identity => x,
    }
}

/// One capsule layer. `l_pows[k]` holds `L^k`; `l_pows[0]` is the identity
/// and is skipped.
pub fn capsule_layer(
    tape: &mut Tape,
    f_prev: Var,
    l_pows: &[Var],
    params: &ParamVars,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<Var> {
    if l_pows.len() != cfg.k + 1 {
        return Err(CapamError::Config(format!(
            "{} Laplacian powers supplied, filter degree {} needs {}",
            l_pows.len(),
            cfg.k,
            cfg.k + 1
        )));
    }
    let [n, width] = tape.shape(f_prev);
    if width != cfg.layer_input(layer) {
        return Err(CapamError::Config(format!(
            "layer {layer} input has width {width}, expected {}",
            cfg.layer_input(layer)
        )));
    }
    for &lk in &l_pows[1..] {
        if tape.shape(lk) != [n, n] {
            return Err(CapamError::Config(format!(
                "Laplacian power of shape {:?} does not match {n} nodes",
                tape.shape(lk)
            )));
        }
    }
    let mut blocks = Vec::with_capacity(cfg.p);
    for p in 1..=cfg.p {
        let fp = tape.powi(f_prev, p as u32)?;
        let w0 = params.get(&capsule_weight_name(layer, p, 0))?;
        let mut acc = tape.matmul(fp, w0)?;
        for (k, &lk) in l_pows.iter().enumerate().skip(1) {
            let w = params.get(&capsule_weight_name(layer, p, k))?;
            let fw = tape.matmul(fp, w)?;
            let term = tape.matmul(lk, fw)?;
            acc = tape.add(acc, term)?;
        }
        blocks.push(activate(tape, acc, cfg.activation));
    }
    Ok(tape.concat(Axis::Cols, &blocks)?)
}

/// Node embeddings `N x hl`.
pub fn encode(
    tape: &mut Tape,
    graph: &TaskGraph,
    params: &ParamVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    if graph.filter_degree() != cfg.k {
        return Err(CapamError::Config(format!(
            "graph carries Laplacian powers up to {}, model uses {}",
            graph.filter_degree(),
            cfg.k
        )));
    }
    let x = tape.constant(graph.features.clone());
    let l_pows: Vec<Var> = graph
        .laplacian_powers
        .iter()
        .map(|lk| tape.constant(lk.clone()))
        .collect();
    let mut f = lift(tape, x, params, cfg)?;
    for layer in 0..cfg.layers {
        f = capsule_layer(tape, f, &l_pows, params, cfg, layer)?;
    }
    let w = params.get("enc.out.w")?;
    let b = params.get("enc.out.b")?;
    Ok(tape.linear(f, w, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_instance;
    use crate::model::CapamModel;
    use numcore::{grad_check, GradCheckOptions, ParamStore, Tensor};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(k: usize, p: usize, layers: usize, h: usize) -> ModelConfig {
        ModelConfig {
            k,
            p,
            layers,
            h0: h,
            hl: h,
            heads: 1,
            ..Default::default()
        }
    }

    fn run(params: &ParamStore, graph: &TaskGraph, cfg: &ModelConfig) -> Tensor {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let e = encode(&mut tape, graph, &vars, cfg).unwrap();
        tape.value(e).clone()
    }

    #[test]
    fn lift_identity_and_bias() {
        let c = cfg(0, 1, 1, 5);
        let mut params = ParamStore::new();
        let mut w = Tensor::zeros(3, 5);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        params.insert("enc.lift.w", w);
        params.insert("enc.lift.b", Tensor::row(vec![0.5, -1.0, 2.0, 3.0, 4.0]));
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.0, 0.0, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let xv = tape.constant(x);
        let f = lift(&mut tape, xv, &vars, &c).unwrap();
        let out = tape.value(f);
        assert_eq!(out.row_slice(0), &[0.6, -0.8, 2.3, 3.0, 4.0]);
        assert_eq!(out.row_slice(1), &[0.5, -1.0, 2.0, 3.0, 4.0]);

        let bad = tape.constant(Tensor::zeros(2, 4));
        assert!(matches!(
            lift(&mut tape, bad, &vars, &c),
            Err(CapamError::Config(_))
        ));
    }

    #[test]
    fn linear_anchor_with_identity_activation() {
        // P=1, K=0, one layer, no activation: two stacked affine maps
        let c = ModelConfig {
            activation: Activation::Identity,
            ..cfg(0, 1, 1, 4)
        };
        let m = CapamModel::new(c.clone(), 3).unwrap();
        let inst = generate_instance(7, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let g = TaskGraph::build(&inst, c.features, 0).unwrap();
        let got = run(&m.params, &g, &c);

        let p = &m.params;
        let add_bias = |t: Tensor, b: &Tensor| {
            let mut t = t;
            for r in 0..t.rows() {
                for j in 0..t.cols() {
                    t.set(r, j, t.get(r, j) + b.get(0, j));
                }
            }
            t
        };
        let f0 = add_bias(
            g.features.matmul(p.get("enc.lift.w").unwrap()).unwrap(),
            p.get("enc.lift.b").unwrap(),
        );
        let f1 = f0.matmul(p.get("enc.layer0.p1.k0.w").unwrap()).unwrap();
        let want = add_bias(
            f1.matmul(p.get("enc.out.w").unwrap()).unwrap(),
            p.get("enc.out.b").unwrap(),
        );
        assert!(got.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn output_width_and_size_independence() {
        let c = cfg(2, 3, 1, 16);
        let m = CapamModel::new(c.clone(), 0).unwrap();
        for n in [1, 5, 40] {
            let inst = generate_instance(n, 2, &mut ChaCha8Rng::seed_from_u64(n as u64)).unwrap();
            let g = TaskGraph::build(&inst, c.features, 2).unwrap();
            let mut tape = Tape::new();
            let vars = m.params.register(&mut tape);
            let x = tape.constant(g.features.clone());
            let f0 = lift(&mut tape, x, &vars, &c).unwrap();
            let lp: Vec<Var> = g
                .laplacian_powers
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect();
            let layer = capsule_layer(&mut tape, f0, &lp, &vars, &c, 0).unwrap();
            assert_eq!(tape.shape(layer), [n, 48]);
            assert_eq!(run(&m.params, &g, &c).shape(), [n, 16]);
        }
    }

    #[test]
    fn single_node_uses_only_identity_term() {
        let c = cfg(2, 2, 1, 6);
        let m = CapamModel::new(c.clone(), 5).unwrap();
        let inst = generate_instance(1, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = TaskGraph::build(&inst, c.features, 2).unwrap();
        let full = run(&m.params, &g, &c);
        let mut zeroed = m.params.clone();
        for p in 1..=2 {
            for k in 1..=2 {
                let name = capsule_weight_name(0, p, k);
                let t = zeroed.get_mut(&name).unwrap();
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        assert_eq!(full, run(&zeroed, &g, &c));
    }

    #[test]
    fn mismatched_powers_rejected() {
        let c = cfg(2, 1, 1, 4);
        let m = CapamModel::new(c.clone(), 0).unwrap();
        let inst = generate_instance(3, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = TaskGraph::build(&inst, c.features, 1).unwrap();
        let mut tape = Tape::new();
        let vars = m.params.register(&mut tape);
        assert!(encode(&mut tape, &g, &vars, &c).is_err());
    }

    #[test]
    fn encoding_is_permutation_equivariant() {
        let c = cfg(2, 3, 2, 8);
        let m = CapamModel::new(c.clone(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let inst = generate_instance(10, 3, &mut rng).unwrap();
            let mut perm: Vec<usize> = (0..10).collect();
            perm.shuffle(&mut rng);
            let a = run(
                &m.params,
                &TaskGraph::build(&inst, c.features, 2).unwrap(),
                &c,
            );
            let b = run(
                &m.params,
                &TaskGraph::build(&inst.permute_tasks(&perm), c.features, 2).unwrap(),
                &c,
            );
            let pa = a.permute_rows(&perm);
            assert!(b.max_abs_diff(&pa) / pa.max_abs().max(1.0) < 1e-10);
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let c = cfg(2, 3, 2, 8);
        let m = CapamModel::new(c.clone(), 2).unwrap();
        let inst = generate_instance(4, 2, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let g = TaskGraph::build(&inst, c.features, 2).unwrap();
        let mut enc_params = ParamStore::new();
        for (name, t) in m.params.iter().filter(|(n, _)| n.starts_with("enc.")) {
            enc_params.insert(name, t.clone());
        }
        let weights = Tensor::new(
            4,
            8,
            (0..32)
                .map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.4)
                .collect(),
        )
        .unwrap();
        let report = grad_check(
            &enc_params,
            |tape, vars| -> Result<Var> {
                let e = encode(tape, &g, vars, &c)?;
                let w = tape.constant(weights.clone());
                let prod = tape.mul(e, w)?;
                Ok(tape.sum(prod))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
