//! Tape-free entry points for the layer primitives, for inference and tests.

use super::layers::{self, BlockConfig};
use super::params::ParamSet;
use super::tape::{softmax_in_place, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `out[i,j] = Σ_k x[i,k]·w[k,j] + b[j]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.cols() != w.rows() {
        return Err(Error::dim("affine", x.shape(), w.shape()));
    }
    if b.len() != w.cols() {
        return Err(Error::dim("affine", w.shape(), b.shape()));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(b.clone());
    let xw = tape.matmul(xv, wv)?;
    let out = tape.add_row(xw, bv)?;
    Ok(tape.value(out).clone())
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("softmax input contains {bad}")));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// One GRU step using the parameters registered under `prefix`.
pub fn gru_step(h_prev: &[f64], x: &[f64], params: &ParamSet, prefix: &str) -> Result<Vec<f64>> {
    if h_prev.is_empty() || x.is_empty() {
        return Err(Error::dim("gru_step", &[h_prev.len()], &[x.len()]));
    }
    let w = params.get(&format!("{prefix}.w_z"))?;
    if w.rows() != x.len() {
        return Err(Error::dim("gru_step", w.shape(), &[x.len()]));
    }
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::vector(h_prev.to_vec()));
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    let out = layers::gru_step(&mut tape, params, prefix, h, xv)?;
    Ok(tape.value(out).data().to_vec())
}

/// Applies one encoder block; returns the output and per-head attention.
pub fn self_attention_block(
    seq: &Tensor,
    params: &ParamSet,
    prefix: &str,
    cfg: &BlockConfig,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let x = tape.constant(seq.clone());
    let out = layers::self_attention_block(&mut tape, params, prefix, cfg, x)?;
    let attention = out
        .attention
        .iter()
        .map(|&a| tape.value(a).clone())
        .collect();
    Ok((tape.value(out.out).clone(), attention))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::Init;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_identity_and_bias() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let out = affine(&x, &Tensor::identity(2), &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);

        let zero = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![5.0, -2.0], vec![0.5, 9.0]]).unwrap();
        let out = affine(&zero, &w, &Tensor::vector(vec![3.0, -1.0])).unwrap();
        assert_eq!(out.data(), &[3.0, -1.0]);
    }

    #[test]
    fn affine_matches_hand_product() {
        // [[1,2],[3,4]]·[[1,0],[1,1]] + [1,1] = [[3,2],[7,4]] + 1
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let out = affine(&x, &w, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(out.to_rows(), vec![vec![4.0, 3.0], vec![8.0, 5.0]]);
    }

    #[test]
    fn affine_shape_error_mentions_shapes() {
        let x = Tensor::zeros(&[1, 3]);
        let err = affine(&x, &Tensor::identity(2), &Tensor::zeros(&[2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        for c in [-3.0, 0.0, 17.5] {
            let out = softmax(&[c; 4]).unwrap();
            assert!(out.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        }
        let out = softmax(&[2.0, 0.0]).unwrap();
        let e2 = 2f64.exp();
        assert!((out[0] - 0.88080).abs() < 1e-5);
        assert!((out[1] - 0.11920).abs() < 1e-5);
        assert!((out[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!(matches!(softmax(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_is_shift_invariant_and_extreme_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let v: Vec<f64> = (0..7).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let k = rng.gen_range(-100.0..100.0);
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + k).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let out = softmax(&[1000.0, -1000.0, 0.0]).unwrap();
        assert!(out.iter().all(|p| p.is_finite() && *p >= 0.0));
    }

    fn zero_gru(d: usize, h: usize) -> ParamSet {
        let mut p = ParamSet::new(0);
        for g in ["z", "r", "h"] {
            p.init(&format!("gru.w_{g}"), &[d, h], Init::Zeros).unwrap();
            p.init(&format!("gru.u_{g}"), &[h, h], Init::Zeros).unwrap();
            p.init(&format!("gru.b_{g}"), &[h], Init::Zeros).unwrap();
        }
        p
    }

    #[test]
    fn gru_zero_params() {
        let p = zero_gru(1, 1);
        let out = gru_step(&[0.4], &[1.0], &p, "gru").unwrap();
        assert!((out[0] - 0.2).abs() < 1e-15);
        let out = gru_step(&[0.0], &[3.0], &p, "gru").unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn gru_dimension_error() {
        let p = zero_gru(2, 3);
        assert!(matches!(
            gru_step(&[0.0; 3], &[1.0], &p, "gru"),
            Err(Error::Dimension { .. })
        ));
        assert!(gru_step(&[0.0; 2], &[1.0, 1.0], &p, "gru").is_err());
    }

    fn block_params(cfg: &BlockConfig, seed: u64) -> ParamSet {
        let mut p = ParamSet::new(seed);
        layers::init_block(&mut p, "blk", cfg).unwrap();
        p
    }

    #[test]
    fn single_token_attention_is_one() {
        let cfg = BlockConfig { width: 8, heads: 2, ffn: 16 };
        let p = block_params(&cfg, 3);
        let seq = Tensor::new(vec![1, 8], (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (_, att) = self_attention_block(&seq, &p, "blk", &cfg).unwrap();
        assert_eq!(att.len(), 2);
        for a in att {
            assert_eq!(a.data(), &[1.0]);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let cfg = BlockConfig { width: 8, heads: 4, ffn: 16 };
        let p = block_params(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = Tensor::new(vec![5, 8], (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        let (out, att) = self_attention_block(&seq, &p, "blk", &cfg).unwrap();
        assert_eq!(out.shape(), &[5, 8]);
        for a in att {
            for i in 0..5 {
                let s: f64 = a.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(a.row(i).iter().all(|&w| w > 0.0));
            }
        }
    }

    #[test]
    fn residual_identity_when_value_and_ffn_are_zero() {
        let cfg = BlockConfig { width: 8, heads: 2, ffn: 16 };
        let mut p = block_params(&cfg, 5);
        for name in [
            "blk.attn.v.w",
            "blk.attn.v.b",
            "blk.attn.o.b",
            "blk.ffn.in.w",
            "blk.ffn.in.b",
            "blk.ffn.out.w",
            "blk.ffn.out.b",
        ] {
            let shape = p.get(name).unwrap().shape().to_vec();
            p.update(name, Tensor::zeros(&shape)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = Tensor::new(vec![3, 8], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let (out, _) = self_attention_block(&seq, &p, "blk", &cfg).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = BlockConfig { width: 10, heads: 4, ffn: 8 };
        let mut p = ParamSet::new(0);
        assert!(matches!(
            layers::init_block(&mut p, "blk", &cfg),
            Err(Error::Config(_))
        ));
    }
}
