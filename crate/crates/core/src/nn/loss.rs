use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::Float;

/// Mean over unmasked rows of `−log softmax(logits[i])[targets[i]]`.
pub fn masked_cross_entropy(g: &mut Graph, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    if mask.len() != targets.len() {
        return Err(Error::shape(
            "masked_cross_entropy",
            format!("{} targets, {} mask entries", targets.len(), mask.len()),
        ));
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::InvalidArgument(
            "masked_cross_entropy: no unmasked position".into(),
        ));
    }
    let w = 1.0 / count as Float;
    let weights: Vec<Float> = mask.iter().map(|&m| if m { w } else { 0.0 }).collect();
    g.cross_entropy(logits, targets, &weights)
}

/// Row-wise softmax of a plain tensor.
pub fn softmax(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(Float::NEG_INFINITY, Float::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_graph, ParamStore};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn loss(logits: Tensor, targets: &[usize], mask: &[bool]) -> Result<Float> {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let l = g.input(logits);
        let out = masked_cross_entropy(&mut g, l, targets, mask)?;
        Ok(g.value(out).item())
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let v = loss(Tensor::full(1, 7, 0.3), &[2], &[true]).unwrap();
        assert!((v - (7.0 as Float).ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_target_gives_near_zero() {
        let mut t = Tensor::zeros(1, 5);
        t.set(0, 3, 100.0);
        let v = loss(t, &[3], &[true]).unwrap();
        assert!(v >= 0.0 && v < 1e-40);
    }

    #[test]
    fn masked_position_contributes_nothing() {
        let mut t = Tensor::zeros(2, 4);
        t.row_mut(1).copy_from_slice(&[50.0, -3.0, 2.0, 0.0]);
        let v = loss(t, &[0, 1], &[true, false]).unwrap();
        assert!((v - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn all_masked_is_an_error() {
        assert!(loss(Tensor::zeros(2, 3), &[0, 0], &[false, false]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let logits = Tensor::uniform(4, 6, -2.0, 2.0, &mut rng);
        let targets = [1, 5, 0, 3];
        let mask = [true, false, true, true];
        let r = grad_check_graph(
            |g, v| masked_cross_entropy(g, v[0], &targets, &mask),
            &[logits],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(vals in prop::collection::vec(-50.0f64..50.0, 12)) {
            let t = Tensor::from_vec(3, 4, vals.into_iter().map(|v| v as Float).collect()).unwrap();
            let s = softmax(&t);
            for r in 0..3 {
                prop_assert!(s.row(r).iter().all(|p| *p >= 0.0));
                prop_assert!((s.row(r).iter().sum::<Float>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
