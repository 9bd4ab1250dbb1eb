use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Parameters of the additive scorer `e = vᵀ tanh(k·W_k + q·W_q)`.
/// `wk` is `[key_dim, att]`, `wq` is `[query_dim, att]`, `v` is `[att, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wk: ParamId,
    pub wq: ParamId,
    pub v: ParamId,
}

impl AttentionWeights {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        key_dim: usize,
        query_dim: usize,
        att_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            wk: store.add(format!("{prefix}.wk"), Tensor::uniform(key_dim, att_dim, -0.1, 0.1, rng))?,
            wq: store.add(format!("{prefix}.wq"), Tensor::uniform(query_dim, att_dim, -0.1, 0.1, rng))?,
            v: store.add(format!("{prefix}.v"), Tensor::uniform(att_dim, 1, -0.1, 0.1, rng))?,
        })
    }

    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}.{n}"))
                .ok_or_else(|| Error::MissingTensor(format!("{prefix}.{n}")))
        };
        Ok(Self {
            wk: get("wk")?,
            wq: get("wq")?,
            v: get("v")?,
        })
    }

    pub fn vars(&self, g: &mut Graph) -> AttentionVars {
        AttentionVars {
            wk: g.param(self.wk),
            wq: g.param(self.wq),
            v: g.param(self.v),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wk: Var,
    pub wq: Var,
    pub v: Var,
}

/// Encoder states stacked time-major (`[T*B, h]`, row `t*B + b`) with
/// their key projection, computed once per source batch.
#[derive(Clone, Copy, Debug)]
pub struct AttentionKeys {
    pub states: Var,
    pub proj: Var,
    pub batch: usize,
    pub steps: usize,
}

pub fn prepare_keys(g: &mut Graph, states: Var, batch: usize, wk: Var) -> Result<AttentionKeys> {
    let rows = g.value(states).rows();
    if batch == 0 || rows % batch != 0 || rows == 0 {
        return Err(Error::shape(
            "attention",
            format!("{rows} stacked states for batch {batch}"),
        ));
    }
    let proj = g.matmul(states, wk)?;
    Ok(AttentionKeys {
        states,
        proj,
        batch,
        steps: rows / batch,
    })
}

/// Scores every key against `query[B, q]`, normalizes over unmasked
/// positions and returns `(weights[B,T], context[B,h])`. `mask` is
/// batch-major: entry `b*T + t` marks a real source position.
pub fn additive_attention(
    g: &mut Graph,
    query: Var,
    keys: &AttentionKeys,
    mask: &[bool],
    vars: &AttentionVars,
) -> Result<(Var, Var)> {
    if mask.len() != keys.batch * keys.steps {
        return Err(Error::shape(
            "attention",
            format!("mask of {} for {}x{}", mask.len(), keys.batch, keys.steps),
        ));
    }
    if g.value(query).rows() != keys.batch {
        return Err(Error::shape(
            "attention",
            format!("query batch {} vs keys batch {}", g.value(query).rows(), keys.batch),
        ));
    }
    let q = g.matmul(query, vars.wq)?;
    let pre = g.add_tiled(keys.proj, q)?;
    let act = g.tanh(pre);
    let scores = g.matmul(act, vars.v)?;
    let scores = g.time_to_cols(scores, keys.batch)?;
    let weights = g.masked_softmax(scores, mask)?;
    let context = g.weighted_sum_time(weights, keys.states)?;
    Ok((weights, context))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_graph;
    use crate::Float;
    use rand::SeedableRng;

    fn setup(g: &mut Graph, keys: Tensor, batch: usize, att: usize, zero: bool) -> (AttentionKeys, AttentionVars, Var) {
        let h = keys.cols();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mk = |r, c, rng: &mut rand_chacha::ChaCha8Rng| {
            if zero {
                Tensor::zeros(r, c)
            } else {
                Tensor::uniform(r, c, -1.0, 1.0, rng)
            }
        };
        let vars = AttentionVars {
            wk: g.input(mk(h, att, &mut rng)),
            wq: g.input(mk(h, att, &mut rng)),
            v: g.input(mk(att, 1, &mut rng)),
        };
        let states = g.input(keys);
        let k = prepare_keys(g, states, batch, vars.wk).unwrap();
        let q = g.input(Tensor::uniform(batch, h, -1.0, 1.0, &mut rng));
        (k, vars, q)
    }

    #[test]
    fn single_unmasked_key_gets_all_weight() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        // T = 3, B = 1; only position 1 is real.
        let keys = Tensor::from_vec(3, 2, vec![9.0, 9.0, 0.25, -0.5, 7.0, 7.0]).unwrap();
        let (k, vars, q) = setup(&mut g, keys, 1, 3, false);
        let (w, ctx) = additive_attention(&mut g, q, &k, &[false, true, false], &vars).unwrap();
        assert_eq!(g.value(w).data(), &[0.0, 1.0, 0.0]);
        assert_eq!(g.value(ctx).data(), &[0.25, -0.5]);
    }

    #[test]
    fn equal_scores_average_the_keys() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let keys = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let (k, vars, q) = setup(&mut g, keys, 1, 2, true);
        let (w, ctx) = additive_attention(&mut g, q, &k, &[true, true], &vars).unwrap();
        assert_eq!(g.value(w).data(), &[0.5, 0.5]);
        assert_eq!(g.value(ctx).data(), &[2.0, 4.0]);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let keys = Tensor::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let (k, vars, q) = setup(&mut g, keys, 1, 2, false);
        assert!(matches!(
            additive_attention(&mut g, q, &k, &[false, false], &vars),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn weights_sum_to_one_per_row() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // T = 4, B = 3
        let keys = Tensor::uniform(12, 5, -1.0, 1.0, &mut rng);
        let (k, vars, q) = setup(&mut g, keys, 3, 4, false);
        let mask = [true, true, true, true, true, true, false, false, true, false, false, false];
        let (w, _) = additive_attention(&mut g, q, &k, &mask, &vars).unwrap();
        for b in 0..3 {
            let row = g.value(w).row(b);
            assert!((row.iter().sum::<Float>() - 1.0).abs() < 1e-12);
            for t in 0..4 {
                if !mask[b * 4 + t] {
                    assert_eq!(row[t], 0.0);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        // T = 3, B = 2, h = 3, att = 4; inputs: keys, query, wk, wq, v, projection
        let inputs: Vec<Tensor> = [(6, 3), (2, 3), (3, 4), (3, 4), (4, 1), (2, 3), (2, 3)]
            .iter()
            .map(|&(r, c)| Tensor::uniform(r, c, -1.0, 1.0, &mut rng))
            .collect();
        let mask = [true, true, false, true, true, true];
        let report = grad_check_graph(
            |g, v| {
                let vars = AttentionVars { wk: v[2], wq: v[3], v: v[4] };
                let k = prepare_keys(g, v[0], 2, vars.wk)?;
                let (w, ctx) = additive_attention(g, v[1], &k, &mask, &vars)?;
                let pc = g.mul(ctx, v[5])?;
                let pw = g.mul(w, v[6])?;
                let a = g.sum_all(pc);
                let b = g.sum_all(pw);
                g.add(a, b)
            },
            &inputs,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst());
    }
}
