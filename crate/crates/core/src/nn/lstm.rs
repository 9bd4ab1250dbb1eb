use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Parameter ids of one LSTM layer.
///
/// Matrices are stored input-major so a batch `x[B,in]` multiplies them
/// directly: `w` is `[in, 4h]`, `u` is `[h, 4h]`, `b` is `[1, 4h]`. Gate
/// blocks along the `4h` axis are ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmWeights {
    /// Registers `{prefix}.w`, `{prefix}.u`, `{prefix}.b`. Weights are uniform
    /// on `[-0.1, 0.1]`, the forget-gate bias starts at 1 and the other biases at 0.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(format!("{prefix}.w"), Tensor::uniform(input, 4 * hidden, -0.1, 0.1, rng))?;
        let u = store.add(format!("{prefix}.u"), Tensor::uniform(hidden, 4 * hidden, -0.1, 0.1, rng))?;
        let mut bias = Tensor::zeros(1, 4 * hidden);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = store.add(format!("{prefix}.b"), bias)?;
        Ok(Self { w, u, b, input, hidden })
    }

    /// Looks the weights up again by name, checking shapes.
    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}.{n}"))
                .ok_or_else(|| Error::MissingTensor(format!("{prefix}.{n}")))
        };
        let (w, u, b) = (get("w")?, get("u")?, get("b")?);
        let input = store.get(w).value.rows();
        let hidden = store.get(u).value.rows();
        let ok = store.get(w).value.cols() == 4 * hidden
            && store.get(u).value.cols() == 4 * hidden
            && store.get(b).value.shape() == [1, 4 * hidden];
        if !ok {
            return Err(Error::shape("lstm", format!("inconsistent weights under {prefix}")));
        }
        Ok(Self { w, u, b, input, hidden })
    }

    pub fn vars(&self, g: &mut Graph) -> LstmVars {
        LstmVars {
            w: g.param(self.w),
            u: g.param(self.u),
            b: g.param(self.b),
            hidden: self.hidden,
        }
    }
}

/// LSTM weights as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub hidden: usize,
}

/// One LSTM step over a batch (`x[B,in]`, `h_prev[B,h]`, `c_prev[B,h]`):
///
/// ```text
/// [i f g o] = x·W + h_prev·U + b
/// c' = σ(f)⊙c_prev + σ(i)⊙tanh(g)
/// h' = σ(o)⊙tanh(c')
/// ```
pub fn lstm_cell(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, wts: &LstmVars) -> Result<(Var, Var)> {
    let hid = wts.hidden;
    for (what, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
        let t = g.value(v);
        if t.cols() != hid || t.rows() != g.value(x).rows() {
            return Err(Error::shape(
                "lstm_cell",
                format!("{what} {:?} for hidden {hid}, batch {}", t.shape(), g.value(x).rows()),
            ));
        }
    }
    let xw = g.matmul(x, wts.w)?;
    let hu = g.matmul(h_prev, wts.u)?;
    let z = g.add(xw, hu)?;
    let z = g.add_row(z, wts.b)?;

    let zi = g.slice_cols(z, 0, hid)?;
    let zf = g.slice_cols(z, hid, hid)?;
    let zg = g.slice_cols(z, 2 * hid, hid)?;
    let zo = g.slice_cols(z, 3 * hid, hid)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);

    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_graph;
    use crate::Float;
    use rand::SeedableRng;

    fn run(x: Tensor, h: Tensor, c: Tensor, w: Tensor, u: Tensor, b: Tensor) -> (Tensor, Tensor) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let hid = h.cols();
        let vars = LstmVars {
            w: g.input(w),
            u: g.input(u),
            b: g.input(b),
            hidden: hid,
        };
        let (x, h, c) = (g.input(x), g.input(h), g.input(c));
        let (h2, c2) = lstm_cell(&mut g, x, h, c, &vars).unwrap();
        (g.value(h2).clone(), g.value(c2).clone())
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let (h, c) = run(
            Tensor::zeros(1, 3),
            Tensor::zeros(1, 2),
            Tensor::zeros(1, 2),
            Tensor::zeros(3, 8),
            Tensor::zeros(2, 8),
            Tensor::zeros(1, 8),
        );
        assert!(h.data().iter().all(|v| *v == 0.0));
        assert!(c.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_weights_unit_cell() {
        // Every gate is σ(0) = 0.5 and the candidate is tanh(0) = 0.
        let (h, c) = run(
            Tensor::zeros(1, 1),
            Tensor::zeros(1, 1),
            Tensor::scalar(1.0),
            Tensor::zeros(1, 4),
            Tensor::zeros(1, 4),
            Tensor::zeros(1, 4),
        );
        assert_eq!(c.item(), 0.5);
        let expected: Float = 0.5 * (0.5 as Float).tanh();
        assert_eq!(h.item(), expected);
        assert!((h.item() - 0.23106).abs() < 1e-5);
    }

    #[test]
    fn deterministic_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mk = |r: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng| Tensor::uniform(r, c, -1.0, 1.0, rng);
        let args = (mk(2, 3, &mut rng), mk(2, 4, &mut rng), mk(2, 4, &mut rng), mk(3, 16, &mut rng), mk(4, 16, &mut rng), mk(1, 16, &mut rng));
        let a = run(args.0.clone(), args.1.clone(), args.2.clone(), args.3.clone(), args.4.clone(), args.5.clone());
        let b = run(args.0, args.1, args.2, args.3, args.4, args.5);
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let inputs: Vec<Tensor> = [(2, 3), (2, 4), (2, 4), (3, 16), (4, 16), (1, 16), (2, 4), (2, 4)]
            .iter()
            .map(|&(r, c)| Tensor::uniform(r, c, -1.0, 1.0, &mut rng))
            .collect();
        let report = grad_check_graph(
            |g, v| {
                let wts = LstmVars { w: v[3], u: v[4], b: v[5], hidden: 4 };
                let (h, c) = lstm_cell(g, v[0], v[1], v[2], &wts)?;
                // Random projections so every output coordinate matters.
                let ph = g.mul(h, v[6])?;
                let pc = g.mul(c, v[7])?;
                let s = g.add(ph, pc)?;
                Ok(g.sum_all(s))
            },
            &inputs,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let vars = LstmVars {
            w: g.input(Tensor::zeros(3, 8)),
            u: g.input(Tensor::zeros(2, 8)),
            b: g.input(Tensor::zeros(1, 8)),
            hidden: 2,
        };
        let x = g.input(Tensor::zeros(1, 3));
        let h = g.input(Tensor::zeros(1, 3));
        let c = g.input(Tensor::zeros(1, 2));
        assert!(lstm_cell(&mut g, x, h, c, &vars).is_err());
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let w = LstmWeights::init(&mut store, "enc", 3, 2, &mut rng).unwrap();
        assert_eq!(store.get(w.b).value.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(store.get(w.w).value.data().iter().all(|v| v.abs() <= 0.1));
        let again = LstmWeights::find(&store, "enc").unwrap();
        assert_eq!((again.input, again.hidden), (3, 2));
    }
}
