use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tape::{Activation, Tape, Var};
use crate::numerics::{gemm, ParamId, ParameterSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    Dense,
    ResidualDense,
}

/// Architecture of one feed-forward network.
///
/// `Dense(w, d)` has `d` affine layers (the hidden ones of width `w`, with
/// activation; the last one affine only). `ResidualDense(w, d)` is an affine
/// input adapter to width `w`, `d` residual blocks `h ← h + act(W h + b)`,
/// and an affine output adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub kind: NetKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
}

impl NetSpec {
    pub fn dense(
        input_dim: usize,
        output_dim: usize,
        width: usize,
        depth: usize,
        activation: Activation,
    ) -> Self {
        NetSpec {
            kind: NetKind::Dense,
            input_dim,
            output_dim,
            width,
            depth,
            activation,
        }
    }

    pub fn residual(
        input_dim: usize,
        output_dim: usize,
        width: usize,
        depth: usize,
        activation: Activation,
    ) -> Self {
        NetSpec {
            kind: NetKind::ResidualDense,
            input_dim,
            output_dim,
            width,
            depth,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.width < 1 {
            return Err(Error::InvalidArgument(format!(
                "network depth and width must be >= 1 (got depth {}, width {})",
                self.depth, self.width
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(
                "network input/output dims must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, in forward order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        match self.kind {
            NetKind::Dense => {
                if self.depth == 1 {
                    return vec![(self.input_dim, self.output_dim)];
                }
                let mut dims = vec![(self.input_dim, self.width)];
                dims.extend(std::iter::repeat((self.width, self.width)).take(self.depth - 2));
                dims.push((self.width, self.output_dim));
                dims
            }
            NetKind::ResidualDense => {
                let mut dims = vec![(self.input_dim, self.width)];
                dims.extend(std::iter::repeat((self.width, self.width)).take(self.depth));
                dims.push((self.width, self.output_dim));
                dims
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

/// A network bound to its parameters inside a shared [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: NetSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Registers the network's parameters under `prefix`, Glorot-uniform
    /// weights and zero biases.
    pub fn new(
        spec: NetSpec,
        prefix: &str,
        params: &mut ParameterSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (k, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            let weight = params.insert(
                format!("{prefix}.{k}.weight"),
                Tensor::matrix(fan_in, fan_out, w)?,
            )?;
            let bias = params.insert(format!("{prefix}.{k}.bias"), Tensor::zeros(&[fan_out]))?;
            layers.push(Layer { weight, bias });
        }
        Ok(Mlp { spec, layers })
    }

    /// Re-binds a network to parameters already present in `params`.
    pub fn bind(spec: NetSpec, prefix: &str, params: &ParameterSet) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (k, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let find = |suffix: &str, shape: &[usize]| -> Result<ParamId> {
                let name = format!("{prefix}.{k}.{suffix}");
                let id = params
                    .id(&name)
                    .ok_or_else(|| Error::Hyperparameter(format!("missing parameter {name}")))?;
                if params.value(id).shape() != shape {
                    return Err(Error::Hyperparameter(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        params.value(id).shape(),
                        shape
                    )));
                }
                Ok(id)
            };
            let weight = find("weight", &[fan_in, fan_out])?;
            let bias = find("bias", &[fan_out])?;
            layers.push(Layer { weight, bias });
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn weight(&self, layer: usize) -> ParamId {
        self.layers[layer].weight
    }

    pub fn bias(&self, layer: usize) -> ParamId {
        self.layers[layer].bias
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn affine(&self, tape: &mut Tape, params: &ParameterSet, k: usize, h: Var) -> Result<Var> {
        let w = tape.param(params, self.layers[k].weight);
        let b = tape.param(params, self.layers[k].bias);
        let z = tape.matmul(h, w)?;
        tape.add_bias(z, b)
    }

    /// Records the forward pass for a `batch × input_dim` input.
    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.spec.input_dim || tape.value(x).shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "network expects {} input columns, got shape {:?}",
                self.spec.input_dim,
                tape.value(x).shape()
            )));
        }
        let act = self.spec.activation;
        let last = self.layers.len() - 1;
        match self.spec.kind {
            NetKind::Dense => {
                let mut h = x;
                for k in 0..self.layers.len() {
                    h = self.affine(tape, params, k, h)?;
                    if k < last {
                        h = tape.activation(h, act);
                    }
                }
                Ok(h)
            }
            NetKind::ResidualDense => {
                let mut h = self.affine(tape, params, 0, x)?;
                for k in 1..last {
                    let z = self.affine(tape, params, k, h)?;
                    let z = tape.activation(z, act);
                    h = tape.add(h, z)?;
                }
                self.affine(tape, params, last, h)
            }
        }
    }

    /// Forward pass without keeping the tape.
    /// Forward pass without recording; bit-identical to [`Mlp::forward`].
    pub fn eval(&self, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "network expects {} input columns, got shape {:?}",
                self.spec.input_dim,
                x.shape()
            )));
        }
        let act = self.spec.activation;
        let rows = x.rows();
        let affine = |k: usize, h: &Tensor| -> Result<Tensor> {
            let w = params.value(self.layers[k].weight);
            let b = params.value(self.layers[k].bias).data();
            let (fan_in, fan_out) = (w.rows(), w.cols());
            let mut out = vec![0.0; rows * fan_out];
            gemm(
                rows,
                fan_in,
                fan_out,
                1.0,
                h.data(),
                (fan_in, 1),
                w.data(),
                (fan_out, 1),
                0.0,
                &mut out,
                fan_out,
            );
            for row in out.chunks_exact_mut(fan_out.max(1)) {
                row.iter_mut().zip(b).for_each(|(o, bj)| *o += bj);
            }
            Tensor::matrix(rows, fan_out, out)
        };
        let last = self.layers.len() - 1;
        match self.spec.kind {
            NetKind::Dense => {
                let mut h = x.clone();
                for k in 0..self.layers.len() {
                    h = affine(k, &h)?;
                    if k < last {
                        act.apply_slice(h.data_mut());
                    }
                }
                Ok(h)
            }
            NetKind::ResidualDense => {
                let mut h = affine(0, x)?;
                for k in 1..last {
                    let z = affine(k, &h)?;
                    act.accumulate_slice(z.data(), h.data_mut());
                }
                affine(last, &h)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    /// Independent forward pass with explicit loops.
    fn naive_forward(net: &Mlp, ps: &ParameterSet, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let affine = |k: usize, h: &[f64]| -> Vec<f64> {
            let w = ps.value(net.weight(k));
            let b = ps.value(net.bias(k));
            (0..w.cols())
                .map(|j| b.data()[j] + (0..w.rows()).map(|i| h[i] * w.get(i, j)).sum::<f64>())
                .collect()
        };
        let act = net.spec().activation;
        let n = net.num_layers();
        x.iter()
            .map(|row| match net.spec().kind {
                NetKind::Dense => {
                    let mut h = row.clone();
                    for k in 0..n {
                        h = affine(k, &h);
                        if k + 1 < n {
                            h = h.iter().map(|&v| act.apply(v)).collect();
                        }
                    }
                    h
                }
                NetKind::ResidualDense => {
                    let mut h = affine(0, row);
                    for k in 1..n - 1 {
                        let z = affine(k, &h);
                        h = h.iter().zip(&z).map(|(a, b)| a + act.apply(*b)).collect();
                    }
                    affine(n - 1, &h)
                }
            })
            .collect()
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut ps = ParameterSet::new();
        let net = Mlp::new(
            NetSpec::dense(3, 2, 4, 3, Activation::Tanh),
            "n",
            &mut ps,
            &mut rng(),
        )
        .unwrap();
        for p in ps.iter_mut() {
            p.value.fill(0.0);
        }
        ps.value_mut(net.bias(2))
            .data_mut()
            .copy_from_slice(&[0.5, -1.5]);
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let y = net.eval(&ps, &x).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn identity_single_layer() {
        let mut ps = ParameterSet::new();
        let net = Mlp::new(
            NetSpec::dense(2, 2, 2, 1, Activation::Linear),
            "n",
            &mut ps,
            &mut rng(),
        )
        .unwrap();
        ps.value_mut(net.weight(0))
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(net.eval(&ps, &x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_matches_naive_loops() {
        let mut ps = ParameterSet::new();
        let net = Mlp::new(
            NetSpec::dense(3, 2, 5, 2, Activation::Tanh),
            "n",
            &mut ps,
            &mut rng(),
        )
        .unwrap();
        for (i, p) in ps.iter_mut().enumerate() {
            let n = p.value.len();
            for k in 0..n {
                p.value.data_mut()[k] = ((k * 7 + i * 3) % 11) as f64 / 11.0 - 0.4;
            }
        }
        let rows = vec![
            vec![0.1, -0.7, 0.3],
            vec![0.9, 0.2, -0.5],
            vec![-1.0, 1.0, 0.0],
        ];
        let x = Tensor::from_rows(&rows).unwrap();
        let y = net.eval(&ps, &x).unwrap();
        let expect = naive_forward(&net, &ps, &rows);
        for (i, row) in expect.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((y.get(i, j) - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn residual_zero_blocks_reduce_to_adapters() {
        let mut ps = ParameterSet::new();
        let net = Mlp::new(
            NetSpec::residual(2, 3, 6, 4, Activation::Tanh),
            "r",
            &mut ps,
            &mut rng(),
        )
        .unwrap();
        for k in 1..net.num_layers() - 1 {
            ps.value_mut(net.weight(k)).fill(0.0);
            ps.value_mut(net.bias(k)).fill(0.0);
        }
        let x = Tensor::matrix(2, 2, vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let y = net.eval(&ps, &x).unwrap();
        let h = x.matmul(ps.value(net.weight(0))).unwrap();
        let expect = h
            .matmul(ps.value(net.weight(net.num_layers() - 1)))
            .unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn residual_depth_one_by_hand() {
        // in=1, w=1, out=1: h0 = 2x + 0.5; h1 = h0 + tanh(0.3 h0 - 0.1); y = -h1 + 1
        let mut ps = ParameterSet::new();
        let net = Mlp::new(
            NetSpec::residual(1, 1, 1, 1, Activation::Tanh),
            "r",
            &mut ps,
            &mut rng(),
        )
        .unwrap();
        let set = |ps: &mut ParameterSet, id, v: f64| ps.value_mut(id).data_mut()[0] = v;
        set(&mut ps, net.weight(0), 2.0);
        set(&mut ps, net.bias(0), 0.5);
        set(&mut ps, net.weight(1), 0.3);
        set(&mut ps, net.bias(1), -0.1);
        set(&mut ps, net.weight(2), -1.0);
        set(&mut ps, net.bias(2), 1.0);
        let x = 0.25;
        let h0: f64 = 2.0 * x + 0.5;
        let h1 = h0 + (0.3 * h0 - 0.1).tanh();
        let expect = -h1 + 1.0;
        let y = net
            .eval(&ps, &Tensor::matrix(1, 1, vec![x]).unwrap())
            .unwrap();
        assert!((y.data()[0] - expect).abs() < 1e-15);
        // h0 = 1, so y = -tanh(0.2)
        assert!((expect + 0.197_375_320_224_904).abs() < 1e-12);
    }

    #[test]
    fn residual_output_finite_on_unit_box() {
        let mut ps = ParameterSet::new();
        let net = Mlp::new(
            NetSpec::residual(3, 4, 32, 10, Activation::Tanh),
            "r",
            &mut ps,
            &mut rng(),
        )
        .unwrap();
        let mut r = rng();
        let data: Vec<f64> = (0..300).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = net
            .eval(&ps, &Tensor::matrix(100, 3, data).unwrap())
            .unwrap();
        y.check_finite("y").unwrap();
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let mut ps = ParameterSet::new();
        let net = Mlp::new(
            NetSpec::dense(3, 2, 4, 2, Activation::Elu),
            "n",
            &mut ps,
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(net.eval(&ps, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut ps = ParameterSet::new();
        assert!(Mlp::new(
            NetSpec::dense(3, 2, 4, 0, Activation::Elu),
            "n",
            &mut ps,
            &mut rng()
        )
        .is_err());
    }

    #[test]
    fn eval_is_bit_identical_to_recorded_forward() {
        for spec in [
            NetSpec::dense(3, 2, 6, 3, Activation::Elu),
            NetSpec::residual(3, 2, 6, 3, Activation::Tanh),
        ] {
            let mut ps = ParameterSet::new();
            let net = Mlp::new(spec, "n", &mut ps, &mut rng()).unwrap();
            for p in ps.iter_mut() {
                p.value
                    .data_mut()
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v += 0.01 * i as f64);
            }
            let x =
                Tensor::matrix(5, 3, (0..15).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = net.forward(&mut tape, &ps, xv).unwrap();
            assert_eq!(tape.value(y), &net.eval(&ps, &x).unwrap());
        }
    }
}
