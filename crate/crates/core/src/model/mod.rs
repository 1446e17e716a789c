//! The reduced order model: a geometry-conditioned basis network, the
//! projection and lifting operators it induces on a point cloud, a dense
//! autoencoder on the coefficients, and the reduced network mapping
//! `(t, μ, ξ)` to the latent space.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FILE};

use crate::dataset::{geometry_key, DatasetManifest, Normalization, SampleRecord};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Mlp, NetSpec, ParameterSet, Tape, Tensor, Var};

/// Width, depth and activation of one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn new(width: usize, depth: usize, activation: Activation) -> Self {
        LayerShape {
            width,
            depth,
            activation,
        }
    }
}

/// Hyperparameters fixing every parameter shape of a [`CgaRom`].
#[derive(Debug, Clone, PartialEq)]
pub struct RomConfig {
    /// `N`, basis functions per channel.
    pub n_basis: usize,
    /// `l`.
    pub latent: usize,
    pub channels: usize,
    pub dim: usize,
    pub mu_dim: usize,
    pub geo_dim: usize,
    pub has_time: bool,
    /// Residual-dense basis network.
    pub basis: LayerShape,
    pub encoder: LayerShape,
    pub decoder: LayerShape,
    pub reduced: LayerShape,
    /// Weight the loss by `w ζ` instead of the mesh measure `w`.
    pub use_zeta: bool,
}

impl RomConfig {
    /// N = 4, l = 4, basis RDense(120, 10), encoder/decoder Dense(150, 5),
    /// reduced network Dense(50, 5).
    pub fn stenosis_defaults(
        dim: usize,
        mu_dim: usize,
        geo_dim: usize,
        has_time: bool,
        channels: usize,
    ) -> Self {
        RomConfig {
            n_basis: 4,
            latent: 4,
            channels,
            dim,
            mu_dim,
            geo_dim,
            has_time,
            basis: LayerShape::new(120, 10, Activation::Tanh),
            encoder: LayerShape::new(150, 5, Activation::Elu),
            decoder: LayerShape::new(150, 5, Activation::Elu),
            reduced: LayerShape::new(50, 5, Activation::Elu),
            use_zeta: false,
        }
    }

    pub fn for_manifest(m: &DatasetManifest) -> Self {
        Self::stenosis_defaults(m.d, m.p, m.g, m.n_t > 1, m.c)
    }

    pub fn coeff_dim(&self) -> usize {
        self.n_basis * self.channels
    }

    pub fn reduced_input_dim(&self) -> usize {
        usize::from(self.has_time) + self.mu_dim + self.geo_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_basis == 0 || self.latent == 0 || self.channels == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument(
                "N, l, C and d must be positive".into(),
            ));
        }
        if self.latent > self.coeff_dim() {
            return Err(Error::InvalidArgument(format!(
                "latent dimension {} exceeds N·C = {}",
                self.latent,
                self.coeff_dim()
            )));
        }
        if self.reduced_input_dim() == 0 {
            return Err(Error::InvalidArgument(
                "reduced network has no inputs".into(),
            ));
        }
        for spec in [
            self.basis_spec(),
            self.encoder_spec(),
            self.decoder_spec(),
            self.reduced_spec(),
        ] {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn basis_spec(&self) -> NetSpec {
        let s = self.basis;
        NetSpec::residual(
            self.dim + self.geo_dim,
            self.coeff_dim(),
            s.width,
            s.depth,
            s.activation,
        )
    }

    pub fn encoder_spec(&self) -> NetSpec {
        let s = self.encoder;
        NetSpec::dense(
            self.coeff_dim(),
            self.latent,
            s.width,
            s.depth,
            s.activation,
        )
    }

    pub fn decoder_spec(&self) -> NetSpec {
        let s = self.decoder;
        NetSpec::dense(
            self.latent,
            self.coeff_dim(),
            s.width,
            s.depth,
            s.activation,
        )
    }

    pub fn reduced_spec(&self) -> NetSpec {
        let s = self.reduced;
        NetSpec::dense(
            self.reduced_input_dim(),
            self.latent,
            s.width,
            s.depth,
            s.activation,
        )
    }
}

/// A frozen basis on one shared cloud (the POD baseline, or an injected
/// basis in tests): `N_h × N·C` modes and the weights used to project.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedBasis {
    pub modes: Tensor,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Basis {
    Network(Mlp),
    Fixed(FixedBasis),
}

/// Coefficients `a ∈ R^{N·C}`, stored as `C` blocks of `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    values: Vec<f64>,
    n_basis: usize,
}

impl Coefficients {
    pub fn new(values: Vec<f64>, n_basis: usize) -> Result<Self> {
        if n_basis == 0 || values.len() % n_basis != 0 {
            return Err(Error::Dimension(format!(
                "{} coefficients are not blocks of {n_basis}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficients".into()));
        }
        Ok(Coefficients { values, n_basis })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_basis..(c + 1) * self.n_basis]
    }

    fn row(&self) -> Tensor {
        Tensor::matrix(1, self.values.len(), self.values.clone()).expect("row shape")
    }
}

/// Loss-term weights: `loss = term1 + α·term2 + λ_orth·‖G − I‖²_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_orth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            lambda_orth: 0.0,
        }
    }
}

/// Per-sample loss and its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub latent: f64,
    pub orthogonality: f64,
}

/// Normalized targets of one sample inside a [`GeometryBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTargets {
    pub id: u64,
    pub reduced_input: Vec<f64>,
    /// `N_h × C`, normalized.
    pub values: Tensor,
}

/// Samples sharing one geometry and one cloud, normalized for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryBatch {
    /// `N_h × (d + g)` normalized `(x, ξ)`.
    pub basis_input: Tensor,
    /// `w_i` or `w_i ζ_i`.
    pub measure: Vec<f64>,
    pub samples: Vec<SampleTargets>,
}

impl GeometryBatch {
    pub fn n_h(&self) -> usize {
        self.measure.len()
    }
}

/// Tape nodes of a batch loss.
#[derive(Debug, Clone, Copy)]
pub struct GroupLoss {
    /// Sum over the group's samples of the per-sample loss.
    pub total: Var,
    pub reconstruction: f64,
    pub latent: f64,
    /// Gram penalty of this geometry (per sample).
    pub orthogonality: f64,
}

/// Basis network, autoencoder and reduced network with their parameters and
/// the normalization they were trained under.
#[derive(Debug, Clone)]
pub struct CgaRom {
    config: RomConfig,
    normalization: Normalization,
    params: ParameterSet,
    basis: Basis,
    encoder: Mlp,
    decoder: Mlp,
    reduced: Mlp,
}

fn check_normalization(config: &RomConfig, n: &Normalization) -> Result<()> {
    if n.channels() != config.channels
        || n.dim() != config.dim
        || n.mu.len() != config.mu_dim
        || n.xi.len() != config.geo_dim
        || n.t.is_some() != config.has_time
    {
        return Err(Error::Hyperparameter(
            "normalization statistics do not match the model dimensions".into(),
        ));
    }
    Ok(())
}

impl CgaRom {
    /// Fresh model with seeded Glorot-uniform weights, networks registered
    /// in the order basis, encoder, decoder, reduced.
    pub fn new(config: RomConfig, normalization: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        check_normalization(&config, &normalization)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let basis = Basis::Network(Mlp::new(
            config.basis_spec(),
            "basis",
            &mut params,
            &mut rng,
        )?);
        let encoder = Mlp::new(config.encoder_spec(), "encoder", &mut params, &mut rng)?;
        let decoder = Mlp::new(config.decoder_spec(), "decoder", &mut params, &mut rng)?;
        let reduced = Mlp::new(config.reduced_spec(), "reduced", &mut params, &mut rng)?;
        Ok(CgaRom {
            config,
            normalization,
            params,
            basis,
            encoder,
            decoder,
            reduced,
        })
    }

    /// Model whose basis is the frozen `fixed`; only the autoencoder and the
    /// reduced network carry parameters.
    pub fn with_fixed_basis(
        config: RomConfig,
        normalization: Normalization,
        fixed: FixedBasis,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        check_normalization(&config, &normalization)?;
        if fixed.modes.shape().len() != 2
            || fixed.modes.cols() != config.coeff_dim()
            || fixed.weights.len() != fixed.modes.rows()
        {
            return Err(Error::Dimension(format!(
                "fixed basis {:?} with {} weights for N·C = {}",
                fixed.modes.shape(),
                fixed.weights.len(),
                config.coeff_dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let encoder = Mlp::new(config.encoder_spec(), "encoder", &mut params, &mut rng)?;
        let decoder = Mlp::new(config.decoder_spec(), "decoder", &mut params, &mut rng)?;
        let reduced = Mlp::new(config.reduced_spec(), "reduced", &mut params, &mut rng)?;
        Ok(CgaRom {
            config,
            normalization,
            params,
            basis: Basis::Fixed(fixed),
            encoder,
            decoder,
            reduced,
        })
    }

    /// Rebuilds a model around existing parameters (checkpoint loading).
    pub(crate) fn from_parts(
        config: RomConfig,
        normalization: Normalization,
        params: ParameterSet,
        fixed: Option<FixedBasis>,
    ) -> Result<Self> {
        config.validate()?;
        check_normalization(&config, &normalization)?;
        let basis = match fixed {
            Some(f) => Basis::Fixed(f),
            None => Basis::Network(Mlp::bind(config.basis_spec(), "basis", &params)?),
        };
        let encoder = Mlp::bind(config.encoder_spec(), "encoder", &params)?;
        let decoder = Mlp::bind(config.decoder_spec(), "decoder", &params)?;
        let reduced = Mlp::bind(config.reduced_spec(), "reduced", &params)?;
        let expected: usize = [&encoder, &decoder, &reduced]
            .iter()
            .map(|m| m.spec().num_params())
            .sum::<usize>()
            + match &basis {
                Basis::Network(m) => m.spec().num_params(),
                Basis::Fixed(_) => 0,
            };
        if expected != params.numel() {
            return Err(Error::Hyperparameter(format!(
                "checkpoint holds {} parameters, configuration implies {expected}",
                params.numel()
            )));
        }
        Ok(CgaRom {
            config,
            normalization,
            params,
            basis,
            encoder,
            decoder,
            reduced,
        })
    }

    pub fn config(&self) -> &RomConfig {
        &self.config
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn reduced(&self) -> &Mlp {
        &self.reduced
    }

    pub fn fixed_basis(&self) -> Option<&FixedBasis> {
        match &self.basis {
            Basis::Fixed(f) => Some(f),
            Basis::Network(_) => None,
        }
    }

    fn basis_input(&self, points: &Tensor, xi: &[f64]) -> Result<Tensor> {
        if points.shape().len() != 2 || points.cols() != self.config.dim {
            return Err(Error::Dimension(format!(
                "query points {:?} for a {}-d model",
                points.shape(),
                self.config.dim
            )));
        }
        let x = self.normalization.normalize_coords(points)?;
        let xi_n = self.normalization.normalize_xi(xi)?;
        let rows = points.rows();
        let width = self.config.dim + self.config.geo_dim;
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            data.extend_from_slice(x.row(i));
            data.extend_from_slice(&xi_n);
        }
        Tensor::matrix(rows, width, data)
    }

    fn basis_var(&self, tape: &mut Tape, input: &Tensor) -> Result<Var> {
        match &self.basis {
            Basis::Network(net) => {
                let x = tape.constant(input.clone());
                net.forward(tape, &self.params, x)
            }
            Basis::Fixed(f) => {
                if f.modes.rows() != input.rows() {
                    return Err(Error::Precondition(format!(
                        "fixed basis lives on {} points, cloud has {} (fixed-resolution data required)",
                        f.modes.rows(),
                        input.rows()
                    )));
                }
                Ok(tape.constant(f.modes.clone()))
            }
        }
    }

    fn projection_measure<'a>(&'a self, measure: &'a [f64]) -> &'a [f64] {
        match &self.basis {
            Basis::Network(_) => measure,
            Basis::Fixed(f) => &f.weights,
        }
    }

    fn channel_block(&self, tape: &mut Tape, v: Var, c: usize) -> Result<Var> {
        if self.config.channels == 1 {
            Ok(v)
        } else {
            tape.slice_cols(v, c * self.config.n_basis, self.config.n_basis)
        }
    }

    /// Per channel, `N_q × B` lifted values `Σ_n a_{j,n,c} v_{n,c}`.
    fn lift_channels(&self, tape: &mut Tape, v: Var, coeffs: Var) -> Result<Vec<Var>> {
        (0..self.config.channels)
            .map(|c| {
                let vc = self.channel_block(tape, v, c)?;
                let ac = self.channel_block(tape, coeffs, c)?;
                tape.matmul_nt(vc, ac)
            })
            .collect()
    }

    /// `B × N·C` projections of the `N_h × B` per-channel targets.
    fn project_var(
        &self,
        tape: &mut Tape,
        v: Var,
        measure: &[f64],
        targets: &[Var],
    ) -> Result<Var> {
        let vm = tape.scale_rows(v, self.projection_measure(measure).to_vec())?;
        let parts = targets
            .iter()
            .enumerate()
            .map(|(c, &u)| {
                let vc = self.channel_block(tape, vm, c)?;
                tape.matmul_tn(u, vc)
            })
            .collect::<Result<Vec<Var>>>()?;
        tape.concat_cols(&parts)
    }

    /// Normalizes samples that share one geometry and one cloud.
    pub fn prepare_group(&self, samples: &[&SampleRecord]) -> Result<GeometryBatch> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty geometry group".into()))?;
        if first.n_h() == 0 {
            return Err(Error::InvalidArgument(format!(
                "sample {} has an empty cloud",
                first.id
            )));
        }
        let key = geometry_key(&first.xi);
        for s in &samples[1..] {
            if geometry_key(&s.xi) != key
                || s.cloud.points() != first.cloud.points()
                || s.cloud.weights() != first.cloud.weights()
            {
                return Err(Error::InvalidArgument(format!(
                    "samples {} and {} do not share a geometry and cloud",
                    first.id, s.id
                )));
            }
        }
        if self.config.use_zeta && first.cloud.zeta().is_none() {
            return Err(Error::Precondition(format!(
                "model weights by ζ but sample {} carries no Jacobian determinants",
                first.id
            )));
        }
        let basis_input = self.basis_input(&first.cloud.points_tensor(), &first.xi)?;
        let measure = first.cloud.measure(self.config.use_zeta);
        let samples = samples
            .iter()
            .map(|s| {
                if s.channels() != self.config.channels {
                    return Err(Error::Dimension(format!(
                        "sample {} has {} channels",
                        s.id,
                        s.channels()
                    )));
                }
                Ok(SampleTargets {
                    id: s.id,
                    reduced_input: self.normalization.reduced_input(s.t, &s.mu, &s.xi)?,
                    values: self.normalization.normalize_values(&s.values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GeometryBatch {
            basis_input,
            measure,
            samples,
        })
    }

    fn channel_targets(&self, tape: &mut Tape, batch: &GeometryBatch) -> Result<Vec<Var>> {
        let (n_h, b) = (batch.n_h(), batch.samples.len());
        (0..self.config.channels)
            .map(|c| {
                let mut data = vec![0.0; n_h * b];
                for (j, s) in batch.samples.iter().enumerate() {
                    for i in 0..n_h {
                        data[i * b + j] = s.values.get(i, c);
                    }
                }
                Ok(tape.constant(Tensor::matrix(n_h, b, data)?))
            })
            .collect()
    }

    fn reduced_inputs(&self, batch: &GeometryBatch) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = batch
            .samples
            .iter()
            .map(|s| s.reduced_input.clone())
            .collect();
        Tensor::from_rows(&rows)
    }

    /// Records the summed per-sample loss of a geometry group.
    pub fn group_loss(
        &self,
        tape: &mut Tape,
        batch: &GeometryBatch,
        weights: LossWeights,
    ) -> Result<GroupLoss> {
        let b = batch.samples.len();
        let v = self.basis_var(tape, &batch.basis_input)?;
        let targets = self.channel_targets(tape, batch)?;
        let coeffs = self.project_var(tape, v, &batch.measure, &targets)?;
        let z_enc = self.encoder.forward(tape, &self.params, coeffs)?;
        let r_in = tape.constant(self.reduced_inputs(batch)?);
        let z = self.reduced.forward(tape, &self.params, r_in)?;
        let a_hat = self.decoder.forward(tape, &self.params, z)?;

        let sqrt_m: Vec<f64> = batch.measure.iter().map(|m| m.sqrt()).collect();
        let lifted = self.lift_channels(tape, v, a_hat)?;
        let mut recon: Option<Var> = None;
        for (u_hat, &u) in lifted.into_iter().zip(&targets) {
            let d = tape.sub(u_hat, u)?;
            let dw = tape.scale_rows(d, sqrt_m.clone())?;
            let s = tape.sum_sq(dw)?;
            recon = Some(match recon {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let recon = recon.expect("at least one channel");
        let dz = tape.sub(z, z_enc)?;
        let latent = tape.sum_sq(dz)?;
        let weighted_latent = tape.scale(latent, weights.alpha);
        let mut total = tape.add(recon, weighted_latent)?;

        let mut orthogonality = 0.0;
        if weights.lambda_orth != 0.0 {
            let vm = tape.scale_rows(v, batch.measure.clone())?;
            let eye = tape.constant(Tensor::identity(self.config.n_basis));
            for c in 0..self.config.channels {
                let vc = self.channel_block(tape, v, c)?;
                let vmc = self.channel_block(tape, vm, c)?;
                let gram = tape.matmul_tn(vc, vmc)?;
                let d = tape.sub(gram, eye)?;
                let pen = tape.sum_sq(d)?;
                orthogonality += tape.scalar(pen);
                let pen = tape.scale(pen, weights.lambda_orth * b as f64);
                total = tape.add(total, pen)?;
            }
        }
        Ok(GroupLoss {
            total,
            reconstruction: tape.scalar(recon),
            latent: tape.scalar(latent),
            orthogonality,
        })
    }

    /// Per-sample loss `Σ w ζ ‖û − u‖² + α‖φ − ψ†(V†u)‖² (+ λ_orth ‖G − I‖²)`.
    pub fn loss_cga(&self, sample: &SampleRecord, weights: LossWeights) -> Result<LossBreakdown> {
        let batch = self.prepare_group(&[sample])?;
        let mut tape = Tape::new();
        let g = self.group_loss(&mut tape, &batch, weights)?;
        Ok(LossBreakdown {
            total: tape.scalar(g.total),
            reconstruction: g.reconstruction,
            latent: g.latent,
            orthogonality: g.orthogonality,
        })
    }

    /// Normalized online reconstructions `V(ψ(φ(t, μ, ξ)))` of a group.
    pub fn reconstruct_group(&self, batch: &GeometryBatch) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let v = self.basis_var(&mut tape, &batch.basis_input)?;
        let r_in = tape.constant(self.reduced_inputs(batch)?);
        let z = self.reduced.forward(&mut tape, &self.params, r_in)?;
        let a_hat = self.decoder.forward(&mut tape, &self.params, z)?;
        let lifted = self.lift_channels(&mut tape, v, a_hat)?;
        let (n_h, b, ch) = (batch.n_h(), batch.samples.len(), self.config.channels);
        (0..b)
            .map(|j| {
                let mut data = vec![0.0; n_h * ch];
                for (c, &var) in lifted.iter().enumerate() {
                    let m = tape.value(var);
                    for i in 0..n_h {
                        data[i * ch + c] = m.get(i, j);
                    }
                }
                Tensor::matrix(n_h, ch, data)
            })
            .collect()
    }

    /// `N_q × N·C` basis values at physical points for geometry `ξ`.
    pub fn basis_eval(&self, points: &Tensor, xi: &[f64]) -> Result<Tensor> {
        let input = self.basis_input(points, xi)?;
        if input.rows() == 0 {
            return Ok(Tensor::zeros(&[0, self.config.coeff_dim()]));
        }
        match &self.basis {
            Basis::Network(net) => net.eval(&self.params, &input),
            Basis::Fixed(_) => {
                let mut tape = Tape::new();
                let v = self.basis_var(&mut tape, &input)?;
                Ok(tape.value(v).clone())
            }
        }
    }

    /// `a_{n,c} = Σ_i m_i u_{i,c} v_{n,c}(x_i, ξ)` for the normalized sample.
    pub fn project(&self, sample: &SampleRecord) -> Result<Coefficients> {
        let batch = self.prepare_group(&[sample])?;
        let mut tape = Tape::new();
        let v = self.basis_var(&mut tape, &batch.basis_input)?;
        let targets = self.channel_targets(&mut tape, &batch)?;
        let a = self.project_var(&mut tape, v, &batch.measure, &targets)?;
        Coefficients::new(tape.value(a).data().to_vec(), self.config.n_basis)
    }

    /// Normalized field `Σ_n a_{n,c} v_{n,c}(x, ξ)` at arbitrary points.
    pub fn lift(&self, a: &Coefficients, points: &Tensor, xi: &[f64]) -> Result<Tensor> {
        if a.values().len() != self.config.coeff_dim() {
            return Err(Error::Dimension(format!(
                "{} coefficients, expected {}",
                a.values().len(),
                self.config.coeff_dim()
            )));
        }
        let input = self.basis_input(points, xi)?;
        if input.rows() == 0 {
            return Ok(Tensor::zeros(&[0, self.config.channels]));
        }
        let mut tape = Tape::new();
        let v = match &self.basis {
            Basis::Network(net) => tape.constant(net.eval(&self.params, &input)?),
            Basis::Fixed(_) => self.basis_var(&mut tape, &input)?,
        };
        let av = tape.constant(a.row());
        let parts = self.lift_channels(&mut tape, v, av)?;
        let out = tape.concat_cols(&parts)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode(&self, a: &Coefficients) -> Result<Vec<f64>> {
        if a.values().len() != self.config.coeff_dim() {
            return Err(Error::Dimension(format!(
                "{} coefficients, expected {}",
                a.values().len(),
                self.config.coeff_dim()
            )));
        }
        Ok(self.encoder.eval(&self.params, &a.row())?.into_data())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Coefficients> {
        if z.len() != self.config.latent {
            return Err(Error::Dimension(format!(
                "latent vector of length {}, expected {}",
                z.len(),
                self.config.latent
            )));
        }
        let out = self
            .decoder
            .eval(&self.params, &Tensor::matrix(1, z.len(), z.to_vec())?)?;
        Coefficients::new(out.into_data(), self.config.n_basis)
    }

    /// `φ(t, μ, ξ)` on raw (unnormalized) inputs; layout `[t?, μ, ξ]`.
    pub fn reduce_map(&self, t: Option<f64>, mu: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let input = self.normalization.reduced_input(t, mu, xi)?;
        let x = Tensor::matrix(1, input.len(), input)?;
        Ok(self.reduced.eval(&self.params, &x)?.into_data())
    }

    /// `lift(decode(reduce_map(t, μ, ξ)))` at arbitrary points, in original units.
    pub fn forward_infer(
        &self,
        t: Option<f64>,
        mu: &[f64],
        xi: &[f64],
        points: &Tensor,
    ) -> Result<Tensor> {
        let z = self.reduce_map(t, mu, xi)?;
        let a = self.decode(&z)?;
        let u = self.lift(&a, points, xi)?;
        let out = self.normalization.denormalize_values(&u)?;
        out.check_finite("model output")?;
        Ok(out)
    }
}
