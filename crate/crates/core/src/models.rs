//! Bias-free homogeneous architectures and their homogeneity validators.
//!
//! Every built-in model is a chain of bias-free dense layers, so each layer's weight
//! matrix is one homogeneity block. With ReLU/LeakyReLU/identity activations each
//! block has exponent 1 and the order is the depth. With the square activation the
//! block of layer `i` (1-based, depth `D`) enters with exponent `2^(D-i)`, giving
//! order `2^D - 1`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Activation, Graph, Layer, Tape, Tensor};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm};
use crate::param::ParamVector;

/// Architecture family as named in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    DeepLinear,
    Relu,
    LeakyRelu,
    Quadratic,
}

/// Architecture description from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Number of weight layers (ignored for `linear`, which always has one).
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Hidden width used when `widths` is empty.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Explicit hidden widths (length `depth - 1`).
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// 1 for binary classification, `C` for a shared trunk with `C` heads.
    #[serde(default = "default_outputs")]
    pub num_outputs: usize,
}

fn default_depth() -> usize {
    2
}
fn default_width() -> usize {
    8
}
fn default_slope() -> f64 {
    0.1
}
fn default_outputs() -> usize {
    1
}

impl ModelSpec {
    pub fn new(family: Family, depth: usize, width: usize) -> Self {
        Self {
            family,
            depth,
            width,
            widths: Vec::new(),
            leaky_slope: default_slope(),
            num_outputs: 1,
        }
    }

    pub fn with_outputs(mut self, c: usize) -> Self {
        self.num_outputs = c;
        self
    }
}

/// One multi-homogeneity block: a contiguous parameter slice with exponent `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousModel {
    pub spec: ModelSpec,
    pub graph: Graph,
    order: f64,
    blocks: Vec<Block>,
}

impl HomogeneousModel {
    pub fn build(spec: &ModelSpec, input_dim: usize) -> Result<Self> {
        if input_dim == 0 || spec.num_outputs == 0 {
            return Err(Error::Config("model needs input_dim ≥ 1 and num_outputs ≥ 1".into()));
        }
        let depth = if spec.family == Family::Linear { 1 } else { spec.depth };
        if depth == 0 {
            return Err(Error::Config("depth must be ≥ 1".into()));
        }
        let hidden: Vec<usize> = if spec.widths.is_empty() {
            vec![spec.width; depth - 1]
        } else {
            if spec.widths.len() != depth - 1 {
                return Err(Error::Config(format!(
                    "widths has {} entries, expected depth-1 = {}",
                    spec.widths.len(),
                    depth - 1
                )));
            }
            spec.widths.clone()
        };
        let act = match spec.family {
            Family::Linear | Family::DeepLinear => Activation::Identity,
            Family::Relu => Activation::Relu,
            Family::LeakyRelu => Activation::LeakyRelu {
                slope: spec.leaky_slope,
            },
            Family::Quadratic => Activation::Square,
        };
        let mut dims = vec![input_dim];
        dims.extend(&hidden);
        dims.push(spec.num_outputs);
        let layers: Vec<Layer> = (0..depth)
            .map(|i| Layer {
                rows: dims[i + 1],
                cols: dims[i],
                activation: if i + 1 == depth { Activation::Identity } else { act },
            })
            .collect();
        let graph = Graph { layers };

        // exponent of layer i: product of activation degrees of the layers after it
        let mut ks = vec![1.0; depth];
        for i in (0..depth.saturating_sub(1)).rev() {
            ks[i] = ks[i + 1] * f64::from(graph.layers[i].activation.degree());
        }
        let blocks: Vec<Block> = graph
            .layer_offsets()
            .into_iter()
            .enumerate()
            .map(|(i, (start, end))| Block {
                name: format!("layer{}", i + 1),
                start,
                end,
                k: ks[i],
            })
            .collect();
        let order = ks.iter().sum();
        Ok(Self {
            spec: spec.clone(),
            graph,
            order,
            blocks,
        })
    }

    /// Homogeneity order L.
    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_params(&self) -> usize {
        self.graph.num_params()
    }

    pub fn input_dim(&self) -> usize {
        self.graph.input_dim()
    }

    pub fn num_outputs(&self) -> usize {
        self.graph.output_dim()
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Result<(Tensor, Tape)> {
        autodiff::forward(&self.graph, theta, &Tensor::vector(x.to_vec()))
    }

    pub fn outputs(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(theta, x)?.0.data().to_vec())
    }

    /// Per-output gradients `∇_θ Φ_j(θ; x)`.
    pub fn output_gradients(&self, theta: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (out, tape) = self.forward(theta, x)?;
        let c = out.len();
        let mut grads = Vec::with_capacity(c);
        for j in 0..c {
            let mut seed = vec![0.0; c];
            seed[j] = 1.0;
            grads.push(tape.backward_vec(&seed)?.into_vec());
        }
        Ok((out.data().to_vec(), grads))
    }

    /// Gaussian initialization with per-entry standard deviation `scale`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> ParamVector {
        let v = (0..self.num_params())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect::<Vec<f64>>();
        ParamVector::new(v)
    }

    /// Uniform random point on the unit sphere of parameter space.
    pub fn random_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..self.num_params()).map(|_| StandardNormal.sample(rng)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// True if some pre-activation of a kinked activation is within `tol` of zero.
    pub fn near_kink(&self, theta: &[f64], x: &[f64], tol: f64) -> Result<bool> {
        let (_, tape) = self.forward(theta, x)?;
        let hit = tape
            .pre_activations()
            .any(|(act, z)| matches!(act, Activation::Relu | Activation::LeakyRelu { .. }) && z.abs() < tol);
        Ok(hit)
    }

    /// `max_j |Φ_j(αθ;x) − α^L Φ_j(θ;x)| / (1 + |Φ_j(θ;x)|)`.
    pub fn homogeneity_check(&self, theta: &[f64], x: &[f64], alpha: f64) -> Result<f64> {
        let base = self.outputs(theta, x)?;
        let scaled: Vec<f64> = theta.iter().map(|t| alpha * t).collect();
        let out = self.outputs(&scaled, x)?;
        let al = alpha.powf(self.order);
        Ok(base
            .iter()
            .zip(&out)
            .map(|(b, o)| (o - al * b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max))
    }

    /// `max_j |⟨θ, ∇Φ_j⟩ − L·Φ_j| / (1 + |Φ_j|)`.
    pub fn euler_residual(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        let (out, grads) = self.output_gradients(theta, x)?;
        Ok(out
            .iter()
            .zip(&grads)
            .map(|(phi, g)| (dot(theta, g) - self.order * phi).abs() / (1.0 + phi.abs()))
            .fold(0.0, f64::max))
    }

    /// Per-block Euler identity `⟨w_i, ∇_{w_i}Φ⟩ = k_i Φ`, same normalization as
    /// [`Self::euler_residual`].
    pub fn block_euler_residual(&self, theta: &[f64], x: &[f64], block: usize) -> Result<f64> {
        let b = self.blocks.get(block).ok_or(Error::BlockIndex {
            index: block,
            count: self.blocks.len(),
        })?;
        let (out, grads) = self.output_gradients(theta, x)?;
        Ok(out
            .iter()
            .zip(&grads)
            .map(|(phi, g)| {
                let s = dot(&theta[b.start..b.end], &g[b.start..b.end]);
                (s - b.k * phi).abs() / (1.0 + phi.abs())
            })
            .fold(0.0, f64::max))
    }

    /// Norms ‖w_i‖ of every block.
    pub fn block_norms(&self, theta: &[f64]) -> Vec<f64> {
        self.blocks.iter().map(|b| norm(&theta[b.start..b.end])).collect()
    }

    /// Copy of `theta` with block `i` multiplied by `c`.
    pub fn scale_block(&self, theta: &[f64], block: usize, c: f64) -> Result<Vec<f64>> {
        let b = self.blocks.get(block).ok_or(Error::BlockIndex {
            index: block,
            count: self.blocks.len(),
        })?;
        let mut out = theta.to_vec();
        for v in &mut out[b.start..b.end] {
            *v *= c;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orders_and_blocks() {
        let lin = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), 3).unwrap();
        assert_eq!(lin.order(), 1.0);
        assert_eq!(lin.num_params(), 3);
        let relu = HomogeneousModel::build(&ModelSpec::new(Family::Relu, 3, 4), 2).unwrap();
        assert_eq!(relu.order(), 3.0);
        assert_eq!(relu.blocks().len(), 3);
        let quad = HomogeneousModel::build(&ModelSpec::new(Family::Quadratic, 3, 4), 2).unwrap();
        assert_eq!(quad.order(), 7.0);
        let ks: Vec<f64> = quad.blocks().iter().map(|b| b.k).collect();
        assert_eq!(ks, vec![4.0, 2.0, 1.0]);
        let sum: f64 = ks.iter().sum();
        assert_eq!(sum, quad.order());
    }

    #[test]
    fn linear_homogeneity_is_exact() {
        let m = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), 2).unwrap();
        assert_eq!(m.homogeneity_check(&[0.3, -1.7], &[2.0, 5.0], 2.0).unwrap(), 0.0);
        assert_eq!(m.euler_residual(&[0.3, -1.7], &[2.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn identity_scaling_relu() {
        let m = HomogeneousModel::build(&ModelSpec::new(Family::Relu, 2, 5), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let th = m.init_params(&mut rng, 1.0);
        assert_eq!(m.homogeneity_check(th.as_slice(), &[1.0, -0.5], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn block_index_error() {
        let m = HomogeneousModel::build(&ModelSpec::new(Family::Relu, 2, 5), 2).unwrap();
        let th = vec![0.1; m.num_params()];
        assert!(matches!(
            m.block_euler_residual(&th, &[1.0, 1.0], 2),
            Err(Error::BlockIndex { index: 2, count: 2 })
        ));
    }

    #[test]
    fn single_block_equals_full_euler() {
        let m = HomogeneousModel::build(&ModelSpec::new(Family::Linear, 1, 1), 3).unwrap();
        let th = [0.5, -0.2, 1.1];
        let x = [1.0, 2.0, -3.0];
        assert_eq!(
            m.block_euler_residual(&th, &x, 0).unwrap(),
            m.euler_residual(&th, &x).unwrap()
        );
    }
}
