//! Minimal reverse-mode gradient engine over dense `f64` tensors.
//!
//! A [`Tape`] records the primitives of one forward pass (parameter slices, a constant
//! input, matrix-vector products and pointwise activations) in topological order.
//! [`Tape::backward`] walks it in reverse and scatters adjoints into a flat parameter
//! gradient. Tapes are single-use and rebuilt on every forward call.
//!
//! At kinks the engine uses a fixed selection from the Clarke subdifferential, see
//! [`subgradient_convention`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;

/// Dense tensor with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Pointwise nonlinearity applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Square,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Square => x * x,
        }
    }

    /// Degree of positive homogeneity of the activation.
    pub fn degree(self) -> u32 {
        match self {
            Activation::Square => 2,
            _ => 1,
        }
    }

    /// Whether `x` sits at a point where the activation is not differentiable.
    pub fn is_kink(self, x: f64) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. }) && x == 0.0
    }
}

/// Local partial derivative of `act` at `x`.
///
/// Kink selection: ReLU'(0) = 0; LeakyReLU'(0) = the negative-side slope.
pub fn subgradient_convention(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Identity => 1.0,
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { slope } => {
            if x > 0.0 {
                1.0
            } else {
                slope
            }
        }
        Activation::Square => 2.0 * x,
    }
}

/// One dense bias-free layer `y = act(W x)` with `W` of shape `rows × cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
}

/// Feed-forward computation graph: a chain of bias-free dense layers whose weights are
/// stored back to back (row-major) in one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub layers: Vec<Layer>,
}

impl Graph {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.rows * l.cols).sum()
    }

    /// Offsets of each layer's weight slice in the flat parameter vector.
    pub fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let start = off;
                off += l.rows * l.cols;
                (start, off)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param { offset: usize },
    Input,
    MatVec { w: usize, x: usize },
    Act { kind: Activation, x: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    num_params: usize,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl Tape {
    pub fn new(num_params: usize) -> Self {
        Self {
            nodes: Vec::new(),
            num_params,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a slice of the parameter vector reshaped to `shape`.
    pub fn param(&mut self, params: &[f64], offset: usize, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if offset + n > params.len() || offset + n > self.num_params {
            return Err(Error::Shape {
                op: "param",
                expected: vec![offset + n],
                got: vec![params.len()],
            });
        }
        let value = Tensor::new(shape, params[offset..offset + n].to_vec())?;
        Ok(self.push(Op::Param { offset }, value))
    }

    pub fn input(&mut self, x: Tensor) -> NodeId {
        self.push(Op::Input, x)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (ws, xs) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        if ws.shape.len() != 2 || xs.shape.len() != 1 || ws.shape[1] != xs.shape[0] {
            return Err(Error::Shape {
                op: "matvec",
                expected: vec![ws.shape.get(1).copied().unwrap_or(0)],
                got: xs.shape.clone(),
            });
        }
        let (rows, cols) = (ws.shape[0], ws.shape[1]);
        let mut out = vec![0.0; rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &ws.data[i * cols..(i + 1) * cols];
            *o = row.iter().zip(&xs.data).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(Op::MatVec { w: w.0, x: x.0 }, Tensor::vector(out)))
    }

    pub fn activate(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let data = v.data.iter().map(|&z| kind.apply(z)).collect();
        let value = Tensor {
            shape: v.shape.clone(),
            data,
        };
        self.push(Op::Act { kind, x: x.0 }, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Value of the last recorded node.
    pub fn output(&self) -> &Tensor {
        &self.nodes.last().expect("empty tape").value
    }

    /// Pre-activation values of every activation node (used to detect kink probes).
    pub fn pre_activations(&self) -> impl Iterator<Item = (Activation, f64)> + '_ {
        self.nodes.iter().flat_map(move |n| match n.op {
            Op::Act { kind, x } => self.nodes[x]
                .value
                .data
                .iter()
                .map(move |&z| (kind, z))
                .collect::<Vec<_>>(),
            _ => Vec::new(),
        })
    }

    /// Reverse accumulation for a scalar output: returns `seed · d(output)/dθ`.
    pub fn backward(&self, seed: f64) -> Result<ParamVector> {
        let out = self.output();
        if out.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                expected: vec![1],
                got: out.shape.clone(),
            });
        }
        self.backward_vec(&[seed])
    }

    /// Reverse accumulation with a vector seed (vector-Jacobian product).
    pub fn backward_vec(&self, seed: &[f64]) -> Result<ParamVector> {
        if seed.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("backward seed".into()));
        }
        let last = self.nodes.len().checked_sub(1).ok_or(Error::Shape {
            op: "backward",
            expected: vec![1],
            got: vec![0],
        })?;
        if self.nodes[last].value.len() != seed.len() {
            return Err(Error::Shape {
                op: "backward",
                expected: self.nodes[last].value.shape.clone(),
                got: vec![seed.len()],
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[last] = Some(seed.to_vec());
        let mut grad = vec![0.0; self.num_params];

        for i in (0..self.nodes.len()).rev() {
            let Some(a) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (g, v) in grad[*offset..*offset + a.len()].iter_mut().zip(&a) {
                        *g += v;
                    }
                }
                Op::MatVec { w, x } => {
                    let (w, x) = (*w, *x);
                    let wv = &self.nodes[w].value;
                    let xv = &self.nodes[x].value;
                    let cols = wv.shape[1];
                    let mut gw = vec![0.0; wv.len()];
                    let mut gx = vec![0.0; xv.len()];
                    for (r, &ar) in a.iter().enumerate() {
                        if ar == 0.0 {
                            continue;
                        }
                        let row = &wv.data[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gw[r * cols + c] += ar * xv.data[c];
                            gx[c] += ar * row[c];
                        }
                    }
                    accumulate(&mut adj[w], gw);
                    accumulate(&mut adj[x], gx);
                }
                Op::Act { kind, x } => {
                    let x = *x;
                    let pre = &self.nodes[x].value.data;
                    let g: Vec<f64> = a
                        .iter()
                        .zip(pre)
                        .map(|(ai, &z)| ai * subgradient_convention(*kind, z))
                        .collect();
                    accumulate(&mut adj[x], g);
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("backward pass".into()));
        }
        Ok(ParamVector::new(grad))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(v) => {
            for (a, b) in v.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Records a forward pass of `graph` at `params` on `input`.
pub fn forward(graph: &Graph, params: &[f64], input: &Tensor) -> Result<(Tensor, Tape)> {
    if params.len() != graph.num_params() {
        return Err(Error::Shape {
            op: "forward/params",
            expected: vec![graph.num_params()],
            got: vec![params.len()],
        });
    }
    if input.shape() != [graph.input_dim()] {
        return Err(Error::Shape {
            op: "forward/input",
            expected: vec![graph.input_dim()],
            got: input.shape().to_vec(),
        });
    }
    let mut tape = Tape::new(params.len());
    let mut h = tape.input(input.clone());
    for (layer, (start, _)) in graph.layers.iter().zip(graph.layer_offsets()) {
        let w = tape.param(params, start, vec![layer.rows, layer.cols])?;
        h = tape.matvec(w, h)?;
        if layer.activation != Activation::Identity {
            h = tape.activate(layer.activation, h);
        }
    }
    let out = tape.value(h).clone();
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward pass".into()));
    }
    Ok((out, tape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(d: usize) -> Graph {
        Graph {
            layers: vec![Layer {
                rows: 1,
                cols: d,
                activation: Activation::Identity,
            }],
        }
    }

    #[test]
    fn linear_forward_and_gradient() {
        let g = linear(2);
        let (out, tape) = forward(&g, &[2.0, -1.0], &Tensor::vector(vec![3.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[5.0]);
        assert_eq!(tape.backward(1.0).unwrap().as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn chain_rule_through_square() {
        // Φ = (w·x)^2 with w·x = 2 → ∇ = 2·2·x = (12, 4)
        let g = Graph {
            layers: vec![Layer {
                rows: 1,
                cols: 2,
                activation: Activation::Square,
            }],
        };
        let (out, tape) = forward(&g, &[1.0, -1.0], &Tensor::vector(vec![3.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(tape.backward(1.0).unwrap().as_slice(), &[12.0, 4.0]);
    }

    #[test]
    fn kink_selection() {
        assert_eq!(subgradient_convention(Activation::Relu, 0.0), 0.0);
        assert_eq!(subgradient_convention(Activation::Relu, 1e-12), 1.0);
        assert_eq!(subgradient_convention(Activation::LeakyRelu { slope: 0.1 }, 0.0), 0.1);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let g = linear(2);
        let e = forward(&g, &[1.0], &Tensor::vector(vec![1.0, 1.0])).unwrap_err();
        assert!(e.to_string().contains("forward/params"));
        let e = forward(&g, &[1.0, 1.0], &Tensor::vector(vec![1.0])).unwrap_err();
        assert!(e.to_string().contains("forward/input"));
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn non_finite_seed_is_reported() {
        let g = linear(1);
        let (_, tape) = forward(&g, &[1.0], &Tensor::vector(vec![1.0])).unwrap();
        assert!(matches!(tape.backward(f64::NAN), Err(Error::NonFinite(_))));
    }
}
