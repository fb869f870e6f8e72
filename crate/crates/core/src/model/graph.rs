use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::vision::EdgeMethod;

/// Dropout rate after every hidden activation.
pub const DROPOUT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    EdgeNet,
    /// Edge connection and edge input removed.
    Wc,
    /// Sobel edges.
    Se,
    /// Inverted (dark background) input.
    Id,
    /// Laplacian-of-Gaussian edges.
    Log,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::EdgeNet,
        Variant::Wc,
        Variant::Se,
        Variant::Id,
        Variant::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EdgeNet => "edgenet",
            Variant::Wc => "wc",
            Variant::Se => "se",
            Variant::Id => "id",
            Variant::Log => "log",
        }
    }

    pub fn has_edge_connection(self) -> bool {
        self != Variant::Wc
    }

    pub fn edge_method(self) -> EdgeMethod {
        match self {
            Variant::EdgeNet | Variant::Id => EdgeMethod::Canny,
            Variant::Wc => EdgeMethod::None,
            Variant::Se => EdgeMethod::Sobel,
            Variant::Log => EdgeMethod::Log,
        }
    }

    pub fn inverts_input(self) -> bool {
        self == Variant::Id
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == lower)
            .ok_or_else(|| Error::UnknownVariant(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Image,
    Edge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Input(InputKind),
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        padding: usize,
    },
    /// Channel concatenation of exactly two inputs, first input first.
    Concat,
    AvgPool,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Conv { .. } => "conv",
            Op::Concat => "concat",
            Op::AvgPool => "avgpool",
            Op::Flatten => "flatten",
            Op::Dense { .. } => "dense",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    /// Output shape: `[C, H, W]` for feature maps, `[N]` for vectors.
    pub shape: Vec<usize>,
    /// Index into the weight set for conv and dense nodes.
    pub param: Option<usize>,
}

impl Node {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Topologically ordered layer DAG. The last node is the classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub variant: Variant,
    pub input_height: usize,
    pub input_width: usize,
    nodes: Vec<Node>,
}

impl ModelGraph {
    pub fn builder(variant: Variant, input_height: usize, input_width: usize) -> GraphBuilder {
        GraphBuilder {
            graph: ModelGraph {
                variant,
                input_height,
                input_width,
                nodes: Vec::new(),
            },
            params: 0,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn output(&self) -> Option<&Node> {
        self.nodes.last()
    }

    pub fn uses_edge_input(&self) -> bool {
        self.nodes.iter().any(|n| n.op == Op::Input(InputKind::Edge))
    }

    pub fn param_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.param.is_some())
    }

    /// Re-derives every node shape from the input extents and checks it
    /// against the recorded one.
    pub fn audit(&self) -> Result<()> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if n.inputs.iter().any(|&j| j >= i) {
                return Err(Error::shape(
                    "graph",
                    format!("node `{}` is not topologically ordered", n.name),
                ));
            }
            let inputs: Vec<&[usize]> = n.inputs.iter().map(|&j| shapes[j].as_slice()).collect();
            let s = infer_shape(&n.op, &inputs, (self.input_height, self.input_width))
                .map_err(|e| Error::shape("graph", format!("node `{}`: {e}", n.name)))?;
            if s != n.shape {
                return Err(Error::shape(
                    "graph",
                    format!("node `{}` records {:?}, inferred {s:?}", n.name, n.shape),
                ));
            }
            shapes.push(s);
        }
        Ok(())
    }
}

fn infer_shape(
    op: &Op,
    inputs: &[&[usize]],
    (h, w): (usize, usize),
) -> std::result::Result<Vec<usize>, String> {
    let arity = match op {
        Op::Input(_) => 0,
        Op::Concat => 2,
        _ => 1,
    };
    if inputs.len() != arity {
        return Err(format!(
            "{} takes {arity} inputs, got {}",
            op.kind(),
            inputs.len()
        ));
    }
    let map = |s: &[usize]| -> std::result::Result<(usize, usize, usize), String> {
        match *s {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(format!("expected a [C, H, W] input, got {s:?}")),
        }
    };
    match *op {
        Op::Input(_) => Ok(vec![1, h, w]),
        Op::Conv {
            in_channels,
            out_channels,
            kernel,
            dilation,
            padding,
        } => {
            let (c, ih, iw) = map(inputs[0])?;
            if c != in_channels {
                return Err(format!("input has {c} channels, conv expects {in_channels}"));
            }
            let span = dilation * (kernel - 1) + 1;
            if ih + 2 * padding < span || iw + 2 * padding < span {
                return Err(format!("receptive field {span} exceeds padded {ih}x{iw}"));
            }
            Ok(vec![
                out_channels,
                ih + 2 * padding - span + 1,
                iw + 2 * padding - span + 1,
            ])
        }
        Op::Concat => {
            let (c1, h1, w1) = map(inputs[0])?;
            let (c2, h2, w2) = map(inputs[1])?;
            if (h1, w1) != (h2, w2) {
                return Err(format!("concat of {h1}x{w1} and {h2}x{w2} maps"));
            }
            Ok(vec![c1 + c2, h1, w1])
        }
        Op::AvgPool => {
            let (c, ih, iw) = map(inputs[0])?;
            if ih % 2 != 0 || iw % 2 != 0 {
                return Err(format!("2x2 pooling of odd extents {ih}x{iw}"));
            }
            Ok(vec![c, ih / 2, iw / 2])
        }
        Op::Flatten => Ok(vec![inputs[0].iter().product()]),
        Op::Dense {
            in_features,
            out_features,
        } => {
            let n: usize = inputs[0].iter().product();
            if n != in_features {
                return Err(format!("input has {n} values, dense expects {in_features}"));
            }
            Ok(vec![out_features])
        }
    }
}

/// Incremental graph construction with shape checking at every step.
#[derive(Debug)]
pub struct GraphBuilder {
    graph: ModelGraph,
    params: usize,
}

impl GraphBuilder {
    fn push(
        &mut self,
        name: &str,
        op: Op,
        inputs: Vec<usize>,
        activation: Activation,
        dropout: f64,
    ) -> Result<usize> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {dropout} outside [0, 1)"
            )));
        }
        if self.graph.node(name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate node name `{name}`")));
        }
        let id = self.graph.nodes.len();
        let shapes: Vec<&[usize]> = inputs
            .iter()
            .map(|&j| {
                self.graph
                    .nodes
                    .get(j)
                    .map(|n| n.shape.as_slice())
                    .ok_or_else(|| Error::shape("graph", format!("`{name}` references missing node {j}")))
            })
            .collect::<Result<_>>()?;
        let shape = infer_shape(&op, &shapes, (self.graph.input_height, self.graph.input_width))
            .map_err(|e| Error::shape("graph", format!("node `{name}`: {e}")))?;
        let param = matches!(op, Op::Conv { .. } | Op::Dense { .. }).then(|| {
            self.params += 1;
            self.params - 1
        });
        self.graph.nodes.push(Node {
            name: name.to_owned(),
            op,
            inputs,
            activation,
            dropout,
            shape,
            param,
        });
        Ok(id)
    }

    pub fn input(&mut self, name: &str, kind: InputKind) -> Result<usize> {
        self.push(name, Op::Input(kind), vec![], Activation::None, 0.0)
    }

    /// Square kernel, stride 1, "same" padding for odd kernels.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        from: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        activation: Activation,
        dropout: f64,
    ) -> Result<usize> {
        let in_channels = self
            .graph
            .nodes
            .get(from)
            .map(|n| n.shape[0])
            .ok_or_else(|| Error::shape("graph", format!("`{name}` references missing node {from}")))?;
        let op = Op::Conv {
            in_channels,
            out_channels,
            kernel,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        };
        self.push(name, op, vec![from], activation, dropout)
    }

    pub fn concat(&mut self, name: &str, first: usize, second: usize) -> Result<usize> {
        self.push(name, Op::Concat, vec![first, second], Activation::None, 0.0)
    }

    pub fn avgpool(&mut self, name: &str, from: usize) -> Result<usize> {
        self.push(name, Op::AvgPool, vec![from], Activation::None, 0.0)
    }

    pub fn flatten(&mut self, name: &str, from: usize) -> Result<usize> {
        self.push(name, Op::Flatten, vec![from], Activation::None, 0.0)
    }

    pub fn dense(
        &mut self,
        name: &str,
        from: usize,
        out_features: usize,
        activation: Activation,
        dropout: f64,
    ) -> Result<usize> {
        let in_features = self
            .graph
            .nodes
            .get(from)
            .map(Node::len)
            .ok_or_else(|| Error::shape("graph", format!("`{name}` references missing node {from}")))?;
        let op = Op::Dense {
            in_features,
            out_features,
        };
        self.push(name, op, vec![from], activation, dropout)
    }

    /// A trainable graph must end in a softmax dense layer.
    pub fn finish(self) -> Result<ModelGraph> {
        match self.graph.nodes.last() {
            Some(Node {
                op: Op::Dense { .. },
                activation: Activation::Softmax,
                dropout,
                ..
            }) if *dropout == 0.0 => Ok(self.graph),
            _ => Err(Error::InvalidArgument(
                "graph must end in a dense softmax layer without dropout".into(),
            )),
        }
    }

    /// Finishes without the classifier-head requirement; for parameter
    /// counting of partial graphs.
    pub fn finish_unchecked(self) -> ModelGraph {
        self.graph
    }
}

pub const INPUT_EXTENT: usize = 28;
pub const NUM_CLASSES: usize = 10;

/// The full network for `variant`.
pub fn build(variant: Variant) -> ModelGraph {
    build_inner(variant).expect("reference architecture is shape-consistent")
}

fn build_inner(variant: Variant) -> Result<ModelGraph> {
    use Activation::{Relu, Softmax};
    let mut b = ModelGraph::builder(variant, INPUT_EXTENT, INPUT_EXTENT);
    let image = b.input("image", InputKind::Image)?;
    let i_conv = b.conv("iConv", image, 16, 3, 1, Relu, DROPOUT)?;
    let (trunk, e_conv) = if variant.has_edge_connection() {
        let edge = b.input("edge", InputKind::Edge)?;
        let e_conv = b.conv("eConv", edge, 16, 3, 1, Relu, DROPOUT)?;
        (b.concat("concat1", i_conv, e_conv)?, Some(e_conv))
    } else {
        (i_conv, None)
    };
    let c1 = b.conv("Conv1", trunk, 32, 3, 1, Relu, DROPOUT)?;
    let c2 = b.conv("Conv2", c1, 32, 3, 2, Relu, DROPOUT)?;
    let c3 = b.conv("Conv3", c2, 32, 3, 2, Relu, DROPOUT)?;
    let c4_in = match e_conv {
        Some(e) => b.concat("concat2", c3, e)?,
        None => c3,
    };
    let c4 = b.conv("Conv4", c4_in, 32, 3, 1, Relu, DROPOUT)?;
    let pool = b.avgpool("pool", c4)?;
    let flat = b.flatten("flatten", pool)?;
    let fc1 = b.dense("FC1", flat, 128, Relu, DROPOUT)?;
    b.dense("FC2", fc1, NUM_CLASSES, Softmax, 0.0)?;
    b.finish()
}

/// Weights plus biases of every conv and dense layer.
pub fn count_params_standard(graph: &ModelGraph) -> u64 {
    graph
        .nodes()
        .iter()
        .map(|n| match n.op {
            Op::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => ((in_channels * kernel * kernel + 1) * out_channels) as u64,
            Op::Dense {
                in_features,
                out_features,
            } => ((in_features + 1) * out_features) as u64,
            _ => 0,
        })
        .sum()
}

/// `Σ K_{L-1}·S²·K_L·M_L²` over conv layers plus `Σ (X+1)·Y` over dense
/// layers, where `M_L` is the conv output extent. Counts connections rather
/// than weights and omits conv biases.
pub fn count_params_eq1(graph: &ModelGraph) -> u64 {
    graph
        .nodes()
        .iter()
        .map(|n| match n.op {
            Op::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let m = n.shape[1] * n.shape[2];
                (in_channels * kernel * kernel * out_channels * m) as u64
            }
            Op::Dense {
                in_features,
                out_features,
            } => ((in_features + 1) * out_features) as u64,
            _ => 0,
        })
        .sum()
}
