//! Network topologies assembled from [`LayerSpec`] stacks.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Cache, LayerSpec, Shape};
use super::ParamTensor;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Architecture description, serialised into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// A plain layer stack.
    Sequential { input: Shape, layers: Vec<LayerSpec> },
    /// Pulse reconstruction followed by BP regression.
    ///
    /// `recon` maps the input to a `1 × F` pulse. Forward differences of the pulse
    /// feed `branches[1]` (VPG, length F-1) and `branches[2]` (APG, length F-2),
    /// the pulse itself feeds `branches[0]`. Branch outputs must be flat; they are
    /// concatenated and passed through `head`.
    PulseBp {
        input: Shape,
        recon: Vec<LayerSpec>,
        branches: [Vec<LayerSpec>; 3],
        head: Vec<LayerSpec>,
    },
}

/// A compiled layer stack: shapes and parameter offsets resolved once.
#[derive(Debug, Clone)]
struct Stack {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    param_slot: Vec<Option<usize>>,
}

impl Stack {
    fn compile(layers: &[LayerSpec], input: Shape, params: &mut Vec<Vec<usize>>, fan_in: &mut Vec<usize>) -> Result<Self> {
        let mut shapes = vec![input];
        let mut param_slot = Vec::with_capacity(layers.len());
        for layer in layers {
            let cur = *shapes.last().expect("non-empty");
            param_slot.push(layer.param_shapes(cur).map(|[w, b]| {
                let slot = params.len();
                params.push(w);
                params.push(b);
                fan_in.push(layer.fan_in(cur));
                fan_in.push(layer.fan_in(cur));
                slot
            }));
            shapes.push(layer.output_shape(cur)?);
        }
        Ok(Self {
            layers: layers.to_vec(),
            shapes,
            param_slot,
        })
    }

    fn output(&self) -> Shape {
        *self.shapes.last().expect("non-empty")
    }

    fn forward(
        &self,
        params: &[ParamTensor],
        x: Vec<f64>,
        rng: &mut Option<ChaCha8Rng>,
        caches: Option<&mut Vec<Cache>>,
    ) -> Vec<f64> {
        let keep = caches.is_some();
        let mut out_caches = Vec::new();
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let p = self.param_slot[i].map(|s| &params[s..s + 2]).unwrap_or(&[]);
            let (y, cache) = layers::forward(layer, self.shapes[i], p, &cur, rng.as_mut().map(|r| r as &mut dyn RngCore), keep);
            if keep {
                out_caches.push(cache);
            }
            cur = y;
        }
        if let Some(c) = caches {
            *c = out_caches;
        }
        cur
    }

    fn backward(&self, params: &mut [ParamTensor], caches: &[Cache], dy: Vec<f64>) -> Vec<f64> {
        let mut grad = dy;
        for i in (0..self.layers.len()).rev() {
            let p: &mut [ParamTensor] = match self.param_slot[i] {
                Some(s) => &mut params[s..s + 2],
                None => &mut [],
            };
            grad = layers::backward(&self.layers[i], self.shapes[i], p, &caches[i], &grad);
        }
        grad
    }
}

#[derive(Debug, Clone)]
enum Topology {
    Sequential(Stack),
    PulseBp {
        recon: Stack,
        branches: [Stack; 3],
        head: Stack,
    },
}

/// How dropout layers behave during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Off,
    /// Dropout active, masks drawn from a generator seeded with this value.
    Sampled(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    /// Final layer output; for heteroscedastic heads `[mu_sbp, s_sbp, mu_dbp, s_dbp]`.
    pub raw: Vec<f64>,
    /// Reconstructed pulse, for [`NetworkSpec::PulseBp`] networks.
    pub pulse: Option<Vec<f64>>,
}

/// Gradient of the loss with respect to a [`NetOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub raw: Vec<f64>,
    pub pulse: Option<Vec<f64>>,
}

#[derive(Debug)]
enum Record {
    Sequential(Vec<Cache>),
    PulseBp {
        recon: Vec<Cache>,
        branches: [Vec<Cache>; 3],
        head: Vec<Cache>,
        pulse_len: usize,
    },
}

#[derive(Debug)]
pub struct Network {
    spec: NetworkSpec,
    topology: Topology,
    params: Vec<ParamTensor>,
    record: Option<Record>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            topology: self.topology.clone(),
            params: self.params.clone(),
            record: None,
        }
    }
}

impl Network {
    /// Builds a network with fan-in scaled uniform initialisation.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let (topology, shapes, fan_in) = compile(&spec)?;
        let mut rng = rng_from(seed, &[crate::rng::tag("init")]);
        let params = shapes
            .into_iter()
            .zip(fan_in)
            .map(|(shape, fan)| {
                let bound = 1.0 / (fan.max(1) as f64).sqrt();
                let n: usize = shape.iter().product();
                let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                ParamTensor::new(shape, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            topology,
            params,
            record: None,
        })
    }

    /// Rebuilds a network from stored parameter values.
    pub fn from_parts(spec: NetworkSpec, params: Vec<ParamTensor>) -> Result<Self> {
        let (topology, shapes, _) = compile(&spec)?;
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s != p.shape()) {
            return Err(Error::config("parameter shapes do not match network spec"));
        }
        Ok(Self {
            spec,
            topology,
            params,
            record: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn input_shape(&self) -> Shape {
        match &self.spec {
            NetworkSpec::Sequential { input, .. } | NetworkSpec::PulseBp { input, .. } => *input,
        }
    }

    pub fn output_len(&self) -> usize {
        match &self.topology {
            Topology::Sequential(s) => s.output().size(),
            Topology::PulseBp { head, .. } => head.output().size(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }

    /// Read-only forward pass; safe to call concurrently.
    pub fn forward(&self, input: &[f64], mode: DropoutMode) -> Result<NetOutput> {
        self.run(input, mode, false).map(|(o, _)| o)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(&mut self, input: &[f64], mode: DropoutMode) -> Result<NetOutput> {
        let (out, rec) = self.run(input, mode, true)?;
        self.record = rec;
        Ok(out)
    }

    /// Accumulates parameter gradients for the last recorded forward pass.
    pub fn backward(&mut self, grad: &OutputGrad) -> Result<()> {
        let record = self
            .record
            .take()
            .ok_or_else(|| Error::usage("backward called without a recorded forward pass"))?;
        let params = &mut self.params;
        match (&self.topology, record) {
            (Topology::Sequential(stack), Record::Sequential(caches)) => {
                if grad.raw.len() != stack.output().size() {
                    return Err(Error::usage("output gradient has wrong length"));
                }
                stack.backward(params, &caches, grad.raw.clone());
            }
            (
                Topology::PulseBp { recon, branches, head },
                Record::PulseBp {
                    recon: rc,
                    branches: bc,
                    head: hc,
                    pulse_len,
                },
            ) => {
                if grad.raw.len() != head.output().size() {
                    return Err(Error::usage("output gradient has wrong length"));
                }
                let d_concat = head.backward(params, &hc, grad.raw.clone());
                let mut offset = 0;
                let mut d_in: [Vec<f64>; 3] = Default::default();
                for (k, branch) in branches.iter().enumerate() {
                    let n = branch.output().size();
                    d_in[k] = branch.backward(params, &bc[k], d_concat[offset..offset + n].to_vec());
                    offset += n;
                }
                let [mut d_ppg, mut d_vpg, d_apg] = d_in;
                // apg[j] = vpg[j+1] - vpg[j]; vpg[j] = ppg[j+1] - ppg[j].
                for (j, g) in d_apg.iter().enumerate() {
                    d_vpg[j + 1] += g;
                    d_vpg[j] -= g;
                }
                for (j, g) in d_vpg.iter().enumerate() {
                    d_ppg[j + 1] += g;
                    d_ppg[j] -= g;
                }
                if let Some(dp) = &grad.pulse {
                    if dp.len() != pulse_len {
                        return Err(Error::usage("pulse gradient has wrong length"));
                    }
                    d_ppg.iter_mut().zip(dp).for_each(|(a, b)| *a += b);
                }
                recon.backward(params, &rc, d_ppg);
            }
            _ => unreachable!("record matches topology"),
        }
        Ok(())
    }

    fn run(&self, input: &[f64], mode: DropoutMode, keep: bool) -> Result<(NetOutput, Option<Record>)> {
        let expected = self.input_shape().size();
        if input.len() != expected {
            return Err(Error::config(format!(
                "input has {} values, network expects {expected}",
                input.len()
            )));
        }
        let mut rng = match mode {
            DropoutMode::Off => None,
            DropoutMode::Sampled(seed) => Some(rng_from(seed, &[crate::rng::tag("dropout")])),
        };
        let params = &self.params;
        match &self.topology {
            Topology::Sequential(stack) => {
                let mut caches = Vec::new();
                let raw = stack.forward(params, input.to_vec(), &mut rng, keep.then_some(&mut caches));
                Ok((NetOutput { raw, pulse: None }, keep.then(|| Record::Sequential(caches))))
            }
            Topology::PulseBp { recon, branches, head } => {
                let mut rc = Vec::new();
                let pulse = recon.forward(params, input.to_vec(), &mut rng, keep.then_some(&mut rc));
                let vpg = crate::signals::forward_difference(&pulse);
                let apg = crate::signals::forward_difference(&vpg);
                let mut bc: [Vec<Cache>; 3] = Default::default();
                let mut concat = Vec::new();
                for (k, (branch, x)) in branches.iter().zip([pulse.clone(), vpg, apg]).enumerate() {
                    concat.extend(branch.forward(params, x, &mut rng, keep.then_some(&mut bc[k])));
                }
                let mut hc = Vec::new();
                let raw = head.forward(params, concat, &mut rng, keep.then_some(&mut hc));
                let pulse_len = pulse.len();
                let record = keep.then_some(Record::PulseBp {
                    recon: rc,
                    branches: bc,
                    head: hc,
                    pulse_len,
                });
                Ok((NetOutput { raw, pulse: Some(pulse) }, record))
            }
        }
    }
}

type Compiled = (Topology, Vec<Vec<usize>>, Vec<usize>);

fn compile(spec: &NetworkSpec) -> Result<Compiled> {
    let mut shapes = Vec::new();
    let mut fan_in = Vec::new();
    let topology = match spec {
        NetworkSpec::Sequential { input, layers } => {
            Topology::Sequential(Stack::compile(layers, *input, &mut shapes, &mut fan_in)?)
        }
        NetworkSpec::PulseBp {
            input,
            recon,
            branches,
            head,
        } => {
            let recon = Stack::compile(recon, *input, &mut shapes, &mut fan_in)?;
            let pulse = recon.output();
            if pulse.channels != 1 || pulse.length < 3 {
                return Err(Error::config(format!(
                    "reconstruction must produce a 1 x F pulse with F >= 3, got {pulse:?}"
                )));
            }
            let mut compiled: Vec<Stack> = Vec::with_capacity(3);
            let mut concat = 0;
            for (k, b) in branches.iter().enumerate() {
                let s = Stack::compile(b, Shape::new(1, pulse.length - k), &mut shapes, &mut fan_in)?;
                if s.output().length != 1 {
                    return Err(Error::config(format!("branch {k} output must be flat, got {:?}", s.output())));
                }
                concat += s.output().channels;
                compiled.push(s);
            }
            let head = Stack::compile(head, Shape::flat(concat), &mut shapes, &mut fan_in)?;
            let branches: [Stack; 3] = compiled.try_into().expect("three branches");
            Topology::PulseBp { recon, branches, head }
        }
    };
    Ok((topology, shapes, fan_in))
}
