//! Model file: `HDQN` magic, little-endian `u32` version and header length, a
//! JSON header (schema id, layer sizes, activation tag, normalization), then
//! every layer's weights (row-major) followed by its biases as little-endian
//! `f64`, dispatch network first.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dqn::Dqn;
use super::mlp::{Activation, Layer, Mlp};
use super::two_step::{AgentConfig, Normalization, TwoStepAgent};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HDQN";
pub const VERSION: u32 = 1;
pub const SCHEMA: &str = "hubsim.two-step-dqn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub name: String,
    pub sizes: Vec<usize>,
    pub activation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub schema: String,
    pub networks: Vec<NetworkHeader>,
    pub normalization: Normalization,
    pub agent: AgentConfig,
}

fn header_for(name: &str, net: &Mlp) -> NetworkHeader {
    NetworkHeader {
        name: name.into(),
        sizes: net.sizes(),
        activation: net.activation.tag().into(),
    }
}

pub fn write_model<W: Write>(mut w: W, agent: &TwoStepAgent) -> Result<()> {
    let header = ModelHeader {
        schema: SCHEMA.into(),
        networks: vec![
            header_for("dispatch", &agent.dispatch.online),
            header_for("plan", &agent.plan.online),
        ],
        normalization: agent.norm.clone(),
        agent: agent.config.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Model(e.to_string()))?;
    let io = |e| Error::io("<model>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for net in [&agent.dispatch.online, &agent.plan.online] {
        for layer in &net.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn model_bytes(agent: &TwoStepAgent) -> Vec<u8> {
    let mut buf = Vec::new();
    write_model(&mut buf, agent).expect("writing to memory");
    buf
}

pub fn save_model(path: &Path, agent: &TwoStepAgent) -> Result<()> {
    std::fs::write(path, model_bytes(agent)).map_err(|e| Error::io(path, e))
}

/// Expected input/output widths, checked against the stored shapes.
#[derive(Clone, Copy, Debug)]
pub struct ExpectedShape {
    pub plan_inputs: usize,
    pub plan_actions: usize,
}

fn read_u32(bytes: &[u8], at: &mut usize) -> Result<u32> {
    let slice = bytes
        .get(*at..*at + 4)
        .ok_or_else(|| Error::Model("truncated header".into()))?;
    *at += 4;
    Ok(u32::from_le_bytes(slice.try_into().unwrap()))
}

pub fn read_model<R: Read>(mut r: R, expected: Option<ExpectedShape>) -> Result<TwoStepAgent> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Model("bad magic".into()));
    }
    let mut at = 4;
    let version = read_u32(&bytes, &mut at)?;
    if version != VERSION {
        return Err(Error::Model(format!("unsupported version {version}")));
    }
    let len = read_u32(&bytes, &mut at)? as usize;
    let json = bytes
        .get(at..at + len)
        .ok_or_else(|| Error::Model("truncated header".into()))?;
    at += len;
    let header: ModelHeader =
        serde_json::from_slice(json).map_err(|e| Error::Model(format!("header: {e}")))?;
    if header.schema != SCHEMA {
        return Err(Error::Model(format!("unknown schema {:?}", header.schema)));
    }
    if header.networks.len() != 2 {
        return Err(Error::Model("expected dispatch and plan networks".into()));
    }
    let mut nets = Vec::new();
    for h in &header.networks {
        let activation = Activation::from_tag(&h.activation)
            .ok_or_else(|| Error::Model(format!("unknown activation {:?}", h.activation)))?;
        if h.sizes.len() < 2 || h.sizes.contains(&0) {
            return Err(Error::Model(format!("bad layer sizes {:?}", h.sizes)));
        }
        let mut layers = Vec::new();
        for w in h.sizes.windows(2) {
            let mut layer = Layer::zeros(w[0], w[1]);
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                let chunk = bytes
                    .get(at..at + 8)
                    .ok_or_else(|| Error::Model("truncated weights".into()))?;
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::Model("non-finite weight".into()));
                }
                at += 8;
            }
            layers.push(layer);
        }
        nets.push(Mlp { layers, activation });
    }
    if at != bytes.len() {
        return Err(Error::Model(format!("{} trailing bytes", bytes.len() - at)));
    }
    let plan = nets.pop().unwrap();
    let dispatch = nets.pop().unwrap();
    if dispatch.input_dim() != 5 || dispatch.output_dim() != 2 {
        return Err(Error::Model(format!(
            "dispatch network shape {:?}, expected 5 inputs and 2 outputs",
            dispatch.sizes()
        )));
    }
    if let Some(e) = expected {
        if plan.input_dim() != e.plan_inputs || plan.output_dim() != e.plan_actions {
            return Err(Error::Model(format!(
                "plan network shape {:?} does not match scenario ({} inputs, {} actions)",
                plan.sizes(),
                e.plan_inputs,
                e.plan_actions
            )));
        }
    }
    Ok(TwoStepAgent::from_parts(
        header.agent,
        header.normalization,
        Dqn::from_online(dispatch),
        Dqn::from_online(plan),
    ))
}

pub fn load_model(path: &Path, expected: Option<ExpectedShape>) -> Result<TwoStepAgent> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(f), expected)
}
