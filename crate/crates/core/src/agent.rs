//! The full agent assembled from encoder, memory, core, heads, and
//! auxiliary losses, configured by one of the ten ablation variants.
//!
//! One `step_on_tape` call is the per-timestep dataflow: encode the
//! observation, query and read the episodic memory, advance the core over
//! [x_t, m_t], write (x_t, h_t) back to memory, and project the policy and
//! value heads.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::auxloss::{init_cpc_params, init_rec_params, CpcConfig, RecConfig};
use crate::controller::{Controller, CoreKind, NetDims, ObsSpec};
use crate::epmem::{init_memory_params, query, EpisodicBuffer, MemoryConfig, ReadOut};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxKind {
    None,
    Cpc,
    Rec,
}

/// One ablation: working-memory kind x episodic memory x auxiliary loss,
/// plus the write-detachment flag (memory writes sever tape linkage by
/// default; the `attached` variant keeps in-unroll linkage and exists only
/// for the LSTM+MEM+CPC row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationConfig {
    pub core: CoreKind,
    pub mem: bool,
    pub aux: AuxKind,
    pub detach_writes: bool,
}

impl AblationConfig {
    pub fn new(core: CoreKind, mem: bool, aux: AuxKind) -> Self {
        AblationConfig {
            core,
            mem,
            aux,
            detach_writes: true,
        }
    }

    /// The ten valid configurations.
    pub fn all() -> Vec<AblationConfig> {
        use AuxKind::*;
        use CoreKind::*;
        let mut v = vec![
            AblationConfig::new(Feedforward, false, None),
            AblationConfig::new(Feedforward, true, None),
            AblationConfig::new(Feedforward, true, Cpc),
            AblationConfig::new(Feedforward, true, Rec),
            AblationConfig::new(Lstm, false, None),
            AblationConfig::new(Lstm, false, Cpc),
            AblationConfig::new(Lstm, true, None),
            AblationConfig::new(Lstm, true, Cpc),
            AblationConfig::new(Lstm, true, Rec),
        ];
        v.push(AblationConfig {
            core: Lstm,
            mem: true,
            aux: Cpc,
            detach_writes: false,
        });
        v
    }

    pub fn id(&self) -> String {
        let mut s = match self.core {
            CoreKind::Feedforward => "ff".to_string(),
            CoreKind::Lstm => "lstm".to_string(),
        };
        if self.mem {
            s.push_str("_mem");
        }
        match self.aux {
            AuxKind::None => {}
            AuxKind::Cpc => s.push_str("_cpc"),
            AuxKind::Rec => s.push_str("_rec"),
        }
        if !self.detach_writes {
            s.push_str("_attached");
        }
        s
    }

    pub fn parse(s: &str) -> Result<AblationConfig> {
        AblationConfig::all()
            .into_iter()
            .find(|c| c.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation config {s:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        if AblationConfig::all().contains(self) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "ablation {:?} is not one of the ten valid configurations",
                self.id()
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub ablation: AblationConfig,
    pub dims: NetDims,
    pub memory: MemoryConfig,
    pub cpc: CpcConfig,
    pub rec: RecConfig,
}

/// Everything produced by one forward step.
pub struct StepOutput {
    pub x: NodeId,
    pub h: NodeId,
    pub c: NodeId,
    pub logits: NodeId,
    pub value: NodeId,
    pub read: Option<ReadOut>,
    pub write_index: Option<usize>,
}

pub struct Agent {
    pub config: AgentConfig,
    pub controller: Controller,
    pub obs: ObsSpec,
}

impl Agent {
    pub fn new(obs: ObsSpec, config: AgentConfig) -> Result<Agent> {
        config.ablation.validate()?;
        let controller = Controller::new(
            obs,
            config.dims,
            config.ablation.core,
            config.ablation.mem,
        )?;
        Ok(Agent {
            config,
            controller,
            obs,
        })
    }

    /// Parameters for exactly this ablation: encoder/core/heads always,
    /// mem/* only with the memory module, cpc/* or rec/* per the auxiliary
    /// choice.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<ParameterSet<S>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        self.controller.init_params(&mut params, &mut rng)?;
        let d = self.config.dims;
        if self.config.ablation.mem {
            init_memory_params(
                &mut params,
                d.embed,
                d.hidden,
                self.config.memory.key_width,
                &mut rng,
            )?;
        }
        match self.config.ablation.aux {
            AuxKind::None => {}
            AuxKind::Cpc => {
                init_cpc_params(&mut params, d.embed, d.hidden, self.config.cpc.steps, &mut rng)?
            }
            AuxKind::Rec => init_rec_params(
                &mut params,
                d.hidden,
                d.enc_hidden,
                self.obs.total_dim(),
                d.num_actions,
                &mut rng,
            )?,
        }
        Ok(params)
    }

    /// The parameter-id set implied by the ablation, for structural audits.
    pub fn expected_param_ids(&self) -> Result<Vec<String>> {
        Ok(self.init_params::<f32>(0)?.ids())
    }

    pub fn fresh_buffer<S: Scalar>(&self) -> Option<EpisodicBuffer<S>> {
        self.config.ablation.mem.then(|| {
            EpisodicBuffer::new(
                self.config.memory.capacity,
                self.config.dims.embed,
                self.config.dims.hidden,
            )
        })
    }

    /// One timestep on the tape. `state` holds the (h, c) nodes from the
    /// previous step; the buffer is read before and written after the core
    /// advances.
    pub fn step_on_tape<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bindings: &BTreeMap<String, NodeId>,
        buffer: &mut Option<EpisodicBuffer<S>>,
        obs: &[f64],
        prev_h: NodeId,
        prev_c: NodeId,
    ) -> Result<StepOutput> {
        let x = self.controller.encode(tape, bindings, obs)?;
        let (m, read) = match (self.config.ablation.mem, buffer.as_ref()) {
            (true, Some(buf)) => {
                let q = query(tape, bindings, x, prev_h)?;
                let out = buf.read(
                    tape,
                    bindings,
                    q,
                    self.config.memory.neighbors,
                    self.config.memory.epsilon,
                )?;
                (Some(out.m), Some(out))
            }
            (false, _) => (None, None),
            (true, None) => {
                return Err(Error::contract(
                    "memory-enabled agent stepped without a buffer",
                ))
            }
        };
        let (h, c) = self
            .controller
            .core_step(tape, bindings, x, m, prev_h, prev_c)?;
        let write_index = match buffer.as_mut() {
            Some(buf) => {
                let (idx, _) =
                    buf.write(tape, bindings, x, h, self.config.ablation.detach_writes)?;
                Some(idx)
            }
            None => None,
        };
        let (logits, value) = self.controller.heads(tape, bindings, h)?;
        Ok(StepOutput {
            x,
            h,
            c,
            logits,
            value,
            read,
            write_index,
        })
    }

    /// Zero-state leaves for an episode start.
    pub fn zero_state_nodes<S: Scalar>(&self, tape: &mut Tape<S>) -> (NodeId, NodeId) {
        let h = tape.leaf(Tensor::zeros(vec![self.config.dims.hidden]));
        let c = tape.leaf(Tensor::zeros(vec![self.config.dims.hidden]));
        (h, c)
    }
}
