//! Simulated N-worker distributed execution of the two-level group
//! convolution.
//!
//! Worker `k` owns group `k`: the local kernel and the coarse restriction
//! kernel fused into one `(m/N + 1)`-row combined kernel (this requires
//! `d0 = d`), plus the mixing matrix `S_k`. A layer forward runs in four
//! phases: each worker convolves its input slice once, producing its local
//! output and its representative channel; an all-gather exchanges the
//! representatives (the only inter-worker traffic); each worker applies its
//! own `S_k` to the gathered coarse tensor; each worker adds the two paths.
//! Parameters never cross worker boundaries, in the forward or the backward
//! pass, and the recorded message trace proves it.
//!
//! Workers are logical actors stepped by a deterministic scheduler; the
//! output is the same for every worker ordering consistent with the phase
//! barriers. All reductions run in ascending group order, making the results
//! bit-identical to the serial operators in [`crate::conv`] and
//! [`crate::grad`].

use crate::conv::{GroupSpec, TwoLevelParams};
use crate::error::{Error, Result};
use crate::grad::{conv1x1_vjp_input, conv1x1_vjp_weights, conv2d_vjp};
use crate::matrix::DenseMatrix;
use crate::tensor::{channel_concat, channel_slice, conv1x1, conv2d, ConvKernel, Tensor};

/// Everything worker `k` holds: the combined local+restriction kernel and
/// its slice of the coarse mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerShard {
    pub group: usize,
    /// `(m/N + 1) x (n/N) x d x d`; rows `0..m/N` are the local kernel,
    /// the last row is the coarse restriction kernel.
    pub combined: ConvKernel,
    /// `(m/N) x N`.
    pub coarse_mix: DenseMatrix,
}

impl WorkerShard {
    /// `d^2 (m/N)(n/N) + d^2 (n/N) + m` scalars live on this worker.
    pub fn param_count(&self) -> usize {
        self.combined.param_count() + self.coarse_mix.data().len()
    }
}

/// What a message carries. Parameter payloads never occur; the variant
/// exists so the accounting can prove that.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    RepresentativeChannel,
    Parameter,
}

/// Communication phases, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    LocalForward,
    Gather,
    CoarseApply,
    Combine,
    BackwardCoarse,
    ReduceScatter,
    BackwardLocal,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::LocalForward => "local_forward",
            Phase::Gather => "gather",
            Phase::CoarseApply => "coarse_apply",
            Phase::Combine => "combine",
            Phase::BackwardCoarse => "backward_coarse",
            Phase::ReduceScatter => "reduce_scatter",
            Phase::BackwardLocal => "backward_local",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Message {
    pub phase: Phase,
    pub sender: usize,
    pub receiver: usize,
    pub kind: PayloadKind,
    pub payload: Tensor,
    pub byte_size: usize,
}

impl Message {
    pub fn scalars(&self) -> usize {
        self.payload.data().len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseStats {
    pub phase: Phase,
    pub messages: usize,
    pub activation_scalars: usize,
    pub parameter_scalars: usize,
}

/// Communication accounting for one cluster operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommReport {
    pub messages: usize,
    pub activation_scalars: usize,
    pub parameter_scalars: usize,
    pub phases: Vec<PhaseStats>,
}

impl CommReport {
    pub fn from_trace(trace: &[Message], phases_run: &[Phase]) -> CommReport {
        let mut phases: Vec<PhaseStats> = phases_run
            .iter()
            .map(|&phase| PhaseStats { phase, messages: 0, activation_scalars: 0, parameter_scalars: 0 })
            .collect();
        let mut report = CommReport {
            messages: 0,
            activation_scalars: 0,
            parameter_scalars: 0,
            phases: Vec::new(),
        };
        for msg in trace {
            report.messages += 1;
            let scalars = msg.scalars();
            match msg.kind {
                PayloadKind::RepresentativeChannel => report.activation_scalars += scalars,
                PayloadKind::Parameter => report.parameter_scalars += scalars,
            }
            if let Some(stats) = phases.iter_mut().find(|s| s.phase == msg.phase) {
                stats.messages += 1;
                match msg.kind {
                    PayloadKind::RepresentativeChannel => stats.activation_scalars += scalars,
                    PayloadKind::Parameter => stats.parameter_scalars += scalars,
                }
            }
        }
        report.phases = phases;
        report
    }

    /// CSV schema: `phase,messages,activation_scalars,parameter_scalars`,
    /// one row per phase plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,messages,activation_scalars,parameter_scalars\n");
        for p in &self.phases {
            s.push_str(&format!(
                "{},{},{},{}\n",
                p.phase.name(),
                p.messages,
                p.activation_scalars,
                p.parameter_scalars
            ));
        }
        s.push_str(&format!(
            "total,{},{},{}\n",
            self.messages, self.activation_scalars, self.parameter_scalars
        ));
        s
    }

    pub fn from_csv(text: &str) -> Result<CommReport> {
        let mut phases = Vec::new();
        let mut total = None;
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!("bad report row: {line:?}")));
            }
            let parse = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Format(format!("bad count {s:?}")))
            };
            let (m, a, p) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
            if fields[0] == "total" {
                total = Some((m, a, p));
            } else {
                let phase = [
                    Phase::LocalForward,
                    Phase::Gather,
                    Phase::CoarseApply,
                    Phase::Combine,
                    Phase::BackwardCoarse,
                    Phase::ReduceScatter,
                    Phase::BackwardLocal,
                ]
                .into_iter()
                .find(|ph| ph.name() == fields[0])
                .ok_or_else(|| Error::Format(format!("unknown phase {:?}", fields[0])))?;
                phases.push(PhaseStats {
                    phase,
                    messages: m,
                    activation_scalars: a,
                    parameter_scalars: p,
                });
            }
        }
        let (messages, activation_scalars, parameter_scalars) =
            total.ok_or_else(|| Error::Format("report is missing the total row".into()))?;
        Ok(CommReport { messages, activation_scalars, parameter_scalars, phases })
    }
}

/// Split a two-level parameter set into per-worker shards. Requires
/// `d0 = d`, otherwise the combined kernel cannot exist.
pub fn shard_params(spec: &GroupSpec, params: &TwoLevelParams) -> Result<Vec<WorkerShard>> {
    if spec.d0 != spec.d {
        return Err(Error::config(format!(
            "sharding requires d0 = d for the combined kernel, got d={} d0={}",
            spec.d, spec.d0
        )));
    }
    params.validate(spec)?;
    let mut shards = Vec::with_capacity(spec.groups);
    for k in 0..spec.groups {
        shards.push(WorkerShard {
            group: k,
            combined: ConvKernel::stack_rows(&params.local[k], &params.coarse_restrict[k])?,
            coarse_mix: params.coarse_mix[k].clone(),
        });
    }
    Ok(shards)
}

/// Reassemble the full parameter set from the shards; exact inverse of
/// [`shard_params`].
pub fn unshard_params(spec: &GroupSpec, shards: &[WorkerShard]) -> Result<TwoLevelParams> {
    if shards.len() != spec.groups {
        return Err(Error::config(format!(
            "{} shards for {} groups",
            shards.len(),
            spec.groups
        )));
    }
    let mut local = Vec::with_capacity(spec.groups);
    let mut coarse_restrict = Vec::with_capacity(spec.groups);
    let mut coarse_mix = Vec::with_capacity(spec.groups);
    for (k, shard) in shards.iter().enumerate() {
        if shard.group != k {
            return Err(Error::config(format!("shard {k} carries group id {}", shard.group)));
        }
        let (a_k, r_k) = shard.combined.split_rows(spec.out_per_group())?;
        local.push(a_k);
        coarse_restrict.push(r_k);
        coarse_mix.push(shard.coarse_mix.clone());
    }
    let params = TwoLevelParams { local, coarse_restrict, coarse_mix };
    params.validate(spec)?;
    Ok(params)
}

/// One combined convolution on the worker's input slice, split into the
/// local output (`m/N` channels) and the representative channel.
pub fn worker_local_forward(shard: &WorkerShard, x_k: &Tensor) -> Result<(Tensor, Tensor)> {
    let out = conv2d(x_k, &shard.combined)?;
    let m_per = shard.combined.out_channels() - 1;
    let local = channel_slice(&out, 0..m_per)?;
    let representative = channel_slice(&out, m_per..m_per + 1)?;
    Ok((local, representative))
}

/// Per-worker gradient shard, mirroring [`WorkerShard`].
#[derive(Debug, Clone)]
pub struct WorkerGrads {
    pub d_combined: ConvKernel,
    pub d_coarse_mix: DenseMatrix,
}

#[derive(Debug, Clone, Default)]
struct WorkerState {
    input: Option<Tensor>,
    local_out: Option<Tensor>,
    representative: Option<Tensor>,
    gathered: Option<Tensor>,
    coarse_out: Option<Tensor>,
    output: Option<Tensor>,
}

/// `N` logical workers plus an in-process router with a recorded trace.
#[derive(Debug, Clone)]
pub struct Cluster {
    spec: GroupSpec,
    shards: Vec<WorkerShard>,
    grads: Vec<WorkerGrads>,
    state: Vec<WorkerState>,
    trace: Vec<Message>,
    // mailbox[receiver][sender] delivered in FIFO order per pair
    mailbox: Vec<Vec<Vec<Tensor>>>,
}

impl Cluster {
    pub fn new(spec: GroupSpec, params: &TwoLevelParams) -> Result<Cluster> {
        let shards = shard_params(&spec, params)?;
        let grads = shards
            .iter()
            .map(|s| {
                Ok(WorkerGrads {
                    d_combined: ConvKernel::zeros(
                        s.combined.out_channels(),
                        s.combined.in_channels(),
                        s.combined.size(),
                    )?,
                    d_coarse_mix: DenseMatrix::zeros(s.coarse_mix.rows(), s.coarse_mix.cols()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = spec.groups;
        Ok(Cluster {
            spec,
            shards,
            grads,
            state: vec![WorkerState::default(); n],
            trace: Vec::new(),
            mailbox: vec![vec![Vec::new(); n]; n],
        })
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn shards(&self) -> &[WorkerShard] {
        &self.shards
    }

    pub fn shards_mut(&mut self) -> &mut [WorkerShard] {
        &mut self.shards
    }

    pub fn grads(&self) -> &[WorkerGrads] {
        &self.grads
    }

    /// Visit every worker with mutable access to its shard and read access
    /// to its accumulated gradients; used for worker-local optimizer steps.
    pub fn for_each_worker_update(
        &mut self,
        mut f: impl FnMut(&mut WorkerShard, &WorkerGrads, usize),
    ) {
        for (k, (shard, grads)) in self.shards.iter_mut().zip(&self.grads).enumerate() {
            f(shard, grads, k);
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.d_combined.weights_mut().fill(0.0);
            g.d_coarse_mix.data_mut().fill(0.0);
        }
    }

    /// Messages recorded by the most recent forward or backward call.
    pub fn trace(&self) -> &[Message] {
        &self.trace
    }

    pub fn params(&self) -> Result<TwoLevelParams> {
        unshard_params(&self.spec, &self.shards)
    }

    fn send(&mut self, phase: Phase, sender: usize, receiver: usize, payload: Tensor) {
        self.mailbox[receiver][sender].push(payload.clone());
        let byte_size = std::mem::size_of_val(payload.data());
        self.trace.push(Message {
            phase,
            sender,
            receiver,
            kind: PayloadKind::RepresentativeChannel,
            payload,
            byte_size,
        });
    }

    fn recv(&mut self, receiver: usize, sender: usize) -> Result<Tensor> {
        if self.mailbox[receiver][sender].is_empty() {
            return Err(Error::protocol(format!(
                "worker {receiver} expected a message from worker {sender}"
            )));
        }
        Ok(self.mailbox[receiver][sender].remove(0))
    }

    fn check_order(&self, order: &[usize]) -> Result<()> {
        let n = self.spec.groups;
        let mut seen = vec![false; n];
        if order.len() != n {
            return Err(Error::config("worker order must list every worker once"));
        }
        for &w in order {
            if w >= n || seen[w] {
                return Err(Error::config("worker order must be a permutation"));
            }
            seen[w] = true;
        }
        Ok(())
    }

    /// Run a full layer forward with the default worker order.
    pub fn forward(&mut self, x: &Tensor) -> Result<(Tensor, CommReport)> {
        let order: Vec<usize> = (0..self.spec.groups).collect();
        self.forward_with_order(x, &order)
    }

    /// Run a full layer forward stepping the workers in `order` within each
    /// phase; the result does not depend on `order`.
    pub fn forward_with_order(&mut self, x: &Tensor, order: &[usize]) -> Result<(Tensor, CommReport)> {
        self.check_order(order)?;
        if x.channels() != self.spec.n {
            return Err(Error::config(format!(
                "cluster forward: input has {} channels, spec wants {}",
                x.channels(),
                self.spec.n
            )));
        }
        self.trace.clear();
        self.state = vec![WorkerState::default(); self.spec.groups];

        // Phase 1: each worker convolves its own group slice once.
        for &k in order {
            let x_k = channel_slice(x, self.spec.in_range(k))?;
            let (local, rep) = worker_local_forward(&self.shards[k], &x_k)?;
            let st = &mut self.state[k];
            st.input = Some(x_k);
            st.local_out = Some(local);
            st.representative = Some(rep);
        }

        // Phase 2: all-gather of the representative channels, modeled as
        // N(N-1) point-to-point messages.
        for &k in order {
            let rep = self.state[k]
                .representative
                .clone()
                .ok_or_else(|| Error::protocol(format!("worker {k} has no representative")))?;
            for r in 0..self.spec.groups {
                if r != k {
                    self.send(Phase::Gather, k, r, rep.clone());
                }
            }
        }
        for &k in order {
            let mut channels = Vec::with_capacity(self.spec.groups);
            for s in 0..self.spec.groups {
                if s == k {
                    channels.push(self.state[k].representative.clone().unwrap());
                } else {
                    channels.push(self.recv(k, s)?);
                }
            }
            self.state[k].gathered = Some(channel_concat(&channels)?);
        }

        // Phase 3: worker-local coarse mixing; no communication.
        for &k in order {
            let gathered = self.state[k]
                .gathered
                .clone()
                .ok_or_else(|| Error::protocol(format!("worker {k} ran coarse apply before gather")))?;
            self.state[k].coarse_out = Some(conv1x1(&gathered, &self.shards[k].coarse_mix)?);
        }

        // Phase 4: group term plus coarse term, the same fixed order the
        // serial operator uses.
        for &k in order {
            let st = &mut self.state[k];
            let local = st.local_out.clone().ok_or_else(|| Error::protocol("missing local output"))?;
            let coarse = st.coarse_out.clone().ok_or_else(|| Error::protocol("missing coarse output"))?;
            st.output = Some(local.add(&coarse)?);
        }

        let parts: Vec<Tensor> = (0..self.spec.groups)
            .map(|k| self.state[k].output.clone().unwrap())
            .collect();
        let y = channel_concat(&parts)?;
        let report = CommReport::from_trace(
            &self.trace,
            &[Phase::LocalForward, Phase::Gather, Phase::CoarseApply, Phase::Combine],
        );
        debug_assert_eq!(report.parameter_scalars, 0);
        Ok((y, report))
    }

    /// Backward pass for the most recent forward; accumulates into the
    /// per-worker gradient shards and returns the input gradient. The
    /// gradient of the gather is a reduce-scatter with the same message
    /// accounting.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<(Tensor, CommReport)> {
        let order: Vec<usize> = (0..self.spec.groups).collect();
        self.backward_with_order(upstream, &order)
    }

    pub fn backward_with_order(
        &mut self,
        upstream: &Tensor,
        order: &[usize],
    ) -> Result<(Tensor, CommReport)> {
        self.check_order(order)?;
        if upstream.channels() != self.spec.m {
            return Err(Error::config("cluster backward: upstream channel mismatch"));
        }
        self.trace.clear();
        let n = self.spec.groups;
        let m_per = self.spec.out_per_group();

        // Phase 1: worker-local coarse gradients.
        let mut d_gathered: Vec<Tensor> = Vec::with_capacity(n);
        let mut upstreams: Vec<Tensor> = Vec::with_capacity(n);
        for k in 0..n {
            let gathered = self.state[k]
                .gathered
                .clone()
                .ok_or_else(|| Error::protocol("backward called before forward"))?;
            let u_k = channel_slice(upstream, self.spec.out_range(k))?;
            let d_mix = conv1x1_vjp_weights(&gathered, &u_k)?;
            self.grads[k].d_coarse_mix.data_mut().iter_mut()
                .zip(d_mix.data())
                .for_each(|(g, d)| *g += d);
            d_gathered.push(conv1x1_vjp_input(&self.shards[k].coarse_mix, &u_k)?);
            upstreams.push(u_k);
        }

        // Phase 2: reduce-scatter; worker k needs the k-th channel of every
        // worker's coarse-input gradient, summed in ascending sender order.
        for &k in order {
            for r in 0..n {
                if r != k {
                    let chan = channel_slice(&d_gathered[k], r..r + 1)?;
                    self.send(Phase::ReduceScatter, k, r, chan);
                }
            }
        }
        let mut d_reps: Vec<Tensor> = Vec::with_capacity(n);
        for k in 0..n {
            let mut acc = Tensor::zeros(1, upstream.height(), upstream.width());
            for s in 0..n {
                let part = if s == k {
                    channel_slice(&d_gathered[k], k..k + 1)?
                } else {
                    self.recv(k, s)?
                };
                acc.add_assign(&part)?;
            }
            d_reps.push(acc);
        }

        // Phase 3: combined-kernel and input gradients, all local. The two
        // kernel rows are handled separately and the input gradients added
        // in group-then-coarse order, matching the serial path bit for bit.
        let mut d_input_parts = Vec::with_capacity(n);
        for k in 0..n {
            let x_k = self.state[k].input.clone().unwrap();
            let (a_k, r_k) = self.shards[k].combined.split_rows(m_per)?;
            let (d_x_a, d_a) = conv2d_vjp(&x_k, &a_k, &upstreams[k])?;
            let (d_x_r, d_r) = conv2d_vjp(&x_k, &r_k, &d_reps[k])?;
            let d_comb = ConvKernel::stack_rows(&d_a, &d_r)?;
            self.grads[k].d_combined.weights_mut().iter_mut()
                .zip(d_comb.weights())
                .for_each(|(g, d)| *g += d);
            d_input_parts.push(d_x_a.add(&d_x_r)?);
        }
        let d_input = channel_concat(&d_input_parts)?;
        let report = CommReport::from_trace(
            &self.trace,
            &[Phase::BackwardCoarse, Phase::ReduceScatter, Phase::BackwardLocal],
        );
        debug_assert_eq!(report.parameter_scalars, 0);
        Ok((d_input, report))
    }
}

/// Build a cluster, run one forward, and return the output with its
/// communication report.
pub fn forward_distributed(
    spec: &GroupSpec,
    params: &TwoLevelParams,
    x: &Tensor,
) -> Result<(Tensor, CommReport)> {
    let mut cluster = Cluster::new(*spec, params)?;
    cluster.forward(x)
}
