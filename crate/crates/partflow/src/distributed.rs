//! Per-node agents executing the ascent as a message-passing protocol in
//! synchronous rounds, with distributed termination detection.
//!
//! Within a round: agents share psi with arc neighbours (endpoints
//! additionally broadcast psi to all endpoints), compute their outgoing
//! flows, exchange flow values, endpoints recompute their cell masses from
//! the broadcast psi values and their static customer table, every agent
//! updates its dual variable, and convergence flags are exchanged. Message
//! delivery is a barrier between phases; an agent reads nothing but its own
//! state and its inbox.

use std::collections::BTreeMap;
use std::sync::Arc as StdArc;

use serde::Serialize;

use crate::ascent::{
    dual_value, reconstruct_primal, SolveReport, StepSchedule, Termination, TraceRecord,
};
use crate::costs::{arc_flow_minimizer, CostMatrix};
use crate::error::{Error, Result};
use crate::laguerre::assign_point;
use crate::model::{validate_scenario, Arc, ArcId, NodeId, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryPolicy {
    Synchronous,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    PsiShare(f64),
    FlowShare(ArcId, f64),
    EndpointPsiBroadcast(NodeId, f64),
    Converged(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub to: NodeId,
    pub message: Message,
}

/// Message totals for one round, by kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MessageCounts {
    pub psi_share: usize,
    pub flow_share: usize,
    pub endpoint_psi_broadcast: usize,
    pub converged: usize,
}

/// Per-round record assembled by the collector after the barrier.
#[derive(Debug, Clone, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub messages_delivered: usize,
    pub psi: Vec<f64>,
    pub g: Vec<f64>,
    pub counts: MessageCounts,
}

/// Orders round-k messages deterministically: by (sender, arc id, kind,
/// recipient), with non-arc messages sorting before flow shares of the same
/// sender. Messages tagged with a different round violate the synchronous
/// contract.
pub fn transport_deliver(
    mut envelopes: Vec<Envelope>,
    policy: DeliveryPolicy,
    round: usize,
) -> Result<Vec<Envelope>> {
    let DeliveryPolicy::Synchronous = policy;
    for e in &envelopes {
        if e.message.round != round {
            return Err(Error::TransportFault(format!(
                "message from {} tagged round {} delivered in round {round}",
                e.message.sender, e.message.round
            )));
        }
    }
    envelopes.sort_by_key(|e| {
        let (kind_rank, arc) = match e.message.kind {
            MessageKind::PsiShare(_) => (0usize, 0usize),
            MessageKind::EndpointPsiBroadcast(_, _) => (1, 0),
            MessageKind::FlowShare(arc, _) => (2, arc),
            MessageKind::Converged(_) => (3, 0),
        };
        (e.message.sender, arc, kind_rank, e.to)
    });
    Ok(envelopes)
}

/// Synchronous transport: buffers envelopes and delivers them all at the
/// phase barrier.
pub struct Transport {
    policy: DeliveryPolicy,
    outbox: Vec<Envelope>,
    n_agents: usize,
    pub delivered_total: usize,
    pub counts: MessageCounts,
}

impl Transport {
    pub fn new(n_agents: usize, policy: DeliveryPolicy) -> Self {
        Self {
            policy,
            outbox: Vec::new(),
            n_agents,
            delivered_total: 0,
            counts: MessageCounts::default(),
        }
    }

    pub fn send(&mut self, envelope: Envelope) {
        self.outbox.push(envelope);
    }

    pub fn send_all(&mut self, envelopes: Vec<Envelope>) {
        self.outbox.extend(envelopes);
    }

    /// Barrier: delivers everything buffered, sorted deterministically,
    /// into per-recipient mailboxes.
    pub fn deliver(&mut self, round: usize) -> Result<Vec<Vec<Message>>> {
        let envelopes = transport_deliver(std::mem::take(&mut self.outbox), self.policy, round)?;
        let mut mailboxes: Vec<Vec<Message>> = vec![Vec::new(); self.n_agents];
        for e in envelopes {
            match e.message.kind {
                MessageKind::PsiShare(_) => self.counts.psi_share += 1,
                MessageKind::FlowShare(_, _) => self.counts.flow_share += 1,
                MessageKind::EndpointPsiBroadcast(_, _) => {
                    self.counts.endpoint_psi_broadcast += 1
                }
                MessageKind::Converged(_) => self.counts.converged += 1,
            }
            self.delivered_total += 1;
            mailboxes[e.to].push(e.message);
        }
        Ok(mailboxes)
    }
}

/// Static, read-only data an agent is initialized with.
#[derive(Clone)]
pub struct AgentConfig {
    pub id: NodeId,
    pub supply: f64,
    pub is_endpoint: bool,
    pub out_arcs: Vec<Arc>,
    /// Incoming arc ids in adjacency order, with their tail nodes.
    pub in_arcs: Vec<(ArcId, NodeId)>,
    /// Arc-adjacent neighbour node ids (deduplicated, ascending).
    pub neighbours: Vec<NodeId>,
    /// All endpoint node ids (broadcast bookkeeping).
    pub endpoints: Vec<NodeId>,
    /// Endpoint agents hold the static customer cost table and masses.
    pub customers: Option<CustomerTable>,
    pub n_nodes: usize,
}

#[derive(Clone)]
pub struct CustomerTable {
    pub matrix: StdArc<CostMatrix>,
    pub masses: StdArc<Vec<f64>>,
}

/// Mutable per-agent state; owned by exactly one writer.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub psi: f64,
    pub psi_old: f64,
    pub out_flows: Vec<f64>,
    pub converged_flag: bool,
    pub neighbour_converged: BTreeMap<NodeId, bool>,
    pub last_g: f64,
    // round-scoped inbox-derived values
    head_psi: BTreeMap<NodeId, f64>,
    endpoint_psi: BTreeMap<NodeId, f64>,
}

pub struct Agent {
    pub config: AgentConfig,
    pub state: AgentState,
}

impl Agent {
    fn new(config: AgentConfig) -> Self {
        let neighbour_converged = config
            .neighbours
            .iter()
            .map(|&n| (n, false))
            .collect();
        let out_flows = vec![0.0; config.out_arcs.len()];
        Self {
            state: AgentState {
                psi: 0.0,
                psi_old: 0.0,
                out_flows,
                converged_flag: false,
                neighbour_converged,
                last_g: 0.0,
                head_psi: BTreeMap::new(),
                endpoint_psi: BTreeMap::new(),
            },
            config,
        }
    }

    /// Phase 1: share psi with tails of incoming arcs; endpoints broadcast
    /// to every endpoint (self included).
    fn emit_psi(&self, round: usize) -> Vec<Envelope> {
        let mut out = Vec::new();
        for &(_, tail) in &self.config.in_arcs {
            out.push(Envelope {
                to: tail,
                message: Message {
                    kind: MessageKind::PsiShare(self.state.psi),
                    sender: self.config.id,
                    round,
                },
            });
        }
        if self.config.is_endpoint {
            for &e in &self.config.endpoints {
                out.push(Envelope {
                    to: e,
                    message: Message {
                        kind: MessageKind::EndpointPsiBroadcast(self.config.id, self.state.psi),
                        sender: self.config.id,
                        round,
                    },
                });
            }
        }
        out
    }

    /// Phase 2: compute outgoing flows from own psi and the collected head
    /// psi values; share each flow with the arc head.
    fn compute_flows(&mut self, inbox: &[Message], round: usize) -> Result<Vec<Envelope>> {
        self.state.head_psi.clear();
        self.state.endpoint_psi.clear();
        for m in inbox {
            match m.kind {
                MessageKind::PsiShare(v) => {
                    self.state.head_psi.insert(m.sender, v);
                }
                MessageKind::EndpointPsiBroadcast(endpoint, v) => {
                    self.state.endpoint_psi.insert(endpoint, v);
                }
                _ => {}
            }
        }
        let mut out = Vec::new();
        for (slot, arc) in self.config.out_arcs.iter().enumerate() {
            let head_psi = *self.state.head_psi.get(&arc.head).ok_or_else(|| {
                Error::TransportFault(format!(
                    "agent {} missing psi of head {} in round {round}",
                    self.config.id, arc.head
                ))
            })?;
            let p = arc_flow_minimizer(arc, self.state.psi - head_psi)?;
            self.state.out_flows[slot] = p;
            out.push(Envelope {
                to: arc.head,
                message: Message {
                    kind: MessageKind::FlowShare(arc.id, p),
                    sender: self.config.id,
                    round,
                },
            });
        }
        Ok(out)
    }

    /// Phase 3: cell mass (endpoints only), supergradient component, dual
    /// update, convergence flag. Returns the flag envelopes for neighbours.
    fn update(
        &mut self,
        inbox: &[Message],
        schedule: &StepSchedule,
        k: usize,
        epsilon: f64,
        round: usize,
    ) -> Result<Vec<Envelope>> {
        let mut in_flows: BTreeMap<ArcId, f64> = BTreeMap::new();
        for m in inbox {
            if let MessageKind::FlowShare(arc, v) = m.kind {
                in_flows.insert(arc, v);
            }
        }

        // Same arithmetic sequence as the centralized supergradient:
        // supply, minus cell mass, minus outgoing flows in adjacency order,
        // plus incoming flows in adjacency order.
        let mut g = self.config.supply;
        if self.config.is_endpoint {
            g -= self.cell_mass(round)?;
        }
        for p in &self.state.out_flows {
            g -= p;
        }
        for &(arc, _) in &self.config.in_arcs {
            let v = *in_flows.get(&arc).ok_or_else(|| {
                Error::TransportFault(format!(
                    "agent {} missing flow of arc {arc} in round {round}",
                    self.config.id
                ))
            })?;
            g += v;
        }
        self.state.last_g = g;

        let gamma = schedule.gamma(k);
        self.state.psi_old = self.state.psi;
        self.state.psi += gamma * g;
        if !self.state.psi.is_finite() {
            return Err(Error::NonFinite {
                context: format!("agent {} dual update in round {round}", self.config.id),
            });
        }
        self.state.converged_flag = (self.state.psi - self.state.psi_old).abs() < epsilon;

        Ok(self
            .config
            .neighbours
            .iter()
            .map(|&n| Envelope {
                to: n,
                message: Message {
                    kind: MessageKind::Converged(self.state.converged_flag),
                    sender: self.config.id,
                    round,
                },
            })
            .collect())
    }

    /// Mass of this endpoint's Laguerre cell, computed from the broadcast
    /// endpoint psi values and the static customer table only.
    fn cell_mass(&self, round: usize) -> Result<f64> {
        let table = self
            .config
            .customers
            .as_ref()
            .expect("endpoint agents hold a customer table");
        let mut psi_by_node = vec![0.0; self.config.n_nodes];
        for &e in &self.config.endpoints {
            let v = *self.state.endpoint_psi.get(&e).ok_or_else(|| {
                Error::TransportFault(format!(
                    "agent {} missing broadcast psi of endpoint {e} in round {round}",
                    self.config.id
                ))
            })?;
            psi_by_node[e] = v;
        }
        let mut mass = 0.0;
        for (p, &m) in table.masses.iter().enumerate() {
            let (winner, _) = assign_point(&table.matrix, p, &psi_by_node)?;
            if winner == self.config.id {
                mass += m;
            }
        }
        Ok(mass)
    }

    fn observe_flags(&mut self, inbox: &[Message]) {
        for m in inbox {
            if let MessageKind::Converged(flag) = m.kind {
                self.state.neighbour_converged.insert(m.sender, flag);
            }
        }
    }

    /// Local termination: own change below epsilon and every neighbour's
    /// flag observed true.
    fn locally_done(&self) -> bool {
        self.state.converged_flag && self.state.neighbour_converged.values().all(|&f| f)
    }
}

/// Builds the agent set for a scenario. Endpoint agents share the immutable
/// customer cost table.
pub fn build_agents(scenario: &Scenario, matrix: &CostMatrix) -> Vec<Agent> {
    let net = &scenario.network;
    let endpoints = matrix.endpoints.clone();
    let shared = CustomerTable {
        matrix: StdArc::new(matrix.clone()),
        masses: StdArc::new(scenario.measure.masses.clone()),
    };
    net.nodes
        .iter()
        .map(|node| {
            let out_arcs: Vec<Arc> = net.outgoing[node.id]
                .iter()
                .map(|&a| net.arcs[a].clone())
                .collect();
            let in_arcs: Vec<(ArcId, NodeId)> = net.incoming[node.id]
                .iter()
                .map(|&a| (a, net.arcs[a].tail))
                .collect();
            let mut neighbours: Vec<NodeId> = out_arcs
                .iter()
                .map(|a| a.head)
                .chain(in_arcs.iter().map(|&(_, t)| t))
                .collect();
            neighbours.sort_unstable();
            neighbours.dedup();
            Agent::new(AgentConfig {
                id: node.id,
                supply: node.supply,
                is_endpoint: node.is_endpoint,
                out_arcs,
                in_arcs,
                neighbours,
                endpoints: endpoints.clone(),
                customers: node.is_endpoint.then(|| shared.clone()),
                n_nodes: net.node_count(),
            })
        })
        .collect()
}

/// One synchronous round, executing agents in the given order within each
/// phase. Results are order-independent (asserted by tests): agents only
/// interact through the transport.
pub fn run_round_ordered(
    agents: &mut [Agent],
    transport: &mut Transport,
    schedule: &StepSchedule,
    k: usize,
    epsilon: f64,
    order: &[usize],
) -> Result<RoundLog> {
    let round = k;
    transport.counts = MessageCounts::default();
    let before = transport.delivered_total;

    for &i in order {
        let envelopes = agents[i].emit_psi(round);
        transport.send_all(envelopes);
    }
    let mailboxes = transport.deliver(round)?;

    for &i in order {
        let envelopes = agents[i].compute_flows(&mailboxes[agents[i].config.id], round)?;
        transport.send_all(envelopes);
    }
    let flow_mail = transport.deliver(round)?;

    for &i in order {
        let envelopes = agents[i].update(
            &flow_mail[agents[i].config.id],
            schedule,
            k,
            epsilon,
            round,
        )?;
        transport.send_all(envelopes);
    }
    let flag_mail = transport.deliver(round)?;
    for &i in order {
        let id = agents[i].config.id;
        agents[i].observe_flags(&flag_mail[id]);
    }

    let mut psi = vec![0.0; agents.len()];
    let mut g = vec![0.0; agents.len()];
    for agent in agents.iter() {
        psi[agent.config.id] = agent.state.psi;
        g[agent.config.id] = agent.state.last_g;
    }
    Ok(RoundLog {
        round,
        messages_delivered: transport.delivered_total - before,
        psi,
        g,
        counts: transport.counts.clone(),
    })
}

pub fn run_round(
    agents: &mut [Agent],
    transport: &mut Transport,
    schedule: &StepSchedule,
    k: usize,
    epsilon: f64,
) -> Result<RoundLog> {
    let order: Vec<usize> = (0..agents.len()).collect();
    run_round_ordered(agents, transport, schedule, k, epsilon, &order)
}

const DIVERGENCE_GUARD: f64 = 1e12;

/// Runs the full protocol: synchronous rounds until every agent's local
/// change is below epsilon and every agent has observed converged flags from
/// all its neighbours, or the round cap. Then reconstructs the primal from
/// the assembled final psi.
pub fn run_protocol(
    scenario: &Scenario,
    schedule: &StepSchedule,
    epsilon: f64,
    max_rounds: usize,
) -> Result<(SolveReport, Vec<RoundLog>)> {
    let violations = validate_scenario(scenario);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let matrix = CostMatrix::build(scenario)?;
    for p in 0..scenario.measure.len() {
        if matrix.row(p).iter().all(|c| c.is_forbidden()) {
            return Err(Error::InfeasiblePoint { point: p });
        }
    }
    let mut agents = build_agents(scenario, &matrix);
    let mut transport = Transport::new(agents.len(), DeliveryPolicy::Synchronous);
    let mut logs: Vec<RoundLog> = Vec::new();
    let mut termination = Termination::MaxIterations;

    for k in 0..max_rounds {
        let log = match run_round(&mut agents, &mut transport, schedule, k, epsilon) {
            Ok(log) => log,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Divergence {
                    iteration: k,
                    trace: trace_from_logs(schedule, &logs),
                })
            }
            Err(e) => return Err(e),
        };
        let diverged = log.psi.iter().any(|&p| p.abs() > DIVERGENCE_GUARD);
        logs.push(log);
        if diverged {
            return Err(Error::Divergence {
                iteration: k,
                trace: trace_from_logs(schedule, &logs),
            });
        }
        if agents.iter().all(|a| a.locally_done()) {
            termination = Termination::EpsilonReached;
            break;
        }
    }

    let psi: Vec<f64> = {
        let mut psi = vec![0.0; agents.len()];
        for agent in &agents {
            psi[agent.config.id] = agent.state.psi;
        }
        psi
    };
    let (partition, flows, primal_value) = reconstruct_primal(scenario, &matrix, &psi)?;
    let dual = dual_value(scenario, &matrix, &psi)?;
    let report = SolveReport {
        psi_final: crate::model::DualState {
            psi,
            iteration: logs.len(),
        },
        flows,
        partition,
        dual_value: dual,
        primal_value,
        gap: primal_value - dual,
        trace: trace_from_logs(schedule, &logs),
        termination,
    };
    Ok((report, logs))
}

fn trace_from_logs(schedule: &StepSchedule, logs: &[RoundLog]) -> Vec<TraceRecord> {
    logs.iter()
        .map(|log| TraceRecord {
            k: log.round,
            gamma: schedule.gamma(log.round),
            max_abs_g: log.g.iter().fold(0.0_f64, |m, &v| m.max(v.abs())),
            dual_value: None,
        })
        .collect()
}

/// Round log export: JSON lines, one record per round.
pub fn write_round_log_jsonl<W: std::io::Write>(logs: &[RoundLog], mut out: W) -> Result<()> {
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        writeln!(out)?;
    }
    Ok(())
}
