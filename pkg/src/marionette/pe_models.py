"""Unit-level PE state machines for the three execution models.

These are the cycle-by-cycle building blocks of the array: the
decoupled-control PE (check/configure trigger phases, proactive senders),
the von Neumann PE driven by a centralized control unit (CCU), the
tagged-token dataflow PE, and the control-flow scheduler's arbiter.
Each is a small deterministic step function so its behavior can be
enumerated and tested in isolation; the trace engine in
:mod:`marionette.simulator` reproduces the same timing analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field


CHECK = "check"
CONFIGURE = "configure"
STEADY = "steady"


@dataclass
class Emission:
    kind: str          # 'control' | 'fault' | 'stall-producer' | 'ccu'
    target: object = None
    address: int | None = None
    cycle: int | None = None


@dataclass
class MarionettePEState:
    instructions: dict[int, object]       # address -> instruction
    trigger_phase: str = CHECK
    current_address: int | None = None
    pending_control: int | None = None    # depth-1 input buffer
    busy_until: int = 0                   # datapath busy horizon
    configured_at: int = -1


def step_marionette_pe(state: MarionettePEState, cycle: int,
                       control_in: int | None = None,
                       operands_ready: bool = True,
                       fu_latency: int = 1) -> list[Emission]:
    """One cycle of the control-flow trigger plus datapath.

    The check phase consumes a pending control address (the configuration
    phase then takes one cycle and may overlap another PE's compute);
    without fresh control the configuration is retained.  Compute
    proceeds independently of control arrival.  A second address arriving
    while one is already buffered stalls the producer; it is never lost.
    """
    out: list[Emission] = []
    if control_in is not None:
        if control_in not in state.instructions:
            out.append(Emission(kind="fault", address=control_in,
                                cycle=cycle))
            return out
        if state.pending_control is None:
            state.pending_control = control_in
        else:
            out.append(Emission(kind="stall-producer", address=control_in,
                                cycle=cycle))
    if state.trigger_phase == CONFIGURE:
        # configuration lasts exactly one cycle; the new address is live
        # from the next cycle on
        state.trigger_phase = STEADY
        state.configured_at = cycle
    elif state.pending_control is not None:
        state.current_address = state.pending_control
        state.pending_control = None
        state.trigger_phase = CONFIGURE
    else:
        state.trigger_phase = STEADY   # retain configuration
    if state.trigger_phase != CONFIGURE and operands_ready and \
            state.current_address is not None and cycle >= state.busy_until:
        state.busy_until = cycle + fu_latency
    return out


def sender_emit(mode: str, *, cycle: int, targets: list,
                addresses: dict, control_net_latency: int = 1,
                branch_taken: bool | None = None,
                loop_bound: int | None = None,
                ii: int = 1) -> list[Emission]:
    """Control messages produced by one PE's sender.

    dfg mode is proactive: the successor address leaves as soon as the
    sender's own configuration completes, ahead of the data result.
    branch mode waits for the compute outcome and emits only the chosen
    lane's address.  loop mode emits one iteration-start per II cycles
    for the (possibly FIFO-delivered) trip count.
    """
    out: list[Emission] = []
    if mode == "dfg-operator":
        for t in targets:
            out.append(Emission(kind="control", target=t,
                                address=addresses["next"],
                                cycle=cycle + control_net_latency))
    elif mode == "branch-operator":
        if branch_taken is None:
            raise ValueError("branch sender needs the resolved outcome")
        addr = addresses["taken" if branch_taken else "not-taken"]
        for t in targets:
            out.append(Emission(kind="control", target=t, address=addr,
                                cycle=cycle + control_net_latency))
    elif mode == "loop-operator":
        if loop_bound is None:
            raise ValueError("loop sender needs a trip count")
        for i in range(loop_bound):
            for t in targets:
                out.append(Emission(kind="control", target=t,
                                    address=addresses["start"],
                                    cycle=cycle + i * ii))
    else:
        raise ValueError(f"unknown sender mode {mode!r}")
    return out


# ---------------------------------------------------------------------------

@dataclass
class VonNeumannPEState:
    instr_buffer: list
    active_index: int = 0
    awaiting_ccu: bool = False


@dataclass
class CcuState:
    roundtrip: int
    busy_until: int = -1
    events: int = 0


def ccu_step(ccu: CcuState, cycle: int, branch_results: list,
             strategy: str = "switch-config") -> list[Emission]:
    """CCU reaction to resolved divergences (von Neumann model).

    Under switch-config every divergence costs a whole-array idle window
    of exactly ``roundtrip`` cycles before the target PEs' active index
    switches.  Predication pre-configures both lanes and never involves
    the CCU.
    """
    out: list[Emission] = []
    if strategy == "predication":
        return out
    for (pe_state, new_index) in branch_results:
        ccu.events += 1
        start = max(cycle, ccu.busy_until + 1)
        ccu.busy_until = start + ccu.roundtrip - 1
        pe_state.awaiting_ccu = True
        out.append(Emission(kind="ccu", target=pe_state, address=new_index,
                            cycle=start + ccu.roundtrip))
    return out


def ccu_commit(emission: Emission) -> None:
    pe_state: VonNeumannPEState = emission.target
    pe_state.active_index = emission.address
    pe_state.awaiting_ccu = False


# ---------------------------------------------------------------------------

@dataclass
class DataflowPEState:
    config_cache: dict[int, object]       # tag -> instruction
    token_queue: list = field(default_factory=list)
    configured_tag: int | None = None
    ready_at: int = 0


def step_dataflow_pe(state: DataflowPEState, cycle: int,
                     token: tuple[int, int] | None,
                     overhead: int = 1,
                     fu_latency: int = 1) -> list[Emission]:
    """Tagged-token execution: each firing is preceded by a tag-driven
    configure step of ``overhead`` cycles, so a single-PE dependence
    chain sustains II = 1 + overhead at best."""
    out: list[Emission] = []
    if token is not None:
        tag, _ = token
        if tag not in state.config_cache:
            out.append(Emission(kind="fault", address=tag, cycle=cycle))
            return out
        state.token_queue.append(token)
    if state.token_queue and cycle >= state.ready_at:
        tag, _ = state.token_queue.pop(0)
        state.configured_tag = tag
        state.ready_at = cycle + overhead + fu_latency
        out.append(Emission(kind="control", address=tag,
                            cycle=cycle + overhead))
    return out


# ---------------------------------------------------------------------------

@dataclass
class ControlFifo:
    depth: int
    entries: list[int] = field(default_factory=list)
    highwater: int = 0

    def push(self, address: int) -> bool:
        """False = full; the producer must stall, nothing is dropped."""
        if len(self.entries) >= self.depth:
            return False
        self.entries.append(address)
        self.highwater = max(self.highwater, len(self.entries))
        return True

    def pop(self) -> int | None:
        return self.entries.pop(0) if self.entries else None


def scheduler_arbitrate(candidates: list[tuple[int, int, object]]) -> object:
    """Pick one winner among (loop_depth, fifo_order, payload) candidates:
    highest loop depth first (inner pipelines keep streaming), earliest
    FIFO arrival on ties."""
    if not candidates:
        raise ValueError("arbiter needs at least one candidate")
    best = min(candidates, key=lambda c: (-c[0], c[1]))
    return best[2]
