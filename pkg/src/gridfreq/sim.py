"""Closed-loop time-domain simulation, equilibria, and Lyapunov monitoring.

The dynamic state consists of bus angles, generator frequencies,
generator internal states, and power commands.  Load-bus frequencies are
not states: they are recovered algebraically from the damping balance at
each load bus, which is why load damping must be positive.

Integration is classical fixed-step RK4.  The public right-hand side
(closed_loop_derivative) is assembled from the network/generation/control
modules and is the contract; integrate() runs a packed flat-array variant
of the same arithmetic for speed, and the test suite pins the two against
each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import control, generation, network
from .certify import Certificate
from .control import ControllerGains
from .generation import LtiGenerator
from .network import BusKind, PowerNetwork

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100

#: Allowed positive slack for the Lyapunov monitor: RK4 truncation error
#: accumulates in a quantity the theory only makes non-increasing.
EPSILON_V = 1e-8

#: Slack when comparing sample times against the disturbance time, so that
#: binary rounding of k*dt cannot shift the step by one sample.
_TIME_EPS = 1e-12


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one closed-loop run."""

    network: PowerNetwork
    generators: Mapping[int, LtiGenerator]
    controllers: Mapping[int, ControllerGains]
    disturbance_time: float
    step_loads: Mapping[int, float]
    t_end: float
    dt: float
    output_stride: int = 10
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.disturbance_time < self.t_end:
            raise ValueError("disturbance_time must lie before t_end")
        if self.output_stride < 1:
            raise ValueError("output_stride must be at least 1")
        gens = set(self.network.generator_ids)
        if set(self.generators) != gens or set(self.controllers) != gens:
            raise ValueError("generators and controllers must cover exactly the generator buses")


@dataclass(frozen=True)
class SystemState:
    """Full dynamic state at one instant (dict-keyed by bus id)."""

    angles: Mapping[int, float]
    gen_freqs: Mapping[int, float]
    gen_states: Mapping[int, Tuple[float, ...]]
    power_commands: Mapping[int, float]


@dataclass(frozen=True)
class Equilibrium:
    """Synchronous steady state after the load step.

    All frequencies are zero and every power command equals the common
    value nu.  security_ok records whether every line angle difference
    stays strictly inside (-pi/2, pi/2).
    """

    angles_star: Dict[int, float]
    nu: float
    gen_states_star: Dict[int, Tuple[float, ...]]
    p_m_star: Dict[int, float]
    flows_star: Dict[Tuple[int, int], float]
    security_ok: bool
    max_abs_angle_diff: float


@dataclass
class Trajectory:
    """Sampled run: raw states plus the derived per-bus/per-generator series."""

    times: List[float]
    states: List[SystemState]
    freqs: Dict[int, List[float]]
    p_m: Dict[int, List[float]]
    marginal_cost: Dict[int, List[float]]
    lyapunov: Optional[List[float]]


def load_bus_frequency(net: PowerNetwork, bus: int,
                       angles: Mapping[int, float], load: float = 0.0) -> float:
    """Algebraic frequency at a load bus: (-load + net inflow) / damping."""
    b = net.bus(bus)
    if b.kind is not BusKind.LOAD:
        raise ValueError(f"bus {bus} is not a load bus")
    if not b.damping > 0.0:
        raise ValueError(f"load bus {bus} has nonpositive damping")
    return (-load + network.net_injection(net, bus, angles)) / b.damping


def _active_loads(scn: Scenario, t: float) -> Dict[int, float]:
    if t >= scn.disturbance_time - _TIME_EPS:
        return dict(scn.step_loads)
    return {}


def closed_loop_derivative(scn: Scenario, state: SystemState, t: float) -> SystemState:
    """Time derivative of the full closed loop at time t.

    Returned as a SystemState whose fields hold the derivatives of the
    corresponding state fields (load-bus angle slots carry the algebraic
    frequency).  Loads are zero before the disturbance time and equal to
    the step values after.
    """
    net = scn.network
    loads = _active_loads(scn, t)
    angles = state.angles

    d_angles: Dict[int, float] = {}
    d_freqs: Dict[int, float] = {}
    d_states: Dict[int, Tuple[float, ...]] = {}
    d_cmds: Dict[int, float] = {}

    neighbor_map: Dict[int, List[Tuple[float, float]]] = {g: [] for g in net.generator_ids}
    for e in net.comm:
        neighbor_map[e.a].append((e.weight, state.power_commands[e.b]))
        neighbor_map[e.b].append((e.weight, state.power_commands[e.a]))

    for b in net.buses:
        if b.kind is BusKind.GENERATOR:
            gen = scn.generators[b.id]
            params = scn.controllers[b.id]
            omega = state.gen_freqs[b.id]
            xm = state.gen_states[b.id]
            if len(xm) != gen.order:
                raise ValueError(f"generator {b.id} state has wrong dimension")
            pc = state.power_commands[b.id]
            u = control.control_input(params, pc, omega)
            p_m = generation.output(gen, xm, u)
            inj = network.net_injection(net, b.id, angles)
            d_angles[b.id] = omega
            d_freqs[b.id] = (p_m - loads.get(b.id, 0.0) - b.damping * omega + inj) / b.inertia
            d_states[b.id] = generation.derivative(gen, xm, u)
            d_cmds[b.id] = control.command_derivative(
                params, p_m, u, generation.dc_gain(gen), omega, pc,
                neighbor_map[b.id])
        else:
            d_angles[b.id] = load_bus_frequency(net, b.id, angles,
                                               loads.get(b.id, 0.0))
    return SystemState(angles=d_angles, gen_freqs=d_freqs,
                       gen_states=d_states, power_commands=d_cmds)


# --- packed fast path -------------------------------------------------------

class _Packed:
    """Index layout and precomputed tables for the flat-list integrator."""

    def __init__(self, scn: Scenario):
        net = scn.network
        self.bus_ids = sorted(b.id for b in net.buses)
        self.gen_ids = sorted(net.generator_ids)
        self.load_ids = sorted(net.load_ids)
        nbus = len(self.bus_ids)

        self.i_omega = {g: nbus + i for i, g in enumerate(self.gen_ids)}
        off = nbus + len(self.gen_ids)
        self.i_xm = {}
        for g in self.gen_ids:
            n = scn.generators[g].order
            self.i_xm[g] = (off, n)
            off += n
        self.i_pc = {g: off + i for i, g in enumerate(self.gen_ids)}
        self.size = off + len(self.gen_ids)

        self.lines = [(ln.from_bus, ln.to_bus, ln.susceptance) for ln in net.lines]
        self.load_info = []
        for lid in self.load_ids:
            b = net.bus(lid)
            self.load_info.append((lid, 1.0 / b.damping, scn.step_loads.get(lid, 0.0)))
        self.gen_info = []
        for g in self.gen_ids:
            b = net.bus(g)
            gen = scn.generators[g]
            prm = scn.controllers[g]
            self.gen_info.append((
                g, self.i_omega[g], self.i_xm[g][0], gen.order, self.i_pc[g],
                1.0 / b.inertia, b.damping, scn.step_loads.get(g, 0.0),
                tuple(tuple(r) for r in gen.a_matrix), tuple(gen.b_vector),
                tuple(gen.c_vector), gen.d_scalar, generation.dc_gain(gen),
                prm.k_c, prm.k_d, prm.k_f, 1.0 / prm.gamma,
            ))
        self.comm_info = [(self.i_pc[e.a], self.i_pc[e.b], e.weight)
                          for e in net.comm]

    def pack(self, state: SystemState) -> List[float]:
        x = [0.0] * self.size
        for bid in self.bus_ids:
            x[bid] = state.angles[bid]
        for g in self.gen_ids:
            x[self.i_omega[g]] = state.gen_freqs[g]
            start, n = self.i_xm[g]
            xm = state.gen_states[g]
            for i in range(n):
                x[start + i] = xm[i]
            x[self.i_pc[g]] = state.power_commands[g]
        return x

    def unpack(self, x: Sequence[float]) -> SystemState:
        angles = {bid: x[bid] for bid in self.bus_ids}
        freqs = {g: x[self.i_omega[g]] for g in self.gen_ids}
        states = {g: tuple(x[self.i_xm[g][0]:self.i_xm[g][0] + self.i_xm[g][1]])
                  for g in self.gen_ids}
        cmds = {g: x[self.i_pc[g]] for g in self.gen_ids}
        return SystemState(angles=angles, gen_freqs=freqs, gen_states=states,
                           power_commands=cmds)

    def label(self, idx: int) -> str:
        if idx < len(self.bus_ids):
            return f"theta_{idx}"
        for g in self.gen_ids:
            if idx == self.i_omega[g]:
                return f"omega_{g}"
            start, n = self.i_xm[g]
            if start <= idx < start + n:
                return f"x_{g}[{idx - start}]"
            if idx == self.i_pc[g]:
                return f"pc_{g}"
        return f"state[{idx}]"

    def rhs(self, x: Sequence[float], loaded: bool) -> List[float]:
        sin = math.sin
        dx = [0.0] * self.size
        inj = [0.0] * len(self.bus_ids)
        for i, k, b in self.lines:
            f = b * sin(x[i] - x[k])
            inj[i] -= f
            inj[k] += f
        for bid, inv_lam, step in self.load_info:
            pl = step if loaded else 0.0
            dx[bid] = (-pl + inj[bid]) * inv_lam
        for (g, iom, x0, n, ipc, inv_m, lam, step, a_rows, b_vec, c_vec, d,
             k_gain, k_c, k_d, k_f, inv_gamma) in self.gen_info:
            w = x[iom]
            dx[g] = w
            pc = x[ipc]
            u = k_c * pc - k_d * w
            p_m = d * u
            for i in range(n):
                row = a_rows[i]
                acc = b_vec[i] * u
                for j in range(n):
                    acc += row[j] * x[x0 + j]
                dx[x0 + i] = acc
                p_m += c_vec[i] * x[x0 + i]
            pl = step if loaded else 0.0
            dx[iom] = (p_m - pl - lam * w + inj[g]) * inv_m
            dx[ipc] = p_m - k_gain * u - k_f * w
        for pi, pj, alpha in self.comm_info:
            v = alpha * (x[pj] - x[pi])
            dx[pi] += v
            dx[pj] -= v
        for info in self.gen_info:
            dx[info[4]] *= info[16]
        return dx


def zero_state(scn: Scenario) -> SystemState:
    """The pre-disturbance rest state: all angles, frequencies, generator
    states and commands zero."""
    return SystemState(
        angles={b.id: 0.0 for b in scn.network.buses},
        gen_freqs={g: 0.0 for g in scn.network.generator_ids},
        gen_states={g: (0.0,) * scn.generators[g].order
                    for g in scn.network.generator_ids},
        power_commands={g: 0.0 for g in scn.network.generator_ids},
    )


def integrate(scn: Scenario, *, initial_state: Optional[SystemState] = None,
              certs: Optional[Mapping[int, Certificate]] = None,
              equilibrium: Optional[Equilibrium] = None) -> Trajectory:
    """Fixed-step RK4 run over [0, t_end].

    Records the state every output_stride steps (plus the initial state)
    together with the derived series.  The Lyapunov series is filled only
    when both certificates and an equilibrium are supplied.  Bitwise
    reproducible: no randomness, fixed iteration order.
    """
    packed = _Packed(scn)
    dt = scn.dt
    nsteps = int(round(scn.t_end / dt))
    if abs(nsteps * dt - scn.t_end) > 1e-9 * max(1.0, abs(scn.t_end)):
        raise ValueError("t_end must be an integer multiple of dt")

    x = packed.pack(initial_state if initial_state is not None else zero_state(scn))
    with_v = certs is not None and equilibrium is not None

    times: List[float] = []
    states: List[SystemState] = []
    freqs: Dict[int, List[float]] = {b.id: [] for b in scn.network.buses}
    p_m: Dict[int, List[float]] = {g: [] for g in packed.gen_ids}
    mc: Dict[int, List[float]] = {g: [] for g in packed.gen_ids}
    lyap: Optional[List[float]] = [] if with_v else None

    def record(t: float, xvec: Sequence[float]):
        for idx, v in enumerate(xvec):
            if not math.isfinite(v):
                raise ArithmeticError(
                    f"non-finite value in {packed.label(idx)} at t={t}")
        st = packed.unpack(xvec)
        times.append(t)
        states.append(st)
        loads = _active_loads(scn, t)
        for g in packed.gen_ids:
            freqs[g].append(st.gen_freqs[g])
        for lid in packed.load_ids:
            freqs[lid].append(load_bus_frequency(scn.network, lid, st.angles,
                                                 loads.get(lid, 0.0)))
        for g in packed.gen_ids:
            prm = scn.controllers[g]
            u = control.control_input(prm, st.power_commands[g], st.gen_freqs[g])
            out = generation.output(scn.generators[g], st.gen_states[g], u)
            p_m[g].append(out)
            mc[g].append(prm.q * out)
        if with_v:
            lyap.append(lyapunov_value(scn, certs, equilibrium, st))

    record(0.0, x)
    rhs = packed.rhs
    stride = scn.output_stride
    half = dt / 2.0
    sixth = dt / 6.0
    for k in range(nsteps):
        t = k * dt
        loaded = t >= scn.disturbance_time - _TIME_EPS
        try:
            k1 = rhs(x, loaded)
            k2 = rhs([xi + half * di for xi, di in zip(x, k1)], loaded)
            k3 = rhs([xi + half * di for xi, di in zip(x, k2)], loaded)
            k4 = rhs([xi + dt * di for xi, di in zip(x, k3)], loaded)
        except (ValueError, OverflowError) as exc:
            # a diverging state can hit sin(inf) mid-step, before the next
            # recorded sample would flag it
            raise ArithmeticError(
                f"non-finite value during integration step at t={t}") from exc
        x = [xi + sixth * (a + 2.0 * b + 2.0 * c + d)
             for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]
        if (k + 1) % stride == 0:
            record((k + 1) * dt, x)
    if nsteps % stride != 0:
        record(nsteps * dt, x)
    return Trajectory(times=times, states=states, freqs=freqs, p_m=p_m,
                      marginal_cost=mc, lyapunov=lyap)


def compute_equilibrium(scn: Scenario) -> Equilibrium:
    """Post-step synchronous equilibrium.

    nu = total load / sum_j K_j k_c_j; each generator settles at
    p_m = K k_c nu; the angles solve the lossless flow balance by damped
    Newton iteration with bus 0 pinned as the angle reference.
    """
    net = scn.network
    gens = sorted(net.generator_ids)
    k_eff = {g: generation.dc_gain(scn.generators[g]) * scn.controllers[g].k_c
             for g in gens}
    total_load = sum(scn.step_loads.values())
    nu = total_load / sum(k_eff.values())
    p_m_star = {g: k_eff[g] * nu for g in gens}
    gen_states_star = {
        g: generation.equilibrium_state(scn.generators[g],
                                        scn.controllers[g].k_c * nu)
        for g in gens
    }

    # Power that each bus must push into the network at equilibrium.
    bus_ids = sorted(b.id for b in net.buses)
    nbus = len(bus_ids)
    target = np.zeros(nbus)
    for g in gens:
        target[g] = p_m_star[g] - scn.step_loads.get(g, 0.0)
    for lid in net.load_ids:
        target[lid] = -scn.step_loads.get(lid, 0.0)

    lines = [(ln.from_bus, ln.to_bus, ln.susceptance) for ln in net.lines]

    def residual(theta: np.ndarray) -> np.ndarray:
        r = target.copy()
        for i, k, b in lines:
            f = b * math.sin(theta[i] - theta[k])
            r[i] -= f
            r[k] += f
        return r

    theta = np.zeros(nbus)
    r = residual(theta)
    for _ in range(NEWTON_MAX_ITER):
        if float(np.max(np.abs(r))) < NEWTON_TOL or nbus == 1:
            break
        jac = np.zeros((nbus, nbus))
        for i, k, b in lines:
            c = b * math.cos(theta[i] - theta[k])
            jac[i, i] -= c
            jac[k, k] -= c
            jac[i, k] += c
            jac[k, i] += c
        try:
            step = np.linalg.solve(jac[1:, 1:], r[1:])
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                "equilibrium Newton hit a singular Jacobian; "
                "try smaller loads or larger susceptances") from exc
        alpha = 1.0
        best = float(np.max(np.abs(r)))
        while alpha > 1e-6:
            cand = theta.copy()
            cand[1:] -= alpha * step
            rc = residual(cand)
            if float(np.max(np.abs(rc))) < best:
                theta, r = cand, rc
                break
            alpha /= 2.0
        else:
            raise RuntimeError(
                "equilibrium Newton stalled; "
                "try smaller loads or larger susceptances")
    if float(np.max(np.abs(r))) >= NEWTON_TOL:
        raise RuntimeError(
            f"equilibrium Newton did not converge in {NEWTON_MAX_ITER} "
            "iterations; try smaller loads or larger susceptances")

    angles_star = {bid: float(theta[bid]) for bid in bus_ids}
    flows_star = {}
    max_eta = 0.0
    for ln in net.lines:
        eta = angles_star[ln.from_bus] - angles_star[ln.to_bus]
        flows_star[(ln.from_bus, ln.to_bus)] = network.line_power(eta, ln.susceptance)
        max_eta = max(max_eta, abs(eta))
    return Equilibrium(
        angles_star=angles_star,
        nu=nu,
        gen_states_star=gen_states_star,
        p_m_star=p_m_star,
        flows_star=flows_star,
        security_ok=max_eta < math.pi / 2.0,
        max_abs_angle_diff=max_eta,
    )


def equilibrium_system_state(scn: Scenario, eq: Equilibrium) -> SystemState:
    """The equilibrium expressed as a full SystemState (frequencies zero,
    commands at nu)."""
    return SystemState(
        angles=dict(eq.angles_star),
        gen_freqs={g: 0.0 for g in scn.network.generator_ids},
        gen_states={g: tuple(eq.gen_states_star[g])
                    for g in scn.network.generator_ids},
        power_commands={g: eq.nu for g in scn.network.generator_ids},
    )


def lyapunov_value(scn: Scenario, certs: Mapping[int, Certificate],
                   eq: Equilibrium, state: SystemState) -> float:
    """Energy-style distance of a state from the equilibrium.

    Sum of a kinetic term over generator frequencies, a line potential
    term evaluated in closed form, certificate-weighted quadratic terms on
    generator internal states, and a quadratic term on the power
    commands.  Zero exactly at the equilibrium, positive nearby while the
    security constraint holds.
    """
    net = scn.network
    v = 0.0
    for g in net.generator_ids:
        if g not in certs:
            raise ValueError(f"missing certificate for generator bus {g}")
        b = net.bus(g)
        w = state.gen_freqs[g]
        v += 0.5 * b.inertia * w * w
    for ln in net.lines:
        eta = state.angles[ln.from_bus] - state.angles[ln.to_bus]
        eta_s = eq.angles_star[ln.from_bus] - eq.angles_star[ln.to_bus]
        v += ln.susceptance * ((math.cos(eta_s) - math.cos(eta))
                               - math.sin(eta_s) * (eta - eta_s))
    for g in net.generator_ids:
        p = certs[g].p_matrix
        xs = eq.gen_states_star[g]
        x = state.gen_states[g]
        d = [x[i] - xs[i] for i in range(len(xs))]
        acc = 0.0
        for i in range(len(d)):
            for j in range(len(d)):
                acc += d[i] * p.entry(i, j) * d[j]
        v += 0.5 * acc
    for g in net.generator_ids:
        dpc = state.power_commands[g] - eq.nu
        v += 0.5 * scn.controllers[g].gamma * dpc * dpc
    return v


def dissipation_check(scn: Scenario, certs: Mapping[int, Certificate],
                      eq: Equilibrium, trajectory: Trajectory) -> float:
    """Largest increase of the Lyapunov value between consecutive samples.

    Theory predicts no increase at all along converging trajectories;
    numerically anything at or below EPSILON_V counts as clean.
    """
    values = [lyapunov_value(scn, certs, eq, st) for st in trajectory.states]
    if len(values) < 2:
        return 0.0
    return max(b - a for a, b in zip(values, values[1:]))
