"""Per-qubit software calibration and single-qubit gate decomposition.

Calibration simulates the *shared* (nominal-design) bitstreams on each
qubit's actual, drifted frequency, producing the per-qubit basis
operations the compiler then decomposes against.  Two decomposition
styles are supported:

*opt*  -- the continuous set {Ry(pi/2), Rz(grid)}: a gate becomes up to
          three applications of the shared bitstream, each preceded by a
          programmable delay of d in [0, n_max] clock cycles.  Idling d
          cycles tilts the subsequent pulses' rotation axis by the grid
          phase phi_d, so a gate with bitstream applications at absolute
          clock times t_1..t_L realizes (on the computational block, the
          level structure being carried exactly in six dimensions)

              P(theta_L) @ [P U6 K(t_L-t_{L-1}) ... K(t_2-t_1) U6 P] @ P(-theta_1)

          with P(x) = diag(1, e^{ix}), theta_i the qubit phase at t_i and
          K(dt) the free-evolution diagonal.  The leading phase is set by
          the first delay; the trailing phase is a *virtual* z the
          compiler folds into the qubit's next gate.

*min*  -- a discrete stored-gate set applied one per controller cycle.
          Composing consecutive cycles inserts a fixed frame factor
          D = exp(-i*H0*T_cycle), so the per-cycle *step* operators are
          D @ B_j and the all-zeros stream's step is a fixed z-phase
          (the T-like gate: at 6.21286 GHz / 253 cycles the step angle
          is 0.7908 rad, within 0.006 of pi/4 -- and it drifts with the
          qubit, which is what makes outlier qubits possible).  Words
          over the step alphabet are searched exhaustively in order of
          depth; stored streams are designed against D^dag-compensated
          targets so their steps equal the advertised gates at zero
          drift.

Both searches score with the qubit's exact six-level operators: leakage
accumulates through the sequence and is projected once at the end.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from sfqctrl.bitstream import (
    Bitstream,
    DelaySet,
    DEFAULT_N_MAX,
    delay_set,
    design_bitstream,
    gate_length_cycles,
)
from sfqctrl.transmon import (
    TransmonSpec,
    level_energies,
    phase_gate,
    projected_fidelity,
    ry,
    rz,
    unitarity_defect,
)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Decomposition1Q:
    """One realization of a single-qubit gate on calibrated hardware.

    ``steps`` holds the delays d_1..d_L for the opt architecture (one per
    bitstream application, L <= 3) or per-cycle basis-gate indices for
    min (idle steps included).  ``residual_phase`` is the trailing
    virtual z the compiler folds into the qubit's next gate; ``err`` the
    six-level projected average-gate-fidelity error of the realized
    sequence; ``flagged`` marks best-effort results that missed the
    requested budget.
    """

    kind: str
    steps: tuple[int, ...]
    residual_phase: float
    err: float
    flagged: bool = False

    @property
    def n_pulses(self) -> int:
        return len(self.steps)

    @property
    def depth(self) -> int:
        return len(self.steps)


@dataclass
class QubitCalibration:
    """Actual basis operations realized on one qubit by the shared bitstreams."""

    qubit_id: int
    spec: TransmonSpec
    arch: str
    bitstreams: list[Bitstream]
    basis_ops: list[np.ndarray]
    delay_set: DelaySet
    controller_cycle_sfq: int
    clock_period: float
    idle_index: int | None = None
    _opt_engine: object = field(default=None, repr=False)
    _min_engine: object = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def u_bs(self) -> np.ndarray:
        return self.basis_ops[0]

    @property
    def cycle_time(self) -> float:
        return self.controller_cycle_sfq * self.clock_period

    @property
    def cycle_phase(self) -> float:
        """Frame advance per controller cycle: 2*pi*f_actual*T_cycle mod 2*pi."""
        return float(np.mod(2.0 * np.pi * self.spec.actual_freq * self.cycle_time,
                            2.0 * np.pi))

    def opt_engine(self) -> "_OptEngine":
        if self._opt_engine is None:
            self._opt_engine = _OptEngine(self)
        return self._opt_engine

    def min_engine(self) -> "_MinEngine":
        if self._min_engine is None:
            self._min_engine = _MinEngine(self)
        return self._min_engine

    def cache_get(self, key):
        return self._cache.get(key)

    def cache_put(self, key, value):
        with self._lock:
            self._cache[key] = value


def calibrate_qubit(
    spec: TransmonSpec,
    shared_bitstreams: Sequence[Bitstream],
    qubit_id: int = 0,
    arch: str = "opt",
    n_max: int = DEFAULT_N_MAX,
) -> QubitCalibration:
    """Simulate the shared bitstreams on ``spec``'s actual frequency.

    The bitstreams are the nominal-design ones (SIMD premise: every qubit
    of a group receives the same streams); drift enters only through the
    qubit's own free evolution.  For the opt architecture the controller
    cycle spans the delay range plus the stream; for min it equals the
    stream length.
    """
    if not shared_bitstreams:
        raise CalibrationError("at least one shared bitstream is required")
    ops = []
    for bs in shared_bitstreams:
        u = bs.simulate(spec)
        if unitarity_defect(u) > 1e-8:
            raise CalibrationError("bitstream evolution lost unitarity")
        ops.append(u)
    stream_len = len(shared_bitstreams[0])
    if arch == "opt":
        cycle = (n_max + 1) + stream_len
    elif arch == "min":
        cycle = stream_len
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    idle = None
    for i, bs in enumerate(shared_bitstreams):
        if bs.n_pulses == 0:
            idle = i
            break
    return QubitCalibration(
        qubit_id=qubit_id,
        spec=spec,
        arch=arch,
        bitstreams=list(shared_bitstreams),
        basis_ops=ops,
        delay_set=delay_set(spec, n_max, shared_bitstreams[0].clock_period),
        controller_cycle_sfq=cycle,
        clock_period=shared_bitstreams[0].clock_period,
        idle_index=idle,
    )


def min_basis_targets(cycle_phase: float, bs: int) -> list[np.ndarray | None]:
    """Design targets for the min architecture's stored bitstreams.

    The per-cycle step operator is D @ B with D = exp(-i*H0*T_cycle), so
    each stream is designed against D^dag @ (wanted step gate); ``None``
    marks the all-zeros (idle) stream whose step is the fixed phase gate.

    BS=2 gives {Ry(pi/2), idle}; BS=3/4 add x-axis and inverse-y quarter
    turns.  A stored pi rotation does not fit one controller cycle at the
    calibrated tip angle, and a second pure-phase stream would duplicate
    the idle step, so the advertised {Ry(pi/2), T, X, Tdg} set is not
    realizable as stored streams.
    """
    comp = phase_gate(cycle_phase)  # D^dag on the computational block
    quarter = {
        0.0: ry(np.pi / 2),
        np.pi / 2: rz(np.pi / 2) @ ry(np.pi / 2) @ rz(-np.pi / 2),
        np.pi: ry(-np.pi / 2),
    }
    if bs == 2:
        axes = [0.0]
    elif bs == 3:
        axes = [0.0, np.pi / 2]
    elif bs == 4:
        axes = [0.0, np.pi / 2, np.pi]
    else:
        raise ValueError("min architecture supports BS in {2, 3, 4}")
    return [comp @ quarter[a] for a in axes] + [None]


def design_min_bitstreams(spec: TransmonSpec, bs: int = 2, max_len: int = 300,
                          err_target: float = 1e-4) -> list[Bitstream]:
    """Design the BS stored streams for a min-architecture group."""
    n_cycles = gate_length_cycles(spec.nominal_freq, max_len)
    cycle_phase = float(np.mod(2 * np.pi * spec.nominal_freq * n_cycles * 40e-12,
                               2 * np.pi))
    streams = []
    for target in min_basis_targets(cycle_phase, bs):
        if target is None:
            streams.append(Bitstream(bits=tuple([0] * n_cycles), tip_angle=0.0))
        else:
            streams.append(design_bitstream(
                spec, target, max_len=max_len, err_target=err_target,
                window_centres=(0.0, np.pi / 2, np.pi, -np.pi / 2),
            ))
    return streams


# --- scoring core ---------------------------------------------------------------

def _score_free_trailing(e_core: np.ndarray, z_lead: np.ndarray, v: np.ndarray):
    """Gate error with an optimally chosen trailing virtual z.

    ``e_core``: (M, 2, 2) projected candidate blocks (before the leading
    phase); ``z_lead``: (K,) unit phases applied to column 1.  Returns an
    (M, K) error matrix.
    """
    norm2 = np.sum(np.abs(e_core) ** 2, axis=(1, 2)).real
    a0 = e_core[:, 0, 0] * np.conj(v[0, 0])
    a1 = e_core[:, 0, 1] * np.conj(v[0, 1])
    b0 = e_core[:, 1, 0] * np.conj(v[1, 0])
    b1 = e_core[:, 1, 1] * np.conj(v[1, 1])
    mag = (np.abs(a0[:, None] + a1[:, None] * z_lead[None, :])
           + np.abs(b0[:, None] + b1[:, None] * z_lead[None, :]))
    return 1.0 - (norm2[:, None] + mag ** 2) / 6.0


def _trailing_phase(e: np.ndarray, v: np.ndarray) -> float:
    """Optimal trailing virtual-z angle for a single 2x2 candidate."""
    a = e[0, 0] * np.conj(v[0, 0]) + e[0, 1] * np.conj(v[0, 1])
    b = e[1, 0] * np.conj(v[1, 0]) + e[1, 1] * np.conj(v[1, 1])
    return float(np.angle(a) - np.angle(b))


def _exact_err_free_trailing(e: np.ndarray, v: np.ndarray) -> float:
    a = e[0, 0] * np.conj(v[0, 0]) + e[0, 1] * np.conj(v[0, 1])
    b = e[1, 0] * np.conj(v[1, 0]) + e[1, 1] * np.conj(v[1, 1])
    norm2 = float(np.sum(np.abs(e) ** 2))
    return 1.0 - (norm2 + (abs(a) + abs(b)) ** 2) / 6.0


def _exact_err_fixed(e: np.ndarray, v: np.ndarray) -> float:
    return float(1.0 - (np.sum(np.abs(e) ** 2)
                        + abs(np.trace(v.conj().T @ e)) ** 2) / 6.0)


# --- opt engine -------------------------------------------------------------------

class _OptEngine:
    """Vectorized delay-tuple search over one qubit's u_bs tables."""

    def __init__(self, cal: QubitCalibration):
        self.cal = cal
        spec = cal.spec
        self.n_max = cal.delay_set.n_max
        self.cycle = cal.controller_cycle_sfq
        self.e_tau = level_energies(spec.actual_freq, spec.anharmonicity,
                                    spec.levels) * cal.clock_period
        self.phi1 = float(self.e_tau[1])  # two-level phase per SFQ cycle
        self.cycle_phi = float(np.mod(self.phi1 * self.cycle, 2 * np.pi))
        self.u6 = cal.u_bs
        self.pu = np.ascontiguousarray(self.u6[:2, :])
        self.phi_d = np.mod(self.phi1 * np.arange(self.n_max + 1), 2 * np.pi)
        self.deltas = np.arange(-self.n_max, self.n_max + 1)
        self._t2: dict[int, np.ndarray] = {}

    def k_diag(self, sfq_cycles) -> np.ndarray:
        """Free-evolution diagonals exp(-i*e_tau*n) for integer cycle counts."""
        return np.exp(-1j * np.asarray(sfq_cycles, dtype=float)[..., None]
                      * self.e_tau[None, :])

    def t2_rows(self, m: int = 1) -> np.ndarray:
        """P @ U6 @ K(m*cycle + delta) @ U6 over all deltas: (511, 2, 6)."""
        if m not in self._t2:
            k = self.k_diag(m * self.cycle + self.deltas)
            self._t2[m] = np.einsum("ij,dj,jk->dik", self.pu, k, self.u6,
                                    optimize=True)
        return self._t2[m]

    def lead_z(self, fold: float) -> np.ndarray:
        """Column phases e^{-i(fold + phi_d)} over the delay grid."""
        return np.exp(-1j * (fold + self.phi_d))

    def err_l0(self, v: np.ndarray, fold: float) -> float:
        return _exact_err_free_trailing(np.diag([1.0, np.exp(-1j * fold)]), v)

    def search_l1(self, v, fold) -> np.ndarray:
        e_core = np.ascontiguousarray(self.pu[:, :2])[None, :, :]
        return _score_free_trailing(e_core, self.lead_z(fold), v)[0]

    def search_l2(self, v, fold, m2: int = 1) -> np.ndarray:
        """Error matrix over (delta index, d1); delta = d2 - d1."""
        rows = self.t2_rows(m2)
        e_core = np.ascontiguousarray(rows[:, :, :2])
        errs = _score_free_trailing(e_core, self.lead_z(fold), v)
        d1 = np.arange(self.n_max + 1)
        d2 = d1[None, :] + self.deltas[:, None]
        return np.where((d2 >= 0) & (d2 <= self.n_max), errs, np.inf)

    def _l3_chunks(self, v, fold):
        """Yield (delta1 slice start, err array (n_delta, chunk, n_d+1))."""
        z = self.lead_z(fold)
        d1 = np.arange(self.n_max + 1)
        t2 = self.t2_rows(1)
        k1 = self.k_diag(self.cycle + self.deltas)
        chunk = 16
        for lo in range(0, len(self.deltas), chunk):
            hi = min(lo + chunk, len(self.deltas))
            mid = k1[lo:hi, :, None] * self.u6[None, :, :]
            rows = np.einsum("eij,cjk->ecik", t2, mid, optimize=True)
            e_core = np.ascontiguousarray(rows[:, :, :, :2]).reshape(-1, 2, 2)
            errs = _score_free_trailing(e_core, z, v).reshape(
                len(t2), hi - lo, len(d1))
            delta1 = self.deltas[lo:hi]
            d2 = d1[None, None, :] + delta1[None, :, None]
            d3 = d2 + self.deltas[:, None, None]
            valid = (d2 >= 0) & (d2 <= self.n_max) & (d3 >= 0) & (d3 <= self.n_max)
            yield lo, np.where(valid, errs, np.inf)

    def search_l3(self, v, fold, margin: float = 0.0, collect: bool = False):
        """Best L=3 tuple; optionally all tuples within ``margin`` of it."""
        d1v = np.arange(self.n_max + 1)
        best = (np.inf, None)
        for lo, errs in self._l3_chunks(v, fold):
            idx = int(np.argmin(errs))
            e_min = float(errs.flat[idx])
            if e_min < best[0]:
                i2, i1, id1 = np.unravel_index(idx, errs.shape)
                d1 = int(d1v[id1])
                d2 = d1 + int(self.deltas[lo + i1])
                d3 = d2 + int(self.deltas[i2])
                best = (e_min, (d1, d2, d3))
        kept = []
        if collect and np.isfinite(best[0]):
            bound = best[0] + margin
            for lo, errs in self._l3_chunks(v, fold):
                for i2, i1, id1 in np.argwhere(errs <= bound):
                    d1 = int(d1v[id1])
                    d2 = d1 + int(self.deltas[lo + i1])
                    d3 = d2 + int(self.deltas[i2])
                    kept.append((float(errs[i2, i1, id1]), (d1, d2, d3)))
        return best, kept

    def exact_block(self, delays: Sequence[int],
                    cycle_gaps: Sequence[int] | None = None) -> np.ndarray:
        """Projected block of U6 K ... U6 for given delays (plain products)."""
        delays = list(delays)
        if cycle_gaps is None:
            cycle_gaps = [1] * (len(delays) - 1)
        m = self.u6.copy()
        for i in range(1, len(delays)):
            gap = cycle_gaps[i - 1] * self.cycle + (delays[i] - delays[i - 1])
            m = self.u6 @ (self.k_diag(gap)[:, None] * m)
        return m[:2, :2]


# --- min engine --------------------------------------------------------------------

def _su2_quaternion(block: np.ndarray) -> np.ndarray | None:
    """Real 4-vector of the closest SU(2) to a (near-unitary) 2x2 block."""
    det = block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0]
    if abs(det) < 1e-6:
        return None
    e = block / np.sqrt(det)
    q = np.array([
        0.5 * (e[0, 0] + e[1, 1]).real,
        -0.5 * (e[0, 1] + e[1, 0]).imag,
        0.5 * (e[1, 0] - e[0, 1]).real,
        0.5 * (e[1, 1] - e[0, 0]).imag,
    ])
    n = np.linalg.norm(q)
    if n < 1e-9:
        return None
    return q / n


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product; supports (..., 4) arrays."""
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


class _MinEngine:
    """Depth-ordered word search over the min step alphabet.

    Words up to a direct-enumeration bound are scored exhaustively
    (vectorized six-level products).  Beyond it, a meet-in-the-middle
    stage splits each depth into two stored halves, generates candidate
    pairs with a quaternion nearest-neighbour query on the projected
    blocks, and rescores every hit with the exact six-level row/column
    tables (E = P W2 W1 P = (P W2)(W1 P), associativity making the
    rescoring exact).  Falls back to plain enumeration results when the
    alphabet has several pulse types (meet-in-the-middle half tables stay
    affordable only for the two-symbol alphabet).
    """

    def __init__(self, cal: QubitCalibration):
        self.cal = cal
        spec = cal.spec
        self.e_tau_cycle = (level_energies(spec.actual_freq, spec.anharmonicity,
                                           spec.levels)
                            * cal.clock_period * cal.controller_cycle_sfq)
        self.d_vec = np.exp(-1j * self.e_tau_cycle)
        self.phi = float(np.mod(self.e_tau_cycle[1], 2 * np.pi))
        if cal.idle_index is None:
            raise CalibrationError("min architecture requires an all-zeros stream")
        # step operators D @ B for every basis entry (idle included)
        dim = spec.levels
        self.steps6 = []
        for i, b in enumerate(cal.basis_ops):
            mat = np.eye(dim, dtype=complex) if i == cal.idle_index else b
            self.steps6.append(self.d_vec[:, None] * mat)
        self.n_sym = len(self.steps6)
        self._words: list[np.ndarray] = [np.eye(dim, dtype=complex)[None, :, :]]
        self._trees: dict[int, object] = {}
        self._quats: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- tables ---------------------------------------------------------------

    def _word_table(self, length: int) -> np.ndarray:
        """Six-level products of all n_sym^length words (digit j = cycle j)."""
        while len(self._words) <= length:
            prev = self._words[-1]
            step = np.stack(self.steps6)  # (S,6,6)
            new = np.einsum("sij,njk->snik", step, prev, optimize=True)
            self._words.append(new.reshape(-1, *prev.shape[1:]))
        return self._words[length]

    def _half_tree(self, length: int):
        """KD-tree over SU(2) quaternions of the length-`length` half words."""
        from scipy.spatial import cKDTree

        if length not in self._trees:
            blocks = self._word_table(length)[:, :2, :2]
            det = blocks[:, 0, 0] * blocks[:, 1, 1] - blocks[:, 0, 1] * blocks[:, 1, 0]
            ok = np.abs(det) > 1e-6
            e = blocks / np.sqrt(np.where(ok, det, 1.0))[:, None, None]
            q = np.stack([
                0.5 * (e[:, 0, 0] + e[:, 1, 1]).real,
                -0.5 * (e[:, 0, 1] + e[:, 1, 0]).imag,
                0.5 * (e[:, 1, 0] - e[:, 0, 1]).real,
                0.5 * (e[:, 1, 1] - e[:, 0, 0]).imag,
            ], axis=-1)
            norms = np.linalg.norm(q, axis=1)
            ok &= norms > 1e-9
            q = q / np.where(ok, norms, 1.0)[:, None]
            idx = np.flatnonzero(ok)
            pts = np.concatenate([q[idx], -q[idx]])
            owners = np.concatenate([idx, idx])
            self._trees[length] = cKDTree(pts)
            self._quats[length] = (q, owners)
        return self._trees[length], self._quats[length]

    def word_digits(self, index: int, length: int) -> tuple[int, ...]:
        word = []
        x = index
        for _ in range(length):
            word.append(x % self.n_sym)
            x //= self.n_sym
        return tuple(word)

    def word_block(self, steps: Sequence[int]) -> np.ndarray:
        """Projected 2x2 block of an explicit per-cycle word (plain product)."""
        dim = self.cal.spec.levels
        m = np.eye(dim, dtype=complex)
        for s in steps:
            m = self.steps6[s] @ m
        return m[:2, :2]

    # -- search ----------------------------------------------------------------

    def _score_table(self, blocks: np.ndarray, v: np.ndarray) -> np.ndarray:
        norm2 = np.sum(np.abs(blocks) ** 2, axis=(1, 2))
        tr = np.einsum("ij,nij->n", v.conj(), blocks)
        return 1.0 - (norm2 + np.abs(tr) ** 2) / 6.0

    def search(self, v_eff: np.ndarray, err_budget: float,
               max_depth: int) -> tuple[float, tuple[int, ...]]:
        """Shortest word (exact match, no free trailing) within the budget.

        Depth-ordered: exhaustive while n_sym^depth stays small, then
        meet-in-the-middle with half tables capped at 16384 entries (full
        depth-28 coverage for the two-symbol alphabet, depth 14 for the
        four-symbol one).  When no word meets the budget the best found
        overall is returned (caller flags it).
        """
        e0 = _exact_err_fixed(np.eye(2, dtype=complex), v_eff)
        best: tuple[float, tuple[int, ...]] = (max(e0, 0.0), ())
        if best[0] <= err_budget:
            return best
        exh_cap = 12 if self.n_sym == 2 else 6
        half_cap = 14 if self.n_sym == 2 else 7
        for depth in range(1, min(max_depth, exh_cap) + 1):
            table = self._word_table(depth)
            errs = self._score_table(table[:, :2, :2], v_eff)
            i = int(np.argmin(errs))
            if errs[i] < best[0]:
                best = (max(float(errs[i]), 0.0), self.word_digits(i, depth))
            if best[0] <= err_budget:
                return best
        radius = max(0.05, 3.5 * np.sqrt(1.5 * err_budget))
        vq = _su2_quaternion(v_eff)
        if vq is None:
            return best
        for depth in range(exh_cap + 1, min(max_depth, 2 * half_cap) + 1):
            err, word = self._mitm_depth(v_eff, vq, depth, radius)
            if err < best[0]:
                best = (max(err, 0.0), word)
            if best[0] <= err_budget:
                return best
        return best

    def _mitm_depth(self, v, vq, depth, radius):
        a = depth // 2
        b = depth - a
        first = self._word_table(a)
        cols = np.ascontiguousarray(first[:, :, :2])   # W1 @ P
        blocks1 = first[:, :2, :2]
        det1 = (blocks1[:, 0, 0] * blocks1[:, 1, 1]
                - blocks1[:, 0, 1] * blocks1[:, 1, 0])
        ok1 = np.abs(det1) > 1e-6
        e1 = blocks1 / np.sqrt(np.where(ok1, det1, 1.0))[:, None, None]
        q1 = np.stack([
            0.5 * (e1[:, 0, 0] + e1[:, 1, 1]).real,
            -0.5 * (e1[:, 0, 1] + e1[:, 1, 0]).imag,
            0.5 * (e1[:, 1, 0] - e1[:, 0, 1]).real,
            0.5 * (e1[:, 1, 1] - e1[:, 0, 0]).imag,
        ], axis=-1)
        n1 = np.linalg.norm(q1, axis=1)
        ok1 &= n1 > 1e-9
        q1 = q1 / np.where(ok1, n1, 1.0)[:, None]
        # wanted second half: W2 ~ V W1^{-1}; unit quaternion inverse = conj
        q1_inv = q1 * np.array([1.0, -1.0, -1.0, -1.0])
        targets = _quat_mul(vq[None, :], q1_inv)
        tree, (q2, owners) = self._half_tree(b)
        second = self._word_table(b)
        rows = np.ascontiguousarray(second[:, :2, :])  # P @ W2
        hits = tree.query_ball_point(targets[ok1], r=radius)
        idx_ok = np.flatnonzero(ok1)
        best_err, best_word = np.inf, ()
        for qi, neigh in zip(idx_ok, hits):
            if not neigh:
                continue
            w2s = np.unique(owners[np.asarray(neigh)])
            e = rows[w2s] @ cols[qi]
            errs = self._score_table(e, v)
            j = int(np.argmin(errs))
            if errs[j] < best_err:
                best_err = float(errs[j])
                best_word = (self.word_digits(int(qi), depth // 2)
                             + self.word_digits(int(w2s[j]), depth - depth // 2))
        return best_err, best_word


# --- public ops ----------------------------------------------------------------------

def opt_level_errors(cal: QubitCalibration, target: np.ndarray,
                     fold_phase: float = 0.0, lmax: int = 3) -> dict[int, float]:
    """Cumulative best error for pulse counts L = 0..lmax (analysis helper)."""
    eng = cal.opt_engine()
    v = np.asarray(target, dtype=complex)
    out = {0: eng.err_l0(v, fold_phase)}
    if lmax >= 1:
        out[1] = min(out[0], float(eng.search_l1(v, fold_phase).min()))
    if lmax >= 2:
        out[2] = min(out[1], float(eng.search_l2(v, fold_phase).min()))
    if lmax >= 3:
        (b3, _), _ = eng.search_l3(v, fold_phase)
        out[3] = min(out[2], b3)
    return out


def decompose_opt(
    cal: QubitCalibration,
    target: np.ndarray,
    err_budget: float = 1e-4,
    margin: float = 1e-4,
    fold_phase: float = 0.0,
    max_candidates: int = 128,
) -> list[Decomposition1Q]:
    """Decompose a 2x2 target into delay-scheduled bitstream applications.

    Searches L = 0 (pure virtual z), then 1, 2, 3 bitstream pulses on
    consecutive controller cycles, scoring every delay tuple against the
    qubit's exact six-level u_bs.  Stops at the first L meeting
    ``err_budget`` and returns all tuples within ``margin`` of that
    level's best (best first, ties broken by fewer pulses, smaller total
    delay, lexicographic delays) so the scheduler can trade accuracy for
    broadcast sharing.  If no level meets the budget, the single best
    tuple across all levels is returned flagged.
    """
    key = ("opt", target.tobytes(), round(float(fold_phase), 9),
           err_budget, margin)
    hit = cal.cache_get(key)
    if hit is not None:
        return hit
    eng = cal.opt_engine()
    v = np.asarray(target, dtype=complex)

    candidates: list[tuple[float, tuple[int, ...]]] = []
    err0 = eng.err_l0(v, fold_phase)
    errs1 = errs2 = None
    if err0 <= err_budget:
        candidates = [(max(err0, 0.0), ())]
    if not candidates:
        errs1 = eng.search_l1(v, fold_phase)
        b1 = float(errs1.min())
        if b1 <= err_budget:
            keep = np.flatnonzero(errs1 <= b1 + margin)
            order = sorted(keep, key=lambda d: (round(float(errs1[d]), 14), int(d)))
            candidates = [(float(errs1[d]), (int(d),)) for d in order]
    if not candidates:
        errs2 = eng.search_l2(v, fold_phase)
        b2 = float(errs2.min())
        if b2 <= err_budget:
            tuples = []
            for i_delta, i_d1 in np.argwhere(errs2 <= b2 + margin):
                d1 = int(i_d1)
                d2 = d1 + int(eng.deltas[i_delta])
                tuples.append((float(errs2[i_delta, i_d1]), (d1, d2)))
            tuples.sort(key=lambda t: (round(t[0], 14), sum(t[1]), t[1]))
            candidates = tuples
    flagged = False
    if not candidates:
        (b3, delays3), kept3 = eng.search_l3(v, fold_phase, margin, collect=True)
        if b3 <= err_budget:
            kept3.sort(key=lambda t: (round(t[0], 14), sum(t[1]), t[1]))
            candidates = kept3
        else:
            flagged = True
            options = [(err0, ())]
            options.append((float(errs1.min()), (int(np.argmin(errs1)),)))
            i_delta, i_d1 = np.unravel_index(int(np.argmin(errs2)), errs2.shape)
            d1 = int(i_d1)
            options.append((float(errs2.min()),
                            (d1, d1 + int(eng.deltas[i_delta]))))
            if delays3 is not None:
                options.append((b3, delays3))
            options.sort(key=lambda t: (round(t[0], 14), len(t[1])))
            candidates = [options[0]]

    out = []
    for err, delays in candidates[:max_candidates]:
        rho = _residual_for(eng, v, fold_phase, delays)
        out.append(Decomposition1Q(kind="opt", steps=tuple(delays),
                                   residual_phase=rho, err=max(err, 0.0),
                                   flagged=flagged))
    cal.cache_put(key, out)
    return out


def _residual_for(eng: _OptEngine, v, fold, delays) -> float:
    """Trailing virtual-z (standalone anchor) for a chosen delay tuple."""
    if not delays:
        e = np.diag([1.0, np.exp(-1j * fold)])
        return float(np.mod(_trailing_phase(e, v), 2 * np.pi))
    block = eng.exact_block(delays)
    z = np.exp(-1j * (fold + eng.phi_d[delays[0]]))
    e = block @ np.diag([1.0, z])
    rho = _trailing_phase(e, v)
    theta_l = (len(delays) - 1) * (eng.phi1 * eng.cycle) + eng.phi_d[delays[-1]]
    return float(np.mod(rho + theta_l, 2 * np.pi))


def decompose_min(
    cal: QubitCalibration,
    target: np.ndarray,
    err_budget: float = 1e-4,
    max_depth: int = 28,
    fold_phase: float = 0.0,
) -> Decomposition1Q:
    """Shortest stored-gate word approximating the target on this qubit.

    Depth-ordered search over per-cycle words (leakage accumulated
    through the full six-level sequence, projected once at the end).
    Returns the shortest word with error <= ``err_budget``, otherwise the
    best word found up to ``max_depth``, flagged.  ``residual_phase``
    carries the frame-reconciliation phase (word length times the cycle
    phase) the compiler folds downstream; it is bookkeeping, not error.
    """
    key = ("min", target.tobytes(), round(float(fold_phase), 9),
           err_budget, max_depth)
    hit = cal.cache_get(key)
    if hit is not None:
        return hit
    eng = cal.min_engine()
    v_eff = np.asarray(target, dtype=complex) @ phase_gate(fold_phase)
    err, word = eng.search(v_eff, err_budget, max_depth)
    res = Decomposition1Q(
        kind="min", steps=tuple(word),
        residual_phase=float(np.mod(len(word) * eng.phi, 2 * np.pi)),
        err=max(float(err), 0.0), flagged=err > err_budget)
    cal.cache_put(key, res)
    return res


def recompose_error(cal: QubitCalibration, dec: Decomposition1Q,
                    target: np.ndarray, fold_phase: float = 0.0) -> float:
    """Recompute a decomposition's error from plain six-level products.

    Independent of the vectorized search tables; verifies that any
    returned ``err`` is reproducible to 1e-12.
    """
    v = np.asarray(target, dtype=complex)
    if dec.kind == "opt":
        eng = cal.opt_engine()
        if not dec.steps:
            e = np.diag([1.0, np.exp(-1j * fold_phase)])
            return max(_exact_err_free_trailing(e, v), 0.0)
        block = eng.exact_block(dec.steps)
        z = np.exp(-1j * (fold_phase + eng.phi_d[dec.steps[0]]))
        e = block @ np.diag([1.0, z])
        return max(_exact_err_free_trailing(e, v), 0.0)
    eng = cal.min_engine()
    v_eff = v @ phase_gate(fold_phase)
    e = eng.word_block(dec.steps)
    return max(_exact_err_fixed(e, v_eff), 0.0)
