"""Network scenario generation: topology, content catalog, channel statistics.

A `Scenario` is one immutable network instance (BS/user geometry, catalog,
radio and storage limits plus the per-pair shadowing realization). Per-period
randomness lives in `ChannelDraw` (small-scale fading) and `RequestVector`
(one content per user).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

BITS_PER_MBYTE = 8e6  # decimal convention, 1 MByte = 8e6 bits

#: Table-style defaults (full scale). Desk-scale runs override most counts.
DEFAULT_PARAMS = {
    "num_fbs": 15,
    "users_per_fbs": 5,
    "users_macro": 10,
    "num_contents": 1000,
    "cell_radius_macro": 350.0,   # m
    "cell_radius_femto": 70.0,    # m
    "dc_distance": 2000.0,        # m
    "zipf": 0.56,
    "size_mu": 0.5,               # log-normal location, MByte
    "size_sigma2": 1.5,           # log-normal scale^2, MByte
    "cache_pct_mbs": 0.10,        # fraction of total catalog bits
    "cache_pct_fbs": 0.03,
    "bandwidth_sub": 312.5e3,     # Hz
    "n_access": 64,
    "n_backhaul": 64,
    "p_max_mbs": 40.0,            # W
    "p_max_fbs": 2.0,             # W
    "p_max_dc": 50.0,             # W
    "noise_psd_dbm_hz": -174.0,
    "is_psd_dbm_hz": -120.0,
    "deadline": 300.0,            # s
    "min_rate": 3e6,              # bit/s
    "assoc_radius": 70.0,         # m
    "shadowing_sigma": 8.0,       # dB
    "mc_samples": 200,
}

PATHLOSS_FIXED_DB = 128.1
PATHLOSS_SLOPE_DB = 37.6
MIN_DISTANCE_M = 1.0


class ScenarioError(ValueError):
    """Raised when scenario parameters cannot form a valid instance."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Scenario:
    """One network instance. BS index 0 is the MBS; 1..B are FBSs."""

    num_fbs: int
    num_users: int
    num_contents: int
    cell_radius_macro: float
    cell_radius_femto: float
    dc_distance: float
    bs_positions: np.ndarray       # (B+1, 2) m
    user_positions: np.ndarray     # (U, 2) m
    content_sizes: np.ndarray      # (C,) bits
    popularity: np.ndarray         # (C,) sums to 1
    zipf: float
    storage_bits: np.ndarray       # (B+1,) bits
    bandwidth_sub: float           # Hz
    n_access: int
    n_backhaul: int
    p_max_bs: np.ndarray           # (B+1,) W
    p_max_dc: float                # W
    noise_psd: float               # W/Hz
    is_psd: float                  # W/Hz
    deadline: float                # s
    min_rate: np.ndarray           # (U,) bit/s
    weights: np.ndarray            # (U,)
    assoc_radius: float            # m
    shadowing_sigma: float         # dB
    mc_samples: int
    shadow_access_db: np.ndarray   # (B+1, U) dB, fixed per scenario
    shadow_backhaul_db: np.ndarray  # (B+1,) dB
    seed_tag: str = ""
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("bs_positions", "user_positions", "content_sizes",
                     "popularity", "storage_bits", "p_max_bs", "min_rate",
                     "weights", "shadow_access_db", "shadow_backhaul_db"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=float)))
        self.validate()

    # aliases used throughout
    @property
    def n_bs(self) -> int:
        return self.num_fbs + 1

    @property
    def noise_power_sub(self) -> float:
        """AWGN power per access subcarrier (W)."""
        return self.noise_psd * self.bandwidth_sub

    @property
    def backhaul_noise_power_sub(self) -> float:
        """Noise + interfering-source power per backhaul subcarrier (W)."""
        return (self.noise_psd + self.is_psd) * self.bandwidth_sub

    def validate(self) -> None:
        if self.num_contents < 1:
            raise ScenarioError("catalog must hold at least one content")
        if not np.all(self.popularity > 0) or abs(self.popularity.sum() - 1.0) > 1e-12:
            raise ScenarioError("popularity must be positive and sum to 1")
        if not np.all(self.content_sizes > 0):
            raise ScenarioError("content sizes must be positive")
        if np.any(self.storage_bits < 0) or self.deadline <= 0:
            raise ScenarioError("storage must be >= 0 and deadline > 0")
        if np.any(self.p_max_bs < 0) or self.p_max_dc < 0:
            raise ScenarioError("power budgets must be nonnegative")
        r = np.hypot(*self.user_positions.T) if self.num_users else np.zeros(0)
        rb = np.hypot(*self.bs_positions.T)
        if np.any(r > self.cell_radius_macro + 1e-9) or np.any(rb > self.cell_radius_macro + 1e-9):
            raise ScenarioError("users and FBSs must lie inside the macro disc")

    def to_config(self) -> dict:
        """Dump the generating parameters (provenance; regenerates this instance)."""
        return dict(self.params)


@dataclass(frozen=True)
class ChannelDraw:
    """One CSI realization: access gains (B+1, U, N_Ac), backhaul gains (B+1, N_BH)."""

    h_access: np.ndarray
    h_backhaul: np.ndarray
    seed_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "h_access", _readonly(np.asarray(self.h_access, dtype=float)))
        object.__setattr__(self, "h_backhaul", _readonly(np.asarray(self.h_backhaul, dtype=float)))
        if not (np.all(np.isfinite(self.h_access)) and np.all(self.h_access > 0)):
            raise ScenarioError("access gains must be finite and positive")
        if not (np.all(np.isfinite(self.h_backhaul)) and np.all(self.h_backhaul > 0)):
            raise ScenarioError("backhaul gains must be finite and positive")


@dataclass(frozen=True)
class RequestVector:
    """Binary per-period demand, exactly one content per user."""

    delta: np.ndarray  # (U, C) in {0, 1}
    seed_tag: str = ""

    def __post_init__(self):
        d = np.asarray(self.delta)
        object.__setattr__(self, "delta", _readonly(d.astype(np.int8)))
        if not np.all(self.delta.sum(axis=1) == 1):
            raise ScenarioError("each user must request exactly one content")

    @property
    def content_of(self) -> np.ndarray:
        """(U,) requested content index per user."""
        return np.argmax(self.delta, axis=1)


def zipf_popularity(num_contents: int, zipf: float) -> np.ndarray:
    """Zipf popularity over ranks 1..C: prob(c) = c^-zipf / sum_k k^-zipf."""
    if num_contents < 1:
        raise ScenarioError("catalog must hold at least one content")
    if zipf < 0:
        raise ScenarioError("zipf exponent must be >= 0")
    ranks = np.arange(1, num_contents + 1, dtype=float)
    w = ranks ** (-zipf)
    return w / w.sum()


def sample_content_sizes(num_contents: int, size_mu: float, size_sigma2: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Log-normal content sizes in bits (drawn in MByte, converted, >= 1 bit)."""
    if size_sigma2 <= 0:
        raise ScenarioError("size variance must be positive")
    mbytes = rng.lognormal(mean=size_mu, sigma=math.sqrt(size_sigma2), size=num_contents)
    bits = np.round(mbytes * BITS_PER_MBYTE)
    return np.maximum(bits, 1.0)


def pathloss_gain_db(distance_m: np.ndarray, shadow_db: np.ndarray) -> np.ndarray:
    """Large-scale loss 128.1 + 37.6 log10(d_km) + shadowing, as linear power gain."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d < MIN_DISTANCE_M):
        log.warning("clamping %d link distance(s) below %.0f m", int(np.sum(d < MIN_DISTANCE_M)),
                    MIN_DISTANCE_M)
        d = np.maximum(d, MIN_DISTANCE_M)
    loss_db = PATHLOSS_FIXED_DB + PATHLOSS_SLOPE_DB * np.log10(d / 1000.0) + shadow_db
    return 10.0 ** (-loss_db / 10.0)


def sample_channel_draw(scenario: Scenario, rng: np.random.Generator,
                        seed_tag: str = "") -> ChannelDraw:
    """Draw one CSI sample: fixed large-scale gain times unit-mean exponential fading."""
    sc = scenario
    d_acc = np.linalg.norm(sc.bs_positions[:, None, :] - sc.user_positions[None, :, :], axis=2)
    g_acc = pathloss_gain_db(d_acc, sc.shadow_access_db)
    dc_pos = np.array([sc.dc_distance, 0.0])
    d_bh = np.linalg.norm(sc.bs_positions - dc_pos[None, :], axis=1)
    g_bh = pathloss_gain_db(d_bh, sc.shadow_backhaul_db)
    # Rayleigh amplitude, variance 1 -> exponential power factor with unit mean
    fade_acc = rng.exponential(1.0, size=(sc.n_bs, sc.num_users, sc.n_access))
    fade_bh = rng.exponential(1.0, size=(sc.n_bs, sc.n_backhaul))
    fade_acc = np.maximum(fade_acc, 1e-300)
    fade_bh = np.maximum(fade_bh, 1e-300)
    return ChannelDraw(h_access=g_acc[:, :, None] * fade_acc,
                       h_backhaul=g_bh[:, None] * fade_bh,
                       seed_tag=seed_tag)


def sample_requests(scenario: Scenario, rng: np.random.Generator,
                    seed_tag: str = "") -> RequestVector:
    """Each user independently requests one content according to the popularity."""
    choices = rng.choice(scenario.num_contents, size=scenario.num_users, p=scenario.popularity)
    delta = np.zeros((scenario.num_users, scenario.num_contents), dtype=np.int8)
    delta[np.arange(scenario.num_users), choices] = 1
    return RequestVector(delta=delta, seed_tag=seed_tag)


def sample_draws(scenario: Scenario, rng: np.random.Generator, n: int,
                 seed_tag: str = "") -> tuple[ChannelDraw, ...]:
    """n independent CSI samples (the CDI sample set for one CP solve)."""
    if n < 1:
        raise ScenarioError("need at least one channel draw")
    return tuple(sample_channel_draw(scenario, rng, seed_tag=f"{seed_tag}/{i}")
                 for i in range(n))


def _disc_points(rng: np.random.Generator, n: int, radius: float,
                 center: np.ndarray | None = None) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    if center is not None:
        pts += center[None, :]
    return pts


def build_scenario(params: dict | None = None, seed: int | None = 0,
                   rng: np.random.Generator | None = None) -> Scenario:
    """Generate a scenario from parameter overrides on top of the defaults.

    Geometry: MBS at the origin, FBS centers uniform in a disc of radius
    (macro - femto) so femto users stay inside the macro cell, `users_per_fbs`
    users per femto disc plus `users_macro` macro-wide users.
    """
    p = dict(DEFAULT_PARAMS)
    if params:
        unknown = set(params) - set(DEFAULT_PARAMS) - {"seed"}
        if unknown:
            raise ScenarioError(f"unknown scenario parameters: {sorted(unknown)}")
        p.update(params)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([0x5CE9A110, int(seed or 0)]))
    B = int(p["num_fbs"])
    U = B * int(p["users_per_fbs"]) + int(p["users_macro"])
    C = int(p["num_contents"])
    if U < 1:
        raise ScenarioError("scenario needs at least one user")

    bs_pos = np.zeros((B + 1, 2))
    if B:
        bs_pos[1:] = _disc_points(rng, B, p["cell_radius_macro"] - p["cell_radius_femto"])
    users = []
    for b in range(B):
        users.append(_disc_points(rng, int(p["users_per_fbs"]), p["cell_radius_femto"],
                                  center=bs_pos[b + 1]))
    users.append(_disc_points(rng, int(p["users_macro"]), p["cell_radius_macro"]))
    user_pos = np.concatenate(users, axis=0)

    sizes = sample_content_sizes(C, p["size_mu"], p["size_sigma2"], rng)
    pop = zipf_popularity(C, p["zipf"])
    total_bits = sizes.sum()
    storage = np.empty(B + 1)
    storage[0] = p["cache_pct_mbs"] * total_bits
    storage[1:] = p["cache_pct_fbs"] * total_bits

    p_max = np.empty(B + 1)
    p_max[0] = p["p_max_mbs"]
    p_max[1:] = p["p_max_fbs"]

    shadow_acc = rng.normal(0.0, p["shadowing_sigma"], size=(B + 1, U))
    shadow_bh = rng.normal(0.0, p["shadowing_sigma"], size=B + 1)

    return Scenario(
        num_fbs=B, num_users=U, num_contents=C,
        cell_radius_macro=p["cell_radius_macro"],
        cell_radius_femto=p["cell_radius_femto"],
        dc_distance=p["dc_distance"],
        bs_positions=bs_pos, user_positions=user_pos,
        content_sizes=sizes, popularity=pop, zipf=p["zipf"],
        storage_bits=storage,
        bandwidth_sub=p["bandwidth_sub"],
        n_access=int(p["n_access"]), n_backhaul=int(p["n_backhaul"]),
        p_max_bs=p_max, p_max_dc=p["p_max_dc"],
        noise_psd=10.0 ** (p["noise_psd_dbm_hz"] / 10.0) * 1e-3,
        is_psd=10.0 ** (p["is_psd_dbm_hz"] / 10.0) * 1e-3,
        deadline=p["deadline"],
        min_rate=np.full(U, p["min_rate"]),
        weights=np.ones(U),
        assoc_radius=p["assoc_radius"],
        shadowing_sigma=p["shadowing_sigma"],
        mc_samples=int(p["mc_samples"]),
        shadow_access_db=shadow_acc,
        shadow_backhaul_db=shadow_bh,
        seed_tag=str(seed),
        params={**p, "seed": seed},
    )


def scenario_from_config(path: str) -> Scenario:
    """Load a scenario from a JSON key-value file (missing keys take defaults)."""
    with open(path) as fh:
        cfg = json.load(fh)
    seed = cfg.pop("seed", 0)
    return build_scenario(cfg, seed=seed)


def scenario_to_config(scenario: Scenario, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_config(), fh, indent=2, sort_keys=True)
        fh.write("\n")
