#!/usr/bin/env python3

################################################
#
#   pCN and map-based independence samplers
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ftgmap.grid import Field, Grid
from ftgmap.measures import GaussianMeasure
from ftgmap.transportmap import DiagonalMap
from ftgmap.utils import (
    JsonObject,
    check_format_version,
    read_json,
    read_matrix_csv,
    stamp_version,
    write_json,
    write_matrix_csv,
)


logger = logging.getLogger(__name__)

# Proposals and uniforms drawn per block
BLOCK_SIZE = 1024

# Above this dimension only thinned samples are stored
FULL_STORAGE_DIM = 256

# Stored samples per chain when thinning is automatic
STORED_SAMPLES = 1000

ACCEPTANCE_MODES = ("simplified", "exact")


################################################
#   Configs
################################################
@dataclass
class PcnConfig:
    """pCN settings. burn_in=None means half of the chain."""

    beta: float
    steps: int
    prior: GaussianMeasure
    lam: float
    seed: int = 0
    burn_in: Optional[int] = None
    thin: Optional[int] = None
    trace_indices: Sequence[int] = ()
    progress: bool = False

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"PcnConfig validation error, beta={self.beta} not in (0, 1]")
        _validate_common("PcnConfig", self)

    @property
    def retained_from(self):
        return self.steps // 2 if self.burn_in is None else self.burn_in

    def to_json(self) -> JsonObject:
        return {"kind": "pcn", "beta": self.beta, "steps": self.steps, "lambda": self.lam,
                "seed": self.seed, "burn_in": self.retained_from, "thin": self.thin}


@dataclass
class TmisConfig:
    """Independence sampler settings.

    Proposals are T(r) with r drawn from `sampling_reference`, which defaults
    to the construction `reference`. The chain starts at `initial_state`,
    the SAA pushforward mean, or T(reference mean) when not given.
    """

    map: DiagonalMap
    reference: GaussianMeasure
    steps: int
    lam: float
    seed: int = 0
    sampling_reference: Optional[GaussianMeasure] = None
    initial_state: Optional[np.ndarray] = None
    acceptance: str = "simplified"
    burn_in: Optional[int] = None
    thin: Optional[int] = None
    trace_indices: Sequence[int] = ()
    progress: bool = False

    def __post_init__(self):
        if self.map.degree != 1:
            raise ValueError("TmisConfig validation error, the sampler needs a linear map")
        self.map.check_monotone(np.zeros(self.map.dim))
        if self.acceptance not in ACCEPTANCE_MODES:
            raise ValueError(f"TmisConfig validation error, acceptance={self.acceptance} "
                             f"not in {ACCEPTANCE_MODES}")
        if self.sampling_reference is None:
            self.sampling_reference = self.reference
        _validate_common("TmisConfig", self)

    @property
    def retained_from(self):
        return 0 if self.burn_in is None else self.burn_in

    def start(self):
        if self.initial_state is None:
            return self.map.apply(self.reference.mean)
        return np.array(self.initial_state, dtype=float)

    def to_json(self) -> JsonObject:
        return {"kind": "tmis", "steps": self.steps, "lambda": self.lam, "seed": self.seed,
                "acceptance": self.acceptance, "burn_in": self.retained_from,
                "thin": self.thin, "sampling_reference_std": self.sampling_reference.std}


def _validate_common(name, config):
    if config.steps < 1:
        raise ValueError(f"{name} validation error, steps={config.steps} < 1")
    if not config.lam > 0:
        raise ValueError(f"{name} validation error, lambda={config.lam} must be positive")
    if config.burn_in is not None and not 0 <= config.burn_in < config.steps:
        raise ValueError(f"{name} validation error, burn_in={config.burn_in} "
                         f"outside [0, {config.steps})")
    if config.thin is not None and config.thin < 1:
        raise ValueError(f"{name} validation error, thin={config.thin} < 1")


################################################
#   Chain
################################################
@dataclass
class Chain:
    """Sampler output.

    `samples` holds the states at `stored_indices` (every state when the
    dimension is small). `mean` and `std` are streaming moments over states
    from `burn_in` on. `traces` maps coordinates to their full trace.
    """

    samples: np.ndarray
    stored_indices: np.ndarray
    length: int
    accepted: int
    proposed: int
    seed: int
    lam: float
    burn_in: int
    mean: np.ndarray
    std: np.ndarray
    traces: Dict[int, np.ndarray] = field(default_factory=dict)
    config: JsonObject = field(default_factory=dict)

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposed if self.proposed else 0.0

    @property
    def is_complete(self):
        return self.samples.shape[0] == self.length

    def sidecar(self) -> JsonObject:
        return stamp_version({
            "length": self.length,
            "accepted": self.accepted,
            "proposed": self.proposed,
            "acceptance_rate": self.acceptance_rate,
            "seed": self.seed,
            "lambda": self.lam,
            "burn_in": self.burn_in,
            "stored_indices": self.stored_indices,
            "mean": self.mean,
            "std": self.std,
            "traces": {str(index): trace for index, trace in self.traces.items()},
            "config": self.config,
        })

#end class


class _ChainRecorder(object):
    """Stores states, traces and Welford moments while a chain runs."""

    def __init__(self, dim, length, burn_in, thin, trace_indices):
        if thin is None:
            thin = 1 if dim <= FULL_STORAGE_DIM else max(1, length // STORED_SAMPLES)
        self.thin = thin
        self.length = length
        self.burn_in = burn_in
        self.stored_indices = np.arange(0, length, thin)
        self.samples = np.empty((self.stored_indices.size, dim))
        self.traces = {int(index): np.empty(length) for index in trace_indices}
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
    #end def

    def record(self, index, state):
        if index % self.thin == 0:
            self.samples[index // self.thin] = state
        for coordinate, trace in self.traces.items():
            trace[index] = state[coordinate]
        if index >= self.burn_in:
            self.count += 1
            delta = state - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (state - self.mean)
    #end def

    def finish(self, accepted, seed, lam, config):
        return Chain(
            samples=self.samples,
            stored_indices=self.stored_indices,
            length=self.length,
            accepted=accepted,
            proposed=self.length - 1,
            seed=seed,
            lam=lam,
            burn_in=self.burn_in,
            mean=self.mean.copy(),
            std=np.sqrt(np.maximum(self.m2 / self.count, 0.0)),
            traces=self.traces,
            config=config,
        )

#end class


################################################
#   Functions
################################################
def log_acceptance_ratio(posterior, lam, current, proposal):
    """Phi(u) + J(u) - Phi(v) - J(v) with the exact FTV seminorm."""
    return posterior.potential(current, lam) - posterior.potential(proposal, lam)


def acceptance_probability(posterior, lam, current, proposal):
    """min{1, exp(Phi(u) + J(u; lambda) - Phi(v) - J(v; lambda))}."""
    return float(np.exp(min(0.0, log_acceptance_ratio(posterior, lam, current, proposal))))


def _log_uniforms(rng, count):
    with np.errstate(divide="ignore"):
        return np.log(rng.uniform(size=count))


def pcn_sample(posterior, config):
    """Standard pCN chain of `config.steps` states.

    v = m0 + sqrt(1 - beta^2) (u - m0) + beta w,  w ~ N(0, C0)

    :param posterior: Target posterior, lambda fixed at config.lam
    :type posterior: HierarchicalPosterior
    :param config: Sampler settings
    :type config: PcnConfig
    :rtype: Chain
    """
    prior = config.prior
    lam = config.lam
    rng = np.random.default_rng(config.seed)
    recorder = _ChainRecorder(prior.dim, config.steps, config.retained_from,
                              config.thin, config.trace_indices)
    contraction = np.sqrt(1.0 - config.beta ** 2)

    current = prior.sample(1, rng)[0]
    current_potential = posterior.potential(current, lam)
    recorder.record(0, current)
    accepted = 0
    with tqdm(total=config.steps - 1, desc="pCN", disable=not config.progress) as bar:
        for start in range(1, config.steps, BLOCK_SIZE):
            count = min(BLOCK_SIZE, config.steps - start)
            innovations = config.beta * prior.color(rng.standard_normal((count, prior.dim)))
            log_uniforms = _log_uniforms(rng, count)
            for offset in range(count):
                proposal = prior.mean + contraction * (current - prior.mean) + innovations[offset]
                proposal_potential = posterior.potential(proposal, lam)
                if log_uniforms[offset] < current_potential - proposal_potential:
                    current, current_potential = proposal, proposal_potential
                    accepted += 1
                recorder.record(start + offset, current)
            bar.update(count)
    #end with

    chain = recorder.finish(accepted, config.seed, lam, config.to_json())
    logger.info("pCN beta=%.4g: %d steps, acceptance rate %.4f",
                config.beta, config.steps, chain.acceptance_rate)
    return chain


def _reference_correction(posterior, config, states, references):
    """log mu_ref(T^{-1} v) - log mu0(v) terms of the full independence ratio."""
    return config.sampling_reference.quadratic(references) - posterior.gaussian.quadratic(states)


def tmis_sample(posterior, config):
    """Independence sampler with proposals pushed through a linear diagonal map.

    The default acceptance is min{1, exp(Phi(u) + J(u) - Phi(v) - J(v))}.
    With acceptance='exact' the ratio also carries the prior and proposal
    densities, which makes the chain exact for any map and reference.

    :param posterior: Target posterior, lambda fixed at config.lam
    :type posterior: HierarchicalPosterior
    :param config: Sampler settings
    :type config: TmisConfig
    :rtype: Chain
    """
    lam = config.lam
    transport = config.map
    exact = config.acceptance == "exact"
    rng = np.random.default_rng(config.seed)
    recorder = _ChainRecorder(transport.dim, config.steps, config.retained_from,
                              config.thin, config.trace_indices)

    current = config.start()
    current_log = -posterior.potential(current, lam)
    if exact:
        current_reference = (current - transport.offset) / transport.scale
        current_log += _reference_correction(posterior, config, current, current_reference)
    recorder.record(0, current)
    accepted = 0
    with tqdm(total=config.steps - 1, desc="TMIS", disable=not config.progress) as bar:
        for start in range(1, config.steps, BLOCK_SIZE):
            count = min(BLOCK_SIZE, config.steps - start)
            references = config.sampling_reference.sample(count, rng)
            proposals = transport.apply(references)
            proposal_logs = -posterior.potential(proposals, lam)
            if exact:
                proposal_logs = proposal_logs + _reference_correction(
                    posterior, config, proposals, references)
            log_uniforms = _log_uniforms(rng, count)
            for offset in range(count):
                if log_uniforms[offset] < proposal_logs[offset] - current_log:
                    current, current_log = proposals[offset], proposal_logs[offset]
                    accepted += 1
                recorder.record(start + offset, current)
            bar.update(count)
    #end with

    chain = recorder.finish(accepted, config.seed, lam, config.to_json())
    logger.info("TMIS (%s): %d steps, acceptance rate %.4f",
                config.acceptance, config.steps, chain.acceptance_rate)
    return chain


def posterior_summary(chain, burn_in, grid=None):
    """Pointwise mean and standard deviation over states from burn_in on.

    Uses the stored states when the chain is complete, the streaming moments
    when burn_in matches the sampler's, and the thinned states otherwise.

    :param chain: Sampler output
    :type chain: Chain
    :param burn_in: Number of leading states to drop
    :type burn_in: int
    :param grid: Grid of the returned fields, 1D over coordinates if omitted
    :type grid: Grid, optional
    :return: Mean and std fields
    :rtype: tuple(Field, Field)
    :raises ValueError: If no state is retained
    """
    if not 0 <= burn_in < chain.length:
        raise ValueError(f"Chain validation error, burn_in={burn_in} leaves no samples "
                         f"in a chain of length {chain.length}")
    if chain.is_complete:
        retained = chain.samples[burn_in:]
        mean, std = retained.mean(axis=0), retained.std(axis=0)
    elif burn_in == chain.burn_in:
        mean, std = chain.mean, chain.std
    else:
        retained = chain.samples[chain.stored_indices >= burn_in]
        if retained.shape[0] == 0:
            raise ValueError("Chain validation error, no stored samples after burn_in")
        mean, std = retained.mean(axis=0), retained.std(axis=0)
    if grid is None:
        grid = Grid(((0.0, float(mean.size)),), (mean.size,))
    return Field(grid, mean), Field(grid, std)


def tune_pcn_beta(posterior, prior, lam, seed, target=(0.2, 0.3), pilot_steps=2000,
                  max_rounds=20, beta=0.5):
    """Bisect beta with short pilot chains until the acceptance rate is in target.

    :return: Tuned beta and the pilot acceptance rate
    :rtype: tuple(float, float)
    """
    low, high = 0.0, 1.0
    rate = None
    for pilot_round in range(max_rounds):
        pilot = PcnConfig(beta=beta, steps=pilot_steps, prior=prior, lam=lam,
                          seed=seed + pilot_round, burn_in=0)
        rate = pcn_sample(posterior, pilot).acceptance_rate
        logger.debug("pilot %d: beta=%.5g acceptance %.4f", pilot_round, beta, rate)
        if target[0] <= rate <= target[1]:
            break
        if rate > target[1]:
            if beta >= 1.0:
                break
            low = beta
        else:
            high = beta
        beta = 0.5 * (low + high)
    else:
        logger.warning("beta tuning stopped after %d rounds at beta=%.5g (acceptance %.4f)",
                       max_rounds, beta, rate)
    logger.info("tuned pCN beta=%.5g, pilot acceptance %.4f", beta, rate)
    return beta, rate


################################################
#   Chain I/O
################################################
def write_chain(chain, path):
    """Stored samples to CSV, everything else to a JSON sidecar next to it.

    :return: CSV and sidecar paths
    :rtype: tuple(Path, Path)
    """
    path = Path(path)
    header = ",".join(f"u{index}" for index in range(chain.samples.shape[1]))
    csv_path = write_matrix_csv(chain.samples, path, header=header)
    sidecar_path = write_json(chain.sidecar(), path.with_suffix(".json"))
    return csv_path, sidecar_path


def read_chain(path):
    path = Path(path)
    sidecar = read_json(path.with_suffix(".json"))
    check_format_version(sidecar, "Chain")
    return Chain(
        samples=read_matrix_csv(path),
        stored_indices=np.asarray(sidecar["stored_indices"], dtype=int),
        length=sidecar["length"],
        accepted=sidecar["accepted"],
        proposed=sidecar["proposed"],
        seed=sidecar["seed"],
        lam=sidecar["lambda"],
        burn_in=sidecar["burn_in"],
        mean=np.asarray(sidecar["mean"], dtype=float),
        std=np.asarray(sidecar["std"], dtype=float),
        traces={int(index): np.asarray(trace, dtype=float)
                for index, trace in sidecar["traces"].items()},
        config=sidecar["config"],
    )
