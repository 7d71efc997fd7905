#!/usr/bin/env python3

################################################
#
#   Experiment pipelines: data generation, map
#   building, sampling, diagnostics and sweeps
#
################################################

################################################
#   Libraries
################################################
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ftgmap.config import ExperimentConfig
from ftgmap.diagnostics import (
    InfinitePsnrError,
    ZeroVarianceError,
    absolute_error,
    autocorrelation,
    ess_map,
    line_profile,
    psnr,
    rel_err,
    ssim,
)
from ftgmap.forward import (
    convolution_model,
    default_angles,
    fbp,
    generate_data,
    heat_source_model,
    identity_model,
    paper_truth,
    radon_model,
    resample_sinogram,
)
from ftgmap.fractional import grunwald_weights
from ftgmap.grid import Field, downsample, read_field_csv, write_field_csv
from ftgmap.measures import GaussianMeasure, HyperPrior
from ftgmap.phantom import SheppLoganSpec, camera_image, shepp_logan
from ftgmap.posterior import HierarchicalPosterior
from ftgmap.samplers import (
    PcnConfig,
    TmisConfig,
    pcn_sample,
    posterior_summary,
    read_chain,
    tmis_sample,
    tune_pcn_beta,
    write_chain,
)
from ftgmap.transportmap import MapBuilderConfig, MapBuildResult, build_map
from ftgmap.utils import (
    read_json,
    read_matrix_csv,
    sha256sum,
    stamp_version,
    write_columns_csv,
    write_json,
    write_matrix_csv,
)


logger = logging.getLogger(__name__)

# Stage labels
GEN_DATA = "gen-data"
BUILD_MAP = "build-map"
SAMPLE = "sample"
DIAGNOSE = "diagnose"
FBP = "fbp"
SWEEP = "sweep"

# Largest lag written to the ACF extracts
ACF_MAX_LAG = 200

MANIFEST = "manifest.json"


################################################
#   Errors
################################################
class PipelineStageError(RuntimeError):
    """Custom exception for error tracking."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(label):
    """Wrap any error raised inside a stage with the stage label."""
    logger.info("stage %s", label)
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as error:
        raise PipelineStageError(label, error) from error


################################################
#   ArtifactManifest
################################################
class ArtifactManifest(object):
    """Every written file with its role and sha256 digest, kept in manifest.json."""

    def __init__(self, directory, entries=None):
        self.directory = Path(directory)
        self.entries = dict(entries or {})  # {relative path: role}
    #end def

    @classmethod
    def load(cls, directory):
        path = Path(directory) / MANIFEST
        if not path.is_file():
            return cls(directory)
        document = read_json(path)
        return cls(directory, {entry["path"]: entry["role"] for entry in document["files"]})

    def add(self, path, role):
        self.entries[Path(path).relative_to(self.directory).as_posix()] = role
        logger.info("wrote %s (%s)", path, role)
        return path

    def write(self):
        files = [
            {"path": name, "role": role, "sha256": sha256sum(self.directory / name)}
            for name, role in sorted(self.entries.items())
        ]
        return write_json(stamp_version({"files": files}), self.directory / MANIFEST)

#end class


################################################
#   Problem setup
################################################
@dataclass
class Problem:
    """Everything an experiment needs besides the data.

    `fine_model` and `truth_fine` generate the data, `model` and `truth`
    live on the reconstruction grid. `restrict` maps fine observations to
    the coarse observation space.
    """

    config: ExperimentConfig
    model: object
    fine_model: object
    truth_fine: Field
    truth: Field
    prior: GaussianMeasure
    weights: object
    hyper: HyperPrior
    restrict: Optional[Callable] = None

    @property
    def grid(self):
        return self.model.grid


def _block_restriction(fine_grid, factor):
    def restrict(observation):
        return downsample(Field(fine_grid, observation), factor).values
    return restrict


def _sinogram_restriction(fine_model, model):
    """Interpolate each fine projection onto the coarse ray offsets."""
    angles = len(model.parameters["angles"])
    fine_offsets = np.asarray(fine_model.parameters["offsets"])
    offsets = np.asarray(model.parameters["offsets"])

    def restrict(observation):
        sinogram = np.asarray(observation).reshape(angles, fine_offsets.size)
        return resample_sinogram(sinogram, fine_offsets, offsets).reshape(-1)
    return restrict


def build_problem(config):
    """Forward models, truth, prior and hyper-prior of an experiment config.

    Data are simulated on a grid `grid.refine` times finer. CT uses
    `refine` times more rays per angle on the fine grid and interpolates
    the sinogram back to the coarse rays.

    :param config: Experiment config
    :type config: ExperimentConfig
    :rtype: Problem
    """
    cells, refine = config.cells, config.grid["refine"]
    extent = config.extent
    forward = config.forward
    fine_cells = cells * refine
    if config.experiment == "deconvolution":
        model = convolution_model(cells, forward["delta"], extent)
        fine_model = convolution_model(fine_cells, forward["delta"], extent)
        truth_fine = paper_truth("deconvolution", fine_model.grid)
    elif config.experiment == "heat_source":
        settings = (forward["steps"], forward["T"], forward["r"], forward["w"])
        model = heat_source_model(cells, *settings)
        fine_model = heat_source_model(fine_cells, *settings)
        truth_fine = paper_truth("heat_source", fine_model.grid)
    elif config.experiment == "ct":
        angles = default_angles(forward["angles"])
        rays = forward["rays_per_angle"]
        model = radon_model(cells, angles, rays, extent)
        fine_model = radon_model(fine_cells, angles, rays * refine, extent)
        truth_fine = shepp_logan(SheppLoganSpec(fine_cells, extent=extent))
    else:
        truth_fine = camera_image(fine_cells, extent)
        fine_model = identity_model(truth_fine.grid)
        model = identity_model(truth_fine.grid.coarsen(refine))
    restrict = None
    if refine > 1:
        if config.experiment == "ct":
            restrict = _sinogram_restriction(fine_model, model)
        else:
            restrict = _block_restriction(fine_model.grid, refine)
    truth = downsample(truth_fine, refine) if refine > 1 else truth_fine

    grid = model.grid
    if "variance" in config.prior:
        prior = GaussianMeasure.diagonal(np.zeros(grid.size), config.prior["variance"])
    else:
        prior = GaussianMeasure.squared_exponential(grid, config.prior["gamma"],
                                                    config.prior["nu"])
    weights = None
    if config.alpha is not None:
        weights = grunwald_weights(config.alpha, max(grid.cells) + 1)
    hyper = HyperPrior(config.hyper["k"], config.hyper["vartheta"])
    return Problem(config, model, fine_model, truth_fine, truth, prior, weights, hyper, restrict)


def generate_observation(problem):
    """Noisy observation and the noise level used, seeded by the data stage seed."""
    config = problem.config
    return generate_data(problem.fine_model, problem.truth_fine, config.noise["percent"],
                         config.stage_seeds()["data"], restrict=problem.restrict,
                         sigma=config.noise["sigma"])


def make_posterior(problem, observation, sigma):
    likelihood_sigma = problem.config.noise["likelihood_sigma"] or sigma
    model = problem.model.with_noise(likelihood_sigma)
    return HierarchicalPosterior(model, observation, problem.prior, problem.weights,
                                 problem.hyper, eps=problem.config.map["eps"])


def output_directory(config, out=None):
    if out is not None:
        return Path(out)
    return Path(config.output or Path("runs") / config.name)


def trace_indices(grid, points):
    """Nearest grid indices of trace points (x for 1D, [x, y] for 2D)."""
    indices = []
    for point in points:
        if grid.dim == 1:
            indices.append(int(np.argmin(np.abs(grid.coordinates(0) - point))))
        else:
            column = int(np.argmin(np.abs(grid.coordinates(1) - point[0])))
            row = int(np.argmin(np.abs(grid.coordinates(0) - point[1])))
            indices.append(row * grid.cells[1] + column)
    return sorted(set(indices))


def _load_posterior(problem, directory):
    observation = read_matrix_csv(directory / "data.csv").reshape(-1)
    sidecar = read_json(directory / "data.json")
    return make_posterior(problem, observation, sidecar["sigma"])


################################################
#   Stages
################################################
def gen_data(config, out=None, manifest=None):
    """Write truth fields, noisy data and the config echo.

    :return: Observation and noise level
    :rtype: tuple(numpy.ndarray, float)
    """
    directory = output_directory(config, out)
    manifest = manifest or ArtifactManifest.load(directory)
    with stage(GEN_DATA):
        problem = build_problem(config)
        observation, sigma = generate_observation(problem)
        manifest.add(write_json(config.to_json(), directory / "config.json"), "config")
        manifest.add(write_field_csv(problem.truth, directory / "truth.csv"), "truth")
        manifest.add(write_field_csv(problem.truth_fine, directory / "truth_fine.csv"),
                     "truth-fine")
        manifest.add(write_matrix_csv(observation, directory / "data.csv"), "data")
        manifest.add(write_json(stamp_version({
            "sigma": sigma,
            "likelihood_sigma": config.noise["likelihood_sigma"] or sigma,
            "noise_percent": config.noise["percent"],
            "seed": config.stage_seeds()["data"],
            "n_obs": observation.size,
        }), directory / "data.json"), "data-sidecar")
        manifest.write()
    logger.info("data: %d observations, sigma=%.6g", observation.size, sigma)
    return observation, sigma


def build_map_stage(config, out=None, manifest=None):
    """Build the transport map from the stored data and write map.json.

    :rtype: MapBuildResult
    """
    directory = output_directory(config, out)
    manifest = manifest or ArtifactManifest.load(directory)
    with stage(BUILD_MAP):
        problem = build_problem(config)
        posterior = _load_posterior(problem, directory)
        settings = config.map
        builder = MapBuilderConfig(
            saa_count=settings["M"],
            reference=problem.prior,
            hyper=problem.hyper,
            eps=settings["eps"],
            outer_iters=settings["outer_iters"],
            step_tol=settings["step_tol"],
            grad_tol=settings["grad_tol"],
            max_evals=settings["max_evals"],
            degree=settings["degree"],
            seed=config.stage_seeds()["map"],
        )
        result = build_map(posterior, builder)
        manifest.add(write_json(result.to_json(), directory / "map.json"), "map")
        manifest.write()
    return result


def sample_stage(config, out=None, manifest=None, map_path=None, progress=False):
    """Run the configured sampler at the map's lambda and write the chain and summaries.

    :rtype: Chain
    """
    directory = output_directory(config, out)
    manifest = manifest or ArtifactManifest.load(directory)
    with stage(SAMPLE):
        problem = build_problem(config)
        posterior = _load_posterior(problem, directory)
        result = MapBuildResult.from_json(read_json(map_path or directory / "map.json"))
        settings = config.sampler
        seeds = config.stage_seeds()
        traced = trace_indices(problem.grid, settings["trace_points"])
        if settings["kind"] == "tmis":
            sampling_reference = None
            if settings["reference_std"]:
                sampling_reference = GaussianMeasure.diagonal(
                    np.zeros(problem.grid.size), settings["reference_std"] ** 2)
            chain = tmis_sample(posterior, TmisConfig(
                map=result.map,
                reference=problem.prior,
                steps=settings["steps"],
                lam=result.lam,
                seed=seeds["sampler"],
                sampling_reference=sampling_reference,
                initial_state=result.pushforward_mean,
                acceptance=settings["acceptance"],
                burn_in=settings["burn_in"],
                thin=settings["thin"],
                trace_indices=traced,
                progress=progress,
            ))
        else:
            beta = settings["beta"]
            if beta is None:
                beta, _ = tune_pcn_beta(posterior, problem.prior, result.lam, seeds["pilot"])
            chain = pcn_sample(posterior, PcnConfig(
                beta=beta,
                steps=settings["steps"],
                prior=problem.prior,
                lam=result.lam,
                seed=seeds["sampler"],
                burn_in=settings["burn_in"],
                thin=settings["thin"],
                trace_indices=traced,
                progress=progress,
            ))
        csv_path, sidecar_path = write_chain(chain, directory / "chain.csv")
        manifest.add(csv_path, "chain")
        manifest.add(sidecar_path, "chain-sidecar")
        mean, std = posterior_summary(chain, chain.burn_in, problem.grid)
        manifest.add(write_field_csv(mean, directory / "posterior_mean.csv"), "posterior-mean")
        manifest.add(write_field_csv(std, directory / "posterior_std.csv"), "posterior-std")
        manifest.write()
    return chain


def _write_profiles(problem, mean, std, directory, manifest):
    truth = problem.truth
    if problem.grid.dim == 1:
        columns = {
            "x": problem.grid.coordinates(0),
            "truth": truth.values,
            "mean": mean.values,
            "std": std.values,
            "lower": mean.values - 2.0 * std.values,
            "upper": mean.values + 2.0 * std.values,
            "abs_error": absolute_error(mean, truth).values,
        }
        manifest.add(write_columns_csv(columns, directory / "profile.csv"), "profile")
        return
    for axis, name in ((0, "profile_row.csv"), (1, "profile_column.csv")):
        coordinates, truth_line = line_profile(truth, axis, 0.0)
        columns = {
            "s": coordinates,
            "truth": truth_line,
            "mean": line_profile(mean, axis, 0.0)[1],
            "std": line_profile(std, axis, 0.0)[1],
        }
        manifest.add(write_columns_csv(columns, directory / name), "line-profile")


def _write_traces(chain, directory, manifest):
    """Trace and ACF extracts of the traced coordinates. Returns ESS per coordinate."""
    if not chain.traces:
        return {}
    traces, acfs, ess = {}, {}, {}
    retained = chain.length - chain.burn_in
    max_lag = min(ACF_MAX_LAG, retained - 1)
    for index, trace in sorted(chain.traces.items()):
        traces[f"u{index}"] = trace
        try:
            result = autocorrelation(trace[chain.burn_in:], max_lag)
        except ZeroVarianceError:
            ess[str(index)] = None
            continue
        acfs[f"u{index}"] = result.acf
        ess[str(index)] = result.ess
    manifest.add(write_columns_csv({"step": np.arange(chain.length), **traces},
                                   directory / "traces.csv"), "traces")
    if acfs and max_lag >= 1:
        manifest.add(write_columns_csv({"lag": np.arange(max_lag + 1), **acfs},
                                       directory / "acf.csv"), "acf")
    return ess


def _safe_psnr(x, truth):
    try:
        return psnr(x, truth)
    except InfinitePsnrError:
        return None


def reconstruct_fbp(problem, observation):
    parameters = problem.model.parameters
    return fbp(observation, parameters["angles"], np.asarray(parameters["offsets"]),
               problem.grid)


def diagnose_stage(config, out=None, manifest=None):
    """Error metrics, ESS map, trace/ACF extracts and plot-ready profiles.

    :return: Diagnostics report
    :rtype: dict
    """
    directory = output_directory(config, out)
    manifest = manifest or ArtifactManifest.load(directory)
    with stage(DIAGNOSE):
        problem = build_problem(config)
        chain = read_chain(directory / "chain.csv")
        mean = read_field_csv(directory / "posterior_mean.csv")
        std = read_field_csv(directory / "posterior_std.csv")
        truth = problem.truth
        report = {
            "experiment": config.experiment,
            "alpha": config.alpha,
            "lambda": chain.lam,
            "acceptance_rate": chain.acceptance_rate,
            "chain_length": chain.length,
            "burn_in": chain.burn_in,
            "rel_err": rel_err(mean, truth),
            "prior_rel_err": rel_err(Field(truth.grid, problem.prior.mean), truth),
            "mean_std": float(np.mean(std.values)),
        }
        retained = chain.samples[chain.stored_indices >= chain.burn_in]
        report["ess_samples"] = int(retained.shape[0])
        if retained.shape[0] > 2:
            ess = ess_map(retained)
            report["ess_median"] = float(np.median(ess))
            report["ess_min"] = float(np.min(ess))
            manifest.add(write_field_csv(Field(problem.grid, ess), directory / "ess.csv"),
                         "ess-map")
        report["trace_ess"] = _write_traces(chain, directory, manifest)
        if problem.grid.dim == 2:
            report["ssim"] = ssim(mean, truth)
            report["psnr"] = _safe_psnr(mean, truth)
        if config.experiment == "denoise":
            noisy = Field(problem.grid, read_matrix_csv(directory / "data.csv").reshape(-1))
            report["noisy_ssim"] = ssim(noisy, truth)
            report["noisy_psnr"] = _safe_psnr(noisy, truth)
        if config.experiment == "ct":
            observation = read_matrix_csv(directory / "data.csv").reshape(-1)
            baseline = reconstruct_fbp(problem, observation)
            report["fbp_rel_err"] = rel_err(baseline, truth)
            report["fbp_ssim"] = ssim(baseline, truth)
        _write_profiles(problem, mean, std, directory, manifest)
        manifest.add(write_json(stamp_version(report), directory / "diagnostics.json"),
                     "diagnostics")
        manifest.write()
    logger.info("diagnostics: rel_err=%.4f acceptance=%.4f", report["rel_err"],
                report["acceptance_rate"])
    return report


################################################
#   Pipelines
################################################
def run_pipeline(config, out=None, progress=False):
    """Run every stage in order and write the artifact manifest.

    :param config: Experiment config
    :type config: ExperimentConfig
    :return: Artifact directory
    :rtype: Path
    :raises PipelineStageError: If a stage fails
    """
    directory = output_directory(config, out)
    manifest = ArtifactManifest(directory)
    gen_data(config, directory, manifest)
    build_map_stage(config, directory, manifest)
    sample_stage(config, directory, manifest, progress=progress)
    diagnose_stage(config, directory, manifest)
    logger.info("artifacts in %s", directory)
    return directory


def run_fbp(config, out=None):
    """Filtered back-projection baseline of a CT config.

    :return: Baseline metrics
    :rtype: dict
    """
    directory = output_directory(config, out)
    manifest = ArtifactManifest.load(directory)
    with stage(FBP):
        if config.experiment != "ct":
            raise ValueError(f"fbp validation error, experiment '{config.experiment}' is not ct")
        problem = build_problem(config)
        observation, sigma = generate_observation(problem)
        reconstruction = reconstruct_fbp(problem, observation)
        metrics = {
            "rel_err": rel_err(reconstruction, problem.truth),
            "ssim": ssim(reconstruction, problem.truth),
            "sigma": sigma,
        }
        manifest.add(write_field_csv(reconstruction, directory / "fbp.csv"), "fbp")
        manifest.add(write_json(stamp_version(metrics), directory / "fbp.json"), "fbp-metrics")
        manifest.write()
    logger.info("FBP: rel_err=%.4f ssim=%.4f", metrics["rel_err"], metrics["ssim"])
    return metrics


def sweep_variants(config, alphas=(), noises=(), hypers=()):
    """Configs varying the fractional order, the noise level or (k, vartheta).

    :return: Variant label and config pairs
    :rtype: list(tuple(str, ExperimentConfig))
    """
    variants = []
    base = config.to_json()
    for alpha in alphas:
        document = config.to_json()
        document["alpha"] = alpha
        variants.append((f"alpha_{alpha}", document))
    for percent in noises:
        document = config.to_json()
        document["noise"]["percent"] = percent
        variants.append((f"noise_{percent}", document))
    for k, vartheta in hypers:
        document = config.to_json()
        document["hyper"] = {"k": k, "vartheta": vartheta}
        variants.append((f"hyper_{k}_{vartheta}", document))
    if not variants:
        variants.append(("base", base))
    return [(label, ExperimentConfig(document)) for label, document in variants]


def run_sweep(config, alphas=(), noises=(), hypers=(), out=None):
    """Rerun the pipeline per variant and tabulate the main metrics.

    :return: One row per variant
    :rtype: list(dict)
    """
    directory = output_directory(config, out)
    manifest = ArtifactManifest(directory)
    rows = []
    for label, variant in sweep_variants(config, alphas, noises, hypers):
        run_directory = run_pipeline(variant, directory / label)
        report = read_json(run_directory / "diagnostics.json")
        rows.append({
            "label": label,
            "alpha": variant.alpha,
            "noise_percent": variant.noise["percent"],
            "k": variant.hyper["k"],
            "vartheta": variant.hyper["vartheta"],
            "rel_err": report["rel_err"],
            "mean_std": report["mean_std"],
            "ssim": report.get("ssim"),
            "psnr": report.get("psnr"),
            "lambda": report["lambda"],
            "acceptance_rate": report["acceptance_rate"],
        })
    with stage(SWEEP):
        columns = {
            name: [np.nan if row[name] is None else row[name] for row in rows]
            for name in ("alpha", "noise_percent", "k", "vartheta", "rel_err", "mean_std",
                         "ssim", "psnr", "lambda", "acceptance_rate")
        }
        manifest.add(write_columns_csv(columns, directory / "sweep.csv"), "sweep-table")
        manifest.add(write_json(stamp_version({"rows": rows}), directory / "sweep.json"),
                     "sweep")
        manifest.write()
    return rows
