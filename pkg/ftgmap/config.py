#!/usr/bin/env python3

################################################
#
#   Library to work with ExperimentConfig[json]
#
################################################

################################################
#   Libraries
################################################
import copy
from importlib import resources
from pathlib import Path

from ftgmap.utils import derive_seeds, read_json


# Experiment kinds and their domains
EXPERIMENTS = {
    "deconvolution": (0.0, 1.0),
    "heat_source": (0.0, 12.0),
    "ct": (-1.0, 1.0),
    "denoise": (-1.0, 1.0),
}
TWO_DIMENSIONAL = ("ct", "denoise")

REQUIRED_KEYS = ("name", "experiment", "grid", "noise", "prior", "hyper", "map", "sampler")
OPTIONAL_KEYS = ("alpha", "forward", "seeds", "output", "description")

DEFAULT_GRID = {"refine": 2}
DEFAULT_NOISE = {"percent": 1.0, "sigma": None, "likelihood_sigma": None}
DEFAULT_FORWARD = {
    "deconvolution": {"delta": 0.02},
    "heat_source": {"steps": 120, "T": 1.0, "r": 12.0, "w": 0.5},
    "ct": {"angles": 45, "rays_per_angle": 95},
    "denoise": {},
}
DEFAULT_MAP = {
    "M": 1000,
    "outer_iters": 5,
    "step_tol": 1e-6,
    "grad_tol": 1e-8,
    "max_evals": 1000,
    "degree": 1,
    "eps": 1e-8,
}
DEFAULT_SAMPLER = {
    "kind": "tmis",
    "steps": 100000,
    "acceptance": "simplified",
    "reference_std": None,
    "beta": None,
    "burn_in": None,
    "thin": None,
    "trace_points": [],
}
DEFAULT_SEEDS = {"run": 0}


################################################
#   Errors
################################################
class ConfigError(ValueError):
    """Custom exception for error tracking."""


################################################
#   Functions
################################################
def bundled_configs():
    """Names of the configs shipped with the package."""
    folder = resources.files("ftgmap.configs")
    return sorted(entry.name[:-len(".json")] for entry in folder.iterdir()
                  if entry.name.endswith(".json"))


def load_config(name_or_path):
    """ExperimentConfig from a bundled config name or a JSON file path.

    :param name_or_path: Bundled name (e.g. 'deconv_1pct_alpha095') or path
    :type name_or_path: str or Path
    :rtype: ExperimentConfig
    :raises ConfigError: If the config cannot be found or does not validate
    """
    path = Path(name_or_path)
    if path.is_file():
        return ExperimentConfig(read_json(path))
    resource = resources.files("ftgmap.configs").joinpath(f"{name_or_path}.json")
    if not resource.is_file():
        raise ConfigError(f"Config validation error, no file or bundled config named "
                          f"'{name_or_path}' (bundled: {', '.join(bundled_configs())})")
    with resources.as_file(resource) as bundled:
        return ExperimentConfig(read_json(bundled))


################################################
#   ExperimentConfig
################################################
class ExperimentConfig(object):
    """Class to represent an ExperimentConfig[json].

    Sections with defaults (grid, noise, forward, map, sampler, seeds) are
    merged over their defaults, so a config only needs the keys it changes.
    """

    def __init__(self, input_json):
        """Constructor method.
        Initialize object and attributes.

        :param input_json: ExperimentConfig[json]
        :type input_json: dict
        """

        # Copy it so that the original does not get changed unexpectedly
        input_json_ = copy.deepcopy(input_json)

        unknown = set(input_json_) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS)
        if unknown:
            raise ConfigError(f"Config validation error, unknown keys {sorted(unknown)}")
        #end if

        # Basic attributes
        for key in input_json_:
            setattr(self, key, input_json_[key])
        #end for
        self.alpha = input_json_.get("alpha")
        self.output = input_json_.get("output")
        self.description = input_json_.get("description")

        self._validate()
        self._merge_defaults()
        self._validate_values()
    #end def

    def _validate(self):
        """
        """
        try:
            for key in REQUIRED_KEYS:
                getattr(self, key)
            #end for
        except AttributeError as e:
            raise ConfigError(f"Config validation error, {e.args[0]}")
        #end try
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"Config validation error, experiment '{self.experiment}' "
                              f"not in {sorted(EXPERIMENTS)}")
        #end if
    #end def

    def _merge_defaults(self):
        """Fill the optional keys of every section."""
        self.grid = _merged("grid", DEFAULT_GRID, self.grid)
        self.noise = _merged("noise", DEFAULT_NOISE, self.noise)
        self.forward = _merged("forward", DEFAULT_FORWARD[self.experiment],
                               getattr(self, "forward", {}))
        self.map = _merged("map", DEFAULT_MAP, self.map)
        self.sampler = _merged("sampler", DEFAULT_SAMPLER, self.sampler)
        self.seeds = _merged("seeds", DEFAULT_SEEDS, getattr(self, "seeds", {}),
                             extra=("data", "map", "sampler", "pilot"))
    #end def

    def _validate_values(self):
        cells = self.grid.get("cells")
        if not isinstance(cells, int) or cells < (8 if self.is_2d else 2):
            raise ConfigError(f"Config validation error, grid.cells={cells} is too small")
        refine = self.grid["refine"]
        if not isinstance(refine, int) or refine < 1:
            raise ConfigError(f"Config validation error, grid.refine={refine} must be >= 1")
        if self.alpha is not None and not 0 < self.alpha <= 2:
            raise ConfigError(f"Config validation error, alpha={self.alpha} not in (0, 2]")

        noise = self.noise
        if noise["percent"] is None or noise["percent"] < 0:
            raise ConfigError(f"Config validation error, noise.percent={noise['percent']}")
        noiseless = noise["percent"] == 0 and not noise["sigma"]
        if noiseless and not noise["likelihood_sigma"]:
            raise ConfigError("Config validation error, noiseless data needs "
                              "noise.likelihood_sigma")
        for key in ("sigma", "likelihood_sigma"):
            if noise[key] is not None and noise[key] < 0:
                raise ConfigError(f"Config validation error, noise.{key} is negative")

        prior = self.prior
        if "variance" in prior:
            if not prior["variance"] > 0:
                raise ConfigError("Config validation error, prior.variance must be positive")
        elif "gamma" in prior and "nu" in prior:
            if self.is_2d:
                raise ConfigError("Config validation error, 2D experiments need "
                                  "prior.variance")
            if not (prior["gamma"] > 0 and prior["nu"] > 0):
                raise ConfigError("Config validation error, prior.gamma and prior.nu "
                                  "must be positive")
        else:
            raise ConfigError("Config validation error, prior needs variance or gamma and nu")

        hyper = self.hyper
        if not (hyper.get("k", 0) > 1 and hyper.get("vartheta", 0) > 0):
            raise ConfigError("Config validation error, hyper needs k > 1 and vartheta > 0")

        builder = self.map
        if builder["M"] < 2 or builder["outer_iters"] < 1 or builder["degree"] < 1:
            raise ConfigError("Config validation error, map needs M >= 2, outer_iters >= 1 "
                              "and degree >= 1")
        if builder["max_evals"] < 0 or not builder["step_tol"] > 0:
            raise ConfigError("Config validation error, map tolerances must be positive")

        sampler = self.sampler
        if sampler["kind"] not in ("tmis", "pcn"):
            raise ConfigError(f"Config validation error, sampler.kind={sampler['kind']}")
        if sampler["kind"] == "tmis" and builder["degree"] != 1:
            raise ConfigError("Config validation error, tmis needs map.degree=1")
        if sampler["steps"] < 2:
            raise ConfigError(f"Config validation error, sampler.steps={sampler['steps']} < 2")
        if sampler["beta"] is not None and not 0 < sampler["beta"] <= 1:
            raise ConfigError(f"Config validation error, sampler.beta={sampler['beta']}")
        if sampler["reference_std"] is not None and not sampler["reference_std"] > 0:
            raise ConfigError(f"Config validation error, sampler.reference_std="
                              f"{sampler['reference_std']} must be positive")
        if sampler["acceptance"] not in ("simplified", "exact"):
            raise ConfigError(f"Config validation error, sampler.acceptance="
                              f"{sampler['acceptance']}")
        burn_in = sampler["burn_in"]
        if burn_in is not None and not 0 <= burn_in < sampler["steps"]:
            raise ConfigError(f"Config validation error, sampler.burn_in={burn_in}")
    #end def

    @property
    def is_2d(self):
        return self.experiment in TWO_DIMENSIONAL

    @property
    def extent(self):
        if self.experiment == "heat_source":
            return (0.0, float(self.forward["r"]))
        return EXPERIMENTS[self.experiment]

    @property
    def cells(self):
        return self.grid["cells"]

    def stage_seeds(self):
        """Seeds per stage, derived from seeds.run unless set explicitly."""
        seeds = derive_seeds(self.seeds["run"])
        for stage in seeds:
            if self.seeds.get(stage) is not None:
                seeds[stage] = int(self.seeds[stage])
            #end if
        #end for
        return seeds

    def with_overrides(self, seed=None, out=None, steps=None, alpha=None, cells=None):
        """New config with CLI overrides applied. A new seed re-derives all stages."""
        document = self.to_json()
        if seed is not None:
            document["seeds"] = {"run": int(seed)}
        if out is not None:
            document["output"] = str(out)
        if steps is not None:
            document["sampler"]["steps"] = int(steps)
            document["sampler"]["burn_in"] = None
        if alpha is not None:
            document["alpha"] = float(alpha)
        if cells is not None:
            document["grid"]["cells"] = int(cells)
        return ExperimentConfig(document)

    def to_json(self):
        document = {
            "name": self.name,
            "experiment": self.experiment,
            "alpha": self.alpha,
            "grid": self.grid,
            "noise": self.noise,
            "forward": self.forward,
            "prior": self.prior,
            "hyper": self.hyper,
            "map": self.map,
            "sampler": self.sampler,
            "seeds": self.seeds,
            "output": self.output,
        }
        if self.description is not None:
            document["description"] = self.description
        return copy.deepcopy(document)

#end class


def _merged(section, defaults, values, extra=()):
    if not isinstance(values, dict):
        raise ConfigError(f"Config validation error, {section} must be an object")
    allowed = set(defaults) | set(extra) | ({"cells"} if section == "grid" else set())
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"Config validation error, unknown {section} keys {sorted(unknown)}")
    merged = copy.deepcopy(defaults)
    merged.update(values)
    return merged
