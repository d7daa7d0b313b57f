"""
Configuration loading: TOML experiment files, environment defaults and
construction of laws and profiles from validated specs.
"""
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from .errors import ConfigError, RankingProcessError
from .hydro import InitialProfile
from .rates import DiscreteLaw, EmpiricalLaw, ParetoLaw, RateLaw, load_empirical_file
from .schemas import ExperimentConfig, LawSpec

# Load environment variables
load_dotenv()


def default_threads() -> int:
    """Worker count from RANKING_PROCESS_THREADS, 1 when unset."""
    raw = os.getenv("RANKING_PROCESS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logging.warning(f"Ignoring invalid RANKING_PROCESS_THREADS={raw!r}")
        return 1


def default_log_level() -> str:
    return os.getenv("RANKING_PROCESS_LOG_LEVEL", "INFO").upper()


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate an experiment TOML file.

    Relative ``law.file`` paths are resolved against the config file's directory.

    Args:
        path (str or Path): Config file.

    Returns:
        ExperimentConfig: The validated config.
    """
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as e:
        logging.error(f"Failed to read config {path}: {str(e)}")
        raise ConfigError(f"cannot read config {path}: {e}") from e

    law = raw.get("law", {})
    if law.get("file") and not Path(law["file"]).is_absolute():
        law["file"] = str((path.parent / law["file"]).resolve())
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        logging.error(f"Invalid experiment config: {str(e)}")
        raise ConfigError(str(e)) from e


def build_law(spec: LawSpec) -> RateLaw:
    """Instantiate the rate law a `[law]` table describes."""
    try:
        if spec.kind == "pareto":
            return ParetoLaw(spec.a, spec.b)
        if spec.kind == "discrete":
            return DiscreteLaw.from_pairs(spec.atoms)
        return load_empirical_file(spec.file)
    except (RankingProcessError, OSError, ValueError) as e:
        logging.error(f"Invalid rate law {spec.kind}: {str(e)}")
        raise ConfigError(f"invalid rate law: {e}") from e


def build_profile(config: ExperimentConfig, law: RateLaw) -> Optional[InitialProfile]:
    """
    Initial profile for a config.

    ``fresh`` gives the uniform profile for atomic laws and ``None`` for
    continuous ones (the transient formulas then use the fresh closed form).
    """
    try:
        if config.profile == "fresh":
            if isinstance(law, (DiscreteLaw, EmpiricalLaw)):
                return InitialProfile.fresh(law)
            return None
        return InitialProfile.from_blocks(
            [(b.y_lo, b.y_hi, DiscreteLaw.from_pairs(b.atoms)) for b in config.profile]
        )
    except RankingProcessError as e:
        logging.error(f"Invalid initial profile: {str(e)}")
        raise ConfigError(f"invalid initial profile: {e}") from e
