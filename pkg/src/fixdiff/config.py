"""
Configuration management for fixdiff.

Handles:
- XDG Base Directory compliance
- TOML/INI configuration file loading
- Config dataclass with all experiment options
- Configuration merging (system -> user -> --config file -> CLI)
- Validation with dotted field paths
- Automatic script mode detection
"""

import configparser
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple

from fixdiff.errors import ConfigError

logger = logging.getLogger(__name__)

# -------------------- SCRIPT MODE DETECTION --------------------


def is_script_mode() -> bool:
    """
    True when console decorations should be off.

    That is the case when stdout is not a TTY, or NO_COLOR or
    FIXDIFF_SCRIPT_MODE is set.
    """
    try:
        if not sys.stdout.isatty():
            return True
    except Exception:
        return True
    return bool(os.getenv("NO_COLOR") or os.getenv("FIXDIFF_SCRIPT_MODE"))


# Try TOML support (Python 3.11+ or tomli package)
try:
    import tomllib  # Python 3.11+

    TOML_AVAILABLE = True
except ImportError:
    try:
        import tomli as tomllib  # pip install tomli

        TOML_AVAILABLE = True
    except ImportError:
        TOML_AVAILABLE = False


# -------------------- XDG DIRECTORIES --------------------


def get_xdg_config_home() -> Path:
    return Path(os.environ.get("XDG_CONFIG_HOME", Path.home() / ".config"))


def get_xdg_state_home() -> Path:
    return Path(os.environ.get("XDG_STATE_HOME", Path.home() / ".local" / "state"))


def get_xdg_cache_home() -> Path:
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache"))


def get_app_dirs() -> Dict[str, Path]:
    """Return all application directories, creating them if needed."""
    dirs = {
        "config": get_xdg_config_home() / "fixdiff",
        "state": get_xdg_state_home() / "fixdiff",
        "logs": get_xdg_state_home() / "fixdiff" / "logs",
        "cache": get_xdg_cache_home() / "fixdiff",
    }
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


# -------------------- CONFIGURATION DATACLASS --------------------


@dataclass
class Config:
    """All configuration options for fixdiff experiments."""

    # General
    seeds: int = 1
    seed: int = 0
    workers: int = 0  # 0 = auto
    timing: bool = False
    out_dir: str = "fixdiff-out"
    debug: bool = False
    progress: bool = True

    # Reference protocol
    ref_accuracy: float = 1e-10
    ref_cap: int = 100000

    # Elastic net
    elastic_n: int = 100
    elastic_d: int = 100
    elastic_informative: int = 30
    elastic_correlated: bool = False
    elastic_c: float = 1.0
    elastic_lam1_fractions: List[float] = field(default_factory=lambda: [0.05, 0.4])
    elastic_lam2: float = 1.0
    elastic_t_max: int = 150
    elastic_t_step: int = 5
    elastic_k_grid: List[int] = field(default_factory=lambda: [10, 30, 100, 300, 1000])

    # Data poisoning
    poison_n: int = 500
    poison_corrupt: int = 150
    poison_val: int = 500
    poison_p: int = 20
    poison_classes: int = 3
    poison_lam1: float = 0.02
    poison_lam2: float = 0.1
    poison_c: float = 0.1
    poison_k_grid: List[int] = field(default_factory=lambda: [100, 300, 1000, 2000])
    # Optional dataset file: CSV, or IDX images when labels_path is set too
    poison_images_path: str = ""
    poison_labels_path: str = ""

    # Stochastic solver
    schedule: str = "theory"  # theory, preset
    const_eta: float = 0.0  # 0 = first step of the decreasing schedule, capped at 1
    cg_mode: str = "normal-eq"
    run_sid: bool = True

    def validate(self) -> None:
        """Raise ConfigError naming the first offending field."""

        def need(cond: bool, path: str, msg: str) -> None:
            if not cond:
                raise ConfigError(path, msg)

        need(self.seeds >= 1, "general.seeds", "must be >= 1")
        need(self.workers >= 0, "general.workers", "must be >= 0")
        need(0 < self.ref_accuracy < 1, "reference.accuracy", "must lie in (0, 1)")
        need(self.ref_cap >= 1, "reference.cap", "must be >= 1")
        need(self.elastic_n > 0, "elastic.n", "must be positive")
        need(self.elastic_d > 0, "elastic.d", "must be positive")
        need(0 < self.elastic_informative <= self.elastic_d, "elastic.n_informative", "must lie in (0, d]")
        need(self.elastic_c > 0, "elastic.c", "must be positive")
        need(len(self.elastic_lam1_fractions) > 0, "elastic.lam1_fractions", "must not be empty")
        need(all(f >= 0 for f in self.elastic_lam1_fractions), "elastic.lam1_fractions", "must be non-negative")
        need(self.elastic_lam2 >= 0, "elastic.lam2", "must be non-negative")
        need(self.elastic_t_max >= 1, "elastic.t_max", "must be >= 1")
        need(self.elastic_t_step >= 1, "elastic.t_step", "must be >= 1")
        need(all(k >= 1 for k in self.elastic_k_grid), "elastic.k_grid", "entries must be >= 1")
        need(self.poison_n > 0, "poisoning.n", "must be positive")
        need(self.poison_corrupt >= 0, "poisoning.n_corrupt", "must be >= 0")
        need(self.poison_val > 0, "poisoning.n_val", "must be positive")
        need(self.poison_classes >= 2, "poisoning.n_classes", "must be >= 2")
        need(self.poison_p >= 2 * self.poison_classes, "poisoning.p", "must be >= 2 * n_classes")
        need(self.poison_lam1 >= 0, "poisoning.lam1", "must be non-negative")
        need(self.poison_lam2 >= 0, "poisoning.lam2", "must be non-negative")
        need(self.poison_c > 0, "poisoning.c", "must be positive")
        need(all(k >= 1 for k in self.poison_k_grid), "poisoning.k_grid", "entries must be >= 1")
        need(
            not self.poison_labels_path or bool(self.poison_images_path),
            "poisoning.labels_path",
            "needs poisoning.images_path",
        )
        need(self.schedule in ("theory", "preset"), "stochastic.schedule", "must be 'theory' or 'preset'")
        need(self.const_eta >= 0, "stochastic.const_eta", "must be non-negative")
        need(self.cg_mode in ("normal-eq", "direct-cg"), "stochastic.cg_mode", "must be 'normal-eq' or 'direct-cg'")

    @classmethod
    def for_library(cls, **kwargs) -> "Config":
        """Config with console decorations off, for programmatic use."""
        defaults: Dict[str, Any] = {"progress": False}
        defaults.update(kwargs)
        return cls(**defaults)


# -------------------- CONFIG FILE LOADING --------------------


def _parse_ini_value(value: str):
    """Parse INI value: bool, int, float, list (comma-sep), or string."""
    v = value.strip()
    if not v:
        return ""
    if v.lower() in ("true", "yes", "on"):
        return True
    if v.lower() in ("false", "no", "off"):
        return False
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        pass
    if "," in v:
        return [_parse_ini_value(x) for x in v.split(",") if x.strip()]
    return v


def _load_ini_config(path: Path) -> Dict[str, Any]:
    """Load INI file and convert to nested dict."""
    cp = configparser.ConfigParser()
    cp.read(path)
    result: Dict[str, Any] = {}
    for section in cp.sections():
        result[section] = {}
        for key, value in cp.items(section):
            result[section][key] = _parse_ini_value(value)
    return result


def load_config_path(path: Path) -> Dict[str, Any]:
    """Load one explicit file; .toml needs TOML support, anything else is read as INI."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "no such file")
    try:
        if path.suffix == ".toml":
            if not TOML_AVAILABLE:
                raise ConfigError(str(path), "TOML support needs Python 3.11+ or the tomli package")
            with path.open("rb") as f:
                return dict(tomllib.load(f))
        return _load_ini_config(path)
    except ConfigError:
        raise
    except Exception as e:
        raise ConfigError(str(path), f"cannot parse: {e}") from e


def _load_single_config(config_dir: Path) -> Dict[str, Any]:
    """Load config from a single directory (TOML or INI file)."""
    toml_path = config_dir / "config.toml"
    ini_path = config_dir / "config.ini"
    for path in (toml_path, ini_path):
        if path.exists() and (path is ini_path or TOML_AVAILABLE):
            try:
                return load_config_path(path)
            except ConfigError as e:
                logger.warning("ignoring %s", e)
                return {}
    return {}


def _deep_merge_dicts(base: dict, override: dict) -> dict:
    """Deep merge two dicts, with override taking precedence."""
    result = base.copy()
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge_dicts(result[key], value)
        else:
            result[key] = value
    return result


def load_config_file(config_dir: Path, extra: Optional[Path] = None) -> dict:
    """
    Load config with priority (lowest first):
    1. System config: /etc/fixdiff/config.toml (optional)
    2. User config: ~/.config/fixdiff/config.toml
    3. An explicit --config file
    """
    merged: Dict[str, Any] = {}
    system_config_dir = Path("/etc/fixdiff")
    if system_config_dir.exists():
        merged = _load_single_config(system_config_dir)
    merged = _deep_merge_dicts(merged, _load_single_config(config_dir))
    if extra is not None:
        merged = _deep_merge_dicts(merged, load_config_path(extra))
    return merged


def _get_default_config_toml() -> str:
    """Return default config as TOML string."""
    return """# fixdiff configuration file
# This file is auto-generated on first run

[general]
seeds = 1
seed = 0
# 0 = auto-detect (capped by FIXDIFF_THREADS)
workers = 0
# write measured wall_ms to CSV (breaks byte-identical reruns)
timing = false
out_dir = "fixdiff-out"

[reference]
accuracy = 1e-10
cap = 100000

[elastic]
n = 100
d = 100
n_informative = 30
correlated = false
c = 1.0
# lam1 as fractions of ||2 n^-1 X^T y||_inf
lam1_fractions = [0.05, 0.4]
lam2 = 1.0
t_max = 150
t_step = 5
k_grid = [10, 30, 100, 300, 1000]

[poisoning]
n = 500
n_corrupt = 150
n_val = 500
p = 20
n_classes = 3
lam1 = 0.02
lam2 = 0.1
c = 0.1
k_grid = [100, 300, 1000, 2000]
# dataset file instead of synthetic blobs: CSV, or IDX images plus labels
images_path = ""
labels_path = ""

[stochastic]
schedule = "theory"  # theory, preset
const_eta = 0.0
cg_mode = "normal-eq"  # normal-eq, direct-cg
run_sid = true
"""


def _get_default_config_ini() -> str:
    """Return default config as INI string."""
    return """# fixdiff configuration file
# This file is auto-generated on first run

[general]
seeds = 1
seed = 0
; 0 = auto-detect (capped by FIXDIFF_THREADS)
workers = 0
timing = false
out_dir = fixdiff-out

[reference]
accuracy = 1e-10
cap = 100000

[elastic]
n = 100
d = 100
n_informative = 30
correlated = false
c = 1.0
; lists as comma-separated values
lam1_fractions = 0.05, 0.4
lam2 = 1.0
t_max = 150
t_step = 5
k_grid = 10, 30, 100, 300, 1000

[poisoning]
n = 500
n_corrupt = 150
n_val = 500
p = 20
n_classes = 3
lam1 = 0.02
lam2 = 0.1
c = 0.1
k_grid = 100, 300, 1000, 2000
; dataset file instead of synthetic blobs: CSV, or IDX images plus labels
images_path =
labels_path =

[stochastic]
schedule = theory
const_eta = 0.0
cg_mode = normal-eq
run_sid = true
"""


def save_default_config(config_dir: Path) -> Path:
    """Create default config file (TOML if available, else INI). Returns path."""
    config_dir.mkdir(parents=True, exist_ok=True)
    if TOML_AVAILABLE:
        path = config_dir / "config.toml"
        if not path.exists():
            path.write_text(_get_default_config_toml())
        return path
    path = config_dir / "config.ini"
    if not path.exists():
        path.write_text(_get_default_config_ini())
    return path


# Map config file keys to Config attribute names
MAPPINGS: Dict[Tuple[str, str], str] = {
    ("general", "seeds"): "seeds",
    ("general", "seed"): "seed",
    ("general", "workers"): "workers",
    ("general", "timing"): "timing",
    ("general", "out_dir"): "out_dir",
    ("general", "progress"): "progress",
    ("reference", "accuracy"): "ref_accuracy",
    ("reference", "cap"): "ref_cap",
    ("elastic", "n"): "elastic_n",
    ("elastic", "d"): "elastic_d",
    ("elastic", "n_informative"): "elastic_informative",
    ("elastic", "correlated"): "elastic_correlated",
    ("elastic", "c"): "elastic_c",
    ("elastic", "lam1_fractions"): "elastic_lam1_fractions",
    ("elastic", "lam2"): "elastic_lam2",
    ("elastic", "t_max"): "elastic_t_max",
    ("elastic", "t_step"): "elastic_t_step",
    ("elastic", "k_grid"): "elastic_k_grid",
    ("poisoning", "n"): "poison_n",
    ("poisoning", "n_corrupt"): "poison_corrupt",
    ("poisoning", "n_val"): "poison_val",
    ("poisoning", "p"): "poison_p",
    ("poisoning", "n_classes"): "poison_classes",
    ("poisoning", "lam1"): "poison_lam1",
    ("poisoning", "lam2"): "poison_lam2",
    ("poisoning", "c"): "poison_c",
    ("poisoning", "k_grid"): "poison_k_grid",
    ("poisoning", "images_path"): "poison_images_path",
    ("poisoning", "labels_path"): "poison_labels_path",
    ("stochastic", "schedule"): "schedule",
    ("stochastic", "const_eta"): "const_eta",
    ("stochastic", "cg_mode"): "cg_mode",
    ("stochastic", "run_sid"): "run_sid",
}


def _coerce(value: Any, default: Any, path: str) -> Any:
    """Convert a file value to the type of the attribute's default."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(path, f"expected a number, got {value!r}")
    if isinstance(default, list):
        items = value if isinstance(value, list) else [value]
        elem = default[0] if default else 0.0
        return [_coerce(v, elem, path) for v in items]
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(path, f"expected a string, got {value!r}")
    return value


def apply_config_to_args(file_config: dict, cfg: Config, cli_explicit: Optional[Set[str]] = None) -> None:
    """
    Apply file config values to a Config instance.

    Attributes named in cli_explicit keep their CLI value. Unknown sections
    or keys and ill-typed values raise ConfigError with the dotted path.
    """
    cli_explicit = cli_explicit or set()
    default_cfg = Config()
    known_sections = {section for section, _ in MAPPINGS}
    for section, entries in file_config.items():
        if section not in known_sections:
            raise ConfigError(section, "unknown section")
        if not isinstance(entries, dict):
            raise ConfigError(section, "expected a table of options")
        for key, file_val in entries.items():
            path = f"{section}.{key}"
            attr_name = MAPPINGS.get((section, key))
            if attr_name is None:
                raise ConfigError(path, "unknown option")
            value = _coerce(file_val, getattr(default_cfg, attr_name), path)
            if attr_name in cli_explicit:
                continue
            setattr(cfg, attr_name, value)


def effective_workers(cfg: Config) -> int:
    """min(configured workers, FIXDIFF_THREADS, cpu count); 0 means auto."""
    cpu = os.cpu_count() or 1
    wanted = cfg.workers if cfg.workers > 0 else cpu
    env = os.getenv("FIXDIFF_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError("FIXDIFF_THREADS", f"expected an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("FIXDIFF_THREADS", "must be >= 1")
        wanted = min(wanted, cap)
    return max(1, min(wanted, cpu))
