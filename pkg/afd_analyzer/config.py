# Project Configuration and Constants

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml
from dotenv import load_dotenv

from afd_analyzer.logger_utils import ConfigError

PACKAGE_DATA_DIR = Path(__file__).resolve().parent / 'data'

# ============================================================================
# Wikipedia AfD Collection
# ============================================================================
# Daily log page naming: Wikipedia:Articles_for_deletion/Log/2023_January_1
AFD_LOG_URL_TEMPLATE = (
    "https://en.wikipedia.org/wiki/Wikipedia:Articles_for_deletion/Log/{year}_{month_name}_{day}"
)
AFD_LOG_PATH_MARKER = "Articles_for_deletion/Log/"

MONTH_NAMES = [
    'January', 'February', 'March', 'April', 'May', 'June',
    'July', 'August', 'September', 'October', 'November', 'December'
]

WIDE_2023_START = '2023-01-01'
WIDE_2023_END = '2024-07-18'

USER_AGENT = (
    "afd-analyzer/0.1 (Wikipedia deletion discussion research; "
    "https://pypi.org/project/afd-analyzer/)"
)
HTTP_TIMEOUT = 30  # seconds
DEFAULT_RATE_LIMIT = 1.0  # requests per second
DEFAULT_MAX_WORKERS = 4
DEFAULT_MAX_RETRIES = 3
RETRY_BACKOFF_MIN = 1  # seconds
RETRY_BACKOFF_MAX = 30  # seconds
DEFAULT_CACHE_DIR = '.afd_cache'

# ============================================================================
# Labels
# ============================================================================
OUTCOME_LABELS = [
    'delete', 'keep', 'redirect', 'no consensus',
    'merge', 'speedy keep', 'speedy delete', 'withdrawn'
]
STANCE_LABELS = ['keep', 'delete', 'merge', 'comment']
SENTIMENT_LABELS = ['positive', 'negative', 'neutral']
OFFENSIVE_LABELS = ['offensive', 'non-offensive']
POLICY_LABEL_COUNT = 15

VARIANT_TABLE_PATH = str(PACKAGE_DATA_DIR / 'label_variants.tsv')
POLICY_LABELS_PATH = str(PACKAGE_DATA_DIR / 'policy_labels.txt')
POLICY_SHORTCUTS_PATH = str(PACKAGE_DATA_DIR / 'policy_shortcuts.tsv')
LEXICON_PATH = str(PACKAGE_DATA_DIR / 'sentiment_lexicon.tsv')

# ============================================================================
# Cleaning & Masking
# ============================================================================
BOLD_OPEN = '**'
BOLD_CLOSE = '**'
MASK_MODES = ('delete', 'replace')
DEFAULT_MASK_MODE = 'delete'
MASK_TOKEN = '[VOTE]'

# ============================================================================
# Dataset Configuration
# ============================================================================
DEFAULT_SPLIT_RATIOS = (0.70, 0.10, 0.20)  # train / validation / test
DEFAULT_SPLIT_SEED = 42
DATASET_SCHEMA_VERSION = 1
STRATIFICATION_TOLERANCE = 0.02  # proportion drift allowed per label
STRATIFICATION_MIN_LABEL_SIZE = 50
SENTENCE_LENGTH_QUANTILES = [0.25, 0.5, 0.75]

# ============================================================================
# Baseline Model Configuration
# ============================================================================
BASELINE_L2 = 1e-4
BASELINE_EPOCHS = 200
BASELINE_LEARNING_RATE = 0.5
BASELINE_MIN_DF = 1
BASELINE_NGRAM_RANGE = (1, 2)
BASELINE_SEED = 42
MODEL_MAGIC = b'AFDBASELINE'
MODEL_FORMAT_VERSION = 1

# ============================================================================
# Inference Backends
# ============================================================================
REMOTE_TOKEN_ENV = 'AFD_REMOTE_TOKEN'
LLM_API_BASE = 'https://api.openai.com/v1'
LLM_MODEL = 'gpt-4o'
LLM_API_KEY_ENV = 'OPENAI_API_KEY'
LLM_TEMPERATURE = 0.0
LLM_MAX_TOKENS = 512
BACKEND_RATE_LIMIT = 2.0  # requests per second
BACKEND_MAX_WORKERS = 4

# ============================================================================
# Metrics
# ============================================================================
CORRELATION_MODES = ('mean_probability', 'vote_fraction')
CONTROVERSIAL_TOP_K = 10

# ============================================================================
# Debug & Logging Configuration
# ============================================================================
LOG_LEVEL = 'INFO'  # Options: DEBUG, INFO, WARNING, ERROR, CRITICAL
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')
LOG_DIR = 'logs'

ENV_PREFIX = 'AFD_'


@dataclass(frozen=True)
class Config:
    """Runtime configuration; precedence is flags > env > config file > defaults."""

    cache_dir: str = DEFAULT_CACHE_DIR
    rate_limit: float = DEFAULT_RATE_LIMIT
    max_workers: int = DEFAULT_MAX_WORKERS
    max_retries: int = DEFAULT_MAX_RETRIES
    http_timeout: float = HTTP_TIMEOUT
    user_agent: str = USER_AGENT
    log_url_template: str = AFD_LOG_URL_TEMPLATE
    refresh: bool = False

    remote_endpoint: Optional[str] = None
    remote_token_env: str = REMOTE_TOKEN_ENV
    llm_api_base: str = LLM_API_BASE
    llm_model: str = LLM_MODEL
    llm_api_key_env: str = LLM_API_KEY_ENV
    llm_temperature: float = LLM_TEMPERATURE
    llm_max_tokens: int = LLM_MAX_TOKENS
    backend_rate_limit: float = BACKEND_RATE_LIMIT

    variant_table_path: str = VARIANT_TABLE_PATH
    policy_labels_path: str = POLICY_LABELS_PATH
    policy_shortcuts_path: str = POLICY_SHORTCUTS_PATH
    lexicon_path: str = LEXICON_PATH

    split_ratios: Tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    split_seed: int = DEFAULT_SPLIT_SEED
    mask_mode: str = DEFAULT_MASK_MODE
    mask_token: str = MASK_TOKEN

    log_level: str = LOG_LEVEL
    extra: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> 'Config':
        """
        Check referenced paths and numeric ranges.

        Returns:
            Config: self, for chaining

        Raises:
            ConfigError: on the first invalid setting
        """
        for name in ('variant_table_path', 'policy_labels_path', 'policy_shortcuts_path', 'lexicon_path'):
            path = getattr(self, name)
            if not Path(path).is_file():
                raise ConfigError(f"{name} points to a missing file: {path}")
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios):
            raise ConfigError(f"split_ratios must be three non-negative fractions: {self.split_ratios}")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must sum to 1: {self.split_ratios}")
        if self.rate_limit <= 0 or self.backend_rate_limit <= 0:
            raise ConfigError("rate limits must be positive")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be at least 1")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}: {self.mask_mode}")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {LOG_LEVELS}: {self.log_level}")
        return self


def _coerce(name: str, raw: Any, default: Any) -> Any:
    """Coerce a config-file or environment value to the type of its default."""
    if raw is None:
        return None
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        return str(raw).strip().lower() in ('1', 'true', 'yes', 'on')
    try:
        if isinstance(default, tuple):
            items = raw.split(',') if isinstance(raw, str) else list(raw)
            return tuple(float(item) for item in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {name}: {raw!r}") from e
    return raw if not isinstance(raw, str) else raw.strip()


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                env: Optional[Dict[str, str]] = None) -> Config:
    """
    Build a Config from defaults, a YAML file, AFD_* variables and overrides.

    Args:
        path (str): Optional YAML config file
        overrides (dict): Values from command-line flags; None entries are ignored
        env (dict): Environment mapping (defaults to os.environ after loading .env)

    Returns:
        Config: Validated configuration

    Raises:
        ConfigError: If the file is unreadable or a value is invalid

    Example:
        >>> config = load_config('afd.yaml', overrides={'rate_limit': 2.0})
    """
    if env is None:
        load_dotenv()
        env = dict(os.environ)

    defaults = Config()
    known = {f.name: getattr(defaults, f.name) for f in fields(Config) if f.name != 'extra'}
    values: Dict[str, Any] = {}
    extra: Dict[str, Any] = {}

    if path:
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                loaded = yaml.safe_load(handle) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Could not read config file {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must hold a mapping")
        for key, value in loaded.items():
            if key in known:
                values[key] = _coerce(key, value, known[key])
            else:
                extra[key] = value

    for key, default in known.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = _coerce(key, env[env_key], default)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"Unknown config key: {key}")
        values[key] = _coerce(key, value, known[key])

    return replace(defaults, extra=extra, **values).validate()
