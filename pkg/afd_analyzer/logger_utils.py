# Logging Configuration and Utilities

import logging
import os
import sys
from datetime import datetime

# ============================================================================
# Logger Setup
# ============================================================================

def setup_logger(name, level=None, log_dir=None):
    """
    Setup a logger with both file and console handlers.

    Console output goes to stderr so that records printed on stdout by the
    CLI stay machine-readable.

    Args:
        name (str): Logger name
        level (int): Logging level; defaults to AFD_LOG_LEVEL or INFO
        log_dir (str): Directory for the dated log file; defaults to
            AFD_LOG_DIR or 'logs'

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)

    # Avoid duplicate handlers
    if logger.handlers:
        return logger

    if level is None:
        level = getattr(logging, os.getenv('AFD_LOG_LEVEL', 'INFO').upper(), logging.INFO)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    # Console Handler
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    console_handler.setFormatter(console_formatter)
    logger.addHandler(console_handler)

    # File Handler
    log_dir = log_dir or os.getenv('AFD_LOG_DIR', 'logs')
    log_filename = os.path.join(log_dir, f"afd_analyzer_{datetime.now().strftime('%Y%m%d')}.log")
    try:
        os.makedirs(log_dir, exist_ok=True)

        file_handler = logging.FileHandler(log_filename, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)
    except OSError as e:
        print(f"Warning: Could not setup file logging: {e}", file=sys.stderr)

    return logger


def set_console_level(level):
    """Change the console level of every afd_analyzer logger (used by --verbose)."""
    for name, candidate in logging.Logger.manager.loggerDict.items():
        if not name.startswith('afd_analyzer') or not isinstance(candidate, logging.Logger):
            continue
        for handler in candidate.handlers:
            if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
                handler.setLevel(level)


# ============================================================================
# Error Handlers
# ============================================================================

class AfdAnalyzerError(Exception):
    """Base exception class for the package."""
    pass


class ConfigError(AfdAnalyzerError):
    """Raised when configuration is missing or invalid."""
    pass


# --- collector ---------------------------------------------------------------

class CollectError(AfdAnalyzerError):
    """Base class for collection failures."""
    pass


class InvalidDateRange(CollectError):
    """Raised when a date range is reversed or incomplete."""

    def __init__(self, start_date, end_date, reason=None):
        self.start_date = start_date
        self.end_date = end_date
        reason = reason or f"start {start_date} is after end {end_date}"
        super().__init__(f"Invalid date range: {reason}")


class MalformedUrl(CollectError):
    """Raised when a URL is not an absolute AfD log-page URL."""

    def __init__(self, url, reason="not an absolute AfD log-page URL"):
        self.url = url
        super().__init__(f"Malformed URL {url!r}: {reason}")


class NetworkError(CollectError):
    """Raised (or recorded per page) when a page cannot be fetched."""

    def __init__(self, url, cause):
        self.url = url
        self.cause = cause
        super().__init__(f"Failed to fetch {url}: {cause}")


class CacheIoError(CollectError):
    """Raised when the on-disk page cache cannot be read or written."""
    pass


# --- parser --------------------------------------------------------------------

class ParseError(AfdAnalyzerError):
    """Raised when a page or data file cannot be parsed."""

    def __init__(self, source, reason):
        self.source = source
        self.reason = reason
        super().__init__(f"Could not parse {source}: {reason}")


class UnknownLabel(AfdAnalyzerError, ValueError):
    """Raised when a raw outcome label matches no known variant."""

    def __init__(self, raw):
        self.raw = raw
        super().__init__(f"Unknown outcome label: {raw!r}")


# --- dataset -------------------------------------------------------------------

class DatasetError(AfdAnalyzerError):
    """Base class for dataset failures."""
    pass


class EmptyInput(DatasetError):
    """Raised when there is nothing to build a dataset from."""
    pass


class SchemaVersionMismatch(DatasetError):
    """Raised when a saved dataset was written by another schema version."""

    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"Dataset schema version {found} is not supported (expected {expected})")


class CorruptRecord(DatasetError):
    """Raised when a record line cannot be decoded."""

    def __init__(self, path, line_number, reason):
        self.path = path
        self.line_number = line_number
        super().__init__(f"Corrupt record in {path} at line {line_number}: {reason}")


class DegenerateStratum(UserWarning):
    """Warned when a label has too few items to be stratified across splits."""
    pass


# --- classify ------------------------------------------------------------------

class ModelError(AfdAnalyzerError):
    """Base class for model training and persistence failures."""
    pass


class InsufficientData(ModelError):
    """Raised when a label has fewer than two training items."""

    def __init__(self, label, count):
        self.label = label
        self.count = count
        super().__init__(f"Label {label!r} has {count} training item(s); at least 2 are required")


class ModelFormatError(ModelError):
    """Raised when a model file has a wrong header or version."""
    pass


class BackendError(AfdAnalyzerError):
    """Base class for inference backend failures."""
    pass


class BackendUnavailable(BackendError):
    """Raised when a backend cannot be reached or is not configured."""
    pass


class LabelSpaceMismatch(BackendError):
    """Raised when a backend returns a label outside the task's label space."""

    def __init__(self, label, task):
        self.label = label
        self.task = task
        super().__init__(f"Backend returned label {label!r}, not in the {task} label space")


class UnparseableResponse(BackendError):
    """Raised when an LLM response holds no well-formed Label/Explanation object."""
    pass


# --- pipeline ------------------------------------------------------------------

class AnalysisError(AfdAnalyzerError):
    """Base class for analyze failures."""
    pass


class DiscussionNotFound(AnalysisError):
    """Raised when a URL does not identify exactly one discussion."""

    def __init__(self, url, candidates=()):
        self.url = url
        self.candidates = list(candidates)
        message = f"No single discussion found at {url}"
        if self.candidates:
            message += f"; candidates: {', '.join(self.candidates)}"
        super().__init__(message)


class ExplanationUnavailable(AnalysisError):
    """Raised when an explanation is requested without an LLM backend."""
    pass


# --- metrics -------------------------------------------------------------------

class MetricsError(AfdAnalyzerError):
    """Base class for metric computation failures."""
    pass


class UnknownLabelInPairs(MetricsError):
    """Raised when evaluation pairs hold a label outside the label space."""

    def __init__(self, label):
        self.label = label
        super().__init__(f"Label {label!r} is not in the label space")


class ZeroVariance(MetricsError):
    """Raised (or reported as an absent cell) when a correlation column is constant."""

    def __init__(self, cell):
        self.cell = cell
        super().__init__(f"Zero variance in correlation cell {cell}")


# ============================================================================
# Utility Functions
# ============================================================================

def log_exception(logger, exception, context=""):
    """
    Log exception with context information.

    Args:
        logger (logging.Logger): Logger instance
        exception (Exception): Exception to log
        context (str): Additional context information
    """
    error_msg = f"Error: {str(exception)}"
    if context:
        error_msg += f" [Context: {context}]"

    logger.error(error_msg, exc_info=True)


def safe_operation(logger, operation_name, operation_func, *args, **kwargs):
    """
    Execute operation with error handling and logging.

    Args:
        logger (logging.Logger): Logger instance
        operation_name (str): Name of operation for logging
        operation_func (callable): Function to execute
        *args: Positional arguments
        **kwargs: Keyword arguments

    Returns:
        Tuple of (result, None) on success or (None, exception) on failure
    """
    try:
        logger.debug(f"Starting operation: {operation_name}")
        result = operation_func(*args, **kwargs)
        logger.debug(f"Completed operation: {operation_name}")
        return result, None
    except Exception as e:
        logger.warning(f"Operation failed: {operation_name}: {e}")
        return None, e


# Get default logger
logger = setup_logger('afd_analyzer')
