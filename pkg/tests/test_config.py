"""
Unit tests for configuration loading and the shared error helpers.
"""

import logging

import pytest

from afd_analyzer import config as cfg
from afd_analyzer.config import Config, load_config
from afd_analyzer.logger_utils import (
    AfdAnalyzerError,
    ConfigError,
    CorruptRecord,
    InvalidDateRange,
    NetworkError,
    safe_operation,
    setup_logger,
)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'afd.yaml'
    path.write_text(
        'rate_limit: 2.5\n'
        'max_workers: 6\n'
        'cache_dir: /tmp/from-file\n'
        'split_ratios: [0.8, 0.1, 0.1]\n'
        'notes: kept for plugins\n',
        encoding='utf-8',
    )
    return path


class TestLoadConfig:
    """Test precedence and coercion."""

    def test_defaults(self):
        config = load_config(env={})

        assert config == Config()
        assert config.rate_limit == cfg.DEFAULT_RATE_LIMIT
        assert config.split_ratios == (0.70, 0.10, 0.20)
        assert config.mask_token == '[VOTE]'

    def test_file_values(self, config_file):
        config = load_config(config_file, env={})

        assert config.rate_limit == 2.5
        assert config.max_workers == 6
        assert config.split_ratios == (0.8, 0.1, 0.1)
        assert config.extra == {'notes': 'kept for plugins'}

    def test_precedence(self, config_file):
        """flags > environment > file > defaults."""
        env = {'AFD_RATE_LIMIT': '4', 'AFD_MAX_WORKERS': '3'}
        config = load_config(config_file, overrides={'rate_limit': 9.0, 'max_workers': None}, env=env)

        assert config.rate_limit == 9.0
        assert config.max_workers == 3
        assert config.cache_dir == '/tmp/from-file'
        assert config.max_retries == cfg.DEFAULT_MAX_RETRIES

    def test_environment_coercion(self):
        config = load_config(env={
            'AFD_REFRESH': 'yes',
            'AFD_SPLIT_RATIOS': '0.6,0.2,0.2',
            'AFD_REMOTE_ENDPOINT': ' http://classifier.local/predict ',
            'UNRELATED': 'ignored',
        })

        assert config.refresh is True
        assert config.split_ratios == (0.6, 0.2, 0.2)
        assert config.remote_endpoint == 'http://classifier.local/predict'

    def test_process_environment_is_read(self, monkeypatch):
        monkeypatch.setenv('AFD_MAX_RETRIES', '7')
        assert load_config().max_retries == 7

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            load_config(env={}, overrides={'colour': 'blue'})

    @pytest.mark.parametrize('env', [
        {'AFD_RATE_LIMIT': 'fast'},
        {'AFD_SPLIT_RATIOS': '0.7,x,0.2'},
        {'AFD_SPLIT_RATIOS': '0.7,0.2,0.2'},
        {'AFD_RATE_LIMIT': '0'},
        {'AFD_MAX_WORKERS': '0'},
        {'AFD_MASK_MODE': 'blur'},
        {'AFD_LOG_LEVEL': 'LOUD'},
        {'AFD_LEXICON_PATH': '/nonexistent/lexicon.tsv'},
    ])
    def test_invalid_values(self, env):
        with pytest.raises(ConfigError):
            load_config(env=env)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / 'missing.yaml', env={})

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / 'bad.yaml'
        path.write_text('rate_limit: [1, 2\n', encoding='utf-8')
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_yaml_must_be_a_mapping(self, tmp_path):
        path = tmp_path / 'list.yaml'
        path.write_text('- 1\n- 2\n', encoding='utf-8')
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_config_is_frozen(self):
        config = load_config(env={})
        with pytest.raises(AttributeError):
            config.rate_limit = 3.0


class TestErrorHelpers:
    """Test the exception hierarchy and safe_operation."""

    def test_hierarchy(self):
        assert issubclass(ConfigError, AfdAnalyzerError)
        assert issubclass(InvalidDateRange, AfdAnalyzerError)
        assert issubclass(CorruptRecord, AfdAnalyzerError)

    def test_error_attributes(self):
        error = CorruptRecord('train.jsonl', 9, 'bad JSON')
        assert error.line_number == 9
        assert '9' in str(error)

        cause = OSError('reset')
        network = NetworkError('https://example.org/x', cause)
        assert network.url == 'https://example.org/x'
        assert network.cause is cause

    def test_safe_operation(self, tmp_path):
        logger = setup_logger('afd_analyzer.tests.safe', level=logging.CRITICAL, log_dir=str(tmp_path))

        assert safe_operation(logger, 'add', lambda a, b: a + b, 2, 3) == (5, None)
        result, error = safe_operation(logger, 'divide', lambda: 1 / 0)
        assert result is None
        assert isinstance(error, ZeroDivisionError)

    def test_logger_writes_dated_file(self, tmp_path):
        logger = setup_logger('afd_analyzer.tests.file', level=logging.CRITICAL, log_dir=str(tmp_path))
        logger.info('written to file')
        for handler in logger.handlers:
            handler.flush()

        files = list(tmp_path.glob('afd_analyzer_*.log'))
        assert len(files) == 1
        assert 'written to file' in files[0].read_text(encoding='utf-8')
