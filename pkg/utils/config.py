"""
Common functionality for all DualLGD programs: logging options, the run
configuration file, and run directories.
"""

import argparse
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
import hashlib
import json
import logging
from pathlib import Path
import sys

from denoiser import DenoiserConfig
from molgraph import DEFAULT_VOCAB, InvalidInputError, molecule_from_record
from sampler import SampleConfig

EXIT_INVALID = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger('config')


class ConfigError(ValueError):
    "A configuration file has unknown keys or values of the wrong kind."


class ConfigMismatchError(ValueError):
    "An artifact or run directory was produced under a different configuration."


def logging_cli():
    """Provide the common CLI arguments for logging.

    Returns an ArgumentParser.

    """
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group(title="logging")
    group.add_argument('--log',
                       help='File to write log messages (default: stderr)',
                       type=argparse.FileType('a'),
                       default=sys.stderr)
    group.add_argument('--job-name',
                       help='job name, used for status reporting')
    group.add_argument('--log-level',
                       help='Logging level',
                       choices=['debug', 'info', 'warning', 'error'],
                       default='info')
    return parser


def configure_logging(cli_args):
    """Configure logging.

    cli_args is a set of parsed CLI arguments, as returned by
    ArgumentParser.parse_args().

    """
    logging.basicConfig(stream=cli_args.log,
                        level=cli_args.log_level.upper(),
                        format='%(asctime)s %(levelname)s [%(name)s %(process)s] %(message)s',
                        datefmt='%Y-%m-%d %H:%M:%S')


def config_cli():
    """Provide the common CLI arguments for the run configuration.

    Returns an ArgumentParser.

    """
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group(title="configuration")
    group.add_argument('--config',
                       help='JSON run configuration; missing keys take their defaults',
                       type=Path)
    group.add_argument('--dump-config',
                       help='print the full configuration and exit',
                       action='store_true')
    return parser


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 50
    s_offset: float = 0.008


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW with a constant learning rate."""
    lr: float = 2e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-12
    epochs: int = 20
    batch_size: int = 16
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'betas', tuple(self.betas))
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError('lr, epochs and batch_size must be positive')


@dataclass(frozen=True)
class DataConfig:
    """Synthetic corpus settings."""
    n_molecules: int = 500
    min_atoms: int = 2
    max_atoms: int = 7
    seed: int = 0
    aromatic_probability: float = 0.3
    n_holdout: int = 50

    def __post_init__(self):
        if not 1 <= self.min_atoms <= self.max_atoms:
            raise ConfigError('need 1 <= min_atoms <= max_atoms')
        if self.n_molecules < 0 or self.n_holdout < 0:
            raise ConfigError('n_molecules and n_holdout must not be negative')


@dataclass(frozen=True)
class FingerprintConfig:
    n_bits: int = 2048
    radius: int = 2


SECTIONS = {'denoiser': DenoiserConfig,
            'diffusion': DiffusionConfig,
            'optimizer': OptimizerConfig,
            'data': DataConfig,
            'sample': SampleConfig,
            'fingerprint': FingerprintConfig}


@dataclass(frozen=True)
class RunConfig:
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    fingerprint: FingerprintConfig = field(default_factory=FingerprintConfig)

    def __post_init__(self):
        if self.fingerprint.n_bits != self.denoiser.d_cond:
            raise ConfigError('fingerprint.n_bits (%d) must equal denoiser.d_cond (%d)'
                              % (self.fingerprint.n_bits, self.denoiser.d_cond))
        if self.sample.steps is not None and not 1 <= self.sample.steps <= self.diffusion.T:
            raise ConfigError('sample.steps must be between 1 and T=%d' % self.diffusion.T)

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data):
        """Build a RunConfig from nested dicts.  Missing sections and keys
        take defaults; unknown ones raise ConfigError.

        """
        if not isinstance(data, dict):
            raise ConfigError('configuration must be a JSON object')
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError('unknown configuration sections: %s' % sorted(unknown))
        sections = {}
        for name, section_class in SECTIONS.items():
            values = data.get(name, {})
            known = {f.name for f in fields(section_class)}
            extra = set(values) - known
            if extra:
                raise ConfigError('unknown keys in %s: %s' % (name, sorted(extra)))
            try:
                sections[name] = section_class(**values)
            except TypeError as ex:
                raise ConfigError('bad %s section: %s' % (name, ex)) from ex
        return cls(**sections)

    def replace(self, section, **changes):
        """A copy with some keys of one section changed."""
        data = self.to_dict()
        data[section].update(changes)
        return RunConfig.from_dict(data)


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


# Keys that may change within one run without changing its identity.
HASH_EXCLUDED = {'optimizer': ('epochs',)}


def identity_dict(run_config):
    data = run_config.to_dict()
    for section, keys in HASH_EXCLUDED.items():
        for key in keys:
            del data[section][key]
    return data


def config_hash(run_config):
    """First 16 hex digits of the SHA-256 of the canonical JSON form.

    The number of training epochs is left out, so a run extended with
    --resume --epochs keeps its hash.

    """
    text = canonical_json(identity_dict(run_config))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def check_hash(found, expected, what):
    if found != expected:
        raise ConfigMismatchError('%s has config %s, expected %s' % (what, found, expected))


def read_stamped_molecules(stream, expected_hash, vocab=DEFAULT_VOCAB):
    """Iterate over the molecules of a JSONL stream whose records all carry
    config_hash == expected_hash.  A record without it, or with another
    hash, raises ConfigMismatchError.

    """
    name = getattr(stream, 'name', 'input')
    for line_number, line in enumerate(stream, 1):
        if not line.strip():
            continue
        record = json.loads(line)
        if not isinstance(record, dict):
            raise InvalidInputError('%s line %d is not a JSON object' % (name, line_number))
        check_hash(record.get('config_hash'), expected_hash, '%s line %d' % (name, line_number))
        yield molecule_from_record(record, vocab)


def load_config(path):
    try:
        with open(path) as stream:
            data = json.load(stream)
    except ValueError as ex:
        raise ConfigError('%s is not valid JSON: %s' % (path, ex)) from ex
    return RunConfig.from_dict(data)


def dump_config(run_config, stream):
    print(json.dumps(run_config.to_dict(), indent=2, sort_keys=True), file=stream)


def directory_config(args, path, default=None):
    """The RunConfig for the run directory at path: --config if given,
    else the one in the directory's manifest, else default (or the
    built-in defaults).

    """
    if args.config:
        return load_config(args.config)
    manifest_config = RunDirectory.manifest_config(path)
    if manifest_config is not None:
        return manifest_config
    return default or RunConfig()


def dump_if_asked(args, run_config):
    if args.dump_config:
        dump_config(run_config, sys.stdout)
        sys.exit(0)


def file_digest(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as stream:
        for block in iter(lambda: stream.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()[:16]


class RunDirectory:
    """A directory holding every artifact of one run, plus manifest.json
    recording the run's configuration, its hash, and one entry per artifact.

    Opening an existing run directory with a different configuration
    raises ConfigMismatchError.

    """
    MANIFEST = 'manifest.json'

    def __init__(self, path, run_config):
        self.path = Path(path)
        self.config = run_config
        self.config_hash = config_hash(run_config)
        self.path.mkdir(parents=True, exist_ok=True)
        manifest_path = self.path / self.MANIFEST
        if manifest_path.exists():
            self.manifest = json.loads(manifest_path.read_text())
            if self.manifest['config_hash'] != self.config_hash:
                raise ConfigMismatchError('run directory %s has config %s, not %s'
                                          % (self.path, self.manifest['config_hash'],
                                             self.config_hash))
            # same identity, but the epoch count may have been extended
            if self.manifest['config'] != run_config.to_dict():
                self.manifest['config'] = run_config.to_dict()
                self._write_manifest()
        else:
            self.manifest = {'config': run_config.to_dict(),
                             'config_hash': self.config_hash,
                             'created': datetime.now().isoformat(timespec='seconds'),
                             'artifacts': []}
            self._write_manifest()

    @classmethod
    def open_existing(cls, path):
        """Open a run directory using the configuration in its manifest."""
        run_config = cls.manifest_config(path)
        if run_config is None:
            raise ConfigError('%s has no %s' % (path, cls.MANIFEST))
        return cls(path, run_config)

    @classmethod
    def manifest_config(cls, path):
        """The RunConfig stored in path's manifest, or None if there is none."""
        manifest_path = Path(path) / cls.MANIFEST
        if not manifest_path.exists():
            return None
        return RunConfig.from_dict(json.loads(manifest_path.read_text())['config'])

    def __truediv__(self, name):
        return self.path / name

    def artifact(self, name):
        for entry in self.manifest['artifacts']:
            if entry['name'] == name:
                return entry
        return None

    def record(self, name, kind, **extra):
        """Add (or refresh) the manifest entry for a file in the directory."""
        entry = {'name': name,
                 'kind': kind,
                 'created': datetime.now().isoformat(timespec='seconds'),
                 'sha256': file_digest(self.path / name),
                 'config_hash': self.config_hash}
        entry.update(extra)
        self.manifest['artifacts'] = [a for a in self.manifest['artifacts'] if a['name'] != name]
        self.manifest['artifacts'].append(entry)
        self._write_manifest()
        logger.info('recorded %s artifact %s', kind, name)

    def _write_manifest(self):
        (self.path / self.MANIFEST).write_text(json.dumps(self.manifest, indent=2, sort_keys=True))


def run_guarded(body, logger):
    """Call body(), turning validation errors into exit status 2 and
    numerical aborts (non-finite values) into exit status 3.

    """
    try:
        body()
    except FloatingPointError as ex:
        logger.error('numerical abort: %s', ex)
        sys.exit(EXIT_NUMERICAL)
    except (ValueError, OSError) as ex:
        logger.error('%s', ex)
        sys.exit(EXIT_INVALID)
