"""
Run session for qchaos.
Tracks the files a subcommand writes and records them in a manifest.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from . import __version__
from .config import ExperimentConfig, settings
from .utils import csv_text, format_energy, sha256_file, sha256_text

logger = logging.getLogger(__name__)


class RunSession:
    """Output directory and file ledger of one subcommand run."""

    def __init__(self, subcommand: str, config: ExperimentConfig, out_dir: Optional[str] = None):
        """
        Initialize the session.

        Args:
            subcommand: Subcommand being run
            config: Resolved experiment configuration
            out_dir: Output directory; falls back to the config, then QCHAOS_OUTPUT_DIR
        """
        self.subcommand = subcommand
        self.config = config
        self.out_dir = Path(out_dir or config.output_dir or settings.output_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: List[Path] = []

    def file_name(self, system: str, tag: str, suffix: str = 'csv') -> str:
        """`<subcommand>-<system>-<tag>.<suffix>`."""
        return f"{self.subcommand}-{system}-{tag}.{suffix}"

    def energy_tag(self, energy: float) -> str:
        return f"E{format_energy(energy)}"

    def time_tag(self, T: float) -> str:
        return f"T{format_energy(T)}"

    def write_text(self, name: str, text: str) -> Path:
        """
        Write a text file into the output directory and register it.

        Args:
            name: File name
            text: Contents

        Returns:
            Path of the written file
        """
        path = self.out_dir / name
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        self.files.append(path)
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        return self.write_text(name, csv_text(header, rows))

    def manifest_name(self) -> str:
        return f"{self.subcommand}-{self.config.system}-manifest.txt"

    def manifest_text(self) -> str:
        """Version, subcommand, config hash and text, and the digest of every output file."""
        canonical = self.config.canonical_text()
        lines = [
            f"qchaos_version = {__version__}",
            f"subcommand = {self.subcommand}",
            f"config_sha256 = {sha256_text(canonical)}",
            "[config]",
            canonical.rstrip('\n'),
            "[outputs]",
        ]
        for path in self.files:
            lines.append(f"{path.name} {sha256_file(path)}")
        return '\n'.join(lines) + '\n'

    def write_manifest(self) -> Path:
        path = self.out_dir / self.manifest_name()
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.manifest_text())
        logger.info(f"✓ Manifest written to {path}")
        return path

    def write_diagnostic(self, error: BaseException, details: str) -> Path:
        """Failure report next to the outputs; not listed in the manifest."""
        path = self.out_dir / f"{self.subcommand}-{self.config.system}-error.txt"
        text = (
            f"subcommand = {self.subcommand}\n"
            f"error = {type(error).__name__}\n"
            f"message = {error}\n"
            f"config_sha256 = {sha256_text(self.config.canonical_text())}\n"
            f"\n{details}"
        )
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        return path
