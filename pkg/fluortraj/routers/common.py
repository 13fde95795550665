"""
Shared plumbing for subcommand routers: config loading, run context and the
translation of failures into exit codes.
"""

from contextlib import contextmanager
from typing import Any, Dict, List, Optional
import json
import os
import logging

import numpy as np
from pydantic import ValidationError

from fluortraj.engines.errors import (
    BVPConvergenceError,
    IntegrationFailure,
    InvalidOutcomeError,
    NonPhysicalStateError,
)
from fluortraj.engines.middleware import EngineMiddleware, RegimeGuard, RunTracer
from fluortraj.models.config import RunConfig
from fluortraj.services.settings_service import get_settings, resolve_threads
from fluortraj.services.storage_service import StorageService, get_storage_service

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

NUMERIC_FAILURES = (
    IntegrationFailure,
    BVPConvergenceError,
    InvalidOutcomeError,
    NonPhysicalStateError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


class CommandError(Exception):
    """Failure of a subcommand with the process exit code it maps to"""

    def __init__(self, exit_code: int, detail: str):
        super().__init__(detail)
        self.exit_code = exit_code
        self.detail = detail


def load_config(path: str, command: str) -> RunConfig:
    """
    Read and validate a JSON run config for one subcommand.

    Raises:
        CommandError: Exit code 2 if the file is unreadable, invalid or meant for another command
    """
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise CommandError(EXIT_CONFIG, f"Cannot read config {path}: {str(e)}")
    if isinstance(payload, dict):
        payload.setdefault("command", command)
    try:
        config = RunConfig.model_validate(payload)
    except ValidationError as e:
        raise CommandError(EXIT_CONFIG, f"Invalid config {path}: {str(e)}")
    if config.command != command:
        raise CommandError(EXIT_CONFIG, f"Config {path} is for {config.command!r}, not {command!r}")
    return config


class RunContext:
    """Everything a router needs for one invocation"""

    def __init__(self, config: RunConfig, out_dir: str, threads: int, trace: bool = False):
        self.config = config
        self.out_dir = out_dir
        self.threads = threads
        self.storage: StorageService = get_storage_service(out_dir)
        self.outputs: List[str] = []
        self.tracer: Optional[RunTracer] = None
        self.physicality: Dict[str, Dict[str, Any]] = {}
        if trace:
            self.tracer = RunTracer(engine_id=config.command, trace_path=self.storage.path("trace.jsonl"))

    @classmethod
    def from_args(cls, args, config: RunConfig) -> "RunContext":
        settings = get_settings()
        if args.seed is not None:
            config = config.with_seed(args.seed)
        try:
            threads = resolve_threads(args.threads)
        except ValueError as e:
            raise CommandError(EXIT_CONFIG, str(e))
        return cls(config, args.out or settings.out_dir, threads, trace=settings.trace)

    @property
    def section(self):
        return self.config.section

    def middleware(self) -> List[EngineMiddleware]:
        hooks: List[EngineMiddleware] = [RegimeGuard()]
        if self.tracer is not None:
            hooks.append(self.tracer)
        return hooks

    def note_physicality(self, label: str, engine) -> None:
        """Keep the clip counters of one engine run for the manifest"""
        self.physicality[label] = engine.physicality_guard.report()

    def record(self, *paths: str) -> None:
        self.outputs.extend(os.path.relpath(p, self.out_dir) for p in paths)

    def finish(self, status: str = "ok", extra: Optional[Dict[str, Any]] = None) -> None:
        if self.tracer is not None:
            self.tracer.log_event("command_finished", status=status)
            self.tracer.flush(self.tracer.trace_path)
        if self.physicality:
            extra = {**(extra or {}), "physicality": self.physicality}
        self.storage.write_manifest(self.config.resolved(), status=status, outputs=self.outputs, extra=extra)


@contextmanager
def numeric_guard(ctx: RunContext):
    """
    Map engine failures onto exit codes; numeric failures flag partial outputs as failed.
    """
    try:
        yield
    except CommandError:
        raise
    except NUMERIC_FAILURES as e:
        logger.error(f"Error running {ctx.config.command}: {str(e)}")
        detail = {"error": str(e)}
        if isinstance(e, BVPConvergenceError):
            detail.update(residual=e.residual, iterations=e.iterations)
        if isinstance(e, IntegrationFailure):
            detail.update(step=e.step, state=e.state)
        ctx.finish(status="failed", extra=detail)
        raise CommandError(EXIT_NUMERIC, str(e))
    except (ValueError, ValidationError) as e:
        logger.error(f"Error running {ctx.config.command}: {str(e)}")
        raise CommandError(EXIT_CONFIG, str(e))


def readout_scale(gamma1: float) -> float:
    """Currents are written raw; divide by this to plot them in units of sqrt(gamma1/2)"""
    return (gamma1 / 2.0) ** 0.5
