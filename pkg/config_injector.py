"""
Apply a parsed command line onto the interpreter settings
"""
from typing import Any, Dict
import logging

from config import Settings
from models import Invocation

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("run", "check", "dump", "repl", "bench")


class ConfigInjector:
    """Injects command-line flags into settings"""

    @staticmethod
    def extract_overrides(invocation: Invocation) -> Dict[str, Any]:
        """
        Settings fields the command line sets explicitly

        Args:
            invocation: Parsed command line

        Returns:
            Field name to value, only for flags that were given
        """
        overrides: Dict[str, Any] = {}
        if invocation.sequential:
            overrides['sequential'] = True
            overrides['servers'] = 1
        if invocation.servers is not None:
            overrides['servers'] = invocation.servers
        if invocation.seed is not None:
            overrides['seed'] = invocation.seed
        if invocation.stats:
            overrides['stats'] = True
        if invocation.debug_sync:
            overrides['debug_sync'] = True
            overrides['debug_checks'] = True
        if invocation.lock_timeout_ms is not None:
            overrides['lock_timeout_ms'] = invocation.lock_timeout_ms
        return overrides

    @staticmethod
    def apply_invocation(invocation: Invocation, settings: Settings) -> Settings:
        """
        Settings for this run

        Args:
            invocation: Parsed command line
            settings: Base settings (environment and .env)

        Returns:
            A copy of settings with the command-line flags applied
        """
        overrides = ConfigInjector.extract_overrides(invocation)
        if not overrides:
            return settings
        logger.info(f"Configuration applied from command line: {', '.join(sorted(overrides))}")
        return settings.model_copy(update=overrides)

    @staticmethod
    def validate_invocation(invocation: Invocation) -> tuple[bool, str]:
        """
        Validate a command line

        Args:
            invocation: Parsed command line

        Returns:
            Tuple of (is_valid, error_message)
        """
        if invocation.subcommand not in SUBCOMMANDS:
            return False, f"Unknown subcommand: {invocation.subcommand}"

        if invocation.subcommand != "repl" and not invocation.files:
            return False, f"{invocation.subcommand} needs at least one file"

        if invocation.servers is not None and invocation.servers < 1:
            return False, f"--servers must be at least 1, got {invocation.servers}"

        if invocation.sequential and invocation.servers is not None and invocation.servers > 1:
            return False, "--seq cannot be combined with --servers greater than 1"

        if invocation.lock_timeout_ms is not None and invocation.lock_timeout_ms <= 0:
            return False, f"--lock-timeout-ms must be positive, got {invocation.lock_timeout_ms}"

        if invocation.runs < 1:
            return False, f"--runs must be at least 1, got {invocation.runs}"

        return True, ""


# Global instance
config_injector = ConfigInjector()
