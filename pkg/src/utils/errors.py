# errors.py
# ~~~~~~~~~
# exception roots shared by every module; the CLI maps them to exit codes

class InputError(Exception):
    """Input that is missing, unreadable or corrupt (exit code 2)."""
    exit_code = 2

class ValidationError(Exception):
    """Readable input whose contents are inconsistent (exit code 3)."""
    exit_code = 3

class ConfigError(ValidationError):
    """Unknown or malformed configuration section, key or value."""
    pass
