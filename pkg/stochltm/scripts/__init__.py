"""StochLTM library modules and CLI."""
