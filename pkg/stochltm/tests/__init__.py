"""StochLTM tests package."""
