"""Training orchestration, evaluation driver, reporting and CLI."""
