"""Training, evaluation, checkpoints, reporting and the command line."""
