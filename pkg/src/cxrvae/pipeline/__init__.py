"""Run configuration, artifact formats, pipeline stages and the CLI."""
