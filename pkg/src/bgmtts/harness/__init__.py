"""Configuration, experiment orchestration, embedding export and the CLI."""
