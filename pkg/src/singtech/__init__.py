"""Singing-technique analysis and detection toolkit."""
