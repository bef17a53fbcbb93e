"""Command modules behind ddcascade_cli.py."""
