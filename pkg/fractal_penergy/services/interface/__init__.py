"""Service interfaces."""

