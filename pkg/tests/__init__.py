"""Tests for msfit."""
