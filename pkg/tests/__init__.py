"""Tests for curvatlas."""
