"""Tests for ltcnn."""
