"""Tests for deepfpc."""
